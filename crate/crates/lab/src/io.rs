//! CSV and JSON artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! re-parse to the exact same values and diff cleanly between runs.

use std::fmt::Write as _;
use std::path::Path;

use liquidation_core::simulate::StatePath;
use liquidation_core::singular::{BlowupRow, BoundsEnvelope};
use liquidation_core::{SingularSolution, TruncatedSolution};
use serde::Serialize;

use crate::{LabError, Result};

fn row(out: &mut String, fields: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in fields {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v:?}").expect("writing to a String");
    }
    out.push('\n');
}

fn regime_columns(ell: usize) -> String {
    (0..ell).map(|i| format!(",Y_{i}")).collect()
}

/// `t,Y_0,...` preceded by a `# L=..,c_check=..,grid_size=..` comment line.
pub fn truncated_csv(sol: &TruncatedSolution, c_check: f64) -> String {
    let mut out = format!("# L={:?},c_check={c_check:?},grid_size={}\n", sol.level(), sol.grid().len());
    out.push('t');
    out.push_str(&regime_columns(sol.ell()));
    out.push('\n');
    for (n, &t) in sol.grid().nodes().iter().enumerate() {
        row(&mut out, std::iter::once(t).chain(sol.values().iter().map(|r| r[n])));
    }
    out
}

/// `t,Y_0,...,lower,upper,ladder_gap` with the gap maximised over regimes.
pub fn singular_csv(sol: &SingularSolution) -> String {
    let mut out = format!("t{},lower,upper,ladder_gap\n", regime_columns(sol.ell()));
    let env = sol.envelope();
    for (n, &t) in sol.grid().nodes().iter().enumerate() {
        let gap = sol.ladder_gap().iter().map(|r| r[n]).fold(0.0, f64::max);
        let values = sol.values().iter().map(|r| r[n]);
        row(&mut out, std::iter::once(t).chain(values).chain([env.lower()[n], env.upper()[n], gap]));
    }
    out
}

pub fn envelope_csv(env: &BoundsEnvelope) -> String {
    let mut out = String::from("t,lower,upper\n");
    for (n, &t) in env.grid().nodes().iter().enumerate() {
        row(&mut out, [t, env.lower()[n], env.upper()[n]]);
    }
    out
}

/// `tau,tauY_0,...,lower,upper,inside` for the tail of the grid.
pub fn blowup_csv(rows: &[BlowupRow]) -> String {
    let ell = rows.first().map_or(0, |r| r.scaled.len());
    let scaled: String = (0..ell).map(|i| format!(",tauY_{i}")).collect();
    let mut out = format!("tau{scaled},lower,upper,inside\n");
    for r in rows {
        let mut line = String::new();
        row(&mut line, std::iter::once(r.tau).chain(r.scaled.iter().copied()).chain([r.lower_scaled, r.upper_scaled]));
        line.pop();
        out.push_str(&line);
        out.push_str(if r.inside { ",1\n" } else { ",0\n" });
    }
    out
}

/// `t,X,xi,regime,cost` at every recorded point of a path.
pub fn path_csv(path: &StatePath) -> String {
    let mut out = String::from("t,X,xi,regime,cost\n");
    for p in &path.points {
        writeln!(out, "{:?},{:?},{:?},{},{:?}", p.t, p.x, p.xi, p.regime, p.cost).expect("writing to a String");
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}
