fn main() {
    std::process::exit(liquidation_lab::commands::main_with_args(std::env::args_os()));
}
