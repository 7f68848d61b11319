use std::process::ExitCode;

fn main() -> ExitCode {
    arflow::cli::main_with_args(std::env::args_os())
}
