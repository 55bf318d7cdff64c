use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(causalread_cli::run(std::env::args_os()))
}
