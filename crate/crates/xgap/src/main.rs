use std::process::ExitCode;

fn main() -> ExitCode {
    match xgap::cli::main_with_args(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
