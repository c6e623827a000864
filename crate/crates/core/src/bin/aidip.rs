use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(aidip::cli::run(std::env::args_os()) as u8)
}
