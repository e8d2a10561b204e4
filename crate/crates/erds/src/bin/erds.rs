use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(erds::cli::run_command(std::env::args()) as u8)
}
