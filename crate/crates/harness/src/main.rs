use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cellground_harness::cli::main_with_exit_code() as u8)
}
