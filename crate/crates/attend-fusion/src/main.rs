use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(attend_fusion::cli::run() as u8)
}
