use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(seqmon::cli::run())
}
