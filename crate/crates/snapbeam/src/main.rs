use std::process::ExitCode;

fn main() -> ExitCode {
    snapbeam::cli::run()
}
