use std::process::ExitCode;

fn main() -> ExitCode {
    hyperks::cli::run()
}
