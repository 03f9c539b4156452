use std::process::ExitCode;

fn main() -> ExitCode {
    covlap::cli::run()
}
