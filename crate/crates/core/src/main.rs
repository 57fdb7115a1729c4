use std::process::ExitCode;

fn main() -> ExitCode {
    querygen::cli::run()
}
