use std::process::ExitCode;

fn main() -> ExitCode {
    modgap_cli::main_with(std::env::args_os().collect())
}
