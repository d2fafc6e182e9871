use std::process::ExitCode;

fn main() -> ExitCode {
    pnp_pbcd::cli::main_with_args(std::env::args_os())
}
