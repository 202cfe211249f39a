use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    workbench_service::cli::run(workbench_service::cli::Cli::parse())
}
