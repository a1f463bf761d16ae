mod cli;

use clap::Parser;

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(cli::main_with(cli::Cli::parse()))
}
