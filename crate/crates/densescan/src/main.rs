use clap::error::ErrorKind;
use clap::Parser;

use densescan::cli::Cli;
use densescan::error::CliError;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::Config(first.to_string());
            eprintln!("{}", err.to_line());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = densescan::commands::run(&cli) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.exit_code());
    }
}
