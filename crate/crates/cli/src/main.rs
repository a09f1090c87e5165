use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = tview::Cli::parse();
    if let Err(e) = tview::configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match tview::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
