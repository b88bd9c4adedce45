use std::process::ExitCode;

use clap::Parser;
use klrs::cli::{output_paths, run, Cli};
use klrs::report::emit_report;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = run(&cli).and_then(|reports| {
        let paths = output_paths(cli.out.as_deref(), reports.len());
        reports
            .iter()
            .zip(&paths)
            .try_for_each(|(r, p)| emit_report(r, cli.format, p.as_deref()))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("klrs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
