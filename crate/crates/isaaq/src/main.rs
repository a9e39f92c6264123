use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use isaaq::cli::{run, Cli};
use isaaq::ErrorReport;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = ErrorReport { error: "usage", message: e.to_string().trim().to_string(), path: None };
            eprintln!("{}", serde_json::to_string(&report).expect("report serialises"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("report serialises"));
            ExitCode::FAILURE
        }
    }
}
