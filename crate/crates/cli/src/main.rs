use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use narrate_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            println!("wrote {}", out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
