mod args;
mod commands;
mod error;
mod output;
mod settings;

use clap::Parser;

use crate::error::CliError;

fn main() {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            fail(&CliError::usage(clap_message(&e)));
        }
    };
    if let Err(e) = commands::run(cli) {
        fail(&e);
    }
}

fn clap_message(e: &clap::Error) -> String {
    let text = e.kind().as_str().map(str::to_string).unwrap_or_default();
    let detail = e
        .to_string()
        .lines()
        .next()
        .unwrap_or_default()
        .trim_start_matches("error: ")
        .to_string();
    if detail.is_empty() {
        text
    } else {
        detail
    }
}

fn fail(e: &CliError) -> ! {
    eprintln!("{}", e.report_line());
    std::process::exit(e.kind.code());
}
