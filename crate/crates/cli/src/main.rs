use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ierd_cli::Cli;

/// Errors are reported as one `error[category]: message` line on stderr.
fn fail(category: &str, message: &str, code: u8) -> ExitCode {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{category}]: {message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or_default();
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("IERD_LOG", "info"))
        .format_timestamp_secs()
        .init();
    match ierd_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.category(), &e.to_string(), e.exit_code() as u8),
    }
}
