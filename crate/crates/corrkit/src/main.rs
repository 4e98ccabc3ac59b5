use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use corrkit::cli::Cli;
use corrkit::error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return CliError::usage("bad invocation").exit_code();
        }
    };

    let pool = match corrkit::parallel::pool(cli.workers) {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("corrkit: {e}");
            return e.exit_code();
        }
    };
    match pool.install(|| corrkit::run(cli)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("corrkit: {e}");
            e.exit_code()
        }
    }
}
