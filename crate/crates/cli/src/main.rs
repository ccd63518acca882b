use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use safempc_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(a) => {
            // a closed pipe is not an error worth reporting
            let mut out = std::io::stdout().lock();
            let _ = write!(out, "{}", a.summary);
            for f in &a.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
