use clap::Parser;
use qlb::cli::{run, Cli, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(m) => {
            for f in &m.outputs {
                println!("{}", m.config.output.dir.join(f).display());
            }
        }
        Err(e) => {
            eprintln!("{}", e.record());
            std::process::exit(CliError::exit_code(&e));
        }
    }
}
