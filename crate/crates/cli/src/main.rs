use std::process::ExitCode;

use clap::Parser;

use sdelab_cli::app::{configure_threads, execute, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match configure_threads().and_then(|()| execute(&args)) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
