use std::process::ExitCode;

use clap::Parser;
use dpx_core::cli::{describe, exit_code, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DPX_LOG")).init();
    let cli = Cli::parse();
    let res = run(&cli);
    if let Err(e) = &res {
        eprintln!("{}", describe(e));
    }
    ExitCode::from(exit_code(&res) as u8)
}
