mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use smlink::ErrorCategory;

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Format => 4,
        ErrorCategory::Infeasible => 5,
        ErrorCategory::Numeric => 6,
    }
}

/// The error chain on one line, skipping causes already quoted by their
/// parent's message.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.ends_with(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match err.downcast_ref::<smlink::Error>() {
                Some(e) => {
                    let category = e.category();
                    eprintln!("error[{category}]: {}", describe(&err));
                    ExitCode::from(exit_code(category))
                }
                None => {
                    eprintln!("error: {}", describe(&err));
                    ExitCode::FAILURE
                }
            }
        }
    }
}
