use clap::Parser;
use portsort::cli::{run, Cli, CliError};
use portsort::io::{ErrorRecord, Record};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        emit_error(&err);
        std::process::exit(err.exit_code());
    }
}

fn emit_error(err: &CliError) {
    let record = Record::Error(ErrorRecord {
        code: err.exit_code(),
        message: err.message().to_string(),
        location: match err {
            CliError::Config(_) => "configuration",
            CliError::Data(_) => "input data",
            CliError::Numerical(_) => "estimation",
            CliError::Evaluation(_) => "evaluation",
        }
        .to_string(),
    });
    eprintln!(
        "{}",
        serde_json::to_string(&record).unwrap_or_else(|_| "{\"record\":\"error\"}".into())
    );
}
