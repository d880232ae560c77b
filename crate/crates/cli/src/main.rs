mod args;
mod commands;
mod manifest;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command};
use manifest::{Outputs, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(sevs_core::Error),
}

impl From<sevs_core::Error> for CliError {
    fn from(e: sevs_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(sevs_core::Error::InvalidArgument(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Generate(_) => "generate",
        Command::Validate(_) => "validate",
        Command::Train(_) => "train",
        Command::Summarize(_) => "summarize",
        Command::Evaluate(_) => "evaluate",
        Command::Ablate(_) => "ablate",
        Command::SweepNms(_) => "sweep-nms",
        Command::PlotData(_) => "plot-data",
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let result = match &cli.command {
        Command::Validate(a) => return commands::validate(a),
        Command::Generate(a) => commands::generate(a)?,
        Command::Train(a) => commands::train(a)?,
        Command::Summarize(a) => commands::summarize(a)?,
        Command::Evaluate(a) => commands::evaluate(a)?,
        Command::Ablate(a) => commands::ablate(a)?,
        Command::SweepNms(a) => commands::sweep_nms(a)?,
        Command::PlotData(a) => commands::plot_data(a)?,
    };
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        args: std::env::args().skip(1).collect(),
        config: result.config,
        seed: result.seed,
        inputs: result.inputs,
        outputs: result.outputs.artifacts,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Outputs::default().write_json(&result.out_dir.join("run_manifest.json"), &manifest)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
