use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sdde_lab::{run_experiment, validate_config, ExperimentConfig, Kind, LabError};

/// Run one experiment from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "sdde-lab", version, about)]
struct Cli {
    kind: Kind,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `monte_carlo.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,
    /// Exit with 4 when a verdict is inconclusive or a checked bound fails.
    #[arg(long)]
    assert: bool,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| LabError::Parse(format!("{}: {e}", cli.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(k) = cfg.kind {
        if k != cli.kind {
            return Err(LabError::Invalid(vec![sdde_lab::Diagnostic {
                field: "kind".into(),
                message: format!("config is for {k}, command line asks for {}", cli.kind),
            }]));
        }
    }
    cfg.kind = Some(cli.kind);
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.seed = seed;
    }
    let diags = validate_config(&cfg);
    if diags.is_empty() {
        Ok(cfg)
    } else {
        Err(LabError::Invalid(diags))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(LabError::Invalid(diags)) => {
            for d in &diags {
                eprintln!("config error: {d}");
            }
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match run_experiment(&cfg, &out, cli.workers.map(usize::from)) {
        Ok(outcome) => {
            println!(
                "{}: {} files in {} ({:.2}s, digest {})",
                cfg.kind.expect("set above"),
                outcome.manifest.files.len(),
                out.display(),
                outcome.manifest.duration_seconds,
                outcome.manifest.config_digest
            );
            if cli.assert && outcome.inconclusive {
                eprintln!("assertion failed: inconclusive verdict or failed check");
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
