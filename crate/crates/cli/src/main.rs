use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use superstar_cli::runlog::Status;
use superstar_cli::{run, RunManifest, Stage};

/// Exit code for a manifest that cannot be read or parsed.
const MANIFEST_EXIT: u8 = 3;

#[derive(Parser)]
#[command(name = "superstar", version, about = "Superstar-firm spillover pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run manifest (TOML).
    #[arg(long, short, global = true, default_value = "manifest.toml")]
    manifest: PathBuf,
    /// Output directory; overrides `output_dir` in the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for intra-stage parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the manifest and that every referenced input exists.
    Validate,
    /// Write a simulated panel, ground truth and auxiliary tables.
    Simulate,
    /// Convert monetary fields to constant prices.
    Deflate,
    /// Fill gap-year values and impute capital.
    Impute,
    /// Flag superstar firms.
    Classify,
    /// Production functions and firm productivity.
    Tfp,
    /// Horizontal, backward and forward spillover measures.
    Spillovers,
    /// Shift-share instruments and road density.
    Instruments,
    /// Run the configured regressions.
    Regress,
    /// Productivity decompositions over the configured windows.
    Decompose,
    /// Every stage, or those named by `--stage` plus their upstream stages.
    Pipeline {
        #[arg(long, value_enum)]
        stage: Vec<Stage>,
    },
}

impl Command {
    fn targets(&self) -> (&'static str, Vec<Stage>) {
        match self {
            Command::Validate => ("validate", vec![Stage::Validate]),
            Command::Simulate => ("simulate", vec![Stage::Simulate]),
            Command::Deflate => ("deflate", vec![Stage::Deflate]),
            Command::Impute => ("impute", vec![Stage::Impute]),
            Command::Classify => ("classify", vec![Stage::Classify]),
            Command::Tfp => ("tfp", vec![Stage::Tfp]),
            Command::Spillovers => ("spillovers", vec![Stage::Spillovers]),
            Command::Instruments => ("instruments", vec![Stage::Instruments]),
            Command::Regress => ("regress", vec![Stage::Regress]),
            Command::Decompose => ("decompose", vec![Stage::Decompose]),
            Command::Pipeline { stage } if stage.is_empty() => ("pipeline", vec![Stage::Regress, Stage::Decompose]),
            Command::Pipeline { stage } => ("pipeline", stage.clone()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut manifest = match RunManifest::load(&cli.manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(MANIFEST_EXIT);
        }
    };
    if let Some(seed) = cli.seed {
        manifest.seed = Some(seed);
    }
    let out = manifest.output_dir(cli.out.as_deref());
    let (command, targets) = cli.command.targets();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(MANIFEST_EXIT);
        }
    };
    let outcome = pool.install(|| run(&manifest, &cli.manifest, &out, command, &targets));

    for s in &outcome.log.stages {
        let status = match s.status {
            Status::Ok => "ok",
            Status::Skipped => "skipped",
            Status::Failed => "FAILED",
        };
        let rows: usize = s.outputs.iter().map(|o| o.rows).sum();
        eprintln!(
            "{:<12} {:<8} {:>9.1} ms {:>9} rows",
            s.stage, status, s.duration_ms, rows
        );
        for w in &s.warnings {
            eprintln!("    warning: {w}");
        }
    }
    if let Some(summary) = &outcome.summary {
        println!("{summary}");
    }
    match &outcome.error {
        Some((stage, e)) => {
            eprintln!("error in stage {}: {e:#}", stage.name());
            ExitCode::from(outcome.exit_code as u8)
        }
        None => ExitCode::SUCCESS,
    }
}
