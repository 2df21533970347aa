use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use circews_core::alarm::scores::load_scores;
use circews_core::endpoint::load_events;
use circews_core::pipeline::{evaluate, run_all, run_stage, write_evaluation, PipelineConfig, Stage, DEFAULT_SOURCES};
use circews_core::Error;

#[derive(Parser)]
#[command(name = "circews", version, about = "Early warning of circulatory failure from ICU time series")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` and `synth.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort into <out_dir>/input (or --out).
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        patients: Option<usize>,
    },
    Clean,
    Impute,
    Annotate,
    MineShapelets,
    Featurize,
    Train,
    Alarm,
    /// Compute metrics.json and pr_curve.csv, from the pipeline outputs or
    /// from explicit score and event files.
    Evaluate {
        #[arg(long, requires = "events")]
        scores: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Report,
    /// Run every stage in order.
    RunAll,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    Ok(cfg)
}

fn print_config(cfg: &PipelineConfig) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(cfg)?);
    for (field, source) in DEFAULT_SOURCES {
        eprintln!("# {field}: {source} default");
    }
    Ok(())
}

fn stage_of(c: &Command) -> Option<Stage> {
    Some(match c {
        Command::Clean => Stage::Clean,
        Command::Impute => Stage::Impute,
        Command::Annotate => Stage::Annotate,
        Command::MineShapelets => Stage::MineShapelets,
        Command::Featurize => Stage::Featurize,
        Command::Train => Stage::Train,
        Command::Alarm => Stage::Alarm,
        Command::Report => Stage::Report,
        Command::Evaluate { scores: None, .. } => Stage::Evaluate,
        _ => return None,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    if cli.print_config {
        return print_config(&cfg);
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    if let Some(stage) = stage_of(&command) {
        cfg.validate()?;
        return Ok(run_stage(stage, &cfg)?);
    }
    match command {
        Command::Synth { out, patients } => {
            if let Some(n) = patients {
                cfg.synth.patients = n;
            }
            cfg.synth.validate()?;
            let dir = out.unwrap_or_else(|| cfg.out("input"));
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let cohort = circews_core::synth::generate_cohort(&cfg.synth)?;
            circews_core::synth::write_cohort(&dir, &cohort)?;
            log::info!("{} patients, {} implanted events written to {}", cohort.stays.len(), cohort.truth.len(), dir.display());
        }
        Command::Evaluate { scores: Some(scores), events, threshold, out } => {
            cfg.alarm.validate()?;
            let threshold = threshold
                .or(cfg.alarm.threshold)
                .ok_or_else(|| Error::validation("alarm.threshold", "pass --threshold or set alarm.threshold"))?;
            let events = events.expect("clap enforces --events");
            let e = evaluate(&load_scores(&scores)?, &load_events(&events)?, &cfg.alarm, threshold)?;
            write_evaluation(&out.unwrap_or_else(|| cfg.paths.out_dir.clone()), &e)?;
            println!("{}", serde_json::to_string_pretty(&e.metrics)?);
        }
        Command::RunAll => {
            let m = run_all(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Validation { .. }) => 2,
        Some(Error::MissingArtifact { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
