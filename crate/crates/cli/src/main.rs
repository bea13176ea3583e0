use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use qdet::output;
use qdet::pipeline::{self, ArtifactCache, PipelineConfig, SchemeChoice};
use qdet::QdetError;

#[derive(Parser)]
#[command(name = "qdet", version, about = "Quantum defect embedding on lattice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: mean field, screening, embedding, FCI, report.
    Run(Common),
    /// Chain-rule residuals and coupling diagnostics.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Also solve FCI and classify ghost states.
        #[arg(long)]
        ghosts: bool,
    },
    /// Convergence sweeps, one CSV per axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axes to sweep (default: all configured).
        #[arg(long, value_enum, num_args = 1..)]
        axis: Vec<Axis>,
    },
    /// Check the model (symmetries, positivity, electron count) only.
    ValidateModel(Common),
    /// Write the effective Hamiltonians as JSON.
    ExportHeff(Common),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    Threshold,
    Rank,
    Size,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<SchemeChoice>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Ignore cached mean-field and screening artifacts.
    #[arg(long)]
    no_cache: bool,
}

fn parse_scheme(s: &str) -> Result<SchemeChoice, String> {
    s.parse().map_err(|e: QdetError| e.to_string())
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(s) = self.scheme {
            cfg.embedding.scheme = s;
        }
        if let Some(t) = self.threshold {
            cfg.embedding.threshold = t;
            cfg.embedding.orbitals = None;
        }
        if let Some(r) = self.rank {
            cfg.embedding.rank = r;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn cache(&self, cfg: &PipelineConfig) -> Option<ArtifactCache> {
        (!self.no_cache).then(|| ArtifactCache::new(cfg.output.dir.join("cache")))
    }
}

/// Exit status: 1 for invalid input or failed invariants, 2 for numerical
/// failures.
#[derive(Debug)]
struct InvariantsFailed;

impl std::fmt::Display for InvariantsFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "one or more invariants failed (see report.txt)")
    }
}

impl std::error::Error for InvariantsFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<QdetError>()) {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn print_outputs(dir: &Path, names: &[&str]) {
    for n in names {
        let p = dir.join(n);
        if p.exists() {
            println!("wrote {}", p.display());
        }
    }
}

fn cmd_run(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let cache = c.cache(&cfg);
    let start = Instant::now();
    let outcome = pipeline::run(&cfg, cache.as_ref())?;
    info!("pipeline finished in {:.2?}", start.elapsed());
    let dir = &cfg.output.dir;
    let report = output::write_run_outputs(&outcome, dir).context("writing run outputs")?;
    print!("{}", output::render_text(&report, &outcome));
    print_outputs(dir, &["report.json", "report.txt", "excitations.csv"]);
    if !report.passed {
        return Err(InvariantsFailed.into());
    }
    Ok(())
}

fn cmd_diagnose(c: &Common, ghosts: bool) -> Result<()> {
    let mut cfg = c.load()?;
    cfg.embedding.compare_references = false;
    let cache = c.cache(&cfg);
    let outcome = pipeline::diagnose(&cfg, cache.as_ref(), ghosts)?;
    let dir = &cfg.output.dir;
    let report = output::run_report(&outcome);
    output::write_json(&dir.join("diagnostics.json"), &report)?;
    for s in &outcome.primary.schemes {
        if let Some(d) = &s.chain_rule {
            println!(
                "{} chain-rule residual: polarizability {:.3e}, self-energy {:.3e}",
                s.scheme, d.polarizability_residual, d.sigma_residual
            );
        }
        if ghosts {
            let flagged: Vec<String> = s.labels.iter().filter(|l| l.ghost).map(|l| l.state.to_string()).collect();
            println!(
                "{} ghost states: {}",
                s.scheme,
                if flagged.is_empty() { "none".to_string() } else { flagged.join(", ") }
            );
        }
    }
    if let Some(x) = outcome.primary.offdiag {
        println!("active/environment self-energy coupling: {x:.3e}");
    }
    print_outputs(dir, &["diagnostics.json"]);
    if !report.passed {
        return Err(InvariantsFailed.into());
    }
    Ok(())
}

fn cmd_sweep(c: &Common, axes: &[Axis]) -> Result<()> {
    let cfg = c.load()?;
    let cache = c.cache(&cfg);
    let dir = &cfg.output.dir;
    let want = |a: Axis| axes.is_empty() || axes.contains(&a);
    if want(Axis::Threshold) && !cfg.sweep.thresholds.is_empty() {
        let rows = pipeline::sweep_thresholds(&cfg, &cfg.sweep.thresholds, cache.as_ref())?;
        output::write_threshold_sweep(dir, &rows)?;
    }
    if want(Axis::Rank) {
        let (rows, errors) = pipeline::sweep_ranks(&cfg, &cfg.sweep.ranks, cache.as_ref())?;
        output::write_rank_sweep(dir, &rows, &errors)?;
    }
    if want(Axis::Size) && !cfg.sweep.sizes.is_empty() {
        let rows = pipeline::sweep_sizes(&cfg, &cfg.sweep.sizes)?;
        output::write_size_sweep(dir, &rows)?;
    }
    print_outputs(
        dir,
        &["sweep_threshold.csv", "sweep_rank.csv", "rank_error.csv", "sweep_size.csv"],
    );
    Ok(())
}

fn cmd_validate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let (_, diag) = pipeline::build_checked_model(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&diag)?);
    if !diag.passes() {
        anyhow::bail!("model failed validation");
    }
    println!("model ok");
    Ok(())
}

fn cmd_export(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let cache = c.cache(&cfg);
    let heffs = pipeline::export_heff(&cfg, cache.as_ref())?;
    let docs: Vec<_> = heffs.iter().map(|h| h.to_document()).collect();
    for p in output::write_heff(&cfg.output.dir, &docs)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Diagnose { common, ghosts } => cmd_diagnose(common, *ghosts),
        Command::Sweep { common, axis } => cmd_sweep(common, axis),
        Command::ValidateModel(c) => cmd_validate(c),
        Command::ExportHeff(c) => cmd_export(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
