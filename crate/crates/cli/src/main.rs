//! `openedge` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime invariant
//! violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use openedge_core::customizer::{is_holdout, train, Variant};
use openedge_core::netadapt::{build_table, decide, decisions_csv, BandwidthEstimator, ThresholdTable};
use openedge_core::oracle::Sample;
use openedge_core::select::ModelPool;
use openedge_core::sim::{run_scenario, SimError};
use openedge_core::{BandwidthTrace, RunConfig, SmallModel, SyntheticWorld, TextEmbeddingPool};

#[derive(Parser)]
#[command(name = "openedge", version, about = "Edge/cloud collaborative inference toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (`key = value` with `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restricts or selects the customization variant.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Bandwidth trace CSV (`t_seconds,bandwidth_mbps`).
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the small model with each customization variant.
    Customize(Common),
    /// Run the end-to-end edge/cloud scenario.
    Simulate(Common),
    /// Build the threshold-searching table for a customized model.
    Table {
        #[command(flatten)]
        common: Common,
        /// Use this checkpoint instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Replay a bandwidth trace through the estimator and threshold solver.
    ProbeReplay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Invariant(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let mut c = RunConfig::parse(&text).with_context(|| format!("config {}", p.display()))?;
            // Relative trace paths resolve against the config file.
            if let (Some(t), Some(dir)) = (&c.trace_path, p.parent()) {
                c.trace_path = Some(dir.join(t));
            }
            c
        }
        None => {
            let mut c = RunConfig::default();
            c.sync();
            c
        }
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(v) = common.variant {
        cfg.variants = vec![v];
        cfg.scenario.variant = v;
    }
    if let Some(t) = &common.trace {
        cfg.trace_path = Some(t.clone());
    }
    if let Some(p) = &cfg.trace_path {
        let text = fs::read_to_string(p).with_context(|| format!("reading trace {}", p.display()))?;
        cfg.scenario.trace = BandwidthTrace::parse_csv(&text).with_context(|| format!("trace {}", p.display()))?;
    }
    let zoo = ModelPool::reference();
    let spec = zoo.select(&cfg.profile).context("model selection")?;
    cfg.scenario.arch_id = spec.arch_id.clone();
    cfg.scenario.hidden_dim = spec.hidden;
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

struct Setup {
    world: SyntheticWorld<f64>,
    pool: TextEmbeddingPool<f64>,
    rng: ChaCha8Rng,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let world = SyntheticWorld::new(cfg.world.clone())?;
    let pool = world.text_pool(&cfg.classes, cfg.prompt.clone())?;
    Ok(Setup { world, pool, rng: ChaCha8Rng::seed_from_u64(cfg.seed) })
}

fn initial_model(cfg: &RunConfig, s: &mut Setup) -> SmallModel<f64> {
    SmallModel::new(
        &cfg.scenario.arch_id,
        s.world.input_dim(),
        cfg.scenario.hidden_dim,
        s.world.embed_dim(),
        &mut s.rng,
    )
}

fn customize(cfg: &RunConfig) -> Result<()> {
    let mut s = setup(cfg)?;
    let data = s.world.dataset(&cfg.classes, cfg.train_samples, 0, &mut s.rng)?;
    let init = initial_model(cfg, &mut s);
    let holdout: Vec<&Sample<f64>> = data.iter().filter(|x| is_holdout(x.id)).collect();
    let mut fm_hits = 0usize;
    for x in &holdout {
        fm_hits += usize::from(s.world.fm_predict(&s.pool, &x.raw)?.0 == x.true_class);
    }
    let fm_acc = fm_hits as f64 / holdout.len().max(1) as f64;
    let mut summary = String::from("variant,arch_id,hidden,epochs,final_loss,holdout_accuracy,fm_accuracy\n");
    for &v in &cfg.variants {
        let (model, log) = train(&s.world, &s.pool, &data, &cfg.train, v, init.clone())?;
        write(&cfg.out_dir, &format!("{v}.ckpt"), model.to_bytes())?;
        write(&cfg.out_dir, &format!("{v}_log.csv"), log.to_csv())?;
        let last = log.epochs.last().ok_or_else(|| anyhow!("training produced no epochs"))?;
        summary.push_str(&format!(
            "{v},{},{},{},{:.9},{:.6},{fm_acc:.6}\n",
            model.arch_id(),
            model.hidden_dim(),
            log.epochs.len(),
            last.loss,
            last.holdout_accuracy.unwrap_or(f64::NAN),
        ));
        println!("{v}: held-out accuracy {:.4} (FM {fm_acc:.4})", last.holdout_accuracy.unwrap_or(f64::NAN));
    }
    write(&cfg.out_dir, "customize_summary.csv", summary)
}

fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let report = run_scenario::<f64>(&cfg.scenario).map_err(|e| match e {
        SimError::Invariant(_) => Failure::Invariant(e.into()),
        other => Failure::Config(other.into()),
    })?;
    let dir = &cfg.out_dir;
    write(dir, "metrics.csv", report.to_csv())?;
    write(dir, "thresholds.csv", report.thresholds_csv())?;
    write(dir, "audit.csv", report.audit_csv())?;
    write(dir, "summary.json", report.summary_json())?;
    let s = &report.summary;
    println!(
        "{} samples: {} edge, {} cloud, {} in flight; conserved={}; distinct thresholds {:?}",
        s.samples_total, s.edge_answered, s.cloud_answered, s.in_flight, s.conserved, s.distinct_thresholds
    );
    Ok(())
}

/// Customized model and the table built from a fresh calibration set.
fn table_for(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ThresholdTable> {
    let mut s = setup(cfg)?;
    let model = match checkpoint {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading checkpoint {}", p.display()))?;
            SmallModel::from_bytes(&bytes).with_context(|| format!("checkpoint {}", p.display()))?
        }
        None => {
            let data = s.world.dataset(&cfg.classes, cfg.train_samples, 0, &mut s.rng)?;
            let init = initial_model(cfg, &mut s);
            let variant = cfg.variants.first().copied().unwrap_or(Variant::Semantic);
            train(&s.world, &s.pool, &data, &cfg.train, variant, init)?.0
        }
    };
    let first_id = cfg.train_samples as u64;
    let mut calib_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    calib_rng.set_stream(1);
    let calibration = s.world.dataset(&cfg.classes, cfg.calibration_size, first_id, &mut calib_rng)?;
    let fm = calibration
        .iter()
        .map(|x| Ok(s.world.fm_predict(&s.pool, &x.raw)?.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_table(&model, &s.pool, &fm, &calibration, cfg.grid_step, &cfg.latency)?)
}

fn table(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let t = table_for(cfg, checkpoint)?;
    write(&cfg.out_dir, "threshold_table.csv", t.to_csv())?;
    println!("{} rows, monotone={}", t.rows.len(), t.is_monotone());
    Ok(())
}

fn probe_replay(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let t = table_for(cfg, checkpoint)?;
    let trace = &cfg.scenario.trace;
    let mut est = BandwidthEstimator::new(cfg.beta)?;
    let mut rows = Vec::new();
    let step = cfg.scenario.probe_interval_s;
    let end = trace.points().last().map_or(0.0, |p| p.0).max(cfg.scenario.duration_s);
    let mut k = 0u64;
    loop {
        let now = k as f64 * step;
        if now > end {
            break;
        }
        let b = est.probe_update(now, trace.bandwidth_at(now))?;
        rows.push(decide(&t, now, b, &cfg.latency, &cfg.profile));
        k += 1;
    }
    write(&cfg.out_dir, "threshold_table.csv", t.to_csv())?;
    write(&cfg.out_dir, "thresholds.csv", decisions_csv(&rows))?;
    let mut distinct: Vec<u64> = rows.iter().map(|d| d.thre.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    println!("{} probes, {} distinct thresholds", rows.len(), distinct.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Customize(c) => customize(&load(&c)?)?,
        Command::Simulate(c) => simulate(&load(&c)?)?,
        Command::Table { common, checkpoint } => table(&load(&common)?, checkpoint.as_deref())?,
        Command::ProbeReplay { common, checkpoint } => probe_replay(&load(&common)?, checkpoint.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant violation: {e:#}");
            ExitCode::from(2)
        }
    }
}
