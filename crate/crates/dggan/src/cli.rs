//! Command line surface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dggan_core::analysis::{self, median, recorded_kept, simulate_kp};
use dggan_core::fid::BaselineTable;
use dggan_core::model::{generate, latents};
use dggan_core::search::{self, run_reference, run_search, CandidateRecord};

use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::exec::Threaded;
use crate::ledger::{self, LedgerSink};
use crate::report::{self, SimRow};
use crate::runner::GanRunner;
use crate::store::{json_bytes, load_checkpoint, write_atomic, BestSummary, FileStore};
use crate::images;

#[derive(Debug, Parser)]
#[command(name = "dggan", version, about = "Dynamic growing search for GANs at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset as PGM/PPM files.
    SynthData,
    /// Train the reference schedule up to the target resolution.
    Baseline,
    /// Run the growth search into the output directory.
    Search,
    /// Continue an interrupted search in the output directory.
    Resume,
    /// FID of a checkpoint against the configured dataset.
    Evaluate { checkpoint: PathBuf },
    /// Write generated images from a checkpoint.
    Sample {
        checkpoint: PathBuf,
        #[arg(default_value_t = 16)]
        n: usize,
    },
    /// Export the ledger analyses as CSV.
    Analyze { ledger: PathBuf },
    /// Replay a ledger with a smaller pool size or sampling probability.
    Simulate {
        ledger: PathBuf,
        k: usize,
        p: f64,
        #[arg(default_value_t = 32)]
        trials: usize,
    },
}

pub const THRESHOLDS: [f64; 11] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0];
pub const SIM_P: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const SIM_TRIALS: usize = 32;

impl Cli {
    fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let (Some(o), None) = (&self.out, &cfg.out_dir) {
            cfg.out_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: Option<&RunConfig>) -> Result<PathBuf> {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
            .ok_or_else(|| Error::Config("out_dir: no --out flag and no out_dir in the config".into()))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData => synth_data(cli),
        Command::Baseline => baseline(cli),
        Command::Search => search(cli, false),
        Command::Resume => search(cli, true),
        Command::Evaluate { checkpoint } => evaluate(cli, checkpoint),
        Command::Sample { checkpoint, n } => sample(cli, checkpoint, *n),
        Command::Analyze { ledger } => analyze(cli, ledger),
        Command::Simulate { ledger, k, p, trials } => simulate(cli, ledger, *k, *p, *trials),
    }
}

fn synth_data(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut spec = cfg.synth();
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let out = cli.out_dir(Some(&cfg))?;
    let imgs = dggan_core::synth::synth_images(&spec)?;
    images::write_images(&out, &imgs)?;
    println!("wrote {} images to {}", imgs.len(), out.display());
    Ok(())
}

/// Pins `cfg` to the run directory: a fresh directory records it, an existing
/// one must have been started with the same settings (worker count aside).
fn bind_config(store: &FileStore, cfg: &RunConfig) -> Result<()> {
    let path = store.config();
    let mut canon = cfg.clone();
    canon.out_dir = None;
    if path.exists() {
        let mut old = RunConfig::load(&path)?;
        old.workers = canon.workers;
        if old != canon {
            return Err(Error::Config(format!(
                "{} was created with a different configuration; use a new --out directory",
                store.root().display()
            )));
        }
        return Ok(());
    }
    write_atomic(&path, canon.to_json().as_bytes())
}

fn baseline(cli: &Cli) -> Result<()> {
    let cfg = cli.load_config()?;
    let store = FileStore::new(cli.out_dir(Some(&cfg))?);
    bind_config(&store, &cfg)?;
    let mut runner = GanRunner::new(&cfg, store.clone())?;
    runner.verbose = true;
    let mut sink: Vec<CandidateRecord> = Vec::new();
    let table = run_reference(
        &cfg.search(),
        &runner,
        &Threaded { workers: cfg.workers },
        &mut sink,
        store.load_baselines()?,
        cfg.target_resolution,
    )?;
    store.save_baselines(&table)?;
    for (r, v) in table.iter() {
        println!("baseline {r}px: fid {v:.4}");
    }
    Ok(())
}

fn search(cli: &Cli, resume: bool) -> Result<()> {
    let (cfg, store) = if resume {
        let store = FileStore::new(cli.out_dir(None)?);
        let mut cfg = RunConfig::load(&store.config())?;
        if let Some(w) = cli.workers {
            cfg.workers = w;
        }
        if cli.seed.is_some_and(|s| s != cfg.seed) {
            return Err(Error::Config("seed: resume keeps the seed the run started with".into()));
        }
        (cfg, store)
    } else {
        let cfg = cli.load_config()?;
        let store = FileStore::new(cli.out_dir(Some(&cfg))?);
        std::fs::create_dir_all(store.root()).at(store.root())?;
        if store.ledger().exists() {
            return Err(Error::Config(format!("{} already holds a ledger; use resume", store.root().display())));
        }
        bind_config(&store, &cfg)?;
        (cfg, store)
    };
    let mut runner = GanRunner::new(&cfg, store.clone())?;
    runner.verbose = true;
    let mut sink = if resume && store.ledger().exists() {
        LedgerSink::resume(&store.ledger())?
    } else {
        LedgerSink::create(&store.ledger())?
    };
    let scfg = cfg.search();
    let res = run_search(&scfg, &runner, &Threaded { workers: cfg.workers }, &mut sink, store.load_baselines()?)?;
    sink.finish()?;
    store.save_baselines(&res.baselines)?;

    let best = &res.best.record;
    let final_id = format!("{}.final", best.id);
    let ckpt_id = if res.final_outcome.is_some() { final_id.as_str() } else { best.id.as_str() };
    let checkpoint = store
        .load_result(ckpt_id)?
        .map(|r| r.checkpoint)
        .ok_or_else(|| Error::Config(format!("no stored result for {ckpt_id}")))?;
    let summary = BestSummary {
        id: best.id.clone(),
        resolution: best.resolution,
        fid: best.fid,
        nfid: best.nfid,
        final_fid: res.final_outcome.map(|o| o.fid).filter(|f| f.is_finite()),
        checkpoint: store.checkpoint_dir(&checkpoint).display().to_string(),
    };
    write_atomic(&store.best_path(), &json_bytes(&summary))?;
    println!("best {} at {}px: fid {:.4}, nfid {:.4}", best.id, best.resolution, best.fid, best.nfid);
    if let Some(f) = summary.final_fid {
        println!("after final training: fid {f:.4}");
    }
    println!("checkpoint {}", summary.checkpoint);
    Ok(())
}

fn evaluate(cli: &Cli, checkpoint: &Path) -> Result<()> {
    let cfg = cli.load_config()?;
    let (pair, w) = load_checkpoint(checkpoint)?;
    let scratch = match &cli.out {
        Some(o) => FileStore::new(o),
        None => FileStore::new(std::env::temp_dir().join(format!("dggan-eval-{}", std::process::id()))),
    };
    let runner = GanRunner::new(&cfg, scratch.clone())?;
    let fid = runner.score(&pair, &w.g)?;
    println!("fid {fid:.6} at {}px", pair.resolution());
    let table: BaselineTable = scratch.load_baselines()?;
    if let Some(b) = table.get(pair.resolution()) {
        println!("nfid {:.6}", fid / b);
    }
    if cli.out.is_none() {
        let _ = std::fs::remove_dir_all(scratch.root());
    }
    Ok(())
}

fn sample(cli: &Cli, checkpoint: &Path, n: usize) -> Result<()> {
    let (pair, w) = load_checkpoint(checkpoint)?;
    let out = cli.out_dir(None)?;
    let z = latents(pair.g.latent_dim.unwrap_or(0), n, cli.seed.unwrap_or(0), "sample");
    let imgs = if n == 0 { Vec::new() } else { images::from_tensor(&generate(&pair, &w.g, &z, 1.0)?)? };
    images::write_images(&out, &imgs)?;
    println!("wrote {n} {r}x{r} images to {}", out.display(), r = pair.resolution());
    Ok(())
}

/// The four CSV tables for a ledger, as (file name, bytes).
pub fn analysis_tables(ledger: &[CandidateRecord], seed: u64) -> Result<Vec<(&'static str, Vec<u8>)>> {
    search::check_ledger(ledger)?;
    let g2d = report::g2d_csv(&analysis::g2d_report(ledger)?)?;
    let actions = report::actions_csv(&analysis::action_stats(ledger)?)?;
    let risk = report::risk_csv(&analysis::pruning_risk(ledger, &THRESHOLDS)?)?;
    let k_rec = recorded_kept(ledger).iter().map(Vec::len).max().unwrap_or(0);
    let mut rows = Vec::new();
    for k in 1..=k_rec {
        for p in SIM_P {
            for trial in simulate_kp(ledger, k, p, seed, SIM_TRIALS)? {
                rows.push(SimRow { k, p, trial });
            }
        }
    }
    let sim = report::sim_csv(&rows)?;
    Ok(vec![("g2d.csv", g2d), ("actions.csv", actions), ("risk.csv", risk), ("sim.csv", sim)])
}

fn analyze(cli: &Cli, path: &Path) -> Result<()> {
    let ledger = ledger::read(path)?;
    let out = cli.out_dir(None)?;
    std::fs::create_dir_all(&out).at(&out)?;
    for (name, bytes) in analysis_tables(&ledger, cli.seed.unwrap_or(0))? {
        report::write(&out.join(name), &bytes)?;
    }
    for s in analysis::action_stats(&ledger)? {
        println!(
            "{:>8}  n={:<3} diverged={:<2} pos_frac={:.3} mean={:.4} std={:.4}",
            s.action, s.count, s.diverged, s.pos_frac, s.mean, s.std
        );
    }
    println!("wrote g2d.csv, actions.csv, risk.csv, sim.csv to {}", out.display());
    Ok(())
}

fn simulate(cli: &Cli, path: &Path, k: usize, p: f64, trials: usize) -> Result<()> {
    let ledger = ledger::read(path)?;
    let runs = simulate_kp(&ledger, k, p, cli.seed.unwrap_or(0), trials)?;
    let best: Vec<f64> = runs.iter().map(|t| t.best_nfid).collect();
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).at(out)?;
        let rows: Vec<SimRow> = runs.into_iter().map(|trial| SimRow { k, p, trial }).collect();
        report::write(&out.join("sim.csv"), &report::sim_csv(&rows)?)?;
    }
    println!("median best nfid {:.6} over {trials} trials (K={k}, p={p})", median(&best));
    Ok(())
}
