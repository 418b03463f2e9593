//! Trains and scores search jobs against a dataset, persisting every
//! finished job so repeated and resumed runs reuse it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use dggan_core::arch::{inherit_weights, instantiate};
use dggan_core::fid::{evaluate_candidate, extract_stats, FeatureExtractor, GaussianStats};
use dggan_core::search::{job_seed, CandidateRunner, Job, Outcome};
use dggan_core::synth::{self, downsample_to};
use dggan_core::train::{train_candidate, TrainConfig};
use dggan_core::{Error as CoreError, Tensor};

use crate::config::RunConfig;
use crate::error::Result;
use crate::images;
use crate::store::{FileStore, JobResult, TrainLog};

pub struct Level {
    pub data: Tensor,
    pub stats: GaussianStats,
}

pub struct GanRunner {
    pub store: FileStore,
    train: TrainConfig,
    data: Tensor,
    extractor: FeatureExtractor,
    n_samples: usize,
    eval_seed: u64,
    levels: Mutex<BTreeMap<u32, Arc<Level>>>,
    pub verbose: bool,
}

/// The configured dataset as `[N, 3, R, R]`.
pub fn load_dataset(cfg: &RunConfig) -> Result<Tensor> {
    let imgs = match &cfg.dataset_dir {
        Some(dir) => images::load_dir(dir)?,
        None => synth::synth_images(&cfg.synth())?,
    };
    Ok(synth::to_tensor(&imgs)?)
}

fn core_err(e: crate::Error) -> CoreError {
    match e {
        crate::Error::Core(c) => c,
        other => CoreError::Contract(other.to_string()),
    }
}

impl GanRunner {
    pub fn new(cfg: &RunConfig, store: FileStore) -> Result<Self> {
        Ok(GanRunner {
            store,
            train: cfg.train(),
            data: load_dataset(cfg)?,
            extractor: FeatureExtractor::new(cfg.extractor_seed),
            n_samples: cfg.n_samples,
            eval_seed: job_seed(cfg.seed, "eval"),
            levels: Mutex::new(BTreeMap::new()),
            verbose: false,
        })
    }

    /// Dataset and real feature statistics at `resolution`. Statistics are
    /// kept at the precision they are stored at, so a resumed run scores
    /// against the same numbers.
    pub fn level(&self, resolution: u32) -> Result<Arc<Level>> {
        let mut levels = self.levels.lock().expect("level cache poisoned");
        if let Some(l) = levels.get(&resolution) {
            return Ok(l.clone());
        }
        let data = downsample_to(&self.data, resolution)?;
        let stats = match self.store.load_stats(resolution)? {
            Some(s) => s,
            None => {
                let s = extract_stats(&data, &self.extractor)?.quantized();
                self.store.save_stats(resolution, &s)?;
                s
            }
        };
        let l = Arc::new(Level { data, stats });
        levels.insert(resolution, l.clone());
        Ok(l)
    }

    pub fn score(&self, pair: &dggan_core::arch::ArchPair, g: &dggan_core::arch::WeightSet) -> Result<f64> {
        let level = self.level(pair.resolution())?;
        let fid = evaluate_candidate(g, pair, &self.extractor, &level.stats, self.n_samples, self.eval_seed)?;
        Ok(fid.value)
    }

    fn run_job(&self, job: &Job) -> Result<Outcome> {
        if let Some(r) = self.store.load_result(&job.id)? {
            return Ok(Outcome { fid: r.fid.unwrap_or(f64::INFINITY), diverged: r.diverged, wallclock_s: r.wallclock_s });
        }
        let start = Instant::now();
        let mut pair = job.pair.clone();
        let mut w = instantiate(&pair, job.seed);
        if let (Some(pid), Some(parent_pair)) = (&job.parent_id, &job.parent_pair) {
            if *parent_pair == pair {
                // continued training of a finished candidate: the new stage
                // is already blended in
                pair.fading = false;
                w = instantiate(&pair, job.seed);
            }
            let parent = self
                .store
                .load_result(pid)?
                .ok_or_else(|| CoreError::Contract(format!("parent {pid} of {} has no stored result", job.id)))?;
            let (_, pw) = self.store.load_checkpoint(&parent.checkpoint)?;
            inherit_weights(&pair, &mut w, parent_pair, &pw)?;
        }
        let level = self.level(pair.resolution())?;
        let cfg = TrainConfig { iters: self.train.iters * job.budget as u64, ..self.train.clone() };
        let (w, stats) = train_candidate(&pair, w, &level.data, &cfg, job.seed)?;
        let fid = if stats.diverged {
            f64::INFINITY
        } else {
            evaluate_candidate(&w.g, &pair, &self.extractor, &level.stats, self.n_samples, self.eval_seed)?.value
        };
        let wallclock_s = start.elapsed().as_secs_f64();
        let checkpoint = self.store.save_checkpoint(&pair, &w)?;
        let log = TrainLog { candidate_id: job.id.clone(), losses: stats.losses, diverged: stats.diverged, wallclock_s };
        let result = JobResult {
            id: job.id.clone(),
            fid: fid.is_finite().then_some(fid),
            diverged: stats.diverged,
            wallclock_s,
            checkpoint,
        };
        self.store.save_result(&result, &log)?;
        if self.verbose {
            eprintln!("  {} {}px fid {fid:.4} ({wallclock_s:.1}s)", job.id, pair.resolution());
        }
        Ok(Outcome { fid, diverged: stats.diverged, wallclock_s })
    }
}

impl CandidateRunner for GanRunner {
    fn run(&self, job: &Job) -> dggan_core::Result<Outcome> {
        self.run_job(job).map_err(core_err)
    }
}
