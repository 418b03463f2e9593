//! Mock-scored search and its brute-force expansion oracle.

#![allow(dead_code)]

use std::sync::Mutex;

use dggan_core::arch::{apply_action, ActionSpace, ArchPair, BaseConfig, GrowthAction};
use dggan_core::search::{CandidateRunner, Job, Outcome, SearchConfig, Sequential};
use dggan_core::seed::mix_seed;
use dggan_core::Result;

/// FID as a fixed pseudo-random function of the architecture alone.
pub fn mock_fid(pair: &ArchPair) -> f64 {
    let h = mix_seed(11, &serde_json::to_string(pair).unwrap());
    1.0 + (h % 10_000) as f64 / 1000.0
}

#[derive(Default)]
pub struct Mock {
    pub calls: Mutex<Vec<String>>,
    pub diverge: Vec<String>,
}

impl CandidateRunner for Mock {
    fn run(&self, job: &Job) -> Result<Outcome> {
        self.calls.lock().unwrap().push(job.id.clone());
        let diverged = self.diverge.contains(&job.id);
        Ok(Outcome { fid: if diverged { f64::INFINITY } else { mock_fid(&job.pair) }, diverged, wallclock_s: 0.0 })
    }
}

pub fn small_base() -> BaseConfig {
    BaseConfig { d0: 8, latent_dim: 16, base_channels: 16, min_stage_channels: 4 }
}

pub fn config(k: usize, p: f64, max_layers: u32, target: u32) -> SearchConfig {
    SearchConfig {
        base: small_base(),
        actions: ActionSpace { filter_sizes: vec![3], filter_counts: vec![8, 16] },
        k,
        p,
        max_layers,
        target_resolution: target,
        final_multiplier: 0,
        initial: 1,
        seed: 5,
    }
}

pub fn reference_fid(cfg: &SearchConfig, resolution: u32) -> f64 {
    let mut pair = ArchPair::base(cfg.base);
    while pair.resolution() < resolution {
        pair = apply_action(&pair, GrowthAction::GrowBoth, u32::MAX).unwrap();
    }
    mock_fid(&pair)
}

/// Expands every legal action of every kept parent and sorts.
pub fn brute_force(cfg: &SearchConfig) -> Vec<Vec<String>> {
    let score = |pair: &ArchPair| {
        let fid = mock_fid(pair);
        (fid / reference_fid(cfg, pair.resolution()), fid)
    };
    let mut pool = vec![("i0".to_string(), ArchPair::base(cfg.base))];
    let mut out = vec![vec!["i0".to_string()]];
    for _ in 0..cfg.max_layers {
        let mut children = Vec::new();
        for (id, pair) in &pool {
            for a in cfg.actions.enumerate(pair, cfg.target_resolution) {
                let child = apply_action(pair, a, cfg.target_resolution).unwrap();
                let (nfid, fid) = score(&child);
                children.push((nfid, fid, format!("{id}.{a}"), child));
            }
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        children.truncate(cfg.k);
        out.push(children.iter().map(|c| c.2.clone()).collect());
        pool = children.into_iter().map(|c| (c.2, c.3)).collect();
    }
    out
}


/// (run_search kept sets, brute-force kept sets) for one configuration.
pub fn kept_vs_brute_force(k: usize, target: u32) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let cfg = config(k, 1.0, 3, target);
    let res = dggan_core::search::run_search(&cfg, &Mock::default(), &Sequential, &mut Vec::new(), Default::default()).unwrap();
    (res.kept, brute_force(&cfg))
}
