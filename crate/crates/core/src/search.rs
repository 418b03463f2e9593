//! Grow/train search with random action sampling and top-K pruning.
//!
//! The coordinator here is single threaded and owns all search state.
//! Training and scoring happen behind [`CandidateRunner`], and an
//! [`Executor`] decides how many jobs run at once. Every job's seed is a
//! hash of the global seed and the candidate id, so results do not depend
//! on the schedule.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arch::{apply_action, ActionSpace, ArchPair, BaseConfig, GrowthAction};
use crate::error::{Error, Result};
use crate::fid::{BaselineTable, RawFid};
use crate::seed::{mix_seed, rng_for};

pub const INITIAL: &str = "initial";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Trained,
    Failed,
    Pruned,
}

/// One ledger line. Infinite scores are written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub id: String,
    pub parent_id: Option<String>,
    pub action: String,
    pub depth: u32,
    pub resolution: u32,
    pub g_params: u64,
    pub d_params: u64,
    #[serde(with = "inf_as_null")]
    pub fid: f64,
    #[serde(with = "inf_as_null")]
    pub nfid: f64,
    pub seed: u64,
    pub status: Status,
    pub wallclock_s: f64,
}

mod inf_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> core::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl CandidateRecord {
    pub fn is_initial(&self) -> bool {
        self.parent_id.is_none()
    }

    pub fn growth_action(&self) -> Result<Option<GrowthAction>> {
        if self.action == INITIAL {
            return Ok(None);
        }
        self.action.parse().map(Some)
    }
}

/// A scored candidate together with its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub record: CandidateRecord,
    pub pair: ArchPair,
}

impl Candidate {
    pub fn id(&self) -> &str {
        &self.record.id
    }
}

/// Total order used for pruning: normalized FID, then raw FID, then id.
pub fn rank_order(a: &CandidateRecord, b: &CandidateRecord) -> Ordering {
    a.nfid.total_cmp(&b.nfid).then(a.fid.total_cmp(&b.fid)).then_with(|| a.id.cmp(&b.id))
}

/// Keeps the `k` best candidates; returns `(kept, pruned)`, each in rank
/// order. Every pruned candidate gets `Status::Pruned`; a diverged one is
/// still recognisable by its infinite FID.
pub fn prune_topk(mut candidates: Vec<Candidate>, k: usize) -> Result<(Vec<Candidate>, Vec<Candidate>)> {
    if k == 0 {
        return Err(Error::contract("top-K pruning needs K >= 1"));
    }
    candidates.sort_by(|a, b| rank_order(&a.record, &b.record));
    let mut pruned = candidates.split_off(k.min(candidates.len()));
    for c in &mut pruned {
        c.record.status = Status::Pruned;
    }
    Ok((candidates, pruned))
}

/// Draws each legal `(parent, action)` pair independently with probability
/// `p`. One uniform is consumed per pair of the full space, legal or not,
/// so the draw for a pair does not depend on its neighbours' legality.
pub fn sample_children(
    parents: &[Candidate],
    space: &ActionSpace,
    target_resolution: u32,
    p: f64,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, GrowthAction)>> {
    if parents.is_empty() {
        return Err(Error::contract("cannot sample children of an empty parent pool"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("sampling probability must be in (0, 1], got {p}")));
    }
    let mut out = Vec::new();
    for (i, parent) in parents.iter().enumerate() {
        let legal = space.enumerate(&parent.pair, target_resolution);
        for a in space.enumerate(&parent.pair, u32::MAX) {
            let u: f64 = rng.random();
            if u < p && legal.contains(&a) {
                out.push((i, a));
            }
        }
    }
    Ok(out)
}

/// Work order for a runner.
#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub id: String,
    pub parent_id: Option<String>,
    pub pair: ArchPair,
    pub parent_pair: Option<ArchPair>,
    pub seed: u64,
    /// Multiple of the per-candidate training budget.
    pub budget: u32,
}

/// Result of training and scoring one job. Divergence is a result, not an
/// error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub fid: f64,
    pub diverged: bool,
    pub wallclock_s: f64,
}

/// Trains a job (inheriting from the parent's stored weights when
/// `parent_id` is set) and scores it.
pub trait CandidateRunner: Sync {
    fn run(&self, job: &Job) -> Result<Outcome>;
}

/// Runs independent jobs; results come back in job order.
pub trait Executor {
    fn execute<R: CandidateRunner>(&self, runner: &R, jobs: &[Job]) -> Vec<Result<Outcome>>;
}

pub struct Sequential;

impl Executor for Sequential {
    fn execute<R: CandidateRunner>(&self, runner: &R, jobs: &[Job]) -> Vec<Result<Outcome>> {
        jobs.iter().map(|j| runner.run(j)).collect()
    }
}

/// Receives ledger records and progress as the search advances.
pub trait SearchSink {
    fn append(&mut self, record: &CandidateRecord) -> Result<()>;

    fn depth_done(&mut self, _depth: u32, _kept: &[Candidate]) -> Result<()> {
        Ok(())
    }

    fn baseline(&mut self, _fid: RawFid) -> Result<()> {
        Ok(())
    }
}

impl SearchSink for Vec<CandidateRecord> {
    fn append(&mut self, record: &CandidateRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub base: BaseConfig,
    pub actions: ActionSpace,
    pub k: usize,
    pub p: f64,
    pub max_layers: u32,
    pub target_resolution: u32,
    /// Extra training of the final best candidate, in budgets; 0 skips it.
    pub final_multiplier: u32,
    /// Number of initial candidates, each with its own seed.
    pub initial: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::contract(format!("p must be in (0, 1], got {}", self.p)));
        }
        if self.initial == 0 {
            return Err(Error::contract("initial must be at least 1"));
        }
        let d0 = self.base.d0;
        if d0 < 4 || !d0.is_power_of_two() {
            return Err(Error::contract(format!("d0 must be a power of two >= 4, got {d0}")));
        }
        let t = self.target_resolution;
        if t < d0 || t % d0 != 0 || !(t / d0).is_power_of_two() {
            return Err(Error::contract(format!("target_resolution {t} is not d0 * 2^s for d0 = {d0}")));
        }
        Ok(())
    }
}

/// Id of the reference schedule candidate at growth stage `s`.
pub fn reference_id(stage: u32) -> String {
    let mut id = String::from("ref");
    for _ in 0..stage {
        id.push_str(".B");
    }
    id
}

pub fn job_seed(global: u64, id: &str) -> u64 {
    mix_seed(global, id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Best candidate at the target resolution over the whole run.
    pub best: Candidate,
    /// Score of `best` after the extra training, if any was requested.
    pub final_outcome: Option<Outcome>,
    pub ledger: Vec<CandidateRecord>,
    /// Ids kept after each pruning step, starting with the initial pool. A
    /// step that sampled no children keeps the previous pool and adds no
    /// entry.
    pub kept: Vec<Vec<String>>,
    pub baselines: BaselineTable,
}

struct Coordinator<'a, R, E, S> {
    cfg: &'a SearchConfig,
    runner: &'a R,
    exec: &'a E,
    sink: &'a mut S,
    baselines: BaselineTable,
    ledger: Vec<CandidateRecord>,
}

impl<R: CandidateRunner, E: Executor, S: SearchSink> Coordinator<'_, R, E, S> {
    fn run_jobs(&self, jobs: &[Job]) -> Result<Vec<Outcome>> {
        self.exec.execute(self.runner, jobs).into_iter().collect()
    }

    /// Trains the reference schedule up to `resolution` if its baseline is
    /// still missing. Earlier stages run again so the runner can hand their
    /// weights down; runners are expected to cache finished jobs.
    fn ensure_baseline(&mut self, resolution: u32) -> Result<()> {
        if self.baselines.contains(resolution) {
            return Ok(());
        }
        let mut pair = ArchPair::base(self.cfg.base);
        let mut parent: Option<(String, ArchPair)> = None;
        for stage in 0.. {
            let id = reference_id(stage);
            let job = Job {
                id: id.clone(),
                parent_id: parent.as_ref().map(|p| p.0.clone()),
                parent_pair: parent.as_ref().map(|p| p.1.clone()),
                pair: pair.clone(),
                seed: job_seed(self.cfg.seed, &id),
                budget: 1,
            };
            let res = pair.resolution();
            let out = self.run_jobs(core::slice::from_ref(&job))?.remove(0);
            if !self.baselines.contains(res) {
                if out.diverged || !out.fid.is_finite() {
                    return Err(Error::contract(format!("reference schedule diverged at {res}px")));
                }
                let fid = RawFid { value: out.fid, resolution: res };
                self.baselines.insert(fid)?;
                self.sink.baseline(fid)?;
            }
            if res >= resolution {
                break;
            }
            let next = apply_action(&pair, GrowthAction::GrowBoth, u32::MAX)?;
            parent = Some((id, pair));
            pair = next;
        }
        Ok(())
    }

    fn score(&mut self, jobs: Vec<Job>, depth: u32, actions: Vec<String>) -> Result<Vec<Candidate>> {
        let outcomes = self.run_jobs(&jobs)?;
        let mut out = Vec::with_capacity(jobs.len());
        for ((job, o), action) in jobs.into_iter().zip(outcomes).zip(actions) {
            let resolution = job.pair.resolution();
            let (fid, status) = if o.diverged || !o.fid.is_finite() {
                (f64::INFINITY, Status::Failed)
            } else {
                (o.fid, Status::Trained)
            };
            self.ensure_baseline(resolution)?;
            let base = self.baselines.get(resolution).unwrap_or(f64::NAN);
            out.push(Candidate {
                record: CandidateRecord {
                    id: job.id,
                    parent_id: job.parent_id,
                    action,
                    depth,
                    resolution,
                    g_params: job.pair.g_params(),
                    d_params: job.pair.d_params(),
                    fid,
                    nfid: fid / base,
                    seed: job.seed,
                    status,
                    wallclock_s: o.wallclock_s,
                },
                pair: job.pair,
            });
        }
        Ok(out)
    }

    fn prune_and_log(&mut self, scored: Vec<Candidate>, depth: u32) -> Result<Vec<Candidate>> {
        let (kept, pruned) = prune_topk(scored, self.cfg.k)?;
        let mut all: Vec<&Candidate> = kept.iter().chain(&pruned).collect();
        all.sort_by(|a, b| a.record.id.cmp(&b.record.id));
        for c in all {
            self.sink.append(&c.record)?;
            self.ledger.push(c.record.clone());
        }
        self.sink.depth_done(depth, &kept)?;
        Ok(kept)
    }
}

/// Trains the reference schedule up to `resolution` and returns the
/// baseline table, reusing any entries already in `baselines`.
pub fn run_reference<R: CandidateRunner, E: Executor, S: SearchSink>(
    cfg: &SearchConfig,
    runner: &R,
    exec: &E,
    sink: &mut S,
    baselines: BaselineTable,
    resolution: u32,
) -> Result<BaselineTable> {
    cfg.validate()?;
    let mut co = Coordinator { cfg, runner, exec, sink, baselines, ledger: Vec::new() };
    co.ensure_baseline(resolution)?;
    Ok(co.baselines)
}

/// Runs the search to `max_layers` growth steps and returns the best
/// candidate at the target resolution. `baselines` may be pre-filled; any
/// missing resolution is filled by training the reference schedule
/// (`GrowBoth` at every step) through the same runner.
pub fn run_search<R: CandidateRunner, E: Executor, S: SearchSink>(
    cfg: &SearchConfig,
    runner: &R,
    exec: &E,
    sink: &mut S,
    baselines: BaselineTable,
) -> Result<SearchResult> {
    cfg.validate()?;
    let mut co = Coordinator { cfg, runner, exec, sink, baselines, ledger: Vec::new() };

    let base = ArchPair::base(cfg.base);
    let jobs: Vec<Job> = (0..cfg.initial)
        .map(|i| {
            let id = format!("i{i}");
            Job { seed: job_seed(cfg.seed, &id), id, parent_id: None, pair: base.clone(), parent_pair: None, budget: 1 }
        })
        .collect();
    let actions = jobs.iter().map(|_| INITIAL.to_string()).collect();
    let scored = co.score(jobs, 0, actions)?;
    let mut pool = co.prune_and_log(scored, 0)?;
    let mut kept = alloc::vec![pool.iter().map(|c| c.record.id.clone()).collect::<Vec<_>>()];

    for depth in 1..=cfg.max_layers {
        let mut rng = rng_for(cfg.seed, &format!("search/depth{depth}"));
        let picks = sample_children(&pool, &cfg.actions, cfg.target_resolution, cfg.p, &mut rng)?;
        if picks.is_empty() {
            co.sink.depth_done(depth, &pool)?;
            continue;
        }
        let mut jobs = Vec::with_capacity(picks.len());
        let mut codes = Vec::with_capacity(picks.len());
        for (pi, action) in picks {
            let parent = &pool[pi];
            let code = action.to_string();
            let id = format!("{}.{}", parent.record.id, code);
            jobs.push(Job {
                seed: job_seed(cfg.seed, &id),
                id,
                parent_id: Some(parent.record.id.clone()),
                pair: apply_action(&parent.pair, action, cfg.target_resolution)?,
                parent_pair: Some(parent.pair.clone()),
                budget: 1,
            });
            codes.push(code);
        }
        let mut scored = co.score(jobs, depth, codes)?;
        for c in &mut scored {
            let parent = pool.iter().find(|p| Some(&p.record.id) == c.record.parent_id.as_ref());
            c.record.depth = parent.map_or(depth, |p| p.record.depth + 1);
        }
        pool = co.prune_and_log(scored, depth)?;
        kept.push(pool.iter().map(|c| c.record.id.clone()).collect());
    }

    let target = cfg.target_resolution;
    let best = co
        .ledger
        .iter()
        .filter(|r| r.resolution == target && r.fid.is_finite())
        .min_by(|a, b| rank_order(a, b))
        .cloned();
    let Some(best) = best else {
        let deepest = co.ledger.iter().map(|r| r.resolution).max().unwrap_or(cfg.base.d0);
        return Err(Error::contract(format!(
            "no candidate reached {target}px within {} growth steps; deepest resolution reached {deepest}px",
            cfg.max_layers
        )));
    };
    let pair = rebuild_pair(cfg, &co.ledger, &best.id)?;
    let final_outcome = if cfg.final_multiplier > 0 {
        let id = format!("{}.final", best.id);
        let job = Job {
            seed: job_seed(cfg.seed, &id),
            id,
            parent_id: Some(best.id.clone()),
            pair: pair.clone(),
            parent_pair: Some(pair.clone()),
            budget: cfg.final_multiplier,
        };
        Some(co.run_jobs(core::slice::from_ref(&job))?.remove(0))
    } else {
        None
    };
    Ok(SearchResult {
        best: Candidate { record: best, pair },
        final_outcome,
        ledger: co.ledger,
        kept,
        baselines: co.baselines,
    })
}

/// Replays the action chain recorded for `id` from the base pair.
pub fn rebuild_pair(cfg: &SearchConfig, ledger: &[CandidateRecord], id: &str) -> Result<ArchPair> {
    let chain = lineage(ledger, id)?;
    let mut pair = ArchPair::base(cfg.base);
    for r in chain.iter().rev() {
        if let Some(a) = r.growth_action()? {
            pair = apply_action(&pair, a, cfg.target_resolution)?;
        }
    }
    Ok(pair)
}

/// Records from `id` back to its initial ancestor, child first.
pub fn lineage<'a>(ledger: &'a [CandidateRecord], id: &str) -> Result<Vec<&'a CandidateRecord>> {
    let mut out = Vec::new();
    let mut cur = Some(id.to_string());
    while let Some(c) = cur {
        let r = ledger
            .iter()
            .find(|r| r.id == c)
            .ok_or_else(|| Error::contract(format!("ledger has no candidate {c:?}")))?;
        if out.len() > ledger.len() {
            return Err(Error::contract(format!("parent cycle through {c:?}")));
        }
        out.push(r);
        cur = r.parent_id.clone();
    }
    Ok(out)
}

/// Checks id uniqueness, parent ordering, `parent_id <=> depth > 0` and
/// that each lineage has exactly `depth` parent links.
pub fn check_ledger(ledger: &[CandidateRecord]) -> Result<()> {
    let mut seen: alloc::collections::BTreeMap<&str, &CandidateRecord> = alloc::collections::BTreeMap::new();
    for (line, r) in ledger.iter().enumerate() {
        if seen.contains_key(r.id.as_str()) {
            return Err(Error::contract(format!("record {line}: duplicate id {:?}", r.id)));
        }
        match &r.parent_id {
            None if r.depth != 0 => {
                return Err(Error::contract(format!("record {line}: {:?} has depth {} but no parent", r.id, r.depth)));
            }
            Some(_) if r.depth == 0 => {
                return Err(Error::contract(format!("record {line}: {:?} has a parent at depth 0", r.id)));
            }
            Some(p) => {
                let parent = seen
                    .get(p.as_str())
                    .ok_or_else(|| Error::contract(format!("record {line}: parent {p:?} not recorded earlier")))?;
                if parent.depth + 1 != r.depth {
                    return Err(Error::contract(format!("record {line}: depth {} under parent depth {}", r.depth, parent.depth)));
                }
            }
            None => {}
        }
        seen.insert(&r.id, r);
    }
    Ok(())
}
