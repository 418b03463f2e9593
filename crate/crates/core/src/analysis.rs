//! Post-hoc statistics over a search ledger. Everything here is a pure
//! function of the records.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::search::{check_ledger, lineage, rank_order, CandidateRecord, Status};
use crate::seed::unit_draw;

/// `child.nfid / parent.nfid`; below 1 is an improvement. `None` when
/// either score is not finite.
pub fn improvement(child: &CandidateRecord, parent: &CandidateRecord) -> Option<f64> {
    (child.nfid.is_finite() && parent.nfid.is_finite()).then(|| child.nfid / parent.nfid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionStats {
    pub action: String,
    /// Children with a finite improvement.
    pub count: usize,
    /// Children left out because they or their parent diverged.
    pub diverged: usize,
    pub pos_frac: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

fn by_id(ledger: &[CandidateRecord]) -> BTreeMap<&str, &CandidateRecord> {
    ledger.iter().map(|r| (r.id.as_str(), r)).collect()
}

/// Improvement statistics per action, sorted by action code.
pub fn action_stats(ledger: &[CandidateRecord]) -> Result<Vec<ActionStats>> {
    let ids = by_id(ledger);
    let mut groups: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in ledger {
        let Some(pid) = &r.parent_id else { continue };
        let parent = ids.get(pid.as_str()).ok_or_else(|| Error::contract(format!("{:?}: unknown parent {pid:?}", r.id)))?;
        let g = groups.entry(r.action.as_str()).or_default();
        match improvement(r, parent) {
            Some(v) => g.0.push(v),
            None => g.1 += 1,
        }
    }
    Ok(groups
        .into_iter()
        .map(|(action, (vals, diverged))| {
            let n = vals.len();
            let (mean, std, pos) = if n == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let pos = vals.iter().filter(|v| **v < 1.0).count() as f64 / n as f64;
                (mean, libm::sqrt(var), pos)
            };
            ActionStats { action: action.into(), count: n, diverged, pos_frac: pos, mean, std }
        })
        .collect())
}

/// Best finite-scored candidate at the highest resolution in the ledger.
pub fn best_candidate(ledger: &[CandidateRecord]) -> Option<&CandidateRecord> {
    let top = ledger.iter().filter(|r| r.fid.is_finite()).map(|r| r.resolution).max()?;
    ledger.iter().filter(|r| r.resolution == top && r.fid.is_finite()).min_by(|a, b| rank_order(a, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2dRow {
    pub id: String,
    pub ratio: f64,
    pub nfid: f64,
    pub best_path: bool,
}

/// One row per candidate that trained without diverging, in ledger order.
/// `best_path` marks the lineage of `best_candidate`.
pub fn g2d_report(ledger: &[CandidateRecord]) -> Result<Vec<G2dRow>> {
    let path: Vec<&str> = match best_candidate(ledger) {
        Some(b) => lineage(ledger, &b.id)?.iter().map(|r| r.id.as_str()).collect(),
        None => Vec::new(),
    };
    Ok(ledger
        .iter()
        .filter(|r| r.fid.is_finite())
        .map(|r| G2dRow {
            id: r.id.clone(),
            ratio: r.g_params as f64 / r.d_params as f64,
            nfid: r.nfid,
            best_path: path.contains(&r.id.as_str()),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskRow {
    pub threshold: f64,
    /// Share of good children among all children of good parents.
    pub good_ratio: Option<f64>,
    /// Share of good children among all children of sub-optimal parents.
    pub subopt_ratio: Option<f64>,
}

/// For each threshold `t`, a candidate is good iff `nfid < t`. Ratios pool
/// children over all parents of a class; a class with no children is
/// `None`. Diverged candidates count as sub-optimal.
pub fn pruning_risk(ledger: &[CandidateRecord], thresholds: &[f64]) -> Result<Vec<RiskRow>> {
    let ids = by_id(ledger);
    let mut pairs = Vec::new();
    for r in ledger {
        if let Some(pid) = &r.parent_id {
            let p = ids.get(pid.as_str()).ok_or_else(|| Error::contract(format!("{:?}: unknown parent {pid:?}", r.id)))?;
            pairs.push((p.nfid, r.nfid));
        }
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let mut counts = [[0usize; 2]; 2];
            for &(p, c) in &pairs {
                counts[(p < t) as usize][0] += 1;
                counts[(p < t) as usize][1] += (c < t) as usize;
            }
            let ratio = |[n, good]: [usize; 2]| (n > 0).then(|| good as f64 / n as f64);
            RiskRow { threshold: t, good_ratio: ratio(counts[1]), subopt_ratio: ratio(counts[0]) }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrial {
    pub trial: usize,
    /// Best nfid at the ledger's top resolution among visited candidates,
    /// `+inf` if none was reached.
    pub best_nfid: f64,
    /// Ids kept per depth.
    pub kept: Vec<Vec<String>>,
}

/// Ids not pruned, grouped by depth.
pub fn recorded_kept(ledger: &[CandidateRecord]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<&CandidateRecord>> = Vec::new();
    for r in ledger.iter().filter(|r| r.status != Status::Pruned) {
        let d = r.depth as usize;
        if out.len() <= d {
            out.resize(d + 1, Vec::new());
        }
        out[d].push(r);
    }
    out.into_iter()
        .map(|mut v| {
            v.sort_by(|a, b| rank_order(a, b));
            v.into_iter().map(|r| r.id.clone()).collect()
        })
        .collect()
}

/// Replays the search over recorded candidates only, with pool size `k`
/// and child sampling probability `p`. A child not in the ledger was never
/// trained and is ignored. Child draws depend on `(seed, trial, id)` only.
pub fn simulate_kp(ledger: &[CandidateRecord], k: usize, p: f64, seed: u64, trials: usize) -> Result<Vec<SimTrial>> {
    if k == 0 || !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("simulation needs K >= 1 and p in (0, 1], got K={k} p={p}")));
    }
    check_ledger(ledger)?;
    let mut children: BTreeMap<&str, Vec<&CandidateRecord>> = BTreeMap::new();
    let mut initial = Vec::new();
    for r in ledger {
        match &r.parent_id {
            Some(pid) => children.entry(pid.as_str()).or_default().push(r),
            None => initial.push(r),
        }
    }
    if initial.is_empty() && !ledger.is_empty() {
        return Err(Error::contract("ledger has no initial candidates"));
    }
    let top = ledger.iter().map(|r| r.resolution).max().unwrap_or(0);
    fn topk(mut v: Vec<&CandidateRecord>, k: usize) -> Vec<&CandidateRecord> {
        v.sort_by(|a, b| rank_order(a, b));
        v.truncate(k);
        v
    }
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut best = f64::INFINITY;
        let mut visit = |rs: &[&CandidateRecord]| {
            for r in rs.iter().filter(|r| r.resolution == top && r.fid.is_finite()) {
                best = best.min(r.nfid);
            }
        };
        visit(&initial);
        let mut pool = topk(initial.clone(), k);
        let mut kept = Vec::new();
        while !pool.is_empty() {
            kept.push(pool.iter().map(|r| r.id.clone()).collect());
            let sampled: Vec<&CandidateRecord> = pool
                .iter()
                .flat_map(|r| children.get(r.id.as_str()).into_iter().flatten())
                .filter(|c| p >= 1.0 || unit_draw(seed, &format!("sim/{trial}/{}", c.id)) < p)
                .copied()
                .collect();
            visit(&sampled);
            pool = topk(sampled, k);
        }
        out.push(SimTrial { trial, best_nfid: best, kept });
    }
    Ok(out)
}

/// Median with the mean of the middle pair for even lengths; NaN if empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
