//! Brute-force recomputation of the ledger analyses.

#![allow(dead_code)]

use dggan_core::analysis::{action_stats, pruning_risk};
use dggan_core::search::CandidateRecord;

pub const THRESHOLDS: [f64; 11] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0];

fn parent_of<'a>(ledger: &'a [CandidateRecord], r: &CandidateRecord) -> Option<&'a CandidateRecord> {
    let pid = r.parent_id.as_deref()?;
    ledger.iter().find(|p| p.id == pid)
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Every disagreement between the library analyses and a direct
/// recomputation; empty when they match exactly.
pub fn analysis_mismatches(ledger: &[CandidateRecord]) -> Vec<String> {
    let mut bad = Vec::new();
    let stats = action_stats(ledger).unwrap();

    let mut actions: Vec<&str> = ledger.iter().filter(|r| r.parent_id.is_some()).map(|r| r.action.as_str()).collect();
    actions.sort();
    actions.dedup();
    if stats.iter().map(|s| s.action.as_str()).collect::<Vec<_>>() != actions {
        bad.push(format!("action set {:?} vs {actions:?}", stats.iter().map(|s| &s.action).collect::<Vec<_>>()));
    }
    for s in &stats {
        let mut ratios = Vec::new();
        let mut skipped = 0;
        for r in ledger.iter().filter(|r| r.action == s.action) {
            let Some(p) = parent_of(ledger, r) else { continue };
            if r.nfid.is_finite() && p.nfid.is_finite() {
                ratios.push(r.nfid / p.nfid);
            } else {
                skipped += 1;
            }
        }
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let std = (ratios.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let pos = ratios.iter().filter(|v| **v < 1.0).count() as f64 / n;
        let (mean, std, pos) = if ratios.is_empty() { (f64::NAN, f64::NAN, f64::NAN) } else { (mean, std, pos) };
        if s.count != ratios.len() || s.diverged != skipped || !same(s.mean, mean) || !same(s.std, std) || !same(s.pos_frac, pos) {
            bad.push(format!("{}: {s:?} vs count {} diverged {skipped} mean {mean} std {std} pos {pos}", s.action, ratios.len()));
        }
    }

    for row in pruning_risk(ledger, &THRESHOLDS).unwrap() {
        let t = row.threshold;
        let (mut gn, mut gg, mut sn, mut sg) = (0usize, 0usize, 0usize, 0usize);
        for child in ledger {
            let Some(parent) = parent_of(ledger, child) else { continue };
            let good = child.nfid < t;
            if parent.nfid < t {
                gn += 1;
                gg += good as usize;
            } else {
                sn += 1;
                sg += good as usize;
            }
        }
        let good = (gn > 0).then(|| gg as f64 / gn as f64);
        let subopt = (sn > 0).then(|| sg as f64 / sn as f64);
        if row.good_ratio != good || row.subopt_ratio != subopt {
            bad.push(format!("risk at {t}: {row:?} vs {good:?} {subopt:?}"));
        }
    }
    bad
}
