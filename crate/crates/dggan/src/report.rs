//! CSV exports of the ledger analyses.

use std::path::Path;

use dggan_core::analysis::{ActionStats, G2dRow, RiskRow, SimTrial};

use crate::error::{IoContext, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(mut w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.flush().map_err(csv::Error::from)?;
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub fn g2d_csv(rows: &[G2dRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ratio", "nfid", "best_path"])?;
    for r in rows {
        w.write_record([r.ratio.to_string(), r.nfid.to_string(), r.best_path.to_string()])?;
    }
    finish(w)
}

pub fn actions_csv(rows: &[ActionStats]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["action", "count", "pos_frac", "mean", "std"])?;
    for r in rows {
        w.write_record([r.action.clone(), r.count.to_string(), r.pos_frac.to_string(), r.mean.to_string(), r.std.to_string()])?;
    }
    finish(w)
}

pub fn risk_csv(rows: &[RiskRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "good_ratio", "subopt_ratio"])?;
    for r in rows {
        w.write_record([r.threshold.to_string(), opt(r.good_ratio), opt(r.subopt_ratio)])?;
    }
    finish(w)
}

pub struct SimRow {
    pub k: usize,
    pub p: f64,
    pub trial: SimTrial,
}

pub fn sim_csv(rows: &[SimRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["K", "p", "trial", "best_nfid"])?;
    for r in rows {
        w.write_record([r.k.to_string(), r.p.to_string(), r.trial.trial.to_string(), r.trial.best_nfid.to_string()])?;
    }
    finish(w)
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).at(path)
}
