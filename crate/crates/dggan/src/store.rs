//! On-disk layout of a run directory.
//!
//! ```text
//! config.json            the RunConfig the run started with
//! ledger.jsonl           one CandidateRecord per line
//! baselines.json         reference FID per resolution
//! real_stats/<R>.dgck    feature statistics of the dataset at R px
//! candidates/<id>/       stats.json, result.json
//! checkpoints/<sha256>/  pair.json, weights.dgck
//! best.json              best candidate and its final score
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use dggan_core::arch::{ArchPair, PairWeights, WeightSet};
use dggan_core::checkpoint;
use dggan_core::fid::{BaselineTable, GaussianStats};
use dggan_core::train::LossSample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Per-candidate training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainLog {
    pub candidate_id: String,
    pub losses: Vec<LossSample>,
    pub diverged: bool,
    pub wallclock_s: f64,
}

/// Written last for a finished job; its presence marks the job done.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobResult {
    pub id: String,
    /// `None` for a diverged or non-finite score.
    pub fid: Option<f64>,
    pub diverged: bool,
    pub wallclock_s: f64,
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestSummary {
    pub id: String,
    pub resolution: u32,
    pub fid: f64,
    pub nfid: f64,
    pub final_fid: Option<f64>,
    pub checkpoint: String,
}

#[derive(Clone, Debug)]
pub struct FileStore {
    root: PathBuf,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), line: source.line(), source })
}

pub fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Loads a checkpoint directory, or the directory holding a `weights.dgck`
/// file.
pub fn load_checkpoint(path: &Path) -> Result<(ArchPair, PairWeights)> {
    let dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
    let pair: ArchPair = read_json(&dir.join("pair.json"))?;
    pair.validate()?;
    let wpath = dir.join("weights.dgck");
    let bytes = fs::read(&wpath).at(&wpath)?;
    let all = checkpoint::decode_weights(&bytes)?;
    let mut w = PairWeights::default();
    for (name, t) in all.iter() {
        let ws: &mut WeightSet = if name.starts_with("g/") { &mut w.g } else { &mut w.d };
        ws.insert(name.clone(), t.clone());
    }
    w.check(&pair)?;
    Ok((pair, w))
}

impl FileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn baselines_path(&self) -> PathBuf {
        self.root.join("baselines.json")
    }

    pub fn best_path(&self) -> PathBuf {
        self.root.join("best.json")
    }

    pub fn candidate_dir(&self, id: &str) -> PathBuf {
        self.root.join("candidates").join(id)
    }

    pub fn checkpoint_dir(&self, hash: &str) -> PathBuf {
        self.root.join("checkpoints").join(hash)
    }

    fn stats_path(&self, resolution: u32) -> PathBuf {
        self.root.join("real_stats").join(format!("{resolution}.dgck"))
    }

    /// Stores pair and weights under the SHA-256 of their bytes and returns
    /// the hash.
    pub fn save_checkpoint(&self, pair: &ArchPair, w: &PairWeights) -> Result<String> {
        let pair_json = json_bytes(pair);
        let all: WeightSet = w.g.iter().chain(w.d.iter()).map(|(n, t)| (n.clone(), t.clone())).collect();
        let weights = checkpoint::encode_weights(&all)?;
        let mut h = Sha256::new();
        h.update((pair_json.len() as u64).to_le_bytes());
        h.update(&pair_json);
        h.update(&weights);
        let hash = hex::encode(h.finalize());
        let dir = self.checkpoint_dir(&hash);
        if !dir.join("weights.dgck").exists() {
            write_atomic(&dir.join("pair.json"), &pair_json)?;
            write_atomic(&dir.join("weights.dgck"), &weights)?;
        }
        Ok(hash)
    }

    pub fn load_checkpoint(&self, hash: &str) -> Result<(ArchPair, PairWeights)> {
        load_checkpoint(&self.checkpoint_dir(hash))
    }

    pub fn save_result(&self, r: &JobResult, log: &TrainLog) -> Result<()> {
        let dir = self.candidate_dir(&r.id);
        write_atomic(&dir.join("stats.json"), &json_bytes(log))?;
        write_atomic(&dir.join("result.json"), &json_bytes(r))
    }

    pub fn load_result(&self, id: &str) -> Result<Option<JobResult>> {
        let p = self.candidate_dir(id).join("result.json");
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn load_log(&self, id: &str) -> Result<TrainLog> {
        read_json(&self.candidate_dir(id).join("stats.json"))
    }

    pub fn save_stats(&self, resolution: u32, s: &GaussianStats) -> Result<()> {
        write_atomic(&self.stats_path(resolution), &checkpoint::encode_stats(s)?)
    }

    pub fn load_stats(&self, resolution: u32) -> Result<Option<GaussianStats>> {
        let p = self.stats_path(resolution);
        if !p.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&p).at(&p)?;
        Ok(Some(checkpoint::decode_stats(&bytes)?))
    }

    pub fn save_baselines(&self, t: &BaselineTable) -> Result<()> {
        write_atomic(&self.baselines_path(), &json_bytes(t))
    }

    pub fn load_baselines(&self) -> Result<BaselineTable> {
        let p = self.baselines_path();
        if !p.exists() {
            return Ok(BaselineTable::new());
        }
        read_json(&p)
    }
}
