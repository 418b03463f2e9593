//! Worker pool for independent jobs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dggan_core::search::{CandidateRunner, Executor, Job, Outcome};

/// Runs up to `workers` jobs at once on scoped threads. Results come back in
/// job order whatever order they finish in.
pub struct Threaded {
    pub workers: usize,
}

impl Executor for Threaded {
    fn execute<R: CandidateRunner>(&self, runner: &R, jobs: &[Job]) -> Vec<dggan_core::Result<Outcome>> {
        let n = self.workers.max(1).min(jobs.len());
        if n <= 1 {
            return jobs.iter().map(|j| runner.run(j)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<dggan_core::Result<Outcome>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..n {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let r = runner.run(job);
                    *slots[i].lock().expect("slot poisoned") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot poisoned").expect("every job ran"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dggan_core::arch::{ArchPair, BaseConfig};

    struct Echo;

    impl CandidateRunner for Echo {
        fn run(&self, job: &Job) -> dggan_core::Result<Outcome> {
            Ok(Outcome { fid: job.seed as f64, diverged: false, wallclock_s: 0.0 })
        }
    }

    #[test]
    fn results_in_job_order() {
        let pair = ArchPair::base(BaseConfig { d0: 4, latent_dim: 2, base_channels: 2, min_stage_channels: 1 });
        let jobs: Vec<Job> = (0..17)
            .map(|i| Job { id: format!("j{i}"), parent_id: None, pair: pair.clone(), parent_pair: None, seed: i, budget: 1 })
            .collect();
        for workers in [1, 3, 8] {
            let out: Vec<f64> = Threaded { workers }.execute(&Echo, &jobs).into_iter().map(|r| r.unwrap().fid).collect();
            assert_eq!(out, (0..17).map(|i| i as f64).collect::<Vec<_>>());
        }
        assert!(Threaded { workers: 4 }.execute(&Echo, &[]).is_empty());
    }
}
