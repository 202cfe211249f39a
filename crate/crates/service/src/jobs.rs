//! Background training jobs, at most one per source state.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use workbench::error::Error;
use workbench::workspace::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub source_state: String,
    pub status: JobState,
    /// Last finished epoch while running.
    pub epoch: Option<u32>,
    pub epochs: u32,
    pub state_id: Option<String>,
    pub run_id: Option<String>,
    pub diverged: Option<bool>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub state: String,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub epochs: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Default)]
struct Inner {
    next: u64,
    jobs: BTreeMap<String, JobStatus>,
    busy: BTreeSet<String>,
}

#[derive(Clone, Default)]
pub struct JobManager {
    inner: Arc<Mutex<Inner>>,
}

/// Marks a source state busy until dropped.
pub struct Reservation {
    inner: Arc<Mutex<Inner>>,
    state: String,
}

impl Drop for Reservation {
    fn drop(&mut self) {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).busy.remove(&self.state);
    }
}

impl JobManager {
    pub fn reserve(&self, state_id: &str) -> Result<Reservation, Error> {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if !g.busy.insert(state_id.to_string()) {
            return Err(Error::Busy(format!("state {state_id:?} is already being trained")));
        }
        Ok(Reservation {
            inner: self.inner.clone(),
            state: state_id.to_string(),
        })
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobStatus)) {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(j) = g.jobs.get_mut(job_id) {
            f(j);
        }
    }

    pub fn get(&self, job_id: &str) -> Option<JobStatus> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).jobs.get(job_id).cloned()
    }

    /// Queues a training job and starts it on the blocking pool.
    pub fn submit(&self, ws: Arc<Workspace>, req: TrainRequest) -> Result<JobStatus, Error> {
        let state = ws.get_state(&req.state)?;
        let epochs = req.epochs.unwrap_or(state.hyperparams.epochs);
        let seed = req.seed.unwrap_or(state.hyperparams.seed);
        let reservation = self.reserve(&req.state)?;
        let status = {
            let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
            g.next += 1;
            let status = JobStatus {
                job_id: format!("job-{}", g.next),
                source_state: req.state.clone(),
                status: JobState::Queued,
                epoch: None,
                epochs,
                state_id: None,
                run_id: None,
                diverged: None,
                message: None,
            };
            g.jobs.insert(status.job_id.clone(), status.clone());
            status
        };
        let jobs = self.clone();
        let job_id = status.job_id.clone();
        tokio::task::spawn_blocking(move || {
            let _reservation = reservation;
            jobs.update(&job_id, |j| {
                j.status = JobState::Running;
                j.epoch = Some(0);
            });
            let progress = jobs.clone();
            let result = ws.train(&req.state, req.dataset.as_deref(), Some((epochs, seed)), |e| {
                progress.update(&job_id, |j| j.epoch = Some(e));
            });
            jobs.update(&job_id, |j| match result {
                Ok(s) => {
                    j.status = JobState::Done;
                    j.state_id = Some(s.state_id);
                    j.run_id = Some(s.run_id);
                    j.diverged = Some(s.diverged);
                }
                Err(e) => {
                    j.status = JobState::Failed;
                    j.message = Some(e.to_string());
                }
            });
        });
        Ok(status)
    }
}
