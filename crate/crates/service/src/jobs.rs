use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub kind: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

/// Lets a running job report progress.
#[derive(Clone)]
pub struct JobHandle {
    id: String,
    jobs: Arc<RwLock<BTreeMap<String, JobView>>>,
}

impl JobHandle {
    pub fn progress(&self, done: usize, total: usize) {
        if let Some(j) = self.jobs.write().get_mut(&self.id) {
            j.progress = Some(Progress { done, total });
        }
    }
}

type Task = Box<dyn FnOnce(&JobHandle) -> Result<Value, ApiError> + Send>;

/// Fixed-size worker pool; finished jobs keep their result.
pub struct JobQueue {
    jobs: Arc<RwLock<BTreeMap<String, JobView>>>,
    sender: Mutex<Option<Sender<(JobHandle, Task)>>>,
    next: Mutex<u64>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl JobQueue {
    pub fn new(workers: usize) -> Self {
        let (tx, rx) = mpsc::channel::<(JobHandle, Task)>();
        let rx = Arc::new(Mutex::new(rx));
        let jobs = Arc::new(RwLock::new(BTreeMap::new()));
        let handles = (0..workers.max(1))
            .map(|i| {
                let rx: Arc<Mutex<Receiver<(JobHandle, Task)>>> = rx.clone();
                std::thread::Builder::new()
                    .name(format!("mpe-job-{i}"))
                    .spawn(move || loop {
                        let next = rx.lock().recv();
                        let Ok((handle, task)) = next else { break };
                        run(handle, task);
                    })
                    .expect("spawn job worker")
            })
            .collect();
        Self { jobs, sender: Mutex::new(Some(tx)), next: Mutex::new(0), workers: Mutex::new(handles) }
    }

    pub fn submit(
        &self,
        kind: &str,
        task: impl FnOnce(&JobHandle) -> Result<Value, ApiError> + Send + 'static,
    ) -> Result<String, ApiError> {
        let id = {
            let mut n = self.next.lock();
            *n += 1;
            format!("job-{n}")
        };
        self.jobs.write().insert(
            id.clone(),
            JobView { id: id.clone(), kind: kind.into(), status: JobStatus::Queued, progress: None, result: None, error: None },
        );
        let handle = JobHandle { id: id.clone(), jobs: self.jobs.clone() };
        let sender = self.sender.lock();
        let tx = sender.as_ref().ok_or_else(|| ApiError::backend("job queue is shut down"))?;
        tx.send((handle, Box::new(task))).map_err(|_| ApiError::backend("job queue is shut down"))?;
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<JobView> {
        self.jobs.read().get(id).cloned()
    }

    /// Blocks until the job finishes. Test helper.
    pub fn wait(&self, id: &str) -> Option<JobView> {
        loop {
            let j = self.get(id)?;
            if matches!(j.status, JobStatus::Succeeded | JobStatus::Failed) {
                return Some(j);
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
    }

    /// Stops accepting jobs and waits for queued ones to finish.
    pub fn shutdown(&self) {
        self.sender.lock().take();
        for h in self.workers.lock().drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn run(handle: JobHandle, task: Task) {
    if let Some(j) = handle.jobs.write().get_mut(&handle.id) {
        j.status = JobStatus::Running;
    }
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| task(&handle)))
        .unwrap_or_else(|_| Err(ApiError::backend("job panicked")));
    if let Some(j) = handle.jobs.write().get_mut(&handle.id) {
        match outcome {
            Ok(v) => {
                j.status = JobStatus::Succeeded;
                j.result = Some(v);
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(e);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_and_reports() {
        let q = JobQueue::new(2);
        let ok = q.submit("t", |h| {
            h.progress(1, 1);
            Ok(serde_json::json!(42))
        }).unwrap();
        let bad = q.submit("t", |_| Err(ApiError::invalid("nope"))).unwrap();
        let ok = q.wait(&ok).unwrap();
        assert_eq!(ok.status, JobStatus::Succeeded);
        assert_eq!(ok.result, Some(serde_json::json!(42)));
        assert_eq!(ok.progress, Some(Progress { done: 1, total: 1 }));
        assert_eq!(q.wait(&bad).unwrap().status, JobStatus::Failed);
        assert!(q.get("job-99").is_none());
    }
}
