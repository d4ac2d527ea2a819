use std::collections::HashMap;
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::Serialize;

use crate::edit::Model;
use crate::invert::{invert_with, InversionConfig};
use crate::nerf::{CameraPose, Codes};
use crate::raster::Image;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

/// Public view of an inversion job.
#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub job: String,
    pub checkpoint: String,
    pub status: JobState,
    /// Completed optimisation steps.
    pub iteration: usize,
    pub total_steps: usize,
    pub error: Option<String>,
    pub session: Option<String>,
    pub psnr: Option<f64>,
}

pub(crate) struct JobResult {
    pub codes: Codes,
    pub pose: CameraPose,
}

pub(crate) type JobTable = Arc<Mutex<HashMap<String, JobStatus>>>;

struct Request {
    id: String,
    image: Image,
    on_success: Box<dyn FnOnce(JobResult) -> String + Send>,
}

/// One background thread per checkpoint running inversions in FIFO order.
pub(crate) struct InversionWorker {
    queue: Sender<Request>,
}

impl InversionWorker {
    pub fn spawn(model: Arc<Model>, config: InversionConfig, jobs: JobTable) -> Self {
        let (queue, rx) = channel::<Request>();
        thread::spawn(move || {
            for req in rx {
                let update = |f: &dyn Fn(&mut JobStatus)| {
                    if let Some(s) = jobs.lock().expect("job table").get_mut(&req.id) {
                        f(s);
                    }
                };
                update(&|s| s.status = JobState::Running);
                let ck = &model.checkpoint;
                let result = invert_with(&ck.generator, &ck.config.render, model.backend.as_ref(), &req.image, &config, |state| {
                    update(&|s| s.iteration = state.iteration);
                });
                match result {
                    Ok(report) => {
                        let session = (req.on_success)(JobResult { codes: report.codes, pose: report.pose });
                        update(&|s| {
                            s.status = JobState::Succeeded;
                            s.session = Some(session.clone());
                            s.psnr = Some(report.psnr);
                            s.iteration = report.steps;
                        });
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        update(&|s| {
                            s.status = JobState::Failed;
                            s.error = Some(msg.clone());
                        });
                    }
                }
            }
        });
        InversionWorker { queue }
    }

    pub fn submit(&self, id: String, image: Image, on_success: Box<dyn FnOnce(JobResult) -> String + Send>) -> bool {
        self.queue.send(Request { id, image, on_success }).is_ok()
    }
}
