//! Inpaint/detect/rank workers: the line protocol, a subprocess client, and
//! the synthetic simulator.

pub mod process;
pub mod protocol;
pub mod sim;

use std::sync::Arc;

pub use process::{ProcessWorker, WorkerSettings, WORKER_ENV};
pub use protocol::{Op, Status, WorkerRequest, WorkerResponse};
pub use sim::{SimWorld, Simulator, SyntheticScene};

use crate::error::Result;

/// Anything that answers protocol requests, one at a time.
pub trait Worker: Send {
    fn call(&mut self, request: &WorkerRequest) -> Result<WorkerResponse>;
}

impl<W: Worker + ?Sized> Worker for Box<W> {
    fn call(&mut self, request: &WorkerRequest) -> Result<WorkerResponse> {
        (**self).call(request)
    }
}

/// Builds `lanes` simulator handles sharing one world.
pub fn sim_pool(world: Arc<SimWorld>, lanes: usize) -> Vec<Box<dyn Worker>> {
    (0..lanes.max(1))
        .map(|_| Box::new(Simulator::new(world.clone())) as Box<dyn Worker>)
        .collect()
}

/// Builds `lanes` subprocess workers running the same command.
pub fn process_pool(program: &str, args: &[String], settings: &WorkerSettings, lanes: usize) -> Vec<Box<dyn Worker>> {
    (0..lanes.max(1))
        .map(|_| Box::new(ProcessWorker::new(program, args.to_vec(), settings.clone())) as Box<dyn Worker>)
        .collect()
}
