//! Subprocess worker speaking the line protocol over stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{WorkerRequest, WorkerResponse};
use super::Worker;
use crate::error::{Error, Result};

/// Environment variable naming the worker command line.
pub const WORKER_ENV: &str = "PRIOR_FORGE_WORKER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerSettings {
    pub timeout_ms: u64,
    /// Extra attempts after the first one times out or the process dies.
    pub retries: u32,
}

impl Default for WorkerSettings {
    fn default() -> Self {
        WorkerSettings { timeout_ms: 60_000, retries: 2 }
    }
}

/// Splits a worker command line on whitespace: program first, then arguments.
pub fn parse_command(line: &str) -> Result<(String, Vec<String>)> {
    let mut parts = line.split_whitespace().map(str::to_owned);
    let program = parts
        .next()
        .ok_or_else(|| Error::config(format!("{WORKER_ENV} is empty")))?;
    Ok((program, parts.collect()))
}

/// Reads the worker command from [`WORKER_ENV`].
pub fn command_from_env() -> Result<(String, Vec<String>)> {
    let line = std::env::var(WORKER_ENV)
        .map_err(|_| Error::config(format!("{WORKER_ENV} is not set")))?;
    parse_command(&line)
}

struct Live {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Live {
    fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Worker(format!("cannot start worker {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Live { child, stdin, lines: rx })
    }
}

impl Drop for Live {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Attempt {
    Done(WorkerResponse),
    Retry(String),
}

/// One worker process. Requests are serialized; ids increase monotonically
/// for the lifetime of the handle, across restarts.
pub struct ProcessWorker {
    program: String,
    args: Vec<String>,
    settings: WorkerSettings,
    next_id: u64,
    live: Option<Live>,
}

impl ProcessWorker {
    pub fn new(program: impl Into<String>, args: Vec<String>, settings: WorkerSettings) -> Self {
        ProcessWorker { program: program.into(), args, settings, next_id: 1, live: None }
    }

    fn attempt(&mut self, line: &str, id: u64) -> Result<Attempt> {
        if self.live.is_none() {
            self.live = Some(Live::spawn(&self.program, &self.args)?);
        }
        let live = self.live.as_mut().expect("spawned above");
        if let Err(e) = live.stdin.write_all(line.as_bytes()).and_then(|_| live.stdin.flush()) {
            self.live = None;
            return Ok(Attempt::Retry(format!("write failed: {e}")));
        }
        let deadline = Instant::now() + Duration::from_millis(self.settings.timeout_ms);
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match live.lines.recv_timeout(left) {
                Ok(Ok(raw)) => {
                    if raw.trim().is_empty() {
                        continue;
                    }
                    let resp = WorkerResponse::parse_line(&raw).inspect_err(|_| {
                        log::error!("malformed worker reply: {raw}");
                    })?;
                    if resp.id < id {
                        log::warn!("dropping stale reply id={} (waiting for {id})", resp.id);
                        continue;
                    }
                    if resp.id > id {
                        return Err(Error::Protocol {
                            message: format!("reply id {} does not match request id {id}", resp.id),
                            raw,
                        });
                    }
                    return Ok(Attempt::Done(resp));
                }
                Ok(Err(e)) => {
                    self.live = None;
                    return Ok(Attempt::Retry(format!("read failed: {e}")));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.live = None;
                    return Ok(Attempt::Retry("worker exited".into()));
                }
                Err(RecvTimeoutError::Timeout) => {
                    // a wedged process cannot be trusted with the next request
                    self.live = None;
                    return Ok(Attempt::Retry(format!("timed out after {} ms", self.settings.timeout_ms)));
                }
            }
        }
    }
}

impl Worker for ProcessWorker {
    fn call(&mut self, request: &WorkerRequest) -> Result<WorkerResponse> {
        let mut last = String::new();
        for attempt in 0..=self.settings.retries {
            let id = self.next_id;
            self.next_id += 1;
            let mut req = request.clone();
            req.id = id;
            match self.attempt(&req.to_line()?, id)? {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Retry(why) => {
                    log::warn!("worker request {id} ({}) attempt {attempt}: {why}", req.op.as_str());
                    last = why;
                }
            }
        }
        Err(Error::Worker(format!(
            "{} request failed after {} attempts: {last}",
            request.op.as_str(),
            self.settings.retries + 1
        )))
    }
}
