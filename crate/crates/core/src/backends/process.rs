//! External model processes speaking one JSON object per line on stdio.
//!
//! Request: `{"id": n, "op": "detect_lines"|"detect_words"|"classify"|"embed",
//! "image_path": "...", "context": "..."}` where `image_path` points at a
//! temporary PNG of the page, line crop or word crop and `context` is the
//! context id. The response echoes `id` and carries `detections`,
//! `candidates`, `vector` or `error`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};

use super::{
    vector_from_wire, BackendError, Candidate, Classifier, Embedder, LineContext, LineDetector, ResponseRecord,
    WordContext, WordDetector,
};
use crate::geometry::{AxisBox, OrientedBox};
use crate::imaging::Raster;
use crate::postprocess::Detection;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// The operations a process answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DetectLines,
    DetectWords,
    Classify,
    Embed,
    All,
}

impl Role {
    fn allows(self, op: Role) -> bool {
        self == Role::All || self == op
    }

    fn op_name(self) -> &'static str {
        match self {
            Role::DetectLines => "detect_lines",
            Role::DetectWords => "detect_words",
            Role::Classify => "classify",
            Role::Embed => "embed",
            Role::All => "all",
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    op: &'a str,
    image_path: &'a str,
    context: &'a str,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
    next_id: u64,
}

impl Running {
    fn stop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn exit_status(&mut self) -> String {
        match self.child.wait() {
            Ok(s) => s.to_string(),
            Err(e) => e.to_string(),
        }
    }
}

/// One child process; requests are serialized. Once the child exits or
/// times out every later request fails with [`BackendError::Exited`].
pub struct ProcessBackend {
    command: String,
    role: Role,
    timeout: Duration,
    dimension: usize,
    state: Mutex<Option<Running>>,
}

impl ProcessBackend {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str, role: Role, timeout: Duration, dimension: usize) -> Result<Self, BackendError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BackendError::Io { context: format!("spawning {command:?}"), source })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            role,
            timeout,
            dimension,
            state: Mutex::new(Some(Running { child, stdin, replies, next_id: 0 })),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn request(&self, op: Role, image: &Raster, context: &str) -> Result<ResponseRecord, BackendError> {
        if !self.role.allows(op) {
            return Err(BackendError::Config(format!(
                "process {:?} does not serve {}",
                self.command,
                op.op_name()
            )));
        }
        let file = tempfile::Builder::new()
            .prefix("minuscule-")
            .suffix(".png")
            .tempfile()
            .map_err(|source| BackendError::Io { context: "creating a temporary crop".into(), source })?;
        image
            .save_png(file.path())
            .map_err(|e| BackendError::Invalid(format!("writing crop: {e}")))?;

        let mut guard = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let Some(run) = guard.as_mut() else {
            return Err(BackendError::Exited("process is no longer running".into()));
        };
        let id = run.next_id;
        run.next_id += 1;
        let path = file.path().to_string_lossy();
        let line = serde_json::to_string(&Request { id, op: op.op_name(), image_path: &path, context })
            .expect("request serializes");
        debug!("-> {line}");
        let sent = writeln!(run.stdin, "{line}").and_then(|_| run.stdin.flush());
        if sent.is_err() {
            let status = run.exit_status();
            *guard = None;
            return Err(BackendError::Exited(status));
        }
        let reply = match run.replies.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                run.stop();
                *guard = None;
                return Err(BackendError::Protocol(format!("unreadable response: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                run.stop();
                *guard = None;
                return Err(BackendError::Timeout(self.timeout.as_secs_f64()));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = run.exit_status();
                *guard = None;
                return Err(BackendError::Exited(status));
            }
        };
        drop(guard);
        debug!("<- {reply}");
        let rec: ResponseRecord = serde_json::from_str(&reply)
            .map_err(|e| BackendError::Protocol(format!("malformed response {reply:?}: {e}")))?;
        if rec.id != Some(id) {
            return Err(BackendError::Protocol(format!("response id {:?} does not match request id {id}", rec.id)));
        }
        if let Some(e) = rec.error {
            return Err(BackendError::Remote(e));
        }
        Ok(rec)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Some(run) = self.state.get_mut().unwrap_or_else(|p| p.into_inner()).as_mut() {
            run.stop();
        }
    }
}

fn missing(field: &str, op: Role) -> BackendError {
    BackendError::Protocol(format!("{} response lacks `{field}`", op.op_name()))
}

impl LineDetector for ProcessBackend {
    fn detect_lines(&self, page: &Raster, image_id: &str) -> Result<Vec<Detection<OrientedBox>>, BackendError> {
        let rec = self.request(Role::DetectLines, page, image_id)?;
        rec.detections
            .ok_or_else(|| missing("detections", Role::DetectLines))?
            .into_iter()
            .map(|d| d.into_line().map_err(BackendError::Protocol))
            .collect()
    }
}

impl WordDetector for ProcessBackend {
    fn detect_words(&self, crop: &Raster, ctx: &LineContext) -> Result<Vec<Detection<AxisBox>>, BackendError> {
        let rec = self.request(Role::DetectWords, crop, &ctx.id())?;
        rec.detections
            .ok_or_else(|| missing("detections", Role::DetectWords))?
            .into_iter()
            .map(|d| d.into_word().map_err(BackendError::Protocol))
            .collect()
    }
}

impl Classifier for ProcessBackend {
    fn classify(&self, crop: &Raster, ctx: &WordContext) -> Result<Vec<Candidate>, BackendError> {
        let rec = self.request(Role::Classify, crop, &ctx.id())?;
        rec.candidates.ok_or_else(|| missing("candidates", Role::Classify))
    }
}

impl Embedder for ProcessBackend {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, crop: &Raster, ctx: &WordContext) -> Result<Vec<f32>, BackendError> {
        let rec = self.request(Role::Embed, crop, &ctx.id())?;
        let v = rec.vector.ok_or_else(|| missing("vector", Role::Embed))?;
        vector_from_wire(&v).map_err(BackendError::Protocol)
    }
}
