//! Client for a model backend running as a child process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use crate::types::Image;

use super::protocol::{parse_info, parse_predict, parse_response, Request};
use super::{
    check_shapes, validate_probabilities, BackendError, BackendInfo, ModelBackend,
    EXTERNAL_SUM_TOLERANCE,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

struct Connection {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    dead: bool,
}

impl Connection {
    fn roundtrip(&mut self, line: &str, timeout: Duration) -> Result<String, BackendError> {
        if self.dead {
            return Err(BackendError::Closed);
        }
        let stdin = self.stdin.as_mut().ok_or(BackendError::Closed)?;
        let sent = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        if let Err(e) = sent {
            self.dead = true;
            return Err(match e.kind() {
                std::io::ErrorKind::BrokenPipe => BackendError::Closed,
                _ => BackendError::Io(e),
            });
        }
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => {
                self.dead = true;
                Err(BackendError::Io(e))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.dead = true;
                Err(BackendError::Closed)
            }
            Err(RecvTimeoutError::Timeout) => {
                // the stream is out of step with our requests now
                self.dead = true;
                let _ = self.child.kill();
                Err(BackendError::Timeout(timeout))
            }
        }
    }
}

/// A backend process speaking the JSON-lines protocol on stdin/stdout.
///
/// One request is in flight per connection; concurrent callers are
/// serialized on an internal lock.
pub struct ExternalBackend {
    conn: Mutex<Connection>,
    info: BackendInfo,
    timeout: Duration,
}

impl ExternalBackend {
    /// Launches `command` (program followed by arguments) and performs the
    /// info handshake.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Config("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Config(format!("cannot launch '{program}': {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut conn = Connection {
            child,
            stdin,
            lines: rx,
            dead: false,
        };
        let handshake = conn
            .roundtrip(&Request::Info.to_line(), timeout)
            .and_then(|reply| parse_info(parse_response(&reply)?));
        let info = match handshake {
            Ok(info) => info,
            Err(e) => {
                shutdown_connection(&mut conn, Duration::from_millis(200));
                return Err(e);
            }
        };
        Ok(Self {
            conn: Mutex::new(conn),
            info,
            timeout,
        })
    }

    /// Sends one raw line and returns the parsed reply. Used by conformance
    /// probes to exercise error handling.
    pub fn request_raw(&self, line: &str) -> Result<Value, BackendError> {
        let reply = self.lock().roundtrip(line, self.timeout)?;
        parse_response(&reply)
    }

    pub fn request_info(&self) -> Result<BackendInfo, BackendError> {
        parse_info(self.request_raw(&Request::Info.to_line())?)
    }

    /// Asks the process to exit and waits up to `grace` for it to do so.
    /// Returns whether it exited on its own.
    pub fn shutdown(mut self, grace: Duration) -> bool {
        let conn = self.conn.get_mut().unwrap_or_else(|p| p.into_inner());
        shutdown_connection(conn, grace)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn shutdown_connection(conn: &mut Connection, grace: Duration) -> bool {
    if let Some(mut stdin) = conn.stdin.take() {
        let _ = writeln!(stdin, "{}", Request::Shutdown.to_line());
        let _ = stdin.flush();
    }
    let start = Instant::now();
    loop {
        match conn.child.try_wait() {
            Ok(Some(status)) => return status.success(),
            Ok(None) if start.elapsed() < grace => thread::sleep(Duration::from_millis(5)),
            _ => {
                let _ = conn.child.kill();
                let _ = conn.child.wait();
                return false;
            }
        }
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        let conn = self.conn.get_mut().unwrap_or_else(|p| p.into_inner());
        if conn.stdin.is_some() {
            shutdown_connection(conn, Duration::from_secs(2));
        }
    }
}

impl ModelBackend for ExternalBackend {
    fn info(&self) -> BackendInfo {
        self.info
    }

    fn predict(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>, BackendError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        check_shapes(&self.info, batch)?;
        let value = self.request_raw(&Request::predict(batch)?.to_line())?;
        let probs = parse_predict(value)?;
        validate_probabilities(
            &probs,
            batch.len(),
            self.info.classes,
            EXTERNAL_SUM_TOLERANCE,
        )?;
        Ok(probs)
    }
}
