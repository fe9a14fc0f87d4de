//! Line-delimited JSON protocol to an evaluator child process.
//!
//! Each request is one JSON object on the child's stdin, each reply one JSON
//! object on its stdout, in request order:
//!
//! ```text
//! {"mode":"evaluate","arch":"MB3E1S22-...|0110","seed":7}
//! {"ok":true,"value":0.81}
//! ```
//!
//! `train_step` requests additionally carry `"block"`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Aggregation, ArchScorer, EvalError, TrainOracle, TrainRequest};
use crate::space::Architecture;
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TrainStep,
    Evaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub mode: Mode,
    pub arch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    pub seed: u64,
}

impl EvalRequest {
    pub fn evaluate(arch: &Architecture, seed: u64) -> Self {
        EvalRequest { mode: Mode::Evaluate, arch: arch.encode(), block: None, seed }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl EvalResponse {
    /// The value of a successful response.
    pub fn into_value(self) -> Result<f64, EvalError> {
        if !self.ok {
            return Err(EvalError::Rejected(self.message.unwrap_or_default()));
        }
        match self.value {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(EvalError::Protocol("ok response without a finite value".into())),
        }
    }
}

/// One evaluator child process, spawned through `sh -c`.
pub struct ExternalEvaluator {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalEvaluator {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Io(e.to_string()))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalEvaluator { child, stdin, lines, timeout })
    }

    pub fn send(&mut self, req: &EvalRequest) -> Result<(), EvalError> {
        let mut line = req.to_line();
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EvalError::Io(e.to_string()))
    }

    pub fn recv(&mut self) -> Result<EvalResponse, EvalError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => serde_json::from_str(&line)
                .map_err(|e| EvalError::Protocol(format!("{e} in line {line:?}"))),
            Ok(Err(e)) => Err(EvalError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.wait().map_err(|e| EvalError::Io(e.to_string()))?;
                Err(EvalError::Exited(status.code()))
            }
        }
    }

    pub fn request(&mut self, req: &EvalRequest) -> Result<EvalResponse, EvalError> {
        self.send(req)?;
        self.recv()
    }

    /// Writes every request before reading any reply.
    pub fn pipeline(&mut self, reqs: &[EvalRequest]) -> Result<Vec<EvalResponse>, EvalError> {
        for r in reqs {
            self.send(r)?;
        }
        reqs.iter().map(|_| self.recv()).collect()
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Supernet training targets from an external `train_step` value.
///
/// The reported value is taken as the quality of the whole partial path; the
/// gap between it and the store's current sum is spread evenly over the
/// trainable edges.
pub struct ExternalOracle {
    inner: Mutex<ExternalEvaluator>,
}

impl ExternalOracle {
    pub fn new(eval: ExternalEvaluator) -> Self {
        ExternalOracle { inner: Mutex::new(eval) }
    }
}

impl TrainOracle for ExternalOracle {
    fn edge_targets(&self, req: &TrainRequest<'_>, rng: &mut SeededRng) -> Result<Vec<f64>, EvalError> {
        let request = EvalRequest {
            mode: Mode::TrainStep,
            arch: req.path.encode(),
            block: Some(req.block),
            seed: rng.next_u64(),
        };
        let v = self.inner.lock().expect("evaluator lock").request(&request)?.into_value()?;
        let sum: f64 = req.current.iter().sum();
        let share = (v - sum) / req.trainable.len().max(1) as f64;
        Ok(req.trainable.iter().map(|&i| req.current[i] + share).collect())
    }

    fn neck_bias(&self, _block: usize) -> f64 {
        0.0
    }

    fn aggregation(&self) -> Aggregation {
        Aggregation::Sum
    }
}

/// Search-stage rewards from an external `evaluate` value.
pub struct ExternalScorer {
    inner: Mutex<ExternalEvaluator>,
    seed: u64,
}

impl ExternalScorer {
    pub fn new(eval: ExternalEvaluator, seed: u64) -> Self {
        ExternalScorer { inner: Mutex::new(eval), seed }
    }
}

impl ArchScorer for ExternalScorer {
    fn score(&self, arch: &Architecture) -> Result<f64, EvalError> {
        let req = EvalRequest::evaluate(arch, self.seed);
        self.inner.lock().expect("evaluator lock").request(&req)?.into_value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::reference;

    const T: Duration = Duration::from_secs(10);

    #[test]
    fn request_line_is_exact() {
        let arch = reference::scene();
        let line = EvalRequest::evaluate(&arch, 7).to_line();
        assert_eq!(line, format!("{{\"mode\":\"evaluate\",\"arch\":\"{}\",\"seed\":7}}", arch.encode()));
    }

    #[test]
    fn echo_double() {
        let mut ev = ExternalEvaluator::spawn(
            r#"while read -r line; do echo '{"ok":true,"value":0.5}'; done"#,
            T,
        )
        .unwrap();
        let req = EvalRequest::evaluate(&reference::scene(), 1);
        assert_eq!(ev.request(&req).unwrap().into_value().unwrap(), 0.5);
    }

    #[test]
    fn pipelined_order() {
        // replies carry the request seed back as the value
        let mut ev = ExternalEvaluator::spawn(
            r#"while read -r line; do s=${line##*\"seed\":}; s=${s%\}}; echo "{\"ok\":true,\"value\":$s}"; done"#,
            T,
        )
        .unwrap();
        let arch = reference::scene();
        let reqs: Vec<EvalRequest> = (0..100).map(|i| EvalRequest::evaluate(&arch, i)).collect();
        let out = ev.pipeline(&reqs).unwrap();
        assert_eq!(out.len(), 100);
        for (i, r) in out.into_iter().enumerate() {
            assert_eq!(r.into_value().unwrap(), i as f64);
        }
    }

    #[test]
    fn typed_failures() {
        let req = EvalRequest::evaluate(&reference::scene(), 0);
        let mut bad = ExternalEvaluator::spawn("read -r line; echo 'not json'", T).unwrap();
        assert!(matches!(bad.request(&req), Err(EvalError::Protocol(_))));

        let mut dead = ExternalEvaluator::spawn("read -r line; exit 5", T).unwrap();
        let err = dead.request(&req).unwrap_err();
        assert!(matches!(err, EvalError::Exited(Some(5)) | EvalError::Io(_)), "{err:?}");

        let mut slow = ExternalEvaluator::spawn("sleep 5", Duration::from_millis(100)).unwrap();
        assert!(matches!(slow.request(&req), Err(EvalError::Timeout(_))));

        let mut no = ExternalEvaluator::spawn(
            r#"read -r line; echo '{"ok":false,"message":"busy"}'"#,
            T,
        )
        .unwrap();
        assert_eq!(no.request(&req).unwrap().into_value(), Err(EvalError::Rejected("busy".into())));
    }
}
