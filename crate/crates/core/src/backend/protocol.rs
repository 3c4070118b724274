//! Newline-delimited JSON protocol between the metric engine and an
//! external model process.
//!
//! ```text
//! {"op":"info"}                                   -> {"classes":C,"shape":[m,n,d]}
//! {"op":"predict","shape":[m,n,d],"images":[[..]]} -> {"probs":[[..],..]}
//! {"op":"shutdown"}                               -> process exits
//! any failure                                     -> {"error":"..."}
//! ```
//!
//! Images travel as flattened row-major, channel-last number arrays.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::types::Image;

use super::{BackendError, BackendInfo, ModelBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Info,
    Predict {
        shape: [usize; 3],
        images: Vec<Vec<f64>>,
    },
    Shutdown,
}

impl Request {
    pub fn predict(batch: &[Image]) -> Result<Self, BackendError> {
        let first = batch
            .first()
            .ok_or_else(|| BackendError::Malformed("empty predict batch".into()))?;
        let (h, w, d) = first.shape();
        Ok(Request::Predict {
            shape: [h, w, d],
            images: batch.iter().map(|img| img.values().to_vec()).collect(),
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Turns a response line into a value, surfacing `{"error": ..}` objects.
pub fn parse_response(line: &str) -> Result<Value, BackendError> {
    let value: Value = serde_json::from_str(line.trim())
        .map_err(|e| BackendError::Malformed(format!("{e}: {}", truncate(line))))?;
    if let Some(msg) = value.get("error") {
        let msg = msg
            .as_str()
            .map(str::to_owned)
            .unwrap_or_else(|| msg.to_string());
        return Err(BackendError::Remote(msg));
    }
    Ok(value)
}

pub fn parse_info(value: Value) -> Result<BackendInfo, BackendError> {
    let info: BackendInfo = serde_json::from_value(value)
        .map_err(|e| BackendError::Malformed(format!("info response: {e}")))?;
    if info.classes == 0 || info.shape.contains(&0) {
        return Err(BackendError::Malformed(format!("degenerate info {info:?}")));
    }
    Ok(info)
}

pub fn parse_predict(value: Value) -> Result<Vec<Vec<f64>>, BackendError> {
    serde_json::from_value::<PredictResponse>(value)
        .map(|r| r.probs)
        .map_err(|e| BackendError::Malformed(format!("predict response: {e}")))
}

fn truncate(s: &str) -> String {
    const MAX: usize = 120;
    if s.len() <= MAX {
        s.to_owned()
    } else {
        let cut = (0..=MAX)
            .rev()
            .find(|&i| s.is_char_boundary(i))
            .unwrap_or(0);
        format!("{}...", &s[..cut])
    }
}

fn handle(backend: &dyn ModelBackend, line: &str) -> Result<Option<Value>, String> {
    let request: Request = serde_json::from_str(line).map_err(|e| format!("bad request: {e}"))?;
    match request {
        Request::Info => Ok(Some(
            serde_json::to_value(backend.info()).expect("info serializes"),
        )),
        Request::Predict { shape, images } => {
            let batch = images
                .into_iter()
                .map(|v| Image::new(shape[0], shape[1], shape[2], v))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let probs = backend.predict(&batch).map_err(|e| e.to_string())?;
            Ok(Some(
                serde_json::to_value(PredictResponse { probs }).expect("probs serialize"),
            ))
        }
        Request::Shutdown => Ok(None),
    }
}

/// Serves `backend` over the protocol until `shutdown` or end of input.
/// Malformed requests are answered with an error object; the loop keeps
/// running.
pub fn serve<R: BufRead, W: Write>(
    backend: &dyn ModelBackend,
    reader: R,
    mut writer: W,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle(backend, &line) {
            Ok(Some(v)) => v,
            Ok(None) => return Ok(()),
            Err(error) => serde_json::to_value(ErrorResponse { error }).expect("error serializes"),
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MatchFraction;

    #[test]
    fn request_wire_format() {
        assert_eq!(Request::Info.to_line(), r#"{"op":"info"}"#);
        assert_eq!(Request::Shutdown.to_line(), r#"{"op":"shutdown"}"#);
        let img = Image::new(1, 2, 1, vec![0.5, 1.0]).unwrap();
        assert_eq!(
            Request::predict(&[img]).unwrap().to_line(),
            r#"{"op":"predict","shape":[1,2,1],"images":[[0.5,1.0]]}"#
        );
    }

    #[test]
    fn error_objects_become_remote_errors() {
        assert!(matches!(
            parse_response(r#"{"error":"boom"}"#),
            Err(BackendError::Remote(m)) if m == "boom"
        ));
        assert!(matches!(
            parse_response("not json"),
            Err(BackendError::Malformed(_))
        ));
    }

    #[test]
    fn serve_answers_and_survives_garbage() {
        let model = MatchFraction::new(Image::new(1, 2, 1, vec![1.0, 2.0]).unwrap());
        let input = concat!(
            "{\"op\":\"info\"}\n",
            "garbage\n",
            "{\"op\":\"predict\",\"shape\":[1,2,1],\"images\":[[1,2],[1,0]]}\n",
            "{\"op\":\"predict\",\"shape\":[2,2,1],\"images\":[[1,2,3,4]]}\n",
            "{\"op\":\"shutdown\"}\n",
            "{\"op\":\"info\"}\n",
        );
        let mut out = Vec::new();
        serve(&model, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], r#"{"classes":2,"shape":[1,2,1]}"#);
        assert!(lines[1].starts_with(r#"{"error":"#));
        assert_eq!(lines[2], r#"{"probs":[[1.0,0.0],[0.5,0.5]]}"#);
        assert!(lines[3].starts_with(r#"{"error":"#));
    }
}
