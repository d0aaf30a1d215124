//! The prediction record streamed to viewers.

use serde::{Deserialize, Serialize};

pub const RESULT_VERSION: u32 = 1;

/// Three-level standard-plane feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    StandardPlane,
    NearStandardPlane,
    UnknownPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Head,
    Abdomen,
    Femur,
    Other,
}

/// An anatomical landmark and whether the model found it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub present: bool,
    pub score: f64,
}

impl Concept {
    pub fn new(name: impl Into<String>, present: bool, score: f64) -> Self {
        Concept {
            name: name.into(),
            present,
            score,
        }
    }
}

/// `Ok` for model output; anything else marks a result that stands in for
/// a failed or missing inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    EngineUnavailable,
    Timeout,
    EngineError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub result_version: u32,
    pub frame_seq: u64,
    pub engine: String,
    pub status: ResultStatus,
    pub verdict: Verdict,
    pub plane: Plane,
    pub concepts: Vec<Concept>,
    pub t_capture_ns: u64,
    pub t_submit_ns: u64,
    pub t_result_ns: u64,
    pub engine_ms: f64,
    #[serde(default)]
    pub upstream_seen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl PredictionResult {
    /// A schema-conformant result reporting that no prediction was made.
    pub fn marker(
        frame_seq: u64,
        engine: impl Into<String>,
        status: ResultStatus,
        detail: impl Into<String>,
        t_capture_ns: u64,
        t_submit_ns: u64,
        t_result_ns: u64,
    ) -> Self {
        PredictionResult {
            result_version: RESULT_VERSION,
            frame_seq,
            engine: engine.into(),
            status,
            verdict: Verdict::UnknownPlane,
            plane: Plane::Other,
            concepts: Vec::new(),
            t_capture_ns,
            t_submit_ns,
            t_result_ns,
            engine_ms: 0.0,
            upstream_seen: false,
            detail: Some(detail.into()),
        }
    }

    pub fn is_marker(&self) -> bool {
        self.status != ResultStatus::Ok
    }

    /// Checks the record's internal consistency.
    pub fn validate(&self) -> Result<(), String> {
        if self.t_result_ns < self.t_submit_ns {
            return Err("t_result_ns precedes t_submit_ns".into());
        }
        if let Some(c) = self
            .concepts
            .iter()
            .find(|c| !(0.0..=1.0).contains(&c.score))
        {
            return Err(format!(
                "concept {} score {} outside [0, 1]",
                c.name, c.score
            ));
        }
        if !(self.engine_ms.is_finite() && self.engine_ms >= 0.0) {
            return Err(format!("engine_ms {} is not a duration", self.engine_ms));
        }
        Ok(())
    }

    pub fn latency_ns(&self) -> u64 {
        self.t_result_ns.saturating_sub(self.t_capture_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let r = PredictionResult {
            result_version: RESULT_VERSION,
            frame_seq: 4,
            engine: "mock-1".into(),
            status: ResultStatus::Ok,
            verdict: Verdict::NearStandardPlane,
            plane: Plane::Femur,
            concepts: vec![Concept::new("femur_ends", false, 0.25)],
            t_capture_ns: 1,
            t_submit_ns: 2,
            t_result_ns: 3,
            engine_ms: 0.5,
            upstream_seen: false,
            detail: None,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["result_version"], 1);
        assert_eq!(v["verdict"], "near_standard_plane");
        assert_eq!(v["plane"], "femur");
        assert_eq!(v["status"], "ok");
        assert!(v.get("detail").is_none());
        let back: PredictionResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn markers_are_flagged() {
        let m = PredictionResult::marker(9, "pcbm", ResultStatus::Timeout, "no reply", 1, 2, 5);
        assert!(m.is_marker());
        assert_eq!(m.verdict, Verdict::UnknownPlane);
        assert!(m.validate().is_ok());
        let bad = PredictionResult {
            t_result_ns: 1,
            ..m.clone()
        };
        assert!(bad.validate().is_err());
    }
}
