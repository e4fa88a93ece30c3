use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

/// Per-checkpoint progress. For every entry
/// `scored + excluded + skipped + unprocessed == total_records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub name: String,
    pub role: String,
    pub model_name: String,
    pub endpoint_digest: String,
    pub concentration: f64,
    pub scored: usize,
    pub excluded: usize,
    pub skipped: usize,
    pub unprocessed: usize,
    pub live_requests: u64,
    pub cached: usize,
}

/// The reproducibility envelope written next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub timestamp: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub dataset: String,
    pub split: String,
    pub input_sha256: String,
    pub total_records: usize,
    pub rejected_lines: usize,
    pub template_digest: String,
    pub binarize_mode: String,
    pub concentration: f64,
    pub fit_concentration: bool,
    pub include_multinomial_coefficient: bool,
    pub coverage_threshold: f64,
    pub models: Vec<ModelRun>,
}

impl RunManifest {
    /// Hex SHA-256 over everything that determines the numbers. The
    /// timestamp, status and the live/cached split are left out, so a warm
    /// rerun of the same inputs carries the same digest.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        let obj = value.as_object_mut().expect("manifest is an object");
        for field in ["timestamp", "status", "error"] {
            obj.remove(field);
        }
        if let Some(Value::Array(models)) = obj.get_mut("models") {
            for m in models.iter_mut().filter_map(Value::as_object_mut) {
                m.remove("live_requests");
                m.remove("cached");
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn counts_balance(&self) -> bool {
        self.models
            .iter()
            .all(|m| m.scored + m.excluded + m.skipped + m.unprocessed == self.total_records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            toolkit_version: "0.1.0".into(),
            timestamp: "2026-01-01T00:00:00Z".into(),
            status: RunStatus::Complete,
            error: None,
            dataset: "dilemmas".into(),
            split: "test".into(),
            input_sha256: "00".into(),
            total_records: 3,
            rejected_lines: 0,
            template_digest: "t".into(),
            binarize_mode: "soft".into(),
            concentration: 2.0,
            fit_concentration: false,
            include_multinomial_coefficient: false,
            coverage_threshold: 0.05,
            models: vec![ModelRun {
                name: "m".into(),
                role: "original".into(),
                model_name: "m-7b".into(),
                endpoint_digest: "e".into(),
                concentration: 2.0,
                scored: 2,
                excluded: 1,
                skipped: 0,
                unprocessed: 0,
                live_requests: 3,
                cached: 0,
            }],
        }
    }

    #[test]
    fn digest_ignores_volatile_fields() {
        let a = manifest();
        let mut b = a.clone();
        b.timestamp = "2027-01-01T00:00:00Z".into();
        b.models[0].live_requests = 0;
        b.models[0].cached = 3;
        assert_eq!(a.digest(), b.digest());
        b.models[0].scored = 3;
        assert_ne!(a.digest(), b.digest());
        assert!(a.counts_balance());
    }
}
