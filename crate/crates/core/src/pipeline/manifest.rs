use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const RUN_MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRef {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub wall_time_s: f64,
    pub mock: bool,
    pub outputs: Vec<OutputRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deliverables {
    pub soundtrack_wav: Option<String>,
    pub video_manifest: Option<String>,
    pub eval_report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub tool_version: String,
    pub config_sha256: String,
    /// Exact text of the config the run was started with.
    pub config_snapshot: String,
    /// Config-relative input path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// In completion order; at most one record per stage.
    pub stages: Vec<StageRecord>,
    pub deliverables: Deliverables,
}

impl RunManifest {
    pub fn new(run_id: &str, config_text: &str, config_sha256: &str) -> Self {
        RunManifest {
            schema_version: RUN_MANIFEST_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_sha256.to_string(),
            config_snapshot: config_text.to_string(),
            inputs: BTreeMap::new(),
            stages: Vec::new(),
            deliverables: Deliverables::default(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Replaces any earlier record of the same stage.
    pub fn record(&mut self, record: StageRecord) {
        self.stages.retain(|s| s.stage != record.stage);
        self.stages.push(record);
    }

    pub fn forget(&mut self, name: &str) {
        self.stages.retain(|s| s.stage != name);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| Error::parse("run manifest", e))?;
        if m.schema_version != RUN_MANIFEST_SCHEMA_VERSION {
            return Err(Error::parse(
                "run manifest",
                format!("unsupported schema_version {}", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunManifest::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json().as_bytes())
    }
}
