//! Run manifest: per-stage status, artifact hashes, progress and notes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{BootstrapConfig, Seeds};
use super::RunError;
use crate::util::{file_sha256, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Suite,
    Generation,
    Scoring,
    Metrics,
    Diagnostics,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Suite,
        Stage::Generation,
        Stage::Scoring,
        Stage::Metrics,
        Stage::Diagnostics,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Suite => "suite",
            Stage::Generation => "generation",
            Stage::Scoring => "scoring",
            Stage::Metrics => "metrics",
            Stage::Diagnostics => "diagnostics",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    /// Output path relative to the run directory → sha256.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub prompts_built: usize,
    pub images_generated: usize,
    pub images_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_path: PathBuf,
    pub config_hash: String,
    /// Input file name → sha256 (registry, lookup, suite file).
    pub inputs: BTreeMap<String, String>,
    pub seeds: Seeds,
    pub bootstrap: BootstrapConfig,
    pub out_dir: PathBuf,
    pub progress: Progress,
    pub stages: Vec<StageRecord>,
    pub notes: Vec<String>,
    /// Backend render calls made by the most recent invocation.
    pub backend_calls: usize,
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(
        config_path: PathBuf,
        config_hash: String,
        inputs: BTreeMap<String, String>,
        seeds: Seeds,
        bootstrap: BootstrapConfig,
        out_dir: PathBuf,
    ) -> Self {
        Self {
            run_id: config_hash[..12].to_string(),
            config_path,
            config_hash,
            inputs,
            seeds,
            bootstrap,
            out_dir,
            progress: Progress::default(),
            stages: Stage::ALL
                .into_iter()
                .map(|stage| StageRecord {
                    stage,
                    status: StageStatus::Pending,
                    artifacts: BTreeMap::new(),
                    error: None,
                    started_at: None,
                    finished_at: None,
                })
                .collect(),
            notes: Vec::new(),
            backend_calls: 0,
        }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn save(&self) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&Self::path_in(&self.out_dir), text.as_bytes())?;
        Ok(())
    }

    pub fn stage(&self, stage: Stage) -> &StageRecord {
        self.stages
            .iter()
            .find(|r| r.stage == stage)
            .expect("all stages present")
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageRecord {
        self.stages
            .iter_mut()
            .find(|r| r.stage == stage)
            .expect("all stages present")
    }

    pub fn note(&mut self, note: impl Into<String>) {
        let note = note.into();
        if !self.notes.contains(&note) {
            self.notes.push(note);
        }
    }

    /// Checks that every artifact of a done stage exists with its recorded
    /// hash.
    pub fn verify_stage(&self, stage: Stage) -> Result<(), RunError> {
        for (rel, hash) in &self.stage(stage).artifacts {
            let path = self.out_dir.join(rel);
            let ok = file_sha256(&path).map(|h| &h == hash).unwrap_or(false);
            if !ok {
                return Err(RunError::CorruptArtifact {
                    stage,
                    path: rel.clone(),
                });
            }
        }
        Ok(())
    }

    /// Marks `stage` and everything after it pending.
    pub fn rewind_from(&mut self, stage: Stage) {
        for r in self.stages.iter_mut().filter(|r| r.stage >= stage) {
            r.status = StageStatus::Pending;
            r.artifacts.clear();
            r.error = None;
            r.started_at = None;
            r.finished_at = None;
        }
    }

    pub fn record_artifacts(&mut self, stage: Stage, paths: &[PathBuf]) -> Result<(), RunError> {
        let mut artifacts = BTreeMap::new();
        for p in paths {
            let rel = p
                .strip_prefix(&self.out_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/");
            artifacts.insert(rel, file_sha256(p)?);
        }
        self.stage_mut(stage).artifacts = artifacts;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.stages.iter().all(|r| r.status == StageStatus::Done)
    }
}
