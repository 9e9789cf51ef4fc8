//! Run configuration (TOML).
//!
//! ```toml
//! registry = "registry.jsonl"
//! images_per_prompt = 5
//! orderings = 3
//!
//! [suite.budget]
//! base = 20
//! pair = 12
//!
//! [backend]
//! kind = "mock"
//!
//! [seeds]
//! suite = 1
//! generation = 2
//! bootstrap = 3
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! The only environment variable read is the one named by
//! `backend.token_env`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::detection::{FusionRule, Thresholds};
use crate::generation::mock::MockWorld;
use crate::metrics::BootstrapSettings;
use crate::suite::SuiteSpec;
use crate::util::{canonical_json, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub suite: u64,
    pub generation: u64,
    pub bootstrap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Mock {
        #[serde(default)]
        world: MockWorld,
    },
    Http {
        id: String,
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        deterministic: bool,
        /// Name of the environment variable holding a bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_env: Option<String>,
        #[serde(default = "default_attempts")]
        max_attempts: usize,
        #[serde(default = "default_backoff")]
        backoff_ms: u64,
    },
}

fn default_timeout() -> u64 {
    60
}
fn default_attempts() -> usize {
    3
}
fn default_backoff() -> u64 {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    #[default]
    Disjunctive,
    Conjunctive,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub tau_sim: f64,
    pub tau_det: f64,
    pub rule: RuleName,
    /// Weight of the similarity channel under the weighted rule.
    pub similarity_weight: f64,
    pub weighted_threshold: f64,
    /// Gaussian noise added by the glyph encoder to image embeddings.
    pub encoder_noise: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            tau_sim: t.sim,
            tau_det: t.det,
            rule: RuleName::Disjunctive,
            similarity_weight: 0.5,
            weighted_threshold: 0.5,
            encoder_noise: 0.0,
        }
    }
}

impl DetectionConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            sim: self.tau_sim,
            det: self.tau_det,
        }
    }

    pub fn fusion_rule(&self) -> FusionRule {
        match self.rule {
            RuleName::Disjunctive => FusionRule::Disjunctive,
            RuleName::Conjunctive => FusionRule::Conjunctive,
            RuleName::Weighted => FusionRule::Weighted {
                similarity_weight: self.similarity_weight,
                threshold: self.weighted_threshold,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub confidence: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Parallelism {
    /// Concurrent generation requests.
    pub generation: usize,
    /// Scoring threads; 0 means one per hardware thread.
    pub scoring: usize,
}

impl Default for Parallelism {
    fn default() -> Self {
        Self {
            generation: 4,
            scoring: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    /// Principal subspace dimension for overlap.
    pub subspace_dim: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            subspace_dim: 5,
        }
    }
}

fn default_size() -> u32 {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub registry: PathBuf,
    /// Expected sets; derived from the suite when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookup: Option<PathBuf>,
    /// Prebuilt suite (JSONL) used instead of `[suite]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite_file: Option<PathBuf>,
    #[serde(default)]
    pub suite: SuiteSpec,
    /// Orderings evaluated per multi-component prompt (original included);
    /// below 2 disables order sensitivity.
    #[serde(default)]
    pub orderings: usize,
    pub images_per_prompt: usize,
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
    pub backend: BackendConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    pub seeds: Seeds,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub parallelism: Parallelism,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, RunError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| RunError::Config(e.message().replace('\n', " ")))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.images_per_prompt == 0 {
            return bad("images_per_prompt must be at least 1".into());
        }
        if self.suite_file.is_none() && self.suite.budget.values().all(|&b| b == 0) {
            return bad("suite.budget is empty and no suite_file is given".into());
        }
        self.detection
            .thresholds()
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if let RuleName::Weighted = self.detection.rule {
            if !(0.0..=1.0).contains(&self.detection.similarity_weight) {
                return bad("detection.similarity_weight must lie in [0, 1]".into());
            }
        }
        if self.bootstrap.resamples < 100 {
            return bad("bootstrap.resamples must be at least 100".into());
        }
        if !(self.bootstrap.confidence > 0.0 && self.bootstrap.confidence < 1.0) {
            return bad("bootstrap.confidence must lie in (0, 1)".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive".into());
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Hash of the canonical JSON form; key order and formatting of the
    /// source file do not matter, and neither does the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        sha256_hex(canonical_json(&c).as_bytes())
    }

    pub fn bootstrap_settings(&self) -> BootstrapSettings {
        BootstrapSettings {
            resamples: self.bootstrap.resamples,
            confidence: self.bootstrap.confidence,
            seed: self.seeds.bootstrap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = r#"
registry = "r.jsonl"
images_per_prompt = 2
[suite.budget]
base = 3
[backend]
kind = "mock"
[seeds]
suite = 1
generation = 2
bootstrap = 3
"#;

    const B: &str = r#"
images_per_prompt = 2
registry = "r.jsonl"
[seeds]
bootstrap = 3
generation = 2
suite = 1
[backend]
kind = "mock"
[suite.budget]
base = 3
"#;

    #[test]
    fn key_order_does_not_change_hash() {
        let a = RunConfig::parse(A, Path::new(".")).unwrap();
        let b = RunConfig::parse(B, Path::new(".")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse(&A.replace("generation = 2", "generation = 5"), Path::new(".")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse(&format!("{A}\nbogus = 1\n"), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
