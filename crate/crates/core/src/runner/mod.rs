//! Staged evaluation pipeline: suite → generation → scoring → metrics →
//! diagnostics → report, with every intermediate persisted under
//! `<out>/records/` and a manifest that makes runs resumable.
//!
//! Run directory layout:
//!
//! ```text
//! manifest.json        stage status, artifact hashes, progress, notes
//! cache/               content-addressed images (see ImageCache)
//! records/             registry, suite, prompts, lookup, generation,
//!                      detections, scores, metrics, attention,
//!                      embeddings, diagnostics
//! report.json, *.csv, *.svg, README.md
//! ```

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use config::{BackendConfig, RunConfig};
pub use manifest::{RunManifest, Stage, StageStatus};

use crate::detection::{
    calibrate_similarity_threshold, included_components, score_components_similarity, Calibration,
    DetectionError, DetectionResult, Detector, Encoder, FusionRule, GlyphDetector, GlyphEncoder, Scorer,
    Thresholds,
};
use crate::diagnostics::{summarize, AttentionTrace, DiagnosticsError, DiagnosticsOutput, EmbeddingSet};
use crate::generation::http::HttpBackend;
use crate::generation::mock::MockBackend;
use crate::generation::{image_seed, Backend, GenerationError, GenerationRecord, Generator, RetryPolicy};
use crate::metrics::{build_report, BootstrapSettings, CisReport, ImageScore, MetricsError, PromptMeta};
use crate::registry::{
    load_lookup, load_registry, parse_lookup, parse_registry, validate_registry, Category, Concept,
    ConceptRegistry, LookupEntry, LookupTable, RegistryError,
};
use crate::reporting::{
    confusion_matrix, misclassification_pairs, verify_report, write_diagnostics, write_outputs,
    Normalization, Outputs, ReportingError,
};
use crate::suite::{build_suite, enumerate_orderings, Prompt, PromptSuite, SuiteError, TemplateSet};
use crate::util::{file_sha256, sha256_hex, write_atomic};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config drift: {what} changed since the run started (was {expected}, now {found})")]
    ConfigDrift {
        what: String,
        expected: String,
        found: String,
    },
    #[error("corrupt artifact {path} of stage {stage}")]
    CorruptArtifact { stage: Stage, path: String },
    #[error("run stopped after stage {0}")]
    Interrupted(Stage),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Reporting(#[from] ReportingError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::ConfigDrift { .. } => "config_drift",
            RunError::CorruptArtifact { .. } => "corrupt_artifact",
            RunError::Interrupted(_) => "interrupted",
            RunError::Registry(_) => "registry",
            RunError::Suite(_) => "suite",
            RunError::Generation(GenerationError::BackendUnavailable(_)) => "backend_unavailable",
            RunError::Generation(GenerationError::Timeout(_)) => "backend_timeout",
            RunError::Generation(_) => "generation",
            RunError::Detection(_) => "detection",
            RunError::Metrics(_) => "metrics",
            RunError::Diagnostics(_) => "diagnostics",
            RunError::Reporting(_) => "reporting",
            RunError::Io(_) => "io",
            RunError::Json(_) => "record",
        }
    }
}

pub const RECORDS: &str = "records";

fn rec(dir: &Path, name: &str) -> PathBuf {
    dir.join(RECORDS).join(name)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<PathBuf, RunError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(RunError::from))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, RunError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, RunError> {
    write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

/// Backend described by the config.
pub fn build_backend(config: &RunConfig, registry: &ConceptRegistry) -> Result<Arc<dyn Backend>, RunError> {
    Ok(match &config.backend {
        BackendConfig::Mock { world } => Arc::new(MockBackend::new(world.clone(), registry.clone())),
        BackendConfig::Http {
            id,
            endpoint,
            timeout_secs,
            deterministic,
            token_env,
            ..
        } => {
            let mut b = HttpBackend::new(id, endpoint, Duration::from_secs(*timeout_secs), *deterministic);
            if let Some(var) = token_env {
                let token = std::env::var(var)
                    .map_err(|_| RunError::Config(format!("environment variable {var} is not set")))?;
                b = b.with_token(token);
            }
            Arc::new(b)
        }
    })
}

fn retry_policy(config: &RunConfig) -> RetryPolicy {
    match &config.backend {
        BackendConfig::Http {
            max_attempts,
            backoff_ms,
            ..
        } => RetryPolicy {
            max_attempts: *max_attempts,
            base_backoff_ms: *backoff_ms,
        },
        BackendConfig::Mock { .. } => RetryPolicy::default(),
    }
}

fn input_hashes(config: &RunConfig) -> Result<BTreeMap<String, String>, RunError> {
    let mut inputs = BTreeMap::new();
    let mut add = |name: &str, p: &Path| -> Result<(), RunError> {
        let path = config.resolve(p);
        let hash = file_sha256(&path)
            .map_err(|e| RunError::Config(format!("cannot read {name} {}: {e}", path.display())))?;
        inputs.insert(name.to_string(), hash);
        Ok(())
    };
    add("registry", &config.registry)?;
    if let Some(p) = &config.lookup {
        add("lookup", p)?;
    }
    if let Some(p) = &config.suite_file {
        add("suite_file", p)?;
    }
    Ok(inputs)
}

/// Category a prompt is filed under in the disparity table: that of its
/// first (by id) component belonging to the prompt's group.
fn concept_category(prompt: &Prompt, registry: &ConceptRegistry) -> Category {
    let group = prompt.group_profile.group();
    let mut ids = prompt.components.clone();
    ids.sort();
    let concepts: Vec<&Concept> = ids.iter().filter_map(|id| registry.get(id)).collect();
    concepts
        .iter()
        .find(|c| c.group == group)
        .or(concepts.first())
        .map_or(Category::Other, |c| c.category)
}

pub fn prompt_meta(prompt: &Prompt, registry: &ConceptRegistry) -> PromptMeta {
    PromptMeta {
        id: prompt.id.clone(),
        category: prompt.category,
        stratum: prompt.stratum.clone(),
        group: prompt.group_profile.group(),
        k: prompt.k(),
        concept_category: concept_category(prompt, registry),
        multiset_key: prompt.multiset_key(),
        variant: prompt.id.contains('@'),
    }
}

/// Suite prompts followed by the extra orderings of each multi-component
/// prompt.
pub fn evaluated_prompts(
    suite: &PromptSuite,
    orderings: usize,
    seed: u64,
    templates: &TemplateSet,
    registry: &ConceptRegistry,
) -> Result<Vec<Prompt>, SuiteError> {
    let mut out = suite.prompts.clone();
    if orderings >= 2 {
        for p in &suite.prompts {
            if p.k() >= 2 {
                out.extend(
                    enumerate_orderings(p, orderings, seed, templates, registry)?
                        .into_iter()
                        .skip(1),
                );
            }
        }
    }
    Ok(out)
}

fn lookup_for(
    config: &RunConfig,
    prompts: &[Prompt],
    registry: &ConceptRegistry,
) -> Result<LookupTable, RunError> {
    let Some(path) = &config.lookup else {
        return Ok(LookupTable::new(
            prompts.iter().map(Prompt::lookup_entry).collect(),
            registry,
        ));
    };
    let given = load_lookup(&config.resolve(path), registry)?;
    let mut entries = Vec::with_capacity(prompts.len());
    for p in prompts {
        let base = p.id.split('@').next().unwrap_or(&p.id);
        let e = given.entry(base)?;
        let a: BTreeSet<&String> = e.components.iter().collect();
        let b: BTreeSet<&String> = p.components.iter().collect();
        if a != b {
            return Err(RunError::Config(format!(
                "lookup entry for {base} disagrees with the suite prompt"
            )));
        }
        entries.push(LookupEntry {
            prompt_id: p.id.clone(),
            k: e.k,
            components: e.components.clone(),
        });
    }
    Ok(LookupTable::new(entries, registry))
}

fn read_cached_image(cache_root: &Path, record: &GenerationRecord) -> Result<Vec<u8>, RunError> {
    let bytes = fs::read(cache_root.join(&record.image_ref))?;
    if sha256_hex(&bytes) != record.image_hash {
        return Err(GenerationError::CorruptCache(record.image_ref.clone()).into());
    }
    Ok(bytes)
}

fn thread_pool(threads: usize) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if threads > 0 {
        b = b.num_threads(threads);
    }
    b.build().expect("thread pool")
}

/// Scores every generated image in `from` and writes detections and scores
/// under `to`.
#[allow(clippy::too_many_arguments)]
fn score_images(
    from: &Path,
    to: &Path,
    registry: &ConceptRegistry,
    encoder: &dyn Encoder,
    detector: &dyn Detector,
    thresholds: Thresholds,
    rule: FusionRule,
    threads: usize,
) -> Result<(Vec<PathBuf>, usize), RunError> {
    let lookup = parse_lookup(&fs::read_to_string(rec(from, "lookup.jsonl"))?, registry)?;
    let records: Vec<GenerationRecord> = read_jsonl(&rec(from, "generation.jsonl"))?;
    let cache_root = from.join("cache");
    let scorer = Scorer {
        encoder,
        detector,
        thresholds,
        rule,
    };
    let scored: Vec<(DetectionResult, ImageScore)> = thread_pool(threads).install(|| {
        records
            .par_iter()
            .map(|r| {
                let bytes = read_cached_image(&cache_root, r)?;
                let entry = lookup.entry(&r.prompt_id)?;
                let expected = entry
                    .components
                    .iter()
                    .map(|id| {
                        registry
                            .get(id)
                            .ok_or_else(|| RegistryError::NotFound(format!("concept {id:?}")))
                    })
                    .collect::<Result<Vec<&Concept>, _>>()?;
                let det = scorer.score(&r.prompt_id, r.image_index, &bytes, &expected)?;
                let included = included_components(&det, &lookup)?;
                let score = ImageScore {
                    prompt_id: r.prompt_id.clone(),
                    image_index: r.image_index,
                    image_hash: r.image_hash.clone(),
                    k: entry.components.len(),
                    included_count: included.len(),
                };
                Ok((det, score))
            })
            .collect::<Result<_, RunError>>()
    })?;
    fs::create_dir_all(to.join(RECORDS))?;
    let (dets, scores): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let n = scores.len();
    Ok((
        vec![
            write_jsonl(&rec(to, "detections.jsonl"), &dets)?,
            write_jsonl(&rec(to, "scores.jsonl"), &scores)?,
        ],
        n,
    ))
}

fn scored_meta(meta: Vec<PromptMeta>, scores: &[ImageScore]) -> Vec<PromptMeta> {
    let scored: BTreeSet<&str> = scores.iter().map(|s| s.prompt_id.as_str()).collect();
    meta.into_iter()
        .filter(|m| scored.contains(m.id.as_str()))
        .collect()
}

fn compute_metrics(
    dir: &Path,
    images_per_prompt: usize,
    bootstrap: BootstrapSettings,
) -> Result<CisReport, RunError> {
    let scores: Vec<ImageScore> = read_jsonl(&rec(dir, "scores.jsonl"))?;
    let meta = scored_meta(read_jsonl(&rec(dir, "prompt_meta.jsonl"))?, &scores);
    Ok(build_report(&meta, &scores, images_per_prompt, bootstrap)?)
}

/// Re-renders every output file of a run directory from its records. The
/// report is rebuilt from the persisted scores and must match the stored
/// one cell for cell.
pub fn render_report(dir: &Path, bootstrap: BootstrapSettings) -> Result<(CisReport, Outputs), RunError> {
    let registry = parse_registry(&fs::read_to_string(rec(dir, "registry.jsonl"))?)?;
    let stored: CisReport = read_json(&rec(dir, "metrics.json"))?;
    let scores: Vec<ImageScore> = read_jsonl(&rec(dir, "scores.jsonl"))?;
    let meta = scored_meta(read_jsonl(&rec(dir, "prompt_meta.jsonl"))?, &scores);
    verify_report(&stored, &meta, &scores, bootstrap)?;

    let diag_path = rec(dir, "diagnostics.json");
    let diag: DiagnosticsOutput = if diag_path.exists() {
        read_json(&diag_path)?
    } else {
        DiagnosticsOutput {
            notes: vec!["diagnostics not run".into()],
            ..Default::default()
        }
    };
    let prompts: BTreeMap<String, Prompt> = read_jsonl::<Prompt>(&rec(dir, "prompts.jsonl"))?
        .into_iter()
        .map(|p| (p.id.clone(), p))
        .collect();
    let detections: Vec<DetectionResult> = read_jsonl(&rec(dir, "detections.jsonl"))?;
    let pairs = misclassification_pairs(&detections, &prompts, &registry);
    let confusion = if pairs.is_empty() {
        None
    } else {
        Some(confusion_matrix(&pairs, Normalization::Row)?)
    };
    let outputs = write_outputs(dir, &stored, &diag, confusion.as_ref())?;
    Ok((stored, outputs))
}

/// Drives the stages of one run directory.
pub struct Runner {
    config: RunConfig,
    config_path: PathBuf,
    out_dir: PathBuf,
    backend: Option<Arc<dyn Backend>>,
    encoder: Option<Arc<dyn Encoder>>,
    detector: Option<Arc<dyn Detector>>,
    stop_after: Option<Stage>,
    resume_from: Option<RunManifest>,
}

impl Runner {
    /// `out_dir` overrides the config's `out_dir`.
    pub fn new(config: RunConfig, config_path: &Path, out_dir: Option<&Path>) -> Result<Self, RunError> {
        let out = match (out_dir, &config.out_dir) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => config.resolve(o),
            (None, None) => return Err(RunError::Config("no output directory given".into())),
        };
        Ok(Self {
            config,
            config_path: config_path.to_path_buf(),
            out_dir: out,
            backend: None,
            encoder: None,
            detector: None,
            stop_after: None,
            resume_from: None,
        })
    }

    pub fn from_config_file(path: &Path, out_dir: Option<&Path>) -> Result<Self, RunError> {
        Self::new(RunConfig::load(path)?, path, out_dir)
    }

    /// Continues the run recorded in `manifest_path`. Fails with
    /// [`RunError::ConfigDrift`] if the config or an input file changed.
    pub fn from_manifest(manifest_path: &Path) -> Result<Self, RunError> {
        let manifest = RunManifest::load(manifest_path)?;
        let mut runner = Self::from_config_file(&manifest.config_path, Some(&manifest.out_dir))?;
        let hash = runner.config.hash();
        if hash != manifest.config_hash {
            return Err(RunError::ConfigDrift {
                what: "config".into(),
                expected: manifest.config_hash[..12].to_string(),
                found: hash[..12].to_string(),
            });
        }
        let inputs = input_hashes(&runner.config)?;
        for (name, expected) in &manifest.inputs {
            let found = inputs.get(name).cloned().unwrap_or_default();
            if &found != expected {
                return Err(RunError::ConfigDrift {
                    what: name.clone(),
                    expected: expected.chars().take(12).collect(),
                    found: found.chars().take(12).collect(),
                });
            }
        }
        runner.resume_from = Some(manifest);
        Ok(runner)
    }

    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = Some(backend);
        self
    }

    /// Replaces the glyph-aware stub encoder and detector.
    pub fn with_models(mut self, encoder: Arc<dyn Encoder>, detector: Arc<dyn Detector>) -> Self {
        self.encoder = Some(encoder);
        self.detector = Some(detector);
        self
    }

    /// Stops with [`RunError::Interrupted`] once `stage` is done.
    pub fn stop_after(mut self, stage: Stage) -> Self {
        self.stop_after = Some(stage);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn run(mut self) -> Result<(RunManifest, CisReport), RunError> {
        fs::create_dir_all(self.out_dir.join(RECORDS))?;
        let mut manifest = match self.resume_from.take() {
            Some(m) => m,
            None => RunManifest::new(
                fs::canonicalize(&self.config_path).unwrap_or_else(|_| self.config_path.clone()),
                self.config.hash(),
                input_hashes(&self.config)?,
                self.config.seeds,
                self.config.bootstrap,
                self.out_dir.clone(),
            ),
        };
        let registry = load_registry(&self.config.resolve(&self.config.registry))?;
        let backend = match &self.backend {
            Some(b) => b.clone(),
            None => build_backend(&self.config, &registry)?,
        };
        let calls_before = backend.invocations();

        for stage in Stage::ALL {
            if manifest.stage(stage).status == StageStatus::Done {
                match manifest.verify_stage(stage) {
                    Ok(()) => continue,
                    Err(e) => {
                        warn!("{e}; rewinding");
                        manifest.note(format!("{e}; stage rewound and recomputed"));
                        manifest.rewind_from(stage);
                    }
                }
            }
            info!("stage {stage}");
            {
                let r = manifest.stage_mut(stage);
                r.status = StageStatus::Running;
                r.error = None;
                r.started_at = Some(manifest::now_secs());
            }
            manifest.save()?;
            match self.run_stage(stage, &registry, &backend, &mut manifest) {
                Ok(paths) => {
                    manifest.record_artifacts(stage, &paths)?;
                    let r = manifest.stage_mut(stage);
                    r.status = StageStatus::Done;
                    r.finished_at = Some(manifest::now_secs());
                    manifest.backend_calls = backend.invocations() - calls_before;
                    manifest.save()?;
                }
                Err(e) => {
                    let r = manifest.stage_mut(stage);
                    r.status = StageStatus::Failed;
                    r.error = Some(e.to_string());
                    r.finished_at = Some(manifest::now_secs());
                    manifest.backend_calls = backend.invocations() - calls_before;
                    manifest.save()?;
                    return Err(e);
                }
            }
            if self.stop_after == Some(stage) {
                return Err(RunError::Interrupted(stage));
            }
        }
        manifest.backend_calls = backend.invocations() - calls_before;
        manifest.save()?;
        let report = read_json(&rec(&self.out_dir, "metrics.json"))?;
        Ok((manifest, report))
    }

    fn run_stage(
        &self,
        stage: Stage,
        registry: &ConceptRegistry,
        backend: &Arc<dyn Backend>,
        manifest: &mut RunManifest,
    ) -> Result<Vec<PathBuf>, RunError> {
        match stage {
            Stage::Suite => self.stage_suite(registry, manifest),
            Stage::Generation => self.stage_generation(backend, manifest),
            Stage::Scoring => self.stage_scoring(registry, manifest),
            Stage::Metrics => {
                let report = compute_metrics(
                    &self.out_dir,
                    self.config.images_per_prompt,
                    self.config.bootstrap_settings(),
                )?;
                Ok(vec![write_json(&rec(&self.out_dir, "metrics.json"), &report)?])
            }
            Stage::Diagnostics => self.stage_diagnostics(registry, backend, manifest),
            Stage::Report => {
                let (_, outputs) = render_report(&self.out_dir, self.config.bootstrap_settings())?;
                for n in outputs.notes {
                    manifest.note(n);
                }
                Ok(outputs.files)
            }
        }
    }

    fn build_suite(&self, registry: &ConceptRegistry) -> Result<PromptSuite, RunError> {
        Ok(match &self.config.suite_file {
            Some(p) => PromptSuite::parse_jsonl(
                &fs::read_to_string(self.config.resolve(p))?,
                self.config.seeds.suite,
            )?,
            None => build_suite(registry, &self.config.suite, self.config.seeds.suite)?,
        })
    }

    fn stage_suite(
        &self,
        registry: &ConceptRegistry,
        manifest: &mut RunManifest,
    ) -> Result<Vec<PathBuf>, RunError> {
        let suite = self.build_suite(registry)?;
        let templates = self.config.suite.template_set()?;
        let prompts = evaluated_prompts(
            &suite,
            self.config.orderings,
            self.config.seeds.suite,
            &templates,
            registry,
        )?;
        let lookup = lookup_for(&self.config, &prompts, registry)?;
        let violations = validate_registry(registry, &lookup);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(RunError::Config(format!("lookup invalid: {}", list.join("; "))));
        }
        let meta: Vec<PromptMeta> = prompts.iter().map(|p| prompt_meta(p, registry)).collect();
        manifest.progress.prompts_built = suite.prompts.len();
        let out = &self.out_dir;
        Ok(vec![
            write_text(&rec(out, "registry.jsonl"), &registry.to_jsonl())?,
            write_text(&rec(out, "suite.jsonl"), &suite.to_jsonl())?,
            write_jsonl(&rec(out, "prompts.jsonl"), &prompts)?,
            write_text(&rec(out, "lookup.jsonl"), &lookup.to_jsonl())?,
            write_jsonl(&rec(out, "prompt_meta.jsonl"), &meta)?,
        ])
    }

    fn stage_generation(
        &self,
        backend: &Arc<dyn Backend>,
        manifest: &mut RunManifest,
    ) -> Result<Vec<PathBuf>, RunError> {
        let prompts: Vec<Prompt> = read_jsonl(&rec(&self.out_dir, "prompts.jsonl"))?;
        let mut generator = Generator::new(backend.clone(), &self.out_dir.join("cache"))?;
        generator.width = self.config.width;
        generator.height = self.config.height;
        generator.retry = retry_policy(&self.config);
        if !backend.deterministic() {
            manifest.note(format!(
                "backend {} is not deterministic; cached images pin this run's results",
                backend.id()
            ));
        }
        let refs: Vec<&Prompt> = prompts.iter().collect();
        let results = generator.generate_all(
            &refs,
            self.config.images_per_prompt,
            self.config.seeds.generation,
            self.config.parallelism.generation,
        );
        let mut records = Vec::new();
        for (p, r) in prompts.iter().zip(results) {
            match r {
                Ok(rs) => records.extend(rs),
                Err(GenerationError::BackendRejectedPrompt(m)) => {
                    manifest.note(format!("prompt {} rejected by backend and excluded: {m}", p.id));
                }
                Err(e) => return Err(e.into()),
            }
        }
        manifest.progress.images_generated = records.len();
        Ok(vec![write_jsonl(
            &rec(&self.out_dir, "generation.jsonl"),
            &records,
        )?])
    }

    fn models(&self, registry: &ConceptRegistry) -> (Arc<dyn Encoder>, Arc<dyn Detector>) {
        let encoder = self
            .encoder
            .clone()
            .unwrap_or_else(|| Arc::new(GlyphEncoder::new(registry, self.config.detection.encoder_noise)));
        let detector = self
            .detector
            .clone()
            .unwrap_or_else(|| Arc::new(GlyphDetector::new(registry)));
        (encoder, detector)
    }

    fn stage_scoring(
        &self,
        registry: &ConceptRegistry,
        manifest: &mut RunManifest,
    ) -> Result<Vec<PathBuf>, RunError> {
        let (encoder, detector) = self.models(registry);
        let (paths, n) = score_images(
            &self.out_dir,
            &self.out_dir,
            registry,
            encoder.as_ref(),
            detector.as_ref(),
            self.config.detection.thresholds(),
            self.config.detection.fusion_rule(),
            self.config.parallelism.scoring,
        )?;
        manifest.progress.images_scored = n;
        Ok(paths)
    }

    fn stage_diagnostics(
        &self,
        registry: &ConceptRegistry,
        backend: &Arc<dyn Backend>,
        manifest: &mut RunManifest,
    ) -> Result<Vec<PathBuf>, RunError> {
        let out = &self.out_dir;
        let scores: Vec<ImageScore> = read_jsonl(&rec(out, "scores.jsonl"))?;
        let diag = if self.config.diagnostics.enabled {
            let scored: BTreeSet<&str> = scores.iter().map(|s| s.prompt_id.as_str()).collect();
            let prompts: Vec<Prompt> = read_jsonl::<Prompt>(&rec(out, "prompts.jsonl"))?
                .into_iter()
                .filter(|p| !p.id.contains('@') && scored.contains(p.id.as_str()))
                .collect();
            let (traces, embeddings, notes) =
                probe_backend(backend.as_ref(), &prompts, registry, self.config.seeds.generation)?;
            for n in notes {
                manifest.note(n);
            }
            write_jsonl(&rec(out, "attention.jsonl"), &traces)?;
            write_json(&rec(out, "embeddings.json"), &embeddings)?;
            summarize(
                &traces,
                &embeddings,
                &scores,
                self.config.diagnostics.subspace_dim,
            )
        } else {
            DiagnosticsOutput {
                notes: vec!["diagnostics disabled in config".into()],
                ..Default::default()
            }
        };
        for n in &diag.notes {
            manifest.note(format!("diagnostics: {n}"));
        }
        let mut paths = vec![write_json(&rec(out, "diagnostics.json"), &diag)?];
        for name in ["attention.jsonl", "embeddings.json"] {
            let p = rec(out, name);
            if p.exists() && self.config.diagnostics.enabled {
                paths.push(p);
            }
        }
        Ok(paths)
    }
}

/// Traces, embedding sets and notes on what the backend could not supply.
type DiagnosticInputs = (Vec<AttentionTrace>, Vec<EmbeddingSet>, Vec<String>);

/// Attention traces for `prompts` and concept embeddings for the registry,
/// as far as the backend supports them.
fn probe_backend(
    backend: &dyn Backend,
    prompts: &[Prompt],
    registry: &ConceptRegistry,
    seed: u64,
) -> Result<DiagnosticInputs, RunError> {
    let mut notes = Vec::new();
    let mut traces = Vec::new();
    for p in prompts {
        match backend.capture_attention(p, seed) {
            Ok(t) => traces.extend(t),
            Err(GenerationError::CapabilityUnsupported(m)) => {
                notes.push(format!("attention capture skipped: {m}"));
                traces.clear();
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let embeddings = match backend.concept_embeddings(registry.concepts()) {
        Ok(e) => e,
        Err(GenerationError::CapabilityUnsupported(m)) => {
            notes.push(format!("embedding probe skipped: {m}"));
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    Ok((traces, embeddings, notes))
}

/// Runs the config's evaluation into `out_dir` (or the config's own).
pub fn run_evaluation(
    config_path: &Path,
    out_dir: Option<&Path>,
) -> Result<(RunManifest, CisReport), RunError> {
    Runner::from_config_file(config_path, out_dir)?.run()
}

/// Continues an interrupted run; a completed run returns its stored report.
pub fn resume(manifest_path: &Path) -> Result<(RunManifest, CisReport), RunError> {
    Runner::from_manifest(manifest_path)?.run()
}

/// Rebuilds a run directory's outputs from its records and refreshes the
/// manifest's report entry.
pub fn rerender(dir: &Path) -> Result<CisReport, RunError> {
    let mut manifest = RunManifest::load(&RunManifest::path_in(dir))?;
    let bootstrap = BootstrapSettings {
        resamples: manifest.bootstrap.resamples,
        confidence: manifest.bootstrap.confidence,
        seed: manifest.seeds.bootstrap,
    };
    let (report, outputs) = render_report(dir, bootstrap)?;
    manifest.out_dir = dir.to_path_buf();
    manifest.record_artifacts(Stage::Report, &outputs.files)?;
    manifest.save()?;
    Ok(report)
}

/// Threshold and rule overrides for [`rescore`].
#[derive(Debug, Clone, Copy)]
pub struct Rescore {
    pub thresholds: Thresholds,
    pub rule: FusionRule,
}

/// Scores the images of run `from` again with new settings, writing
/// records and outputs to `to`. Nothing under `from` is modified.
pub fn rescore(from: &Path, to: &Path, settings: Rescore, threads: usize) -> Result<CisReport, RunError> {
    if fs::canonicalize(from).ok() == fs::canonicalize(to).ok() {
        return Err(RunError::Config(
            "rescore output must differ from the source run".into(),
        ));
    }
    let manifest = RunManifest::load(&RunManifest::path_in(from))?;
    if manifest.stage(Stage::Generation).status != StageStatus::Done {
        return Err(RunError::Config(
            "source run has no completed generation stage".into(),
        ));
    }
    let registry = parse_registry(&fs::read_to_string(rec(from, "registry.jsonl"))?)?;
    fs::create_dir_all(to.join(RECORDS))?;
    for name in [
        "registry.jsonl",
        "prompts.jsonl",
        "prompt_meta.jsonl",
        "lookup.jsonl",
        "diagnostics.json",
    ] {
        let src = rec(from, name);
        if src.exists() {
            fs::copy(&src, rec(to, name))?;
        }
    }
    let encoder = GlyphEncoder::new(&registry, 0.0);
    let detector = GlyphDetector::new(&registry);
    score_images(
        from,
        to,
        &registry,
        &encoder,
        &detector,
        settings.thresholds,
        settings.rule,
        threads,
    )?;
    let images_per_prompt: usize = read_json::<CisReport>(&rec(from, "metrics.json"))
        .map(|r| r.images_per_prompt)
        .unwrap_or(1);
    let bootstrap = BootstrapSettings {
        resamples: manifest.bootstrap.resamples,
        confidence: manifest.bootstrap.confidence,
        seed: manifest.seeds.bootstrap,
    };
    let report = compute_metrics(to, images_per_prompt, bootstrap)?;
    write_json(&rec(to, "metrics.json"), &report)?;
    render_report(to, bootstrap)?;
    Ok(report)
}

/// Builds the suite and runs only the attention and embedding probes.
pub fn diagnose(runner: &Runner) -> Result<DiagnosticsOutput, RunError> {
    let config = runner.config();
    let registry = load_registry(&config.resolve(&config.registry))?;
    let backend = match &runner.backend {
        Some(b) => b.clone(),
        None => build_backend(config, &registry)?,
    };
    let suite = runner.build_suite(&registry)?;
    let (traces, embeddings, mut notes) = probe_backend(
        backend.as_ref(),
        &suite.prompts,
        &registry,
        config.seeds.generation,
    )?;
    let mut diag = summarize(&traces, &embeddings, &[], config.diagnostics.subspace_dim);
    notes.append(&mut diag.notes);
    diag.notes = notes;
    write_diagnostics(runner.out_dir(), &diag)?;
    Ok(diag)
}

/// Similarity-threshold calibration against mock-world ground truth: every
/// expected component of every suite image becomes a `(similarity,
/// present)` sample.
pub fn calibrate(config: &RunConfig) -> Result<Calibration, RunError> {
    let BackendConfig::Mock { world } = &config.backend else {
        return Err(RunError::Config("calibration needs the mock backend".into()));
    };
    let registry = load_registry(&config.resolve(&config.registry))?;
    let suite = match &config.suite_file {
        Some(p) => PromptSuite::parse_jsonl(&fs::read_to_string(config.resolve(p))?, config.seeds.suite)?,
        None => build_suite(&registry, &config.suite, config.seeds.suite)?,
    };
    let mock = MockBackend::new(world.clone(), registry.clone());
    let encoder = GlyphEncoder::new(&registry, config.detection.encoder_noise);
    let mut samples = Vec::new();
    for p in &suite.prompts {
        let expected: Vec<&Concept> = p.components.iter().filter_map(|id| registry.get(id)).collect();
        for j in 0..config.images_per_prompt {
            let (png, truth) = mock.compose(p, image_seed(config.seeds.generation, j))?;
            let sims = score_components_similarity(&png, &expected, &encoder)?;
            for (id, s) in sims {
                samples.push((s, truth.contains(&id)));
            }
        }
    }
    calibrate_similarity_threshold(&samples)
        .ok_or_else(|| RunError::Config("calibration needs both present and omitted components".into()))
}
