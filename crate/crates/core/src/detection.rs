//! Component detection: a semantic-similarity channel and an object-detector
//! channel, fused into per-component evidence and an included set.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glyph::{decode_png, GlyphAtlas, Region};
use crate::registry::{Concept, ConceptRegistry, LookupTable, RegistryError};
use crate::util::{sha256_hex, stable_u64};

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("encoder failure: {0}")]
    EncoderFailure(String),
    #[error("detector failure: {0}")]
    DetectorFailure(String),
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("no similarity score for expected concept {0:?}")]
    MissingSimilarity(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("not found: {0}")]
    NotFound(String),
}

impl From<RegistryError> for DetectionError {
    fn from(e: RegistryError) -> Self {
        DetectionError::NotFound(e.to_string())
    }
}

/// Detector labels never counted towards inclusion.
pub const IGNORED_LABELS: [&str; 3] = ["face", "human_face", "person"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub region: Region,
}

pub trait Encoder: Send + Sync {
    /// Unit-norm image embedding.
    fn embed_image(&self, image: &[u8]) -> Result<Vec<f64>, DetectionError>;
    /// Unit-norm text embedding, same space as images.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, DetectionError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &[u8]) -> Result<Vec<Detection>, DetectionError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub sim: f64,
    pub det: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { sim: 0.26, det: 0.50 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), DetectionError> {
        for (name, t) in [("sim", self.sim), ("det", self.det)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(DetectionError::InvalidThresholds(format!(
                    "{name} threshold {t} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// How the two channels decide inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum FusionRule {
    /// Either channel clearing its threshold suffices.
    #[default]
    Disjunctive,
    /// Both channels must clear their thresholds.
    Conjunctive,
    /// `w·similarity + (1−w)·detection ≥ threshold`.
    Weighted { similarity_weight: f64, threshold: f64 },
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, DetectionError> {
    if a.len() != b.len() {
        return Err(DetectionError::EncoderFailure(format!(
            "embedding sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(DetectionError::EncoderFailure("zero-norm embedding".into()));
    }
    Ok(dot / (na * nb))
}

/// Clamped cosine between the image and each concept's best surface form.
pub fn score_components_similarity(
    image: &[u8],
    components: &[&Concept],
    encoder: &dyn Encoder,
) -> Result<BTreeMap<String, f64>, DetectionError> {
    let image_emb = encoder.embed_image(image)?;
    let mut out = BTreeMap::new();
    for c in components {
        let mut best = f64::NEG_INFINITY;
        for form in c.surface_forms() {
            best = best.max(cosine(&image_emb, &encoder.embed_text(form)?)?);
        }
        out.insert(c.id.clone(), best.clamp(0.0, 1.0));
    }
    Ok(out)
}

pub fn detect_objects(image: &[u8], detector: &dyn Detector) -> Result<Vec<Detection>, DetectionError> {
    let detections = detector.detect(image)?;
    for d in &detections {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(DetectionError::DetectorFailure(format!(
                "confidence {} for {} outside [0, 1]",
                d.confidence, d.label
            )));
        }
    }
    Ok(detections)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub evidence: BTreeMap<String, f64>,
    pub included: BTreeSet<String>,
}

/// Highest confidence among detections whose label belongs to `concept`,
/// ignoring face/person classes. 0 when nothing matches.
pub fn best_detection(concept: &Concept, detections: &[Detection]) -> f64 {
    detections
        .iter()
        .filter(|d| !IGNORED_LABELS.contains(&d.label.as_str()))
        .filter(|d| concept.detector_labels.contains(&d.label))
        .map(|d| d.confidence)
        .fold(0.0, f64::max)
}

pub fn fuse_scores(
    similarity: &BTreeMap<String, f64>,
    detections: &[Detection],
    expected: &[&Concept],
    thresholds: Thresholds,
    rule: FusionRule,
) -> Result<Fusion, DetectionError> {
    thresholds.validate()?;
    let mut evidence = BTreeMap::new();
    let mut included = BTreeSet::new();
    for c in expected {
        let sim = *similarity
            .get(&c.id)
            .ok_or_else(|| DetectionError::MissingSimilarity(c.id.clone()))?;
        let det = best_detection(c, detections);
        evidence.insert(c.id.clone(), sim.max(det));
        let keep = match rule {
            FusionRule::Disjunctive => sim >= thresholds.sim || det >= thresholds.det,
            FusionRule::Conjunctive => sim >= thresholds.sim && det >= thresholds.det,
            FusionRule::Weighted {
                similarity_weight: w,
                threshold,
            } => w * sim + (1.0 - w) * det >= threshold,
        };
        if keep {
            included.insert(c.id.clone());
        }
    }
    Ok(Fusion { evidence, included })
}

/// Everything recorded about one scored image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub prompt_id: String,
    pub image_index: usize,
    pub image_hash: String,
    pub similarity: BTreeMap<String, f64>,
    pub detections: Vec<Detection>,
    pub evidence: BTreeMap<String, f64>,
    pub included: BTreeSet<String>,
    pub thresholds: Thresholds,
    #[serde(default)]
    pub rule: FusionRule,
}

impl DetectionResult {
    /// Concept with the highest evidence; ties go to the lowest id.
    pub fn top_concept(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (id, &e) in &self.evidence {
            if best.is_none_or(|(_, b)| e > b) {
                best = Some((id.as_str(), e));
            }
        }
        best
    }

    /// Recomputes the decision from the stored channel outputs.
    pub fn refuse(
        &self,
        expected: &[&Concept],
        thresholds: Thresholds,
        rule: FusionRule,
    ) -> Result<DetectionResult, DetectionError> {
        let fusion = fuse_scores(&self.similarity, &self.detections, expected, thresholds, rule)?;
        Ok(DetectionResult {
            evidence: fusion.evidence,
            included: fusion.included,
            thresholds,
            rule,
            ..self.clone()
        })
    }
}

/// `result.included` intersected with the prompt's expected set.
pub fn included_components(
    result: &DetectionResult,
    table: &LookupTable,
) -> Result<BTreeSet<String>, DetectionError> {
    let entry = table.entry(&result.prompt_id)?;
    let expected: BTreeSet<&String> = entry.components.iter().collect();
    Ok(result
        .included
        .iter()
        .filter(|c| expected.contains(c))
        .cloned()
        .collect())
}

/// Both channels plus the fusion settings.
pub struct Scorer<'a> {
    pub encoder: &'a dyn Encoder,
    pub detector: &'a dyn Detector,
    pub thresholds: Thresholds,
    pub rule: FusionRule,
}

impl Scorer<'_> {
    pub fn score(
        &self,
        prompt_id: &str,
        image_index: usize,
        image: &[u8],
        expected: &[&Concept],
    ) -> Result<DetectionResult, DetectionError> {
        let similarity = score_components_similarity(image, expected, self.encoder)?;
        let detections = detect_objects(image, self.detector)?;
        let fusion = fuse_scores(&similarity, &detections, expected, self.thresholds, self.rule)?;
        Ok(DetectionResult {
            prompt_id: prompt_id.to_string(),
            image_index,
            image_hash: sha256_hex(image),
            similarity,
            detections,
            evidence: fusion.evidence,
            included: fusion.included,
            thresholds: self.thresholds,
            rule: self.rule,
        })
    }
}

/// Exact detector for mock-world images: one detection per visible glyph,
/// labelled with the concept's first detector label, confidence 1.
pub struct GlyphDetector {
    atlas: GlyphAtlas,
}

impl GlyphDetector {
    pub fn new(registry: &ConceptRegistry) -> Self {
        Self {
            atlas: GlyphAtlas::from_registry(registry),
        }
    }
}

impl Detector for GlyphDetector {
    fn detect(&self, image: &[u8]) -> Result<Vec<Detection>, DetectionError> {
        let canvas = decode_png(image).map_err(|e| DetectionError::UndecodableImage(e.to_string()))?;
        Ok(self
            .atlas
            .scan(&canvas)
            .into_iter()
            .map(|(i, region)| Detection {
                label: self.atlas.detector_label(i).to_string(),
                confidence: 1.0,
                region,
            })
            .collect())
    }
}

/// Stub encoder that "sees" glyphs. An image embeds to the normalized
/// indicator vector of its visible glyphs; text embeds to the one-hot vector
/// of the concept it names. With `noise > 0` the image vector is perturbed
/// by Gaussian noise seeded from the image bytes before normalization.
pub struct GlyphEncoder {
    atlas: GlyphAtlas,
    registry: ConceptRegistry,
    noise: f64,
}

impl GlyphEncoder {
    pub fn new(registry: &ConceptRegistry, noise: f64) -> Self {
        Self {
            atlas: GlyphAtlas::from_registry(registry),
            registry: registry.clone(),
            noise,
        }
    }

    fn dim(&self) -> usize {
        // One axis per concept, one for "nothing visible", one for unknown text.
        self.atlas.len() + 2
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl Encoder for GlyphEncoder {
    fn embed_image(&self, image: &[u8]) -> Result<Vec<f64>, DetectionError> {
        let canvas = decode_png(image).map_err(|e| DetectionError::UndecodableImage(e.to_string()))?;
        let mut v = vec![0.0; self.dim()];
        let visible = self.atlas.scan(&canvas);
        if visible.is_empty() {
            v[self.atlas.len()] = 1.0;
        }
        for (i, _) in visible {
            v[i] = 1.0;
        }
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_u64(image));
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += self.noise * z;
            }
        }
        Ok(normalize(v))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, DetectionError> {
        let mut v = vec![0.0; self.dim()];
        match self
            .registry
            .find_by_text(text)
            .and_then(|c| self.atlas.index_of(&c.id))
        {
            Some(i) => v[i] = 1.0,
            None => v[self.atlas.len() + 1] = 1.0,
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    /// Fraction of absent components whose similarity clears `tau`.
    pub false_inclusion: f64,
    /// Fraction of present components whose similarity falls below `tau`.
    pub false_omission: f64,
    pub present: usize,
    pub absent: usize,
}

/// Picks the similarity threshold on a 0.01 grid over (0, 1) that best
/// equalizes false-inclusion and false-omission rates; ties go to the lower
/// total error, then to the middle of the tied thresholds so a clean gap
/// gets the widest margin. Samples are `(similarity, present)`.
pub fn calibrate_similarity_threshold(samples: &[(f64, bool)]) -> Option<Calibration> {
    let present: Vec<f64> = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
    let absent: Vec<f64> = samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if present.is_empty() || absent.is_empty() {
        return None;
    }
    let grid: Vec<Calibration> = (1..100)
        .map(|step| {
            let tau = step as f64 / 100.0;
            Calibration {
                tau,
                false_inclusion: absent.iter().filter(|&&s| s >= tau).count() as f64 / absent.len() as f64,
                false_omission: present.iter().filter(|&&s| s < tau).count() as f64 / present.len() as f64,
                present: present.len(),
                absent: absent.len(),
            }
        })
        .collect();
    let key = |c: &Calibration| {
        (
            (c.false_inclusion - c.false_omission).abs(),
            c.false_inclusion + c.false_omission,
        )
    };
    let (gap, total) = grid
        .iter()
        .map(key)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))?;
    let tied: Vec<&Calibration> = grid
        .iter()
        .filter(|c| {
            let (g, t) = key(c);
            (g - gap).abs() <= 1e-12 && (t - total).abs() <= 1e-12
        })
        .collect();
    Some(*tied[(tied.len() - 1) / 2])
}
