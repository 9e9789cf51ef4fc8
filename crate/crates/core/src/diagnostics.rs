//! Architectural probes: per-layer cross-attention entropy and embedding
//! subspace overlap.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{pearson_correlation, ImageScore, MetricsError};
use crate::registry::Group;
use crate::suite::ProfileKind;

const ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("attention row sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("negative attention weight {0}")]
    NegativeWeight(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("ratio needs both groups; missing {0}")]
    MissingGroup(&'static str),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no prompt appears in both traces and scores")]
    JoinEmpty,
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Cross-attention map of one layer for one prompt, heads already averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub prompt_id: String,
    pub layer: usize,
    /// Rows are queries, columns keys.
    pub weights: Vec<Vec<f64>>,
    pub concept_pair: (String, String),
    pub group_profile: ProfileKind,
    pub head_count: usize,
}

impl AttentionTrace {
    /// Averages per-head maps (all the same shape) into one trace.
    pub fn from_heads(
        prompt_id: &str,
        layer: usize,
        heads: &[Vec<Vec<f64>>],
        concept_pair: (String, String),
        group_profile: ProfileKind,
    ) -> Result<Self, DiagnosticsError> {
        let first = heads.first().ok_or(DiagnosticsError::EmptyInput)?;
        let (rows, cols) = (first.len(), first.first().map_or(0, Vec::len));
        let mut avg = vec![vec![0.0; cols]; rows];
        for head in heads {
            if head.len() != rows || head.iter().any(|r| r.len() != cols) {
                return Err(DiagnosticsError::InvalidTrace("heads differ in shape".into()));
            }
            for (acc, row) in avg.iter_mut().zip(head) {
                for (a, w) in acc.iter_mut().zip(row) {
                    *a += w;
                }
            }
        }
        let h = heads.len() as f64;
        avg.iter_mut().flatten().for_each(|a| *a /= h);
        let trace = Self {
            prompt_id: prompt_id.to_string(),
            layer,
            weights: avg,
            concept_pair,
            group_profile,
            head_count: heads.len(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        if self.weights.is_empty() {
            return Err(DiagnosticsError::InvalidTrace("no rows".into()));
        }
        for row in &self.weights {
            if row.iter().any(|&w| w > 1.0) {
                return Err(DiagnosticsError::InvalidTrace("weight above 1".into()));
            }
            row_sum(row)?;
        }
        Ok(())
    }

    pub fn row_entropies(&self) -> Result<Vec<f64>, DiagnosticsError> {
        self.weights.iter().map(|r| attention_entropy(r)).collect()
    }
}

fn row_sum(row: &[f64]) -> Result<f64, DiagnosticsError> {
    if let Some(&w) = row.iter().find(|&&w| w < 0.0 || w.is_nan()) {
        return Err(DiagnosticsError::NegativeWeight(w));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(DiagnosticsError::NotNormalized(sum));
    }
    Ok(sum)
}

/// Shannon entropy of one attention row in nats, `0 ln 0 = 0`. Rows within
/// 1e-6 of unit mass are renormalized first.
pub fn attention_entropy(row: &[f64]) -> Result<f64, DiagnosticsError> {
    let sum = row_sum(row)?;
    let h: f64 = row
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| {
            let p = a / sum;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

/// Order-independent mean: values are summed in sorted order.
fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntropy {
    pub layer: usize,
    pub group: ProfileKind,
    pub mean_entropy: f64,
    /// Number of traces contributing.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub rows: Vec<LayerEntropy>,
    /// Layer with the highest marginalized mean (lowest on ties).
    pub peak_layer: Option<usize>,
    /// Marginalized ÷ mainstream mean at the peak layer.
    pub ratio: Option<f64>,
}

impl EntropyProfile {
    pub fn mean(&self, layer: usize, group: ProfileKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.layer == layer && r.group == group)
            .map(|r| r.mean_entropy)
    }

    pub fn group_ratio(&self) -> Result<f64, DiagnosticsError> {
        if self.peak_layer.is_none() {
            return Err(DiagnosticsError::MissingGroup("marginalized"));
        }
        self.ratio.ok_or(DiagnosticsError::MissingGroup("mainstream"))
    }
}

/// Mean row entropy per (layer, group), the marginalized peak layer, and the
/// group ratio at that layer.
pub fn entropy_profile(traces: &[AttentionTrace]) -> Result<EntropyProfile, DiagnosticsError> {
    if traces.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let layers: BTreeSet<usize> = traces.iter().map(|t| t.layer).collect();
    let (lo, hi) = (*layers.first().unwrap(), *layers.last().unwrap());
    if hi - lo + 1 != layers.len() {
        return Err(DiagnosticsError::InvalidTrace(format!(
            "layer indices not contiguous: {layers:?}"
        )));
    }

    let mut cells: BTreeMap<(usize, ProfileKind), (Vec<f64>, usize)> = BTreeMap::new();
    for t in traces {
        let cell = cells.entry((t.layer, t.group_profile)).or_default();
        cell.0.extend(t.row_entropies()?);
        cell.1 += 1;
    }
    let rows: Vec<LayerEntropy> = cells
        .into_iter()
        .map(|((layer, group), (mut hs, count))| LayerEntropy {
            layer,
            group,
            mean_entropy: sorted_mean(&mut hs),
            count,
        })
        .collect();

    let mut peak: Option<(usize, f64)> = None;
    for r in rows.iter().filter(|r| r.group == ProfileKind::Marginalized) {
        if peak.is_none_or(|(_, best)| r.mean_entropy > best) {
            peak = Some((r.layer, r.mean_entropy));
        }
    }
    let ratio = peak.and_then(|(layer, marg)| {
        rows.iter()
            .find(|r| r.layer == layer && r.group == ProfileKind::Mainstream)
            .filter(|r| r.mean_entropy > 0.0)
            .map(|r| marg / r.mean_entropy)
    });
    Ok(EntropyProfile {
        rows,
        peak_layer: peak.map(|(l, _)| l),
        ratio,
    })
}

/// Concept embeddings from one encoder or layer, for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub entries: BTreeMap<String, Vec<f64>>,
    pub group: Group,
    pub source: String,
}

impl EmbeddingSet {
    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(Vec::len)
    }

    pub fn validate(&self) -> Result<usize, DiagnosticsError> {
        let dim = self
            .dim()
            .ok_or_else(|| DiagnosticsError::DegenerateInput("empty embedding set".into()))?;
        for (id, v) in &self.entries {
            if v.len() != dim {
                return Err(DiagnosticsError::DimensionMismatch(dim, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DiagnosticsError::DegenerateInput(format!(
                    "non-finite entry in {id}"
                )));
            }
        }
        Ok(dim)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.entries.values().cloned().collect()
    }

    /// Splits into two sets by alternating over sorted ids.
    pub fn halves(&self) -> (EmbeddingSet, EmbeddingSet) {
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for (i, (id, v)) in self.entries.iter().enumerate() {
            if i % 2 == 0 {
                a.insert(id.clone(), v.clone());
            } else {
                b.insert(id.clone(), v.clone());
            }
        }
        let mk = |entries, tag: &str| EmbeddingSet {
            entries,
            group: self.group,
            source: format!("{}#{tag}", self.source),
        };
        (mk(a, "a"), mk(b, "b"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d` orthonormal rows of length `dim`.
    pub basis: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub projected: Vec<Vec<f64>>,
}

impl Pca {
    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.projected
            .iter()
            .map(|coords| {
                let mut x = self.mean.clone();
                for (c, b) in coords.iter().zip(&self.basis) {
                    for (xi, bi) in x.iter_mut().zip(b) {
                        *xi += c * bi;
                    }
                }
                x
            })
            .collect()
    }
}

fn to_matrix(points: &[Vec<f64>]) -> Result<(DMatrix<f64>, Vec<f64>), DiagnosticsError> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(DiagnosticsError::InvalidDimension(
            "zero-dimensional points".into(),
        ));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(DiagnosticsError::DimensionMismatch(dim, p.len()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(DiagnosticsError::DegenerateInput("non-finite coordinate".into()));
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    Ok((centered, mean))
}

/// Principal components of mean-centred points, ordered by decreasing
/// variance. Each component is signed so its largest-magnitude coordinate is
/// positive.
pub fn pca_project(points: &[Vec<f64>], d: usize) -> Result<Pca, DiagnosticsError> {
    if points.len() < 2 {
        return Err(DiagnosticsError::DegenerateInput(
            "need at least two points".into(),
        ));
    }
    let (x, mean) = to_matrix(points)?;
    let (n, dim) = x.shape();
    if d == 0 || d > (n - 1).min(dim) {
        return Err(DiagnosticsError::InvalidDimension(format!(
            "d = {d} with {n} points in {dim} dimensions"
        )));
    }
    let total: f64 = x.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(DiagnosticsError::DegenerateInput("all points identical".into()));
    }

    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    // Coordinates with no variance cannot carry a principal direction; the
    // decomposition still leaks round-off into them.
    let flat: Vec<bool> = (0..dim).map(|j| x.column(j).iter().all(|v| *v == 0.0)).collect();

    let mut basis = Vec::with_capacity(d);
    let mut ratios = Vec::with_capacity(d);
    for &i in order.iter().take(d) {
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        if flat.iter().any(|f| *f) {
            row.iter_mut()
                .zip(&flat)
                .filter(|(_, f)| **f)
                .for_each(|(v, _)| *v = 0.0);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let pivot = row
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > row[best].abs() { j } else { best });
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        let s = svd.singular_values[i];
        ratios.push(s * s / total);
        basis.push(row);
    }

    let projected = (0..n)
        .map(|i| {
            basis
                .iter()
                .map(|b| b.iter().enumerate().map(|(j, bj)| x[(i, j)] * bj).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        basis,
        explained_variance_ratio: ratios,
        projected,
    })
}

/// Mean squared cosine of the principal angles between the top-`d`
/// principal subspaces of two embedding sets. 1 for identical spans, 0 for
/// orthogonal ones.
pub fn subspace_overlap(
    set_a: &EmbeddingSet,
    set_b: &EmbeddingSet,
    d: usize,
) -> Result<f64, DiagnosticsError> {
    let da = set_a.validate()?;
    let db = set_b.validate()?;
    if da != db {
        return Err(DiagnosticsError::DimensionMismatch(da, db));
    }
    let a = pca_project(&set_a.points(), d)?;
    let b = pca_project(&set_b.points(), d)?;
    Ok(basis_overlap(&a.basis, &b.basis))
}

/// `‖A Bᵀ‖²_F / d` for orthonormal row bases: the sum of squared singular
/// values of the cross-Gram matrix, i.e. of squared principal-angle cosines.
fn basis_overlap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a.len().min(b.len());
    let mut frob = 0.0;
    for ra in a {
        for rb in b {
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            frob += dot * dot;
        }
    }
    let v = frob / d as f64;
    // Round-off from the decomposition is snapped away at the endpoints.
    if v < OVERLAP_SNAP {
        0.0
    } else if v > 1.0 - OVERLAP_SNAP {
        1.0
    } else {
        v
    }
}

const OVERLAP_SNAP: f64 = 1e-9;

/// Overlap between the two alternating halves of one group's embeddings;
/// high values mean the group's concepts share the same few directions.
pub fn within_group_overlap(set: &EmbeddingSet, d: usize) -> Result<(f64, usize), DiagnosticsError> {
    let (a, b) = set.halves();
    let d = d
        .min(a.entries.len().saturating_sub(1))
        .min(b.entries.len().saturating_sub(1));
    if d == 0 {
        return Err(DiagnosticsError::InvalidDimension(format!(
            "group {} has too few embeddings for a subspace",
            set.group
        )));
    }
    Ok((subspace_overlap(&a, &b, d)?, d))
}

/// Pairwise overlap between named sets, `d` clipped to what every set allows.
pub fn overlap_matrix(
    sets: &[(String, EmbeddingSet)],
    d: usize,
) -> Result<(Vec<Vec<f64>>, usize), DiagnosticsError> {
    let d = sets
        .iter()
        .map(|(_, s)| s.entries.len().saturating_sub(1))
        .fold(d, usize::min);
    if d == 0 {
        return Err(DiagnosticsError::InvalidDimension("sets too small".into()));
    }
    let bases = sets
        .iter()
        .map(|(_, s)| {
            s.validate()?;
            Ok(pca_project(&s.points(), d)?.basis)
        })
        .collect::<Result<Vec<_>, DiagnosticsError>>()?;
    let m = bases
        .iter()
        .map(|a| bases.iter().map(|b| basis_overlap(a, b)).collect())
        .collect();
    Ok((m, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCorrelation {
    /// Pearson r between per-prompt mean entropy and omission rate `1 − S`.
    pub r_vs_omission: f64,
    /// Same against accuracy `S`; equals `-r_vs_omission`.
    pub r_vs_accuracy: f64,
    pub pairs: usize,
}

/// Correlates per-prompt mean attention entropy with per-prompt omission
/// rate over the prompts present in both inputs.
pub fn entropy_omission_correlation(
    traces: &[AttentionTrace],
    scores: &[ImageScore],
) -> Result<EntropyCorrelation, DiagnosticsError> {
    let mut entropy: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in traces {
        entropy
            .entry(t.prompt_id.as_str())
            .or_default()
            .extend(t.row_entropies()?);
    }
    let mut accuracy: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in scores {
        accuracy.entry(s.prompt_id.as_str()).or_default().push(s.s_f64());
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (prompt, hs) in entropy.iter_mut() {
        if let Some(acc) = accuracy.get_mut(prompt) {
            xs.push(sorted_mean(hs));
            ys.push(1.0 - sorted_mean(acc));
        }
    }
    if xs.is_empty() {
        return Err(DiagnosticsError::JoinEmpty);
    }
    let r = pearson_correlation(&xs, &ys)?;
    Ok(EntropyCorrelation {
        r_vs_omission: r,
        r_vs_accuracy: -r,
        pairs: xs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub concept: String,
    pub group: Group,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    /// Set names, e.g. `mainstream#a`.
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub d: usize,
    /// Overlap between the two halves of each group.
    pub within_group: BTreeMap<String, f64>,
}

/// Everything the diagnostics stage produces. Absent parts are `None` or
/// empty, with the reason in `notes`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOutput {
    pub entropy: Option<EntropyProfile>,
    pub correlation: Option<EntropyCorrelation>,
    pub pca: Vec<PcaPoint>,
    pub explained_variance: Vec<f64>,
    pub overlap: Option<OverlapSummary>,
    pub notes: Vec<String>,
}

impl DiagnosticsOutput {
    pub fn is_empty(&self) -> bool {
        self.entropy.is_none() && self.pca.is_empty() && self.overlap.is_none()
    }
}

/// Runs every probe the inputs allow. Failures of individual probes become
/// notes rather than errors.
pub fn summarize(
    traces: &[AttentionTrace],
    embeddings: &[EmbeddingSet],
    scores: &[ImageScore],
    d: usize,
) -> DiagnosticsOutput {
    let mut out = DiagnosticsOutput::default();
    if traces.is_empty() {
        out.notes.push("no attention traces".into());
    } else {
        match entropy_profile(traces) {
            Ok(p) => out.entropy = Some(p),
            Err(e) => out.notes.push(format!("entropy profile: {e}")),
        }
        match entropy_omission_correlation(traces, scores) {
            Ok(c) => out.correlation = Some(c),
            Err(e) => out.notes.push(format!("entropy correlation: {e}")),
        }
    }

    if embeddings.is_empty() {
        out.notes.push("no concept embeddings".into());
        return out;
    }
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for set in embeddings {
        for (id, v) in &set.entries {
            ids.push((id.clone(), set.group));
            points.push(v.clone());
        }
    }
    match pca_project(&points, 2.min(points.len().saturating_sub(1))) {
        Ok(pca) => {
            out.explained_variance = pca.explained_variance_ratio.clone();
            out.pca = ids
                .into_iter()
                .zip(&pca.projected)
                .map(|((concept, group), p)| PcaPoint {
                    concept,
                    group,
                    x: p[0],
                    y: p.get(1).copied().unwrap_or(0.0),
                })
                .collect();
        }
        Err(e) => out.notes.push(format!("pca: {e}")),
    }

    let mut named = Vec::new();
    let mut within = BTreeMap::new();
    for set in embeddings {
        let (a, b) = set.halves();
        named.push((format!("{}#a", set.group), a));
        named.push((format!("{}#b", set.group), b));
        match within_group_overlap(set, d) {
            Ok((v, _)) => {
                within.insert(set.group.to_string(), v);
            }
            Err(e) => out.notes.push(format!("overlap ({}): {e}", set.group)),
        }
    }
    match overlap_matrix(&named, d) {
        Ok((matrix, d)) => {
            out.overlap = Some(OverlapSummary {
                labels: named.into_iter().map(|(n, _)| n).collect(),
                matrix,
                d,
                within_group: within,
            })
        }
        Err(e) => out.notes.push(format!("overlap matrix: {e}")),
    }
    out
}
