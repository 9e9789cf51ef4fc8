//! Component Inclusion Score and the statistics built on it.
//!
//! A per-image score is the fraction of a prompt's expected components that
//! were found in the image, kept as an exact rational. `CIS_K` is the mean of
//! those scores over a complete grid of `M` prompts × `N` images sharing the
//! same component count `K`.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{Category, Group};
use crate::suite::PromptCategory;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("K must be at least 1")]
    InvalidK,
    #[error("{included} components included but K = {k}")]
    OverfullInclusion { included: usize, k: usize },
    #[error("scores mix component counts {0:?}")]
    MixedK(Vec<usize>),
    #[error("incomplete grid, missing cells: {}", format_cells(.0))]
    IncompleteGrid(Vec<(String, usize)>),
    #[error("mainstream baseline is zero")]
    ZeroBaseline,
    #[error("mean is zero")]
    ZeroMean,
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn format_cells(cells: &[(String, usize)]) -> String {
    cells
        .iter()
        .map(|(p, i)| format!("{p}#{i}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Score of one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageScore {
    pub prompt_id: String,
    pub image_index: usize,
    pub image_hash: String,
    pub k: usize,
    pub included_count: usize,
}

impl ImageScore {
    /// `included_count / k`, exact.
    pub fn s(&self) -> Ratio<u64> {
        Ratio::new(self.included_count as u64, self.k as u64)
    }

    pub fn s_f64(&self) -> f64 {
        self.included_count as f64 / self.k as f64
    }
}

/// Exact per-image score for `included` components out of `k`.
pub fn image_score(included: usize, k: usize) -> Result<Ratio<u64>, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK);
    }
    if included > k {
        return Err(MetricsError::OverfullInclusion { included, k });
    }
    Ok(Ratio::new(included as u64, k as u64))
}

pub fn ratio_to_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CisValue {
    pub exact: Ratio<u64>,
    pub k: usize,
    pub m: usize,
    pub n: usize,
}

impl CisValue {
    pub fn value(&self) -> f64 {
        ratio_to_f64(&self.exact)
    }
}

/// Mean score over a complete `M × N` grid. Every prompt must have scores for
/// image indices `0..n` exactly once; gaps are reported, never dropped.
pub fn cis_k(scores: &[ImageScore], n: usize) -> Result<CisValue, MetricsError> {
    if scores.is_empty() || n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let ks: BTreeSet<usize> = scores.iter().map(|s| s.k).collect();
    if ks.len() > 1 {
        return Err(MetricsError::MixedK(ks.into_iter().collect()));
    }
    let k = *ks.iter().next().unwrap();
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }

    let mut cells: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut included = 0u64;
    for s in scores {
        if s.included_count > k {
            return Err(MetricsError::OverfullInclusion {
                included: s.included_count,
                k,
            });
        }
        let seen = cells.entry(s.prompt_id.as_str()).or_default();
        if !seen.insert(s.image_index) || s.image_index >= n {
            return Err(MetricsError::InvalidArgument(format!(
                "unexpected cell {}#{}",
                s.prompt_id, s.image_index
            )));
        }
        included += s.included_count as u64;
    }
    let missing: Vec<(String, usize)> = cells
        .iter()
        .flat_map(|(p, seen)| (0..n).filter(|i| !seen.contains(i)).map(|i| (p.to_string(), i)))
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::IncompleteGrid(missing));
    }
    let m = cells.len();
    Ok(CisValue {
        exact: Ratio::new(included, (k * m * n) as u64),
        k,
        m,
        n,
    })
}

/// Exact mean of per-image scores with possibly different `K`.
pub fn mean_score(scores: &[&ImageScore]) -> Option<Ratio<u64>> {
    if scores.is_empty() {
        return None;
    }
    let total = scores
        .iter()
        .fold(Ratio::from_integer(0u64), |acc, s| acc + s.s());
    Some(total / Ratio::from_integer(scores.len() as u64))
}

/// Integer percent with ties rounded towards positive infinity.
fn round_half_up(x: f64) -> i64 {
    // Snap representation noise so that e.g. 12.4999999999 rounds like 12.5.
    let snapped = (x * 1e9).round() / 1e9;
    (snapped + 0.5).floor() as i64
}

/// Relative gap between groups, in integer percent of the mainstream value.
pub fn group_disparity(cis_mainstream: f64, cis_marginalized: f64) -> Result<i64, MetricsError> {
    if cis_mainstream == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(round_half_up(
        100.0 * (cis_mainstream - cis_marginalized) / cis_mainstream,
    ))
}

/// Half-range of per-ordering CIS as a percent of their mean (the `±` figure).
pub fn order_sensitivity(per_ordering_cis: &[f64]) -> Result<f64, MetricsError> {
    if per_ordering_cis.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mean = stable_mean(&sorted(per_ordering_cis));
    if mean == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    let (min, max) = per_ordering_cis
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(100.0 * (max - min) / (2.0 * mean))
}

/// Coefficient of variation across orderings, in percent. Non-default
/// alternative to [`order_sensitivity`].
pub fn order_sensitivity_cv(per_ordering_cis: &[f64]) -> Result<f64, MetricsError> {
    if per_ordering_cis.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let values = sorted(per_ordering_cis);
    let mean = stable_mean(&values);
    if mean == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    Ok(100.0 * sample_std(&values, mean) / mean)
}

pub fn format_sensitivity(percent: f64) -> String {
    format!("±{percent:.1}%")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub absolute: f64,
    pub relative_percent: f64,
}

/// Drop from base to contextual CIS; negative when context helps.
pub fn contextual_degradation(cis_base: f64, cis_contextual: f64) -> Result<Degradation, MetricsError> {
    if cis_base == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    let absolute = cis_base - cis_contextual;
    Ok(Degradation {
        absolute,
        relative_percent: 100.0 * absolute / cis_base,
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean computed as an offset from the first value, so a constant input
/// returns that constant bit-exactly.
fn stable_mean(values: &[f64]) -> f64 {
    let base = values[0];
    let offset: f64 = values.iter().map(|v| v - base).sum();
    base + offset / values.len() as f64
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Percentile bootstrap of the mean. Input order does not matter: values are
/// sorted before resampling, so the whole result is permutation invariant.
pub fn bootstrap_ci(
    values: &[f64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapCi, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if resamples < 100 {
        return Err(MetricsError::InvalidArgument(format!(
            "resamples must be >= 100, got {resamples}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "confidence must lie in (0,1), got {confidence}"
        )));
    }
    let values = sorted(values);
    let n = values.len();
    let mean = stable_mean(&values);
    let std = sample_std(&values, mean);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = values[0];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let offset: f64 = (0..n).map(|_| values[rng.gen_range(0..n)] - base).sum();
            base + offset / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    let lo = quantile(&means, alpha / 2.0).min(mean);
    let hi = quantile(&means, 1.0 - alpha / 2.0).max(mean);
    Ok(BootstrapCi { mean, std, lo, hi })
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::DegenerateInput(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(MetricsError::DegenerateInput("fewer than two pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateInput("constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// What the aggregator needs to know about each evaluated prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub id: String,
    pub category: PromptCategory,
    pub stratum: String,
    pub group: Group,
    pub k: usize,
    /// Concept category used for the disparity table.
    pub concept_category: Category,
    /// Shared by every ordering of the same component multiset.
    pub multiset_key: String,
    /// True for ordering variants that only feed order sensitivity.
    pub variant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEntry {
    pub stratum: String,
    pub category: PromptCategory,
    pub group: Group,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub cis: f64,
    pub cis_exact: String,
    pub dispersion: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub cis: f64,
    pub std: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityRow {
    pub category: Category,
    pub mainstream: Option<GroupStat>,
    pub marginalized: Option<GroupStat>,
    pub delta_percent: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEntry {
    pub group: Group,
    pub k: usize,
    pub cis: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEntry {
    pub per_ordering: Vec<(String, f64)>,
    pub percent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CisReport {
    pub images_per_prompt: usize,
    pub overall_cis: Option<f64>,
    pub strata: Vec<StratumEntry>,
    pub by_k: Vec<KEntry>,
    pub disparity: Vec<DisparityRow>,
    pub order_sensitivity: BTreeMap<String, OrderEntry>,
    pub contextual_degradation: BTreeMap<String, Degradation>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            resamples: 1000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

fn values_of(scores: &[&ImageScore]) -> Vec<f64> {
    scores.iter().map(|s| s.s_f64()).collect()
}

fn group_stat(scores: &[&ImageScore]) -> Option<GroupStat> {
    let mean = mean_score(scores)?;
    let values = sorted(&values_of(scores));
    let cis = ratio_to_f64(&mean);
    Some(GroupStat {
        cis,
        std: sample_std(&values, cis),
        images: scores.len(),
    })
}

/// Aggregates per-image scores into a report. Strata, per-K and disparity
/// figures use only non-variant prompts; order sensitivity uses every
/// ordering of each multiset that has more than one.
pub fn build_report(
    prompts: &[PromptMeta],
    scores: &[ImageScore],
    images_per_prompt: usize,
    bootstrap: BootstrapSettings,
) -> Result<CisReport, MetricsError> {
    let meta: BTreeMap<&str, &PromptMeta> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut by_prompt: BTreeMap<&str, Vec<&ImageScore>> = BTreeMap::new();
    for s in scores {
        if !meta.contains_key(s.prompt_id.as_str()) {
            return Err(MetricsError::InvalidArgument(format!(
                "score for unknown prompt {}",
                s.prompt_id
            )));
        }
        by_prompt.entry(s.prompt_id.as_str()).or_default().push(s);
    }

    let mut report = CisReport {
        images_per_prompt,
        ..Default::default()
    };
    let primary: Vec<&PromptMeta> = prompts.iter().filter(|p| !p.variant).collect();
    let primary_scores: Vec<&ImageScore> = primary
        .iter()
        .flat_map(|p| by_prompt.get(p.id.as_str()).cloned().unwrap_or_default())
        .collect();
    report.overall_cis = mean_score(&primary_scores).map(|r| ratio_to_f64(&r));

    // Strata.
    let mut strata: BTreeMap<&str, Vec<&PromptMeta>> = BTreeMap::new();
    for p in &primary {
        strata.entry(p.stratum.as_str()).or_default().push(p);
    }
    for (key, members) in strata {
        let cell_scores: Vec<ImageScore> = members
            .iter()
            .flat_map(|p| by_prompt.get(p.id.as_str()).cloned().unwrap_or_default())
            .cloned()
            .collect();
        if cell_scores.is_empty() {
            report.notes.push(format!("stratum {key} has no scores"));
            continue;
        }
        let cis = cis_k(&cell_scores, images_per_prompt)?;
        let refs: Vec<&ImageScore> = cell_scores.iter().collect();
        let values = values_of(&refs);
        let ci = bootstrap_ci(&values, bootstrap.resamples, bootstrap.confidence, bootstrap.seed)?;
        // The bootstrap mean is a float; the exact CIS is authoritative.
        let value = cis.value();
        report.strata.push(StratumEntry {
            stratum: key.to_string(),
            category: members[0].category,
            group: members[0].group,
            k: cis.k,
            m: cis.m,
            n: cis.n,
            cis: value,
            cis_exact: format!("{}/{}", cis.exact.numer(), cis.exact.denom()),
            dispersion: ci.std,
            ci: (ci.lo.min(value), ci.hi.max(value)),
        });
    }

    // Per (group, K).
    let mut by_k: BTreeMap<(Group, usize), Vec<&ImageScore>> = BTreeMap::new();
    for p in &primary {
        if let Some(s) = by_prompt.get(p.id.as_str()) {
            by_k.entry((p.group, p.k)).or_default().extend(s.iter().copied());
        }
    }
    for ((group, k), s) in by_k {
        let cis = ratio_to_f64(&mean_score(&s).unwrap());
        report.by_k.push(KEntry {
            group,
            k,
            cis,
            images: s.len(),
        });
    }

    // Disparity per concept category.
    let mut by_cat: BTreeMap<(Category, Group), Vec<&ImageScore>> = BTreeMap::new();
    for p in &primary {
        if let Some(s) = by_prompt.get(p.id.as_str()) {
            by_cat
                .entry((p.concept_category, p.group))
                .or_default()
                .extend(s.iter().copied());
        }
    }
    for category in Category::ALL {
        let main = by_cat
            .get(&(category, Group::Mainstream))
            .and_then(|s| group_stat(s));
        let marg = by_cat
            .get(&(category, Group::Marginalized))
            .and_then(|s| group_stat(s));
        if main.is_none() && marg.is_none() {
            continue;
        }
        let delta = match (main, marg) {
            (Some(a), Some(b)) if a.cis > 0.0 => Some(group_disparity(a.cis, b.cis)?),
            (Some(_), Some(_)) => {
                report
                    .notes
                    .push(format!("{category}: mainstream CIS is zero, no disparity"));
                None
            }
            _ => {
                report
                    .notes
                    .push(format!("{category}: only one group present, no disparity"));
                None
            }
        };
        report.disparity.push(DisparityRow {
            category,
            mainstream: main,
            marginalized: marg,
            delta_percent: delta,
        });
    }

    // Order sensitivity.
    let mut families: BTreeMap<&str, Vec<&PromptMeta>> = BTreeMap::new();
    for p in prompts {
        families.entry(p.multiset_key.as_str()).or_default().push(p);
    }
    for (key, members) in families {
        if members.len() < 2 {
            continue;
        }
        let mut per_ordering = Vec::new();
        for p in &members {
            if let Some(s) = by_prompt.get(p.id.as_str()) {
                per_ordering.push((p.id.clone(), ratio_to_f64(&mean_score(s).unwrap())));
            }
        }
        let values: Vec<f64> = per_ordering.iter().map(|(_, v)| *v).collect();
        match order_sensitivity(&values) {
            Ok(percent) => {
                report.order_sensitivity.insert(
                    key.to_string(),
                    OrderEntry {
                        per_ordering,
                        percent,
                    },
                );
            }
            Err(e) => report.notes.push(format!("order sensitivity for {key}: {e}")),
        }
    }

    // Contextual degradation per group.
    for group in [Group::Mainstream, Group::Marginalized] {
        let collect = |category: PromptCategory| -> Vec<&ImageScore> {
            primary
                .iter()
                .filter(|p| p.category == category && p.group == group)
                .flat_map(|p| by_prompt.get(p.id.as_str()).cloned().unwrap_or_default())
                .collect()
        };
        let base = mean_score(&collect(PromptCategory::Base));
        let ctx = mean_score(&collect(PromptCategory::Contextual));
        if let (Some(base), Some(ctx)) = (base, ctx) {
            match contextual_degradation(ratio_to_f64(&base), ratio_to_f64(&ctx)) {
                Ok(d) => {
                    report.contextual_degradation.insert(group.to_string(), d);
                }
                Err(e) => report
                    .notes
                    .push(format!("contextual degradation ({group}): {e}")),
            }
        }
    }

    Ok(report)
}
