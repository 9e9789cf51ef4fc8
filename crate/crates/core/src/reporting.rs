//! Tables, confusion matrices, CSV data files and SVG plots.
//!
//! Every rendering function is a pure function of its inputs. CSV files are
//! the source of truth; the SVG plots are drawn from the same rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::DetectionResult;
use crate::diagnostics::DiagnosticsOutput;
use crate::metrics::{build_report, BootstrapSettings, CisReport, ImageScore, MetricsError, PromptMeta};
use crate::registry::{ConceptRegistry, Group};
use crate::suite::{Prompt, PromptCategory};
use crate::util::write_atomic;

#[derive(Debug, Error)]
pub enum ReportingError {
    #[error("category {category} has no {group} entry")]
    MissingGroup { category: String, group: Group },
    #[error("empty input")]
    EmptyInput,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn plot_err<E: Display>(e: E) -> ReportingError {
    ReportingError::Plot(e.to_string())
}

/// One rendered disparity row, cells already formatted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityTableRow {
    pub category: String,
    pub mainstream: String,
    pub marginalized: String,
    pub delta: String,
}

impl DisparityTableRow {
    pub fn to_line(&self) -> String {
        format!(
            "{}, {}, {}, {}",
            self.category, self.mainstream, self.marginalized, self.delta
        )
    }
}

pub const DISPARITY_HEADER: [&str; 4] = ["category", "mainstream", "marginalized", "delta"];

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

/// One row per category in the report. Every listed category must carry
/// both groups; use [`comparable`] to drop the ones that do not.
pub fn disparity_table(report: &CisReport) -> Result<Vec<DisparityTableRow>, ReportingError> {
    report
        .disparity
        .iter()
        .map(|row| {
            let missing = |group| ReportingError::MissingGroup {
                category: row.category.display_name().to_string(),
                group,
            };
            let main = row.mainstream.ok_or_else(|| missing(Group::Mainstream))?;
            let marg = row.marginalized.ok_or_else(|| missing(Group::Marginalized))?;
            Ok(DisparityTableRow {
                category: row.category.display_name().to_string(),
                mainstream: format_mean_std(main.cis, main.std),
                marginalized: format_mean_std(marg.cis, marg.std),
                delta: row
                    .delta_percent
                    .map_or_else(|| "n/a".to_string(), |d| format!("{d}%")),
            })
        })
        .collect()
}

/// Copy of `report` keeping only disparity rows with both groups.
pub fn comparable(report: &CisReport) -> CisReport {
    let mut r = report.clone();
    r.disparity
        .retain(|row| row.mainstream.is_some() && row.marginalized.is_some());
    r
}

pub fn disparity_text(rows: &[DisparityTableRow]) -> String {
    let mut out = DISPARITY_HEADER.join(", ");
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn disparity_csv(rows: &[DisparityTableRow]) -> Result<String, ReportingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DISPARITY_HEADER)?;
    for r in rows {
        w.write_record([&r.category, &r.mainstream, &r.marginalized, &r.delta])?;
    }
    Ok(csv_string(w))
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    Row,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub normalization: Normalization,
}

impl ConfusionMatrix {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Cell values under the matrix's normalization. Empty rows stay zero.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| match self.normalization {
                        Normalization::None => c as f64,
                        Normalization::Row if total == 0 => 0.0,
                        Normalization::Row => c as f64 / total as f64,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn cell(&self, truth: &str, predicted: &str) -> Option<f64> {
        let (i, j) = (self.index_of(truth)?, self.index_of(predicted)?);
        Some(self.values()[i][j])
    }

    /// `truth` as first column, one column per predicted label.
    pub fn to_csv(&self) -> Result<String, ReportingError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["truth".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(self.values()) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| match self.normalization {
                Normalization::None => format!("{v}"),
                Normalization::Row => format!("{v:.6}"),
            }));
            w.write_record(&rec)?;
        }
        Ok(csv_string(w))
    }
}

/// Counts `(truth, predicted)` pairs over the sorted union of labels.
pub fn confusion_matrix(
    predictions: &[(String, String)],
    normalization: Normalization,
) -> Result<ConfusionMatrix, ReportingError> {
    if predictions.is_empty() {
        return Err(ReportingError::EmptyInput);
    }
    let labels: Vec<String> = predictions
        .iter()
        .flat_map(|(t, p)| [t.clone(), p.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (t, p) in predictions {
        counts[index[t.as_str()]][index[p.as_str()]] += 1;
    }
    Ok(ConfusionMatrix {
        labels,
        counts,
        normalization,
    })
}

/// Label used when an expected concept is missing and nothing took its place.
pub const OMITTED: &str = "(omitted)";

/// Misclassification pairs from contextual and adversarial prompts. Each
/// expected concept that was included is its own prediction; each omitted
/// one is paired, in id order, with an unexpected detected concept, or with
/// [`OMITTED`] once those run out.
pub fn misclassification_pairs(
    results: &[DetectionResult],
    prompts: &BTreeMap<String, Prompt>,
    registry: &ConceptRegistry,
) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for r in results {
        let Some(prompt) = prompts.get(&r.prompt_id) else {
            continue;
        };
        if !matches!(
            prompt.category,
            PromptCategory::Contextual | PromptCategory::Adversarial
        ) {
            continue;
        }
        let expected: BTreeSet<&String> = prompt.components.iter().collect();
        let mut intruders: Vec<String> = r
            .detections
            .iter()
            .filter_map(|d| registry.concept_for_detector_label(&d.label))
            .map(|c| c.id.clone())
            .filter(|id| !expected.contains(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        intruders.reverse();
        for e in &expected {
            if r.included.contains(*e) {
                pairs.push(((*e).clone(), (*e).clone()));
            } else {
                let predicted = intruders.pop().unwrap_or_else(|| OMITTED.to_string());
                pairs.push(((*e).clone(), predicted));
            }
        }
    }
    pairs
}

pub fn strata_csv(report: &CisReport) -> Result<String, ReportingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "stratum",
        "category",
        "group",
        "k",
        "m",
        "n",
        "cis",
        "cis_exact",
        "dispersion",
        "ci_lo",
        "ci_hi",
    ])?;
    for s in &report.strata {
        w.write_record([
            s.stratum.clone(),
            s.category.to_string(),
            s.group.to_string(),
            s.k.to_string(),
            s.m.to_string(),
            s.n.to_string(),
            format!("{:.4}", s.cis),
            s.cis_exact.clone(),
            format!("{:.4}", s.dispersion),
            format!("{:.4}", s.ci.0),
            format!("{:.4}", s.ci.1),
        ])?;
    }
    Ok(csv_string(w))
}

pub fn order_csv(report: &CisReport) -> Result<String, ReportingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["multiset", "orderings", "min_cis", "max_cis", "sensitivity"])?;
    for (key, e) in &report.order_sensitivity {
        let values = e.per_ordering.iter().map(|(_, v)| *v);
        let min = values.clone().fold(f64::INFINITY, f64::min);
        let max = values.fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            key.clone(),
            e.per_ordering.len().to_string(),
            format!("{min:.4}"),
            format!("{max:.4}"),
            crate::metrics::format_sensitivity(e.percent),
        ])?;
    }
    Ok(csv_string(w))
}

pub fn cis_by_category_csv(report: &CisReport) -> Result<String, ReportingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "group", "cis", "std", "images"])?;
    for row in &report.disparity {
        for (group, stat) in [
            (Group::Mainstream, row.mainstream),
            (Group::Marginalized, row.marginalized),
        ] {
            if let Some(s) = stat {
                w.write_record([
                    row.category.to_string(),
                    group.to_string(),
                    format!("{:.4}", s.cis),
                    format!("{:.4}", s.std),
                    s.images.to_string(),
                ])?;
            }
        }
    }
    Ok(csv_string(w))
}

pub fn entropy_csv(diag: &DiagnosticsOutput) -> Result<Option<String>, ReportingError> {
    let Some(profile) = &diag.entropy else {
        return Ok(None);
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "group", "mean_entropy", "rows"])?;
    for r in &profile.rows {
        w.write_record([
            r.layer.to_string(),
            r.group.to_string(),
            format!("{:.6}", r.mean_entropy),
            r.count.to_string(),
        ])?;
    }
    Ok(Some(csv_string(w)))
}

pub fn pca_csv(diag: &DiagnosticsOutput) -> Result<Option<String>, ReportingError> {
    if diag.pca.is_empty() {
        return Ok(None);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["concept", "group", "pc1", "pc2"])?;
    for p in &diag.pca {
        w.write_record([
            p.concept.clone(),
            p.group.to_string(),
            format!("{:.6}", p.x),
            format!("{:.6}", p.y),
        ])?;
    }
    Ok(Some(csv_string(w)))
}

pub fn overlap_csv(diag: &DiagnosticsOutput) -> Result<Option<String>, ReportingError> {
    let Some(o) = &diag.overlap else {
        return Ok(None);
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![format!("set (d={})", o.d)];
    header.extend(o.labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in o.labels.iter().zip(&o.matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    Ok(Some(csv_string(w)))
}

const MAINSTREAM_COLOR: RGBColor = RGBColor(31, 119, 180);
const MARGINALIZED_COLOR: RGBColor = RGBColor(214, 39, 40);

fn group_color(group: &str) -> RGBColor {
    if group.starts_with("marginalized") {
        MARGINALIZED_COLOR
    } else {
        MAINSTREAM_COLOR
    }
}

fn plot_cis_by_category(report: &CisReport, path: &Path) -> Result<(), ReportingError> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = report.disparity.len().max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("CIS by category", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..n, 0f64..1.1f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(0)
        .y_desc("CIS")
        .draw()
        .map_err(plot_err)?;
    for (i, row) in report.disparity.iter().enumerate() {
        let x = i as f64;
        for (offset, stat, color) in [
            (0.1, row.mainstream, MAINSTREAM_COLOR),
            (0.5, row.marginalized, MARGINALIZED_COLOR),
        ] {
            if let Some(s) = stat {
                chart
                    .draw_series(std::iter::once(Rectangle::new(
                        [(x + offset, 0.0), (x + offset + 0.4, s.cis)],
                        color.filled(),
                    )))
                    .map_err(plot_err)?;
            }
        }
        chart
            .draw_series(std::iter::once(Text::new(
                row.category.display_name().to_string(),
                (x + 0.1, 1.07),
                ("sans-serif", 12),
            )))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

fn plot_entropy(diag: &DiagnosticsOutput, path: &Path) -> Result<(), ReportingError> {
    let profile = diag.entropy.as_ref().expect("checked by caller");
    let max_layer = profile.rows.iter().map(|r| r.layer).max().unwrap_or(0) as f64;
    let max_h = profile
        .rows
        .iter()
        .map(|r| r.mean_entropy)
        .fold(0.0, f64::max)
        .max(1e-6);
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cross-attention entropy by layer", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..max_layer.max(1.0), 0f64..max_h * 1.1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("layer")
        .y_desc("entropy (nats)")
        .draw()
        .map_err(plot_err)?;
    let groups: BTreeSet<String> = profile.rows.iter().map(|r| r.group.to_string()).collect();
    for g in groups {
        let points: Vec<(f64, f64)> = profile
            .rows
            .iter()
            .filter(|r| r.group.to_string() == g)
            .map(|r| (r.layer as f64, r.mean_entropy))
            .collect();
        let color = group_color(&g);
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(g)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn plot_pca(diag: &DiagnosticsOutput, path: &Path) -> Result<(), ReportingError> {
    let extent = diag
        .pca
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(0.0, f64::max)
        .max(1e-6)
        * 1.1;
    let root = SVGBackend::new(path, (560, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Concept embeddings, first two components", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(-extent..extent, -extent..extent)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("PC1")
        .y_desc("PC2")
        .draw()
        .map_err(plot_err)?;
    for group in [Group::Mainstream, Group::Marginalized] {
        let color = group_color(group.as_str());
        let pts: Vec<(f64, f64)> = diag
            .pca
            .iter()
            .filter(|p| p.group == group)
            .map(|p| (p.x, p.y))
            .collect();
        if pts.is_empty() {
            continue;
        }
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(plot_err)?
            .label(group.as_str())
            .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Files written by [`emit_plots`] and the plots that were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutput {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

pub const CIS_BY_CATEGORY: &str = "cis_by_category";
pub const ENTROPY_BY_LAYER: &str = "entropy_by_layer";
pub const PCA_SCATTER: &str = "pca_scatter";

fn emit_one(
    dir: &Path,
    name: &str,
    csv: Option<String>,
    draw: &dyn Fn(&Path) -> Result<(), ReportingError>,
    out: &mut PlotOutput,
) -> Result<(), ReportingError> {
    match csv {
        Some(data) => {
            let csv_path = dir.join(format!("{name}.csv"));
            write_atomic(&csv_path, data.as_bytes())?;
            let svg_path = dir.join(format!("{name}.svg"));
            draw(&svg_path)?;
            out.written.push(csv_path);
            out.written.push(svg_path);
        }
        None => out.skipped.push(format!("{name}: no data, plot skipped")),
    }
    Ok(())
}

fn emit_diagnostic_plots(
    diag: &DiagnosticsOutput,
    dir: &Path,
    out: &mut PlotOutput,
) -> Result<(), ReportingError> {
    emit_one(
        dir,
        ENTROPY_BY_LAYER,
        entropy_csv(diag)?,
        &|p| plot_entropy(diag, p),
        out,
    )?;
    emit_one(dir, PCA_SCATTER, pca_csv(diag)?, &|p| plot_pca(diag, p), out)
}

/// Writes `<name>.csv` and `<name>.svg` for the CIS bar chart, the entropy
/// curve and the PCA scatter. Plots without data are skipped with a note.
pub fn emit_plots(
    report: &CisReport,
    diag: &DiagnosticsOutput,
    dir: &Path,
) -> Result<PlotOutput, ReportingError> {
    std::fs::create_dir_all(dir)?;
    let mut out = PlotOutput::default();
    emit_one(
        dir,
        CIS_BY_CATEGORY,
        Some(cis_by_category_csv(report)?),
        &|p| plot_cis_by_category(report, p),
        &mut out,
    )?;
    emit_diagnostic_plots(diag, dir, &mut out)?;
    Ok(out)
}

/// Diagnostics-only outputs: `diagnostics.json`, `overlap.csv` and the
/// entropy and PCA data and plots.
pub fn write_diagnostics(dir: &Path, diag: &DiagnosticsOutput) -> Result<Outputs, ReportingError> {
    std::fs::create_dir_all(dir)?;
    let mut out = Outputs::default();
    let path = dir.join("diagnostics.json");
    let mut json = serde_json::to_string_pretty(diag).expect("diagnostics serialize");
    json.push('\n');
    write_atomic(&path, json.as_bytes())?;
    out.files.push(path);
    match overlap_csv(diag)? {
        Some(data) => {
            let path = dir.join("overlap.csv");
            write_atomic(&path, data.as_bytes())?;
            out.files.push(path);
        }
        None => out.notes.push("overlap: no embeddings, file skipped".into()),
    }
    let mut plots = PlotOutput::default();
    emit_diagnostic_plots(diag, dir, &mut plots)?;
    out.files.extend(plots.written);
    out.notes.extend(plots.skipped);
    Ok(out)
}

pub const OUTPUT_README: &str = "\
# Evaluation outputs

| file | contents |
|------|----------|
| `report.json` | full CIS report: strata, per-K, disparity, order sensitivity, contextual degradation |
| `diagnostics.json` | entropy profile, entropy/omission correlation, PCA points, subspace overlap |
| `disparity.csv` / `disparity.txt` | per-category mainstream vs marginalized CIS (mean±std) and relative gap |
| `strata.csv` | CIS per stratum with exact value, dispersion and bootstrap interval |
| `order_sensitivity.csv` | CIS spread across orderings of the same components |
| `confusion.csv` | row-normalized truth vs predicted concepts for contextual/adversarial prompts |
| `entropy_by_layer.csv` / `.svg` | mean cross-attention entropy per layer and group |
| `pca_scatter.csv` / `.svg` | concept embeddings projected on the first two principal components |
| `cis_by_category.csv` / `.svg` | per-category CIS bars by group |
| `overlap.csv` | pairwise subspace overlap between embedding sets |

CSV files are authoritative; the SVG plots are drawn from them. Files that
could not be produced are listed in the run manifest notes.
";

/// Everything [`write_outputs`] produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

/// Writes the full output directory.
pub fn write_outputs(
    dir: &Path,
    report: &CisReport,
    diag: &DiagnosticsOutput,
    confusion: Option<&ConfusionMatrix>,
) -> Result<Outputs, ReportingError> {
    std::fs::create_dir_all(dir)?;
    let mut out = Outputs::default();
    let mut put = |name: &str, data: String| -> Result<(), ReportingError> {
        let path = dir.join(name);
        write_atomic(&path, data.as_bytes())?;
        out.files.push(path);
        Ok(())
    };

    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    put("report.json", json)?;
    let mut json = serde_json::to_string_pretty(diag).expect("diagnostics serialize");
    json.push('\n');
    put("diagnostics.json", json)?;

    let rows = disparity_table(&comparable(report))?;
    put("disparity.csv", disparity_csv(&rows)?)?;
    put("disparity.txt", disparity_text(&rows))?;
    put("strata.csv", strata_csv(report)?)?;
    put("order_sensitivity.csv", order_csv(report)?)?;
    match confusion {
        Some(m) => put("confusion.csv", m.to_csv()?)?,
        None => {
            put("confusion.csv", "truth\n".to_string())?;
            out.notes
                .push("confusion: no contextual or adversarial detections".into());
        }
    }
    match overlap_csv(diag)? {
        Some(data) => put("overlap.csv", data)?,
        None => out.notes.push("overlap: no embeddings, file skipped".into()),
    }
    put("README.md", OUTPUT_README.to_string())?;

    let plots = emit_plots(report, diag, dir)?;
    out.files.extend(plots.written);
    out.notes.extend(plots.skipped);
    Ok(out)
}

/// Rebuilds the report from the persisted scores and checks that every
/// number and every rendered table cell matches.
pub fn verify_report(
    report: &CisReport,
    prompts: &[PromptMeta],
    scores: &[ImageScore],
    bootstrap: BootstrapSettings,
) -> Result<(), ReportingError> {
    let rebuilt = build_report(prompts, scores, report.images_per_prompt, bootstrap)?;
    let (a, b) = (
        disparity_table(&comparable(report))?,
        disparity_table(&comparable(&rebuilt))?,
    );
    for (x, y) in a.iter().zip(&b) {
        if x != y {
            return Err(ReportingError::Verification(format!(
                "disparity row {:?} re-derives as {:?}",
                x.to_line(),
                y.to_line()
            )));
        }
    }
    if a.len() != b.len() {
        return Err(ReportingError::Verification("disparity row count differs".into()));
    }
    if strata_csv(report)? != strata_csv(&rebuilt)? {
        return Err(ReportingError::Verification("strata table differs".into()));
    }
    if &rebuilt != report {
        return Err(ReportingError::Verification("report fields differ".into()));
    }
    Ok(())
}
