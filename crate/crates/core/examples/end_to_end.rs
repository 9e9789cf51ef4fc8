//! The full pipeline on the desk-scale config: suite, generation, scoring,
//! metrics, diagnostics and report.
//!
//!     cargo run --release --example end_to_end [out_dir]

use std::path::{Path, PathBuf};

use cisbench::reporting::{comparable, disparity_table};
use cisbench::runner::run_evaluation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/eval.toml");
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cisbench-end-to-end"));

    let (manifest, report) = run_evaluation(&config, Some(&out))?;
    println!("run {} -> {}", manifest.run_id, out.display());
    println!("images generated: {}", manifest.progress.images_generated);
    if let Some(cis) = report.overall_cis {
        println!("overall CIS {cis:.3}");
    }
    for row in disparity_table(&comparable(&report))? {
        println!("{}", row.to_line());
    }
    for (family, entry) in report.order_sensitivity.iter().take(5) {
        println!("order {family}: ±{:.1}%", entry.percent);
    }
    for note in &manifest.notes {
        println!("note: {note}");
    }
    Ok(())
}
