//! The metric layer on hand-made numbers: exact CIS, group disparity,
//! order sensitivity and a bootstrap interval.
//!
//!     cargo run --example metrics

use cisbench::metrics::{
    bootstrap_ci, cis_k, contextual_degradation, format_sensitivity, group_disparity, order_sensitivity,
    ImageScore,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three prompts of K = 3, two images each.
    let included = [[3, 2], [2, 2], [1, 3]];
    let scores: Vec<ImageScore> = included
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter().enumerate().map(move |(j, &c)| ImageScore {
                prompt_id: format!("p{i}"),
                image_index: j,
                image_hash: String::new(),
                k: 3,
                included_count: c,
            })
        })
        .collect();
    let cis = cis_k(&scores, 2)?;
    println!("CIS_3 = {} = {:.4}", cis.exact, cis.value());

    for (category, m, g) in [
        ("Flags", 0.88, 0.49),
        ("Monuments", 0.88, 0.61),
        ("Food", 0.87, 0.81),
    ] {
        println!("{category:<10} Δ = {}%", group_disparity(m, g)?);
    }
    println!(
        "order sensitivity {}",
        format_sensitivity(order_sensitivity(&[0.50, 0.78])?)
    );
    let d = contextual_degradation(0.82, 0.64)?;
    println!("context drop {:.2} ({:.1}%)", d.absolute, d.relative_percent);

    let values: Vec<f64> = scores.iter().map(|s| s.s_f64()).collect();
    let ci = bootstrap_ci(&values, 1000, 0.95, 13)?;
    println!("95% CI [{:.3}, {:.3}] around {:.3}", ci.lo, ci.hi, ci.mean);
    Ok(())
}
