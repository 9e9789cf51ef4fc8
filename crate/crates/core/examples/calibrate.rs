//! Picks a similarity threshold from mock images with known ground truth.
//!
//!     cargo run --example calibrate

use std::path::Path;

use cisbench::runner::{calibrate, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/eval.toml"))?;
    let c = calibrate(&config)?;
    println!("tau_sim = {:.3}", c.tau);
    println!(
        "false inclusion {:.3} over {} absent components",
        c.false_inclusion, c.absent
    );
    println!(
        "false omission  {:.3} over {} present components",
        c.false_omission, c.present
    );
    Ok(())
}
