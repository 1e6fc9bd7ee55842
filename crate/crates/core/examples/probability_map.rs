//! Posterior probability map of a 2-D fit, written as CSV for plotting:
//! one column per cluster plus the maximum likelihood over clusters.
//!
//!     cargo run --release --example probability_map -- map.csv

use std::fs::File;
use std::io::BufWriter;

use pqc::cli::padded_box;
use pqc::dataio::gen_local_densities;
use pqc::pipeline::{fit, FitParams, Preprocessing};

fn main() -> pqc::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "probability_map.csv".into());
    let ds = Preprocessing::default().apply(&gen_local_densities(1))?;
    let params = FitParams {
        knn_percent: 17.5,
        ..Default::default()
    };
    let (_, fit) = fit(&ds.x, &params, None)?;
    let model = fit.model.expect("normalized kernel");
    let (xr, yr) = padded_box(&ds.x, 0.1);
    let file = File::create(&path).map_err(|e| pqc::Error::InvalidInput(e.to_string()))?;
    model.write_probability_map(xr, yr, (150, 150), BufWriter::new(file))?;

    let posterior = model.posterior(&[0.0, 0.0])?;
    println!("{} clusters, map written to {path}", model.k());
    println!("P(k | origin) = {posterior:.3?}");
    Ok(())
}
