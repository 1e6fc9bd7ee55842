//! Replicas rolling down the potential: logs every ADAM step to CSV and
//! prints how far each replica travelled.
//!
//!     cargo run --release --example descent_trajectory -- steps.csv

use std::fs::File;
use std::io::BufWriter;

use pqc::dataio::gen_local_densities;
use pqc::descent::{descend_with_trajectory, DescentConfig};
use pqc::kernel::{KernelModel, KernelVariant};
use pqc::matrix::dist;
use pqc::pipeline::Preprocessing;
use pqc::potential::PotentialField;

fn main() -> pqc::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "trajectory.csv".into());
    let ds = Preprocessing::default().apply(&gen_local_densities(1))?;
    let kernel = KernelModel::fit(KernelVariant::PerPointSigma, &ds.x, 17.5, 1.0)?;
    let field = PotentialField::new(&kernel).calibrate_offset(ds.x.rows_iter())?;
    let file = File::create(&path).map_err(|e| pqc::Error::InvalidInput(e.to_string()))?;
    let result = descend_with_trajectory(&field, &ds.x, &DescentConfig::default(), BufWriter::new(file))?;

    let moved: Vec<f64> = (0..ds.n())
        .map(|i| dist(ds.x.row(i), result.final_points.row(i)))
        .collect();
    let mean = moved.iter().sum::<f64>() / moved.len() as f64;
    println!(
        "converged {} after {} iterations; mean displacement {mean:.3}, V range [{:.3}, {:.3}]",
        result.converged,
        result.iterations_used,
        result.final_potentials.iter().copied().fold(f64::INFINITY, f64::min),
        result.initial_potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    println!("trajectory written to {path}");
    Ok(())
}
