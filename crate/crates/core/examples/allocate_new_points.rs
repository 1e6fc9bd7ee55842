//! Fit once, store the model as JSON, then score unseen points against it:
//! cluster posteriors and an outlier flag, without any further descent.
//!
//!     cargo run --release --example allocate_new_points

use pqc::cli::{allocate_points, run_fit, DatasetSpec, RunConfig, StoredModel};
use pqc::matrix::Matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig {
        dataset: DatasetSpec::Generator {
            name: "local-densities".into(),
        },
        knn_percent: 17.5,
        seed: 1,
        ..Default::default()
    };
    let outcome = run_fit(&config)?;
    println!("trained: K {}, ANLL {:.4}", outcome.metrics.k, outcome.metrics.anll.unwrap_or(f64::NAN));

    // round-trip through JSON as the `allocate` command does
    let json = serde_json::to_string(&outcome.model)?;
    let model: StoredModel = serde_json::from_str(&json)?;

    // raw coordinates: near the dense blob, near a cigar, and far away
    let points = Matrix::from_rows(&[[0.7, -1.6], [3.0, 0.0], [0.0, 1.0], [12.0, 12.0]])?;
    let result = allocate_points(&model, &points, false)?;
    for i in 0..points.nrows() {
        println!(
            "{:?} -> cluster {}  P(k|x) {:.3}  max P(x|k) {:.3e}  outlier {}",
            points.row(i),
            result.assignment[i],
            result.winner_posterior[i],
            result.outlier_scores[i],
            result.outlier_flags[i]
        );
    }
    Ok(())
}
