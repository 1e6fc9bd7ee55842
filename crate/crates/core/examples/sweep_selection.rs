//! Unsupervised scale selection: sweep %KNN along the default energy
//! threshold, print the ANLL curve next to the (held-out) Jaccard score and
//! list the candidates picked from the curve.
//!
//!     cargo run --release --example sweep_selection

use pqc::dataio::gen_local_densities;
use pqc::pipeline::Preprocessing;
use pqc::scoring::{select_models, sweep, SweepConfig};

fn main() -> pqc::Result<()> {
    let ds = Preprocessing::default().apply(&gen_local_densities(1))?;
    let truth = ds.label_codes().expect("labelled");
    let mut config = SweepConfig::default();
    // a single row: the default threshold of every column
    config.eth_grid = Some(vec![config.fit.descent.eps_v]);

    let result = sweep(&ds.x, Some(&truth), &config)?;
    println!("%KNN    K   ANLL     JS");
    for (ki, knn) in result.knn_grid.iter().enumerate() {
        let c = result.cell(ki, 0);
        println!(
            "{knn:5.1}  {:3}  {:.4}  {:.3}",
            c.k_effective,
            result.display_anll(ki, 0).unwrap_or(f64::NAN),
            c.js.unwrap_or(f64::NAN)
        );
    }
    if let Some(Some(r)) = result.correlations.first() {
        println!("ANLL vs JS: rho {:.3}, p {:.2e}", r.rho, r.p_value);
    }
    for c in select_models(&result) {
        println!(
            "candidate {:?}: %KNN {} K {} ANLL {:.4} JS {:.3}",
            c.kind,
            c.knn,
            c.k,
            c.anll,
            c.js.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
