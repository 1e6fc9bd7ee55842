//! Effect of the covariance eigenvalue floor: ANLL, JS and K over %KNN and
//! the threshold ratio r on the local-density data.
//!
//!     cargo run --release --example threshold_ratio

use pqc::dataio::gen_local_densities;
use pqc::kernel::KernelVariant;
use pqc::pipeline::{FitParams, Preprocessing};
use pqc::scoring::ratio_sweep;

fn main() -> pqc::Result<()> {
    let ds = Preprocessing::default().apply(&gen_local_densities(1))?;
    let truth = ds.label_codes().expect("labelled");
    let params = FitParams {
        variant: KernelVariant::PerPointCovariance,
        ..Default::default()
    };
    let cells = ratio_sweep(&ds.x, Some(&truth), &[10.0, 17.5, 25.0], &[0.25, 0.5, 1.0, 2.0, 4.0], &params)?;
    println!("%KNN     r   K   ANLL     JS");
    for c in cells {
        println!(
            "{:5.1} {:5.2} {:3}  {:.4}  {:.3}",
            c.knn,
            c.ratio,
            c.k,
            c.anll.unwrap_or(f64::NAN),
            c.js.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
