//! Olive oils: a fine scale recovers the 9 production areas, a coarse scale
//! the 3 regions. Takes about half a minute in release mode.
//!
//!     cargo run --release --example olive

use pqc::dataio::load_builtin;
use pqc::kernel::KernelVariant;
use pqc::pipeline::{fit, FitParams, Preprocessing};
use pqc::scoring::jaccard;

fn main() -> pqc::Result<()> {
    let ds = Preprocessing::default().apply(&load_builtin("olive")?)?;
    let area = ds.label_codes_for("area").expect("area labels");
    let region = ds.label_codes_for("region").expect("region labels");

    for knn in [15.0, 45.0] {
        let params = FitParams {
            variant: KernelVariant::PerPointCovariance,
            knn_percent: knn,
            ..Default::default()
        };
        let (_, fit) = fit(&ds.x, &params, None)?;
        let labels = fit.labels();
        println!(
            "%KNN {knn:4.1}  K {}  ANLL {:.4}  JS(area) {:.3}  JS(region) {:.3}",
            fit.k_effective(),
            fit.anll.unwrap_or(f64::NAN),
            jaccard(&area, &labels)?,
            jaccard(&region, &labels)?
        );
    }
    Ok(())
}
