//! Two interleaved spirals with the local-covariance kernel. Raising the
//! energy threshold merges the many small wells along each arm until only
//! the two arms remain.
//!
//!     cargo run --release --example spirals_hierarchy

use pqc::dataio::gen_two_spirals;
use pqc::kernel::KernelVariant;
use pqc::pipeline::{FitParams, Landscape, Preprocessing};
use pqc::scoring::{cramers_v, jaccard};

fn main() -> pqc::Result<()> {
    let ds = Preprocessing::default().apply(&gen_two_spirals(1))?;
    let truth = ds.label_codes().expect("labelled");
    let params = FitParams {
        variant: KernelVariant::PerPointCovariance,
        knn_percent: 2.5,
        ..Default::default()
    };
    let land = Landscape::build(&ds.x, &params)?;
    println!("{} wells, default E_th {:.4}", land.wells.k(), land.default_e_th);

    for e_th in [land.default_e_th, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25] {
        let fit = land.at_threshold(e_th)?;
        let labels = fit.labels();
        println!(
            "E_th {e_th:6.3}  K {:3}  ANLL {:.4}  JS {:.3}  Cv {:.3}",
            fit.k_effective(),
            fit.anll.unwrap_or(f64::NAN),
            jaccard(&truth, &labels)?,
            cramers_v(&truth, &labels)?
        );
    }
    Ok(())
}
