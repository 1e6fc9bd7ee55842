//! Leptograpsus crabs: four species/sex groups in the plane of the second
//! and third principal components.
//!
//!     cargo run --release --example crabs

use pqc::dataio::load_builtin;
use pqc::kernel::{KernelVariant, NeighbourTable};
use pqc::pipeline::{FitParams, Landscape, Preprocessing};
use pqc::scoring::jaccard;

fn main() -> pqc::Result<()> {
    let raw = load_builtin("crabs")?;
    let pre = Preprocessing {
        pca_components: Some(2),
        pca_skip: 1,
        ..Default::default()
    };
    let ds = pre.apply(&raw)?;
    let group = ds.label_codes().expect("group labels");
    let species = ds.label_codes_for("sp").expect("species labels");
    let table = NeighbourTable::new(&ds.x);

    for variant in [KernelVariant::PerPointSigma, KernelVariant::PerPointCovariance] {
        println!("{variant}");
        for knn in [10.0, 12.5, 15.0, 17.5, 20.0] {
            let params = FitParams {
                variant,
                knn_percent: knn,
                ..Default::default()
            };
            let land = Landscape::build_with_table(&ds.x, &table, &params)?;
            let fit = land.at_threshold(land.default_e_th)?;
            let labels = fit.labels();
            println!(
                "  %KNN {knn:4.1}  K {}  ANLL {:.4}  JS(group) {:.3}  JS(species) {:.3}",
                fit.k_effective(),
                fit.anll.unwrap_or(f64::NAN),
                jaccard(&group, &labels)?,
                jaccard(&species, &labels)?
            );
        }
    }
    Ok(())
}
