//! Property suite: runs on small synthetic data only.

use proptest::prelude::*;

use pqc::dataio::gen_local_densities;
use pqc::descent::{descend, DescentConfig};
use pqc::graphalloc::{allocate_wells, merge_by_threshold, GraphParams};
use pqc::kernel::{KernelModel, KernelVariant, LocalCovariance};
use pqc::matrix::Matrix;
use pqc::pipeline::{FitParams, Landscape, Preprocessing};
use pqc::potential::PotentialField;
use pqc::probmodel::ProbabilisticModel;
use pqc::scoring::{
    anll, anll_from_posteriors, cramers_v, jaccard, select_models, SweepCell, SweepResult,
};

const NORMALIZED: [KernelVariant; 2] = [KernelVariant::PerPointSigma, KernelVariant::PerPointCovariance];
const ALL: [KernelVariant; 3] = [
    KernelVariant::GlobalSigma,
    KernelVariant::PerPointSigma,
    KernelVariant::PerPointCovariance,
];

/// n points in [-1, 1]^d, no two closer than 0.05.
fn point_cloud(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n)
        .prop_filter("points too close", |rows| {
            rows.iter().enumerate().all(|(i, a)| {
                rows[i + 1..].iter().all(|b| {
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() > 0.05 * 0.05
                })
            })
        })
        .prop_map(|rows| Matrix::from_rows(&rows).unwrap())
}

/// %KNN giving K = 3 neighbours.
fn knn_for(n: usize) -> f64 {
    300.0 / n as f64
}

/// Smallest length scale of any component.
fn min_scale(k: &KernelModel) -> f64 {
    if let Some(s) = k.global_sigma {
        return s;
    }
    if !k.covariances.is_empty() {
        return k
            .covariances
            .iter()
            .flat_map(|c| c.eigenvalues().iter().copied())
            .fold(f64::INFINITY, f64::min)
            .sqrt();
    }
    k.sigmas.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_scale(k: &KernelModel) -> f64 {
    if !k.covariances.is_empty() {
        return k
            .covariances
            .iter()
            .map(|c| c.max_eigenvalue())
            .fold(0.0, f64::max)
            .sqrt();
    }
    k.sigmas.iter().copied().fold(0.0, f64::max)
}

/// Trapezoid rule over a box reaching 9 scales past the data.
fn integrate(k: &KernelModel) -> f64 {
    let h = min_scale(k) / 3.0;
    let pad = 9.0 * max_scale(k);
    let d = k.d();
    let axis = |j: usize| {
        let c = k.centers.column(j);
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min) - pad;
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
        let steps = ((hi - lo) / h).ceil() as usize;
        (lo, (hi - lo) / steps as f64, steps + 1)
    };
    match d {
        1 => {
            let (lo, dx, m) = axis(0);
            (0..m)
                .map(|i| {
                    let w = if i == 0 || i + 1 == m { 0.5 } else { 1.0 };
                    w * k.wavefunction(&[lo + i as f64 * dx])
                })
                .sum::<f64>()
                * dx
        }
        2 => {
            let (x0, dx, mx) = axis(0);
            let (y0, dy, my) = axis(1);
            let mut total = 0.0;
            for i in 0..mx {
                let wi = if i == 0 || i + 1 == mx { 0.5 } else { 1.0 };
                for j in 0..my {
                    let wj = if j == 0 || j + 1 == my { 0.5 } else { 1.0 };
                    total += wi * wj * k.wavefunction(&[x0 + i as f64 * dx, y0 + j as f64 * dy]);
                }
            }
            total * dx * dy
        }
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn normalized_psi_integrates_to_one(x in point_cloud(1, 4..10), y in point_cloud(2, 4..8)) {
        for data in [&x, &y] {
            for v in NORMALIZED {
                let k = KernelModel::fit(v, data, knn_for(data.nrows()), 1.0).unwrap();
                let total = integrate(&k);
                prop_assert!((total - 1.0).abs() < 1e-2, "{v}, d={}: {total}", data.ncols());
            }
        }
    }
}

/// Relative gradient error against central differences.
fn gradient_error(field: &PotentialField<'_>, p: &[f64]) -> f64 {
    let g = field.gradient(p);
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for j in 0..p.len() {
        let h = 1e-5;
        let mut a = p.to_vec();
        let mut b = p.to_vec();
        a[j] += h;
        b[j] -= h;
        let fd = (field.potential(&a) - field.potential(&b)) / (2.0 * h);
        err += (g[j] - fd).powi(2);
        scale += g[j] * g[j];
    }
    err.sqrt() / scale.sqrt().max(1e-3)
}

#[test]
fn gradient_matches_finite_differences() {
    use rand::{Rng, SeedableRng};
    let ds = Preprocessing::default().apply(&gen_local_densities(3)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for v in ALL {
        let k = KernelModel::fit(v, &ds.x, 10.0, 1.0).unwrap();
        let field = PotentialField::new(&k);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            // probe near a random observation
            let c = ds.x.row(rng.gen_range(0..ds.n()));
            let p: Vec<f64> = c.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
            worst = worst.max(gradient_error(&field, &p));
        }
        assert!(worst < 1e-4, "{v}: worst relative error {worst:e}");
    }
}

fn random_partition(n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, n)
}

fn members(assign: &[usize]) -> Vec<Vec<usize>> {
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        out[a].push(i);
    }
    out.into_iter().filter(|m| !m.is_empty()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_is_a_simplex_and_joints_sum_to_psi(
        x in point_cloud(2, 5..12),
        assign in random_partition(12),
        probe in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        for v in NORMALIZED {
            let k = KernelModel::fit(v, &x, knn_for(x.nrows()), 1.0).unwrap();
            let model = ProbabilisticModel::new(k.clone(), members(&assign[..x.nrows()])).unwrap();
            let post = model.posterior(&probe).unwrap();
            prop_assert!(post.iter().all(|p| *p >= 0.0));
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let joints: f64 = (0..model.k()).map(|c| model.joint(c, &probe).unwrap()).sum();
            let psi = k.wavefunction(&probe);
            prop_assert!((joints - psi).abs() <= 1e-12 * psi.max(1.0), "{joints} vs {psi}");
        }
    }

    #[test]
    fn anll_is_nonnegative_and_zero_for_one_cluster(
        x in point_cloud(2, 5..12),
        assign in random_partition(12),
    ) {
        let n = x.nrows();
        for v in NORMALIZED {
            let k = KernelModel::fit(v, &x, knn_for(n), 1.0).unwrap();
            let trivial = ProbabilisticModel::new(k.clone(), vec![(0..n).collect()]).unwrap();
            prop_assert_eq!(anll(&trivial, &x).unwrap(), 0.0);
            let model = ProbabilisticModel::new(k, members(&assign[..n])).unwrap();
            prop_assert!(anll(&model, &x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn posteriors_give_nonnegative_anll(p in prop::collection::vec(1e-9f64..=1.0, 1..50)) {
        prop_assert!(anll_from_posteriors(&p) >= 0.0);
    }

    #[test]
    fn covariance_kernel_with_isotropic_matrices_matches_per_point_sigma(
        x in point_cloud(2, 4..10),
        sigmas in prop::collection::vec(0.05f64..0.8, 10),
        probe in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let n = x.nrows();
        let sigmas = sigmas[..n].to_vec();
        let covs: Vec<LocalCovariance> = sigmas
            .iter()
            .map(|s| LocalCovariance::thresholded(&[s * s, 0.0, 0.0, s * s], 2, s * s).unwrap())
            .collect();
        let knn = KernelModel::with_sigmas(x.clone(), sigmas).unwrap();
        let cov = KernelModel::with_covariances(x.clone(), covs).unwrap();
        let (fk, fc) = (PotentialField::new(&knn), PotentialField::new(&cov));
        let (vk, vc) = (fk.potential(&probe), fc.potential(&probe));
        prop_assert!((vk - vc).abs() < 1e-9, "{vk} vs {vc}");
        for (a, b) in fk.gradient(&probe).iter().zip(fc.gradient(&probe)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((knn.wavefunction(&probe) - cov.wavefunction(&probe)).abs() < 1e-9);
    }
}

fn small_landscape(seed: u64, variant: KernelVariant) -> (Matrix, Landscape) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.25).unwrap();
    let centres = [[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]];
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let c = centres[i % 3];
            vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
        })
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let params = FitParams {
        variant,
        knn_percent: 10.0,
        ..Default::default()
    };
    let land = Landscape::build(&x, &params).unwrap();
    (x, land)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn merging_coarsens_monotonically(seed in 0u64..1000, mut ths in prop::collection::vec(0.0f64..2.0, 2..6)) {
        let (_, land) = small_landscape(seed, KernelVariant::PerPointSigma);
        for e in 0..land.wells.well_energy.nrows() {
            prop_assert_eq!(land.wells.well_energy.get(e, e), 0.0);
        }
        ths.sort_by(f64::total_cmp);
        let fits: Vec<_> = ths
            .iter()
            .map(|&t| merge_by_threshold(&land.wells, &land.descent.final_points, t).unwrap())
            .collect();
        for c in &fits {
            for a in 0..c.k() {
                prop_assert_eq!(c.energy_matrix.get(a, a), 0.0);
            }
        }
        for w in fits.windows(2) {
            prop_assert!(w[1].k() <= w[0].k());
            // every finer cluster lies inside one coarser cluster
            for m in &w[0].member_sets {
                let c = w[1].assignment[m[0]];
                prop_assert!(m.iter().all(|&i| w[1].assignment[i] == c));
            }
        }
    }

    #[test]
    fn assignments_ignore_the_potential_offset(seed in 0u64..1000, offset in prop::sample::select(vec![-0.5, 0.25, 1.0, 4.0])) {
        let (x, land) = small_landscape(seed, KernelVariant::PerPointSigma);
        let config = DescentConfig::default();
        let shifted = PotentialField::with_offset(&land.kernel, land.energy_offset + offset);
        let result = descend(&shifted, &x, &config).unwrap();
        prop_assert_eq!(&result.final_points, &land.descent.final_points);
        let wells = allocate_wells(&x, &result, &shifted, &GraphParams::default()).unwrap();
        prop_assert_eq!(&wells.wells, &land.wells.wells);
        let a = merge_by_threshold(&land.wells, &land.descent.final_points, land.default_e_th).unwrap();
        let b = merge_by_threshold(&wells, &result.final_points, land.default_e_th).unwrap();
        prop_assert_eq!(a.assignment, b.assignment);
    }
}

/// Every set partition of 0..n as a label vector (restricted growth strings).
fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=max + 1 {
            cur[i] = v;
            rec(i + 1, max.max(v), cur, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut cur, &mut out);
    }
    out
}

fn brute_jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01) = (0, 0, 0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1,
                (true, false) => n10 += 1,
                (false, true) => n01 += 1,
                _ => {}
            }
        }
    }
    let denom = n11 + n10 + n01;
    if denom == 0 {
        1.0
    } else {
        n11 as f64 / denom as f64
    }
}

fn brute_cramers_v(a: &[usize], b: &[usize]) -> f64 {
    let r = a.iter().max().unwrap() + 1;
    let c = b.iter().max().unwrap() + 1;
    let n = a.len() as f64;
    if r == 1 || c == 1 {
        return if r == c { 1.0 } else { 0.0 };
    }
    let mut chi2 = 0.0;
    for i in 0..r {
        for j in 0..c {
            let obs = a.iter().zip(b).filter(|(x, y)| **x == i && **y == j).count() as f64;
            let ri = a.iter().filter(|x| **x == i).count() as f64;
            let cj = b.iter().filter(|y| **y == j).count() as f64;
            let exp = ri * cj / n;
            chi2 += (obs - exp).powi(2) / exp;
        }
    }
    (chi2 / (n * (r.min(c) - 1) as f64)).sqrt()
}

#[test]
fn partition_scores_match_brute_force_on_six_points() {
    let parts = all_partitions(6);
    assert_eq!(parts.len(), 203);
    for a in &parts {
        for b in &parts {
            let j = jaccard(a, b).unwrap();
            let bj = brute_jaccard(a, b);
            assert!((j - bj).abs() < 1e-12, "{a:?} {b:?}: {j} vs {bj}");
            let v = cramers_v(a, b).unwrap();
            let bv = brute_cramers_v(a, b);
            assert!((v - bv).abs() < 1e-12, "{a:?} {b:?}: {v} vs {bv}");
        }
    }
}

proptest! {
    #[test]
    fn scores_are_symmetric_and_relabelling_invariant(
        a in prop::collection::vec(0usize..4, 2..30),
        perm in Just([2usize, 0, 3, 1]),
    ) {
        let b: Vec<usize> = a.iter().rev().copied().collect();
        let relabelled: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
        prop_assert!((jaccard(&a, &b).unwrap() - jaccard(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((cramers_v(&a, &b).unwrap() - cramers_v(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((jaccard(&relabelled, &b).unwrap() - jaccard(&a, &b).unwrap()).abs() < 1e-12);
        prop_assert!((cramers_v(&relabelled, &b).unwrap() - cramers_v(&a, &b).unwrap()).abs() < 1e-12);
        prop_assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        if a.iter().any(|&l| l != a[0]) {
            prop_assert!((cramers_v(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

fn sweep_from(knn: &[f64], eth: &[f64], anll: &[Vec<f64>], k: &[Vec<usize>]) -> SweepResult {
    let mut cells = Vec::new();
    for (a, &kn) in knn.iter().enumerate() {
        for (e, &et) in eth.iter().enumerate() {
            cells.push(SweepCell {
                knn: kn,
                eth: et,
                eth_used: et,
                anll: Some(anll[a][e]),
                k_effective: k[a][e],
                k_graph: k[a][e],
                js: None,
                cramers_v: None,
                trivial: k[a][e] <= 1,
                converged: true,
                failed: false,
                assignment: Vec::new(),
            });
        }
    }
    SweepResult {
        variant: KernelVariant::PerPointSigma,
        knn_grid: knn.to_vec(),
        eth_grid: eth.to_vec(),
        cells,
        correlations: Vec::new(),
    }
}

proptest! {
    #[test]
    fn model_selection_ignores_duplicated_grid_points(
        rows in prop::collection::vec(prop::collection::vec((0.01f64..1.0, 1usize..6), 6), 4..10),
        dup in 0usize..10,
    ) {
        let nk = rows.len();
        let dup = dup % nk;
        let knn: Vec<f64> = (1..=nk).map(|i| 2.5 * i as f64).collect();
        let eth: Vec<f64> = (0..6).map(|e| 0.001 * 2f64.powi(e)).collect();
        // K nonincreasing along E_th, as merging guarantees
        let k: Vec<Vec<usize>> = rows
            .iter()
            .map(|r| {
                let mut ks: Vec<usize> = r.iter().map(|c| c.1).collect();
                ks.sort_unstable_by(|a, b| b.cmp(a));
                ks
            })
            .collect();
        let anll: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|c| c.0).collect()).collect();
        let base = select_models(&sweep_from(&knn, &eth, &anll, &k));
        let mut knn2 = knn.clone();
        let mut anll2 = anll.clone();
        let mut k2 = k.clone();
        knn2.insert(dup, knn[dup]);
        anll2.insert(dup, anll[dup].clone());
        k2.insert(dup, k[dup].clone());
        let again = select_models(&sweep_from(&knn2, &eth, &anll2, &k2));
        prop_assert_eq!(&base, &again);
        prop_assert_eq!(&base, &select_models(&sweep_from(&knn, &eth, &anll, &k)));
    }
}

/// Every property above, for callers that include this file as a module.
#[allow(dead_code)]
pub fn suite() -> Vec<(&'static str, fn())> {
    vec![
        ("quadrature", normalized_psi_integrates_to_one),
        ("gradient", gradient_matches_finite_differences),
        ("posterior simplex", posterior_is_a_simplex_and_joints_sum_to_psi),
        ("trivial anll", anll_is_nonnegative_and_zero_for_one_cluster),
        ("anll sign", posteriors_give_nonnegative_anll),
        ("isotropic covariance", covariance_kernel_with_isotropic_matrices_matches_per_point_sigma),
        ("merge monotone", merging_coarsens_monotonically),
        ("offset invariance", assignments_ignore_the_potential_offset),
        ("partition oracle", partition_scores_match_brute_force_on_six_points),
        ("score symmetry", scores_are_symmetric_and_relabelling_invariant),
        ("selection duplication", model_selection_ignores_duplicated_grid_points),
    ]
}
