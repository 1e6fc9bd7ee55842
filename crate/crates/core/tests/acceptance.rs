//! Acceptance criteria on the four reference datasets.
//!
//! Prints one PASS/FAIL line per criterion straight to stderr (visible
//! without `--nocapture`). The test only fails on a missed criterion when
//! `PQC_ACCEPTANCE_STRICT=1`.

#[path = "properties.rs"]
mod properties;

use std::io::Write;
use std::time::{Duration, Instant};

use pqc::dataio::{gen_local_densities, gen_two_spirals, load_builtin, Dataset};
use pqc::kernel::KernelVariant;
use pqc::pipeline::{fit, FitParams, Preprocessing};
use pqc::scoring::{jaccard, select_models, sweep, Candidate, CandidateKind, SweepConfig, SweepResult};

/// Generator seed shared by the synthetic datasets.
const SEED: u64 = 1;

struct Report {
    lines: Vec<(String, bool)>,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        let line = format!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
        self.lines.push((line, pass));
    }

    fn runtime(&mut self, id: &str, took: Duration, limit_s: f64) {
        let s = took.as_secs_f64();
        self.check(id, s < limit_s, format!("{s:.1} s (limit {limit_s} s)"));
    }
}

fn crabs() -> Dataset {
    let pre = Preprocessing {
        pca_components: Some(2),
        pca_skip: 1,
        ..Default::default()
    };
    pre.apply(&load_builtin("crabs").unwrap()).unwrap()
}

fn params(variant: KernelVariant, knn: f64) -> FitParams {
    FitParams {
        variant,
        knn_percent: knn,
        ..Default::default()
    }
}

fn run_sweep(ds: &Dataset, truth: &[usize], variant: KernelVariant, default_row_only: bool) -> SweepResult {
    let mut config = SweepConfig {
        fit: params(variant, 10.0),
        ..Default::default()
    };
    if default_row_only {
        config.eth_grid = Some(vec![config.fit.descent.eps_v]);
    }
    sweep(&ds.x, Some(truth), &config).unwrap()
}

fn local_minima(s: &SweepResult) -> Vec<Candidate> {
    select_models(s)
        .into_iter()
        .filter(|c| c.kind == CandidateKind::LocalMinimum)
        .collect()
}

/// Local minimum with the lowest ANLL.
fn best_minimum(s: &SweepResult) -> Option<Candidate> {
    local_minima(s)
        .into_iter()
        .min_by(|a, b| a.anll.total_cmp(&b.anll))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let ds = crabs();
    let truth = ds.label_codes().unwrap();
    for (id, variant, knn, target) in [
        ("1a crabs knn 17.5%", KernelVariant::PerPointSigma, 17.5, 0.74),
        ("1b crabs cov 15%", KernelVariant::PerPointCovariance, 15.0, 0.70),
    ] {
        let (_, f) = fit(&ds.x, &params(variant, knn), None).unwrap();
        let js = jaccard(&truth, &f.labels()).unwrap();
        let k = f.k_effective();
        r.check(
            id,
            k == 4 && (js - target).abs() <= 0.05,
            format!("K={k} (want 4), JS={js:.3} (want {target} +/- 0.05)"),
        );
    }
    let s = run_sweep(&ds, &truth, KernelVariant::PerPointSigma, true);
    let best_js = s.cells.iter().filter(|c| !c.trivial).filter_map(|c| c.js).fold(0.0, f64::max);
    let minima: Vec<String> = local_minima(&s)
        .iter()
        .map(|c| format!("{}% K={} ANLL={:.3} JS={}", c.knn, c.k, c.anll, fmt_opt(c.js)))
        .collect();
    match best_minimum(&s) {
        Some(c) => {
            let js = c.js.unwrap_or(0.0);
            r.check(
                "1c crabs ANLL minimum at best-JS scale",
                js >= best_js - 0.01,
                format!(
                    "lowest-ANLL minimum at {}% has JS={js:.3}; best JS on the curve {best_js:.3}; minima: {}",
                    c.knn,
                    minima.join(", ")
                ),
            );
        }
        None => r.check("1c crabs ANLL minimum at best-JS scale", false, "no interior minimum".into()),
    }
    r.runtime("1d crabs runtime", t.elapsed(), 120.0);
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let ds = Preprocessing::default().apply(&gen_two_spirals(SEED)).unwrap();
    let truth = ds.label_codes().unwrap();
    let s = run_sweep(&ds, &truth, KernelVariant::PerPointCovariance, false);

    // cells of the window meeting K=2, Cv=1, JS>=0.95; largest 4-connected region
    let (nk, ne) = (s.n_knn(), s.n_eth());
    let ok = |a: usize, e: usize| {
        let c = s.cell(a, e);
        (2.5..=20.0).contains(&c.knn)
            && (0.5..=1.5).contains(&c.eth)
            && c.k_effective == 2
            && c.cramers_v.is_some_and(|v| v >= 1.0 - 1e-9)
            && c.js.is_some_and(|j| j >= 0.95)
    };
    let mut seen = vec![false; nk * ne];
    let mut largest = Vec::new();
    for start in 0..nk * ne {
        if seen[start] || !ok(start / ne, start % ne) {
            continue;
        }
        let mut region = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            region.push(i);
            let (a, e) = (i / ne, i % ne);
            let mut nb = Vec::new();
            if a > 0 { nb.push(i - ne) }
            if a + 1 < nk { nb.push(i + ne) }
            if e > 0 { nb.push(i - 1) }
            if e + 1 < ne { nb.push(i + 1) }
            for j in nb {
                if !seen[j] && ok(j / ne, j % ne) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if region.len() > largest.len() {
            largest = region;
        }
    }
    let cells: Vec<String> = largest
        .iter()
        .map(|&i| format!("({}%, {:.3})", s.cell(i / ne, i % ne).knn, s.cell(i / ne, i % ne).eth))
        .collect();
    r.check(
        "2a spirals K=2 region",
        !largest.is_empty(),
        format!("{} cells with K=2, Cv=1, JS>=0.95: {}", largest.len(), cells.join(" ")),
    );

    let near = local_minima(&s)
        .into_iter()
        .filter(|c| (30.0..=40.0).contains(&c.knn))
        .min_by(|a, b| (a.knn - 35.0).abs().total_cmp(&(b.knn - 35.0).abs()));
    let row: Vec<String> = (0..nk)
        .map(|a| format!("{}:{}", s.cell(a, 0).knn, fmt_opt(s.display_anll(a, 0))))
        .collect();
    match near {
        Some(c) => {
            let cv = c.cramers_v.unwrap_or(1.0);
            r.check(
                "2b spirals mixed K=2 minimum near 35%",
                c.k == 2 && cv <= 0.2,
                format!("minimum at {}%: K={} (want 2), Cv={cv:.3} (want <= 0.2)", c.knn, c.k),
            );
        }
        None => r.check(
            "2b spirals mixed K=2 minimum near 35%",
            false,
            format!("no local minimum in [30, 40]; default-row ANLL {}", row.join(" ")),
        ),
    }
    r.runtime("2c spirals runtime", t.elapsed(), 600.0);
}

fn criterion_3(r: &mut Report) {
    let t = Instant::now();
    let ds = Preprocessing::default().apply(&gen_local_densities(SEED)).unwrap();
    let truth = ds.label_codes().unwrap();

    let knn = run_sweep(&ds, &truth, KernelVariant::PerPointSigma, false);
    match best_minimum(&knn) {
        Some(c) => {
            let js = c.js.unwrap_or(0.0);
            r.check(
                "3a data#1 knn best cell",
                c.k == 4 && js >= 0.80,
                format!("lowest-ANLL minimum {}%: K={} (want 4), JS={js:.3} (want >= 0.80)", c.knn, c.k),
            );
        }
        None => r.check("3a data#1 knn best cell", false, "no interior minimum".into()),
    }
    match knn.correlations.first().cloned().flatten() {
        Some(c) => r.check(
            "3b data#1 ANLL/JS correlation",
            c.rho <= -0.6 && c.p_value < 0.01,
            format!("rho={:.3} (want <= -0.6), p={:.2e} (want < 0.01)", c.rho, c.p_value),
        ),
        None => r.check("3b data#1 ANLL/JS correlation", false, "undefined".into()),
    }

    let cov = run_sweep(&ds, &truth, KernelVariant::PerPointCovariance, false);
    let best = cov
        .cells
        .iter()
        .filter(|c| !c.trivial && c.js.is_some())
        .max_by(|a, b| a.js.unwrap().total_cmp(&b.js.unwrap()))
        .unwrap();
    let js = best.js.unwrap();
    r.check(
        "3c data#1 cov reaches JS>=0.80",
        js >= 0.80,
        format!("best cell {}% E_th {:.4}: K={}, JS={js:.3}", best.knn, best.eth, best.k_effective),
    );
    r.runtime("3d data#1 runtime", t.elapsed(), 300.0);
}

fn criterion_4(r: &mut Report) {
    let t = Instant::now();
    let ds = Preprocessing::default().apply(&load_builtin("olive").unwrap()).unwrap();
    let area = ds.label_codes_for("area").unwrap();
    let region = ds.label_codes_for("region").unwrap();
    let s = run_sweep(&ds, &area, KernelVariant::PerPointCovariance, true);
    let by_region = s.rescore(&region).unwrap();
    let minima = local_minima(&s);
    let listed: Vec<String> = minima.iter().map(|c| format!("{}% K={}", c.knn, c.k)).collect();
    r.check(
        "4a olive two local minima",
        minima.len() == 2,
        format!("{} interior minima: {}", minima.len(), listed.join(", ")),
    );
    let first = minima.iter().find(|c| (10.0..=20.0).contains(&c.knn));
    match first {
        Some(c) => {
            let js = c.js.unwrap_or(0.0);
            r.check(
                "4b olive fine minimum",
                (8..=10).contains(&c.k) && js >= 0.65,
                format!("{}%: K={} (want 8-10), JS(area)={js:.3} (want >= 0.65)", c.knn, c.k),
            );
        }
        None => r.check("4b olive fine minimum", false, "no minimum in [10, 20]".into()),
    }
    let second = minima.iter().find(|c| (40.0..=50.0).contains(&c.knn));
    match second {
        Some(c) => {
            let ki = s.knn_grid.iter().position(|k| *k == c.knn).unwrap();
            let js = by_region[ki * s.n_eth()].0.unwrap_or(0.0);
            r.check(
                "4c olive coarse minimum",
                (3..=5).contains(&c.k) && js >= 0.70,
                format!("{}%: K={} (want 3-5), JS(region)={js:.3} (want >= 0.70)", c.knn, c.k),
            );
        }
        None => r.check("4c olive coarse minimum", false, "no minimum in [40, 50]".into()),
    }
    r.runtime("4d olive runtime", t.elapsed(), 900.0);
}

fn criterion_5(r: &mut Report) {
    let d1 = Preprocessing::default().apply(&gen_local_densities(SEED)).unwrap();
    for (id, ds, knn) in [("5a data#1 knn 17.5%", &d1, 17.5), ("5b crabs knn 17.5%", &crabs(), 17.5)] {
        let (_, f) = fit(&ds.x, &params(KernelVariant::PerPointSigma, knn), None).unwrap();
        let alloc = f.allocation.as_ref().unwrap();
        let diff = alloc
            .assignment
            .iter()
            .zip(&f.clustering.assignment)
            .filter(|(a, b)| a != b)
            .count();
        let frac = diff as f64 / ds.n() as f64;
        r.check(
            id,
            frac < 0.02,
            format!("probabilistic vs graph allocation differ on {diff}/{} = {:.1}% (want < 2%)", ds.n(), 100.0 * frac),
        );
    }
}

fn criterion_6(r: &mut Report) {
    let t = Instant::now();
    let mut failed = Vec::new();
    for (name, f) in properties::suite() {
        if std::panic::catch_unwind(f).is_err() {
            failed.push(name);
        }
    }
    let n = properties::suite().len();
    r.check(
        "6a property suite",
        failed.is_empty(),
        format!("{}/{n} properties hold{}", n - failed.len(), if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }),
    );
    r.runtime("6b property runtime", t.elapsed(), 60.0);
}

#[test]
fn acceptance() {
    let mut r = Report { lines: Vec::new() };
    criterion_6(&mut r);
    criterion_1(&mut r);
    criterion_5(&mut r);
    criterion_3(&mut r);
    criterion_2(&mut r);
    criterion_4(&mut r);
    let failed: Vec<&String> = r.lines.iter().filter(|l| !l.1).map(|l| &l.0).collect();
    let _ = writeln!(
        std::io::stderr().lock(),
        "acceptance: {}/{} checks pass",
        r.lines.len() - failed.len(),
        r.lines.len()
    );
    if std::env::var("PQC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
    }
}
