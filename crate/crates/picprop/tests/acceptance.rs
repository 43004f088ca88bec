//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers. Desk-scale budgets are pinned here;
//! every tolerance is asserted, none are tuned at runtime.

use picprop::band::CiBand;
use picprop::effi::{collect_targets, eval_band, train_meta, EffiConfig};
use picprop::es::{exhaustive_search, EsConfig};
use picprop::hypergrad::{
    cg_solve, hypergrad_aid, hypergrad_reverse, neumann_inv_hvp, BilevelProblem, HypergradConfig,
    QuadraticBilevel,
};
use picprop::net::{forward, DerivativeRequest, NetworkSpec, ParamVector};
use picprop::picprop::{picprop_band, PicPropConfig};
use picprop::pinn::{OptimizerKind, PinnConfig, StepRecord, Trajectory};
use picprop::problems::{sample_dataset, DatasetSpec, NoiseSpec, PdeProblem, SampledData};
use picprop::region::ConfidenceRegion;
use picprop::rng;
use picprop::validation::{
    empirical_confidence, picprop_validity_study, toy_intervals, ToyIntervalKind, ToyLinearSystem,
    ValidityConfig,
};
use std::sync::OnceLock;
use std::time::Instant;


fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Criterion 1: the three hypergradient engines agree with the closed form on
// random SPD quadratic bi-level instances.
// ---------------------------------------------------------------------------

fn random_spd(n: usize, r: &mut rng::SeededRng) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng::standard_normal(r)).collect())
        .collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = if i == j { 0.5 * n as f64 } else { 0.0 };
            for row in &b {
                s += row[i] * row[j];
            }
            a[i][j] = s;
        }
    }
    a
}

fn sgd_trajectory(q: &QuadraticBilevel, z: &[f64], lr: f64, steps: usize) -> (Vec<f64>, Trajectory) {
    let mut theta = vec![0.0; q.param_dim()];
    let mut traj = Trajectory::new(OptimizerKind::Sgd, lr, steps);
    for t in 1..=steps {
        let g = q.loss_grad(&theta, z).unwrap();
        traj.steps.push_back(StepRecord {
            theta_before: theta.clone(),
            grad: g.clone(),
            m_after: Vec::new(),
            v_after: Vec::new(),
            t,
        });
        for (th, gi) in theta.iter_mut().zip(&g) {
            *th -= lr * gi;
        }
    }
    (theta, traj)
}

#[test]
fn criterion_1_hypergradient_oracle_equivalence() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let mut r = rng::rng_from_seed(rng::mix(9000, instance));
        let ntheta = 2 + (rng::uniform(&mut r, 0.0, 19.0) as usize).min(18);
        let nz = 1 + (rng::uniform(&mut r, 0.0, 19.0) as usize).min(18);
        let q = QuadraticBilevel {
            a: random_spd(ntheta, &mut r),
            m: (0..ntheta)
                .map(|_| (0..nz).map(|_| rng::standard_normal(&mut r)).collect())
                .collect(),
            c: (0..ntheta).map(|_| rng::standard_normal(&mut r)).collect(),
        };
        let z: Vec<f64> = (0..nz).map(|_| rng::standard_normal(&mut r)).collect();
        let expect = q.analytic_hypergrad();
        let scale = l2(&expect).max(1e-12);
        let theta_star = q.theta_star(&z);
        // Gershgorin bound keeps both the series and the inner steps contractive.
        let bound = q
            .a
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);

        let ns = hypergrad_aid(
            &q,
            &theta_star,
            &z,
            &HypergradConfig::aid_ns(200, 0.9 / bound),
        )
        .unwrap();
        let cg = hypergrad_aid(&q, &theta_star, &z, &HypergradConfig::aid_cg(400, 1e-10)).unwrap();
        let (theta_k, traj) = sgd_trajectory(&q, &z, 0.9 / bound, 400);
        let rv = hypergrad_reverse(&q, &traj, &theta_k, &z, 400).unwrap();

        for (name, out) in [("reverse", &rv), ("aid-ns", &ns), ("aid-cg", &cg)] {
            let err = out
                .grad
                .iter()
                .zip(&expect)
                .map(|(g, e)| (g - e) * (g - e))
                .sum::<f64>()
                .sqrt()
                / scale;
            assert!(
                err <= 1e-4,
                "instance {instance} ({ntheta}x{nz}) {name}: relative error {err:.3e}"
            );
            worst = worst.max(err);
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "criterion 1: PASS (20 instances, worst relative error {worst:.2e}, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: toy linear system joint vs union coverage.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_toy_linear_system_coverage() {
    let t0 = Instant::now();
    let system = ToyLinearSystem {
        theta_star: [0.0, 0.0],
    };
    let xs: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let joint = empirical_confidence(
        |z| toy_intervals(z, ToyIntervalKind::Chi2Joint, 0.95, &xs),
        &system,
        0.01,
        5000,
        1234,
    )
    .unwrap();
    let union = empirical_confidence(
        |z| toy_intervals(z, ToyIntervalKind::NormalUnion, 0.95, &xs),
        &system,
        0.01,
        5000,
        1234,
    )
    .unwrap();
    assert!(
        joint.proportion >= 0.95,
        "joint coverage {:.4} below 0.95",
        joint.proportion
    );
    assert!(
        union.proportion <= 0.95 - 3.0 * union.standard_error,
        "union coverage {:.4} not below 0.95 - 3 SE ({:.4})",
        union.proportion,
        0.95 - 3.0 * union.standard_error
    );
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "criterion 2: PASS (joint {:.4} >= 0.95 > union {:.4} + 3 SE, {elapsed:.2?})",
        joint.proportion, union.proportion
    );
}

// ---------------------------------------------------------------------------
// Shared pedagogical chi-squared setup for criteria 3 and 4.
// ---------------------------------------------------------------------------

struct PedagogicalCase {
    problem: PdeProblem,
    data: SampledData,
    region: ConfidenceRegion,
    grid41: Vec<Vec<f64>>,
    /// Indices of the 6 training queries inside the 41-point grid.
    query_idx: [usize; 6],
    picprop_cfg: PicPropConfig,
}

fn pedagogical_case() -> &'static PedagogicalCase {
    static CASE: OnceLock<PedagogicalCase> = OnceLock::new();
    CASE.get_or_init(|| {
        let problem = PdeProblem::pedagogical();
        let data = sample_dataset(
            &problem,
            &DatasetSpec {
                force_count: 128,
                boundary_count: 2,
                bc_count: 0,
                observations: 1,
                noise: NoiseSpec::Gaussian { sigma: 0.05 },
            },
            2024,
        )
        .unwrap();
        let obs = data.dataset.noisy_values();
        let sigma = vec![vec![0.0025, 0.0], vec![0.0, 0.0025]];
        let region = ConfidenceRegion::chi_squared(&obs, &sigma, 0.95, false).unwrap();
        let grid41: Vec<Vec<f64>> = (0..41).map(|i| vec![-1.0 + i as f64 / 20.0]).collect();
        let spec = NetworkSpec::new(1, 32, 2).unwrap();
        let picprop_cfg = PicPropConfig {
            spec,
            pinn: PinnConfig {
                warmup_steps: 1200,
                inner_steps: 150,
                seed: 5,
                ..PinnConfig::default()
            },
            meta_optimizer: OptimizerKind::Adam,
            meta_lr: 0.02,
            meta_steps: 25,
            hypergrad: HypergradConfig::reverse(100),
            eta: 0.0,
            return_best: false,
        };
        PedagogicalCase {
            problem,
            data,
            region,
            grid41,
            query_idx: [0, 8, 16, 24, 32, 40],
            picprop_cfg,
        }
    })
}

/// Dense 41-point band solved by the bi-level optimizer (shared between
/// criteria 3 and 4).
fn dense_picprop_band() -> &'static CiBand {
    static BAND: OnceLock<CiBand> = OnceLock::new();
    BAND.get_or_init(|| {
        let case = pedagogical_case();
        let out = picprop_band(
            &case.problem,
            &case.data.dataset,
            &case.region,
            &case.picprop_cfg,
            &case.grid41,
        )
        .unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        out.band
    })
}

#[test]
fn criterion_3_picprop_matches_exhaustive_search() {
    let case = pedagogical_case();
    let t0 = Instant::now();
    let es_cfg = EsConfig {
        spec: case.picprop_cfg.spec,
        pinn: PinnConfig {
            warmup_steps: 1500,
            seed: 77,
            ..PinnConfig::default()
        },
        trials: 1000,
        trial_steps: 300,
        warm_start: true,
        eta: 0.0,
        seed: 77,
    };
    let queries: Vec<Vec<f64>> = case
        .query_idx
        .iter()
        .map(|&i| case.grid41[i].clone())
        .collect();
    let es = exhaustive_search(&case.problem, &case.data.dataset, &case.region, &queries, &es_cfg)
        .unwrap();
    let band = dense_picprop_band();

    let mut worst: f64 = 0.0;
    for (k, &qi) in case.query_idx.iter().enumerate() {
        let dl = (band.lower[qi] - es.band.lower[k]).abs();
        let du = (band.upper[qi] - es.band.upper[k]).abs();
        worst = worst.max(dl).max(du);
        assert!(
            dl <= 0.05 && du <= 0.05,
            "query {:?}: |dL| = {dl:.4}, |dU| = {du:.4} exceeds 0.05",
            queries[k]
        );
    }
    for qi in [0, 40] {
        let w = band.width(qi);
        assert!(
            (0.08..=0.3).contains(&w),
            "width at {:?} is {w:.3}, outside [0.08, 0.3]",
            band.queries[qi]
        );
    }
    println!(
        "criterion 3: PASS (max |bound - ES| {worst:.4} <= 0.05, edge widths {:.3}/{:.3}, {:.1?})",
        band.width(0),
        band.width(40),
        t0.elapsed()
    );
}

#[test]
fn criterion_4_amortized_lambda_sweep_ordering() {
    let case = pedagogicalcase_targets();
    let dense = dense_picprop_band();
    let t0 = Instant::now();

    let mse_for = |lambda: f64, seed: u64| -> f64 {
        let cfg = EffiConfig {
            lambda,
            train_steps: 3000,
            seed,
            ..EffiConfig::default()
        };
        let grid: Vec<Vec<f64>> = pedagogical_case().grid41.clone();
        let model = train_meta(case, &collect_grid(), &cfg).unwrap();
        let band = eval_band(&model, &grid, 0.0).unwrap();
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..41 {
            if pedagogical_case().query_idx.contains(&i) {
                continue;
            }
            acc += (band.lower[i] - dense.lower[i]).powi(2);
            acc += (band.upper[i] - dense.upper[i]).powi(2);
            n += 2;
        }
        acc / n as f64
    };
    let mse_full = mse_for(1.0, 42);
    let mse_query_only = mse_for(0.0, 42);
    assert!(
        mse_full < mse_query_only,
        "field regression ({mse_full:.3e}) not better than query-only ({mse_query_only:.3e})"
    );
    assert!(
        mse_query_only >= 10.0 * mse_full,
        "separation {:.1}x below 10x",
        mse_query_only / mse_full
    );
    println!(
        "criterion 4: PASS (off-query MSE {mse_full:.2e} at lambda=1 vs {mse_query_only:.2e} at lambda=0, {:.0}x, {:.1?})",
        mse_query_only / mse_full,
        t0.elapsed()
    );
}

/// Targets for the 6 training queries (shared by criterion 4).
fn pedagogicalcase_targets() -> &'static Vec<picprop::effi::QueryTargets> {
    static TARGETS: OnceLock<Vec<picprop::effi::QueryTargets>> = OnceLock::new();
    TARGETS.get_or_init(|| {
        let case = pedagogical_case();
        let queries: Vec<Vec<f64>> = case
            .query_idx
            .iter()
            .map(|&i| case.grid41[i].clone())
            .collect();
        collect_targets(
            &case.problem,
            &case.data.dataset,
            &case.region,
            &case.picprop_cfg,
            &queries,
            &collect_grid(),
        )
        .unwrap()
    })
}

fn collect_grid() -> Vec<Vec<f64>> {
    pedagogical_case().problem.collocation(128)
}

// ---------------------------------------------------------------------------
// Criterion 5: joint-coverage study of the propagated bands.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_validity_study_coverage() {
    let t0 = Instant::now();
    let problem = PdeProblem::pedagogical();
    let spec = NetworkSpec::new(1, 32, 2).unwrap();
    let picprop_cfg = PicPropConfig {
        spec,
        pinn: PinnConfig {
            warmup_steps: 600,
            inner_steps: 80,
            seed: 0,
            ..PinnConfig::default()
        },
        meta_optimizer: OptimizerKind::Adam,
        meta_lr: 0.02,
        meta_steps: 12,
        hypergrad: HypergradConfig::reverse(50),
        eta: 0.0,
        return_best: false,
    };
    let effi_cfg = EffiConfig {
        lambda: 1.0,
        train_steps: 1500,
        ..EffiConfig::default()
    };
    let out = picprop_validity_study(
        &problem,
        &DatasetSpec {
            force_count: 128,
            boundary_count: 2,
            bc_count: 0,
            observations: 1,
            noise: NoiseSpec::Gaussian { sigma: 0.05 },
        },
        &picprop_cfg,
        &effi_cfg,
        &ValidityConfig {
            replications: 50,
            sigma: 0.05,
            confidence: 0.95,
            grid_points: 101,
            query_count: 6,
            reuse_model: false,
            seed: 314,
        },
    )
    .unwrap();
    // One-sided 99% binomial lower bound (normal approximation, z = 2.326).
    let lower = out.report.lower_bound(2.326);
    assert!(
        lower >= 0.88,
        "coverage {}/{} gives lower bound {lower:.3} < 0.88",
        out.report.successes,
        out.report.replications
    );
    println!(
        "criterion 5: PASS ({}/{} covered, 99% lower bound {lower:.3} >= 0.88, eta {:.3}, {:.1?})",
        out.report.successes,
        out.report.replications,
        out.eta,
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: exhaustive-search band growth with the trial count on the
// two-dimensional problem.
// ---------------------------------------------------------------------------

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_6_search_band_grows_with_trials() {
    let t0 = Instant::now();
    let problem = PdeProblem::poisson2d();
    let data = sample_dataset(
        &problem,
        &DatasetSpec {
            force_count: 169,
            boundary_count: 10,
            bc_count: 0,
            observations: 1,
            noise: NoiseSpec::None,
        },
        6,
    )
    .unwrap();
    let lo: Vec<f64> = data.clean_values.iter().map(|v| v - 0.05).collect();
    let hi: Vec<f64> = data.clean_values.iter().map(|v| v + 0.05).collect();
    let region = ConfidenceRegion::fixed(&lo, &hi, 0.95).unwrap();
    let queries: Vec<Vec<f64>> = (0..41)
        .flat_map(|i| {
            (0..41).map(move |j| vec![-1.0 + i as f64 / 20.0, -1.0 + j as f64 / 20.0])
        })
        .collect();
    let spec = NetworkSpec::new(2, 20, 8).unwrap();
    let es_cfg = EsConfig {
        spec,
        pinn: PinnConfig {
            warmup_steps: 1500,
            seed: 66,
            ..PinnConfig::default()
        },
        trials: 600,
        trial_steps: 250,
        warm_start: true,
        eta: 0.0,
        seed: 66,
    };
    let out = exhaustive_search(&problem, &data.dataset, &region, &queries, &es_cfg).unwrap();
    assert!(out.audit.skipped.is_empty(), "skipped trials {:?}", out.audit.skipped);
    let prov = out.band.provenance.clone();
    let small = out.audit.band_prefix(&queries, 200, 0.0, prov.clone()).unwrap();
    let large = out.audit.band_prefix(&queries, 600, 0.0, prov).unwrap();

    let mut strictly_wider = 0;
    for i in 0..queries.len() {
        assert!(
            large.width(i) >= small.width(i) - 1e-12,
            "width shrank at {:?}",
            queries[i]
        );
        if large.width(i) > small.width(i) + 1e-9 {
            strictly_wider += 1;
        }
    }
    let frac = strictly_wider as f64 / queries.len() as f64;
    assert!(
        frac >= 0.10,
        "only {strictly_wider}/{} queries strictly wider ({frac:.3})",
        queries.len()
    );
    println!(
        "criterion 6: PASS (600-trial band wider at {strictly_wider}/{} queries = {:.0}%, {:.1?})",
        queries.len(),
        100.0 * frac,
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: uncertainty growth away from the data for the time-dependent
// problem.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_burgers_uncertainty_growth() {
    let t0 = Instant::now();
    let problem = PdeProblem::burgers();
    let data = sample_dataset(
        &problem,
        &DatasetSpec {
            force_count: 2000,
            boundary_count: 256,
            bc_count: 100,
            observations: 1,
            noise: NoiseSpec::None,
        },
        0,
    )
    .unwrap();
    let lo: Vec<f64> = data.clean_values.iter().map(|v| v - 0.2).collect();
    let hi: Vec<f64> = data.clean_values.iter().map(|v| v + 0.2).collect();
    let region = ConfidenceRegion::fixed(&lo, &hi, 0.95).unwrap();
    let spec = NetworkSpec::new(2, 20, 8).unwrap();
    let cfg = PicPropConfig {
        spec,
        pinn: PinnConfig {
            warmup_steps: 1800,
            inner_steps: 50,
            seed: 3,
            chunk: 512,
            ..PinnConfig::default()
        },
        meta_optimizer: OptimizerKind::Sgd,
        meta_lr: 0.3,
        meta_steps: 16,
        hypergrad: HypergradConfig::reverse(25),
        eta: 0.0,
        return_best: false,
    };
    let t0_queries: Vec<Vec<f64>> = vec![vec![-0.5, 0.0], vec![0.0, 0.0], vec![0.5, 0.0]];
    let t75_queries: Vec<Vec<f64>> = vec![vec![-0.5, 0.75], vec![0.0, 0.75], vec![0.5, 0.75]];
    let queries: Vec<Vec<f64>> = t0_queries.iter().chain(&t75_queries).cloned().collect();
    let grid = problem.collocation(600);
    let targets = collect_targets(&problem, &data.dataset, &region, &cfg, &queries, &grid).unwrap();
    let effi_cfg = EffiConfig {
        lambda: 0.0,
        train_steps: 2500,
        ..EffiConfig::default()
    };
    let model = train_meta(&targets, &grid, &effi_cfg).unwrap();
    let band = eval_band(&model, &queries, 0.0).unwrap();

    let mean_width = |idx: std::ops::Range<usize>| -> f64 {
        idx.map(|i| band.width(i)).sum::<f64>() / 3.0
    };
    let w0 = mean_width(0..3);
    let w75 = mean_width(3..6);
    let ratio = w75 / w0;
    assert!(
        ratio >= 2.0,
        "mean width at t=0.75 ({w75:.3}) vs t=0 ({w0:.3}): ratio {ratio:.2} < 2"
    );
    println!(
        "criterion 7: PASS (mean width {w75:.3} at t=0.75 vs {w0:.3} at t=0, ratio {ratio:.2}, {:.1?})",
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: derivative and region invariant suites at the stated
// tolerances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_derivative_and_region_invariants() {
    let t0 = Instant::now();

    // Finite-difference consistency at random interior points.
    let spec = NetworkSpec::new(1, 32, 2).unwrap();
    let params = ParamVector::init(spec, 321);
    let mut r = rng::rng_from_seed(321);
    let pts: Vec<Vec<f64>> = (0..20)
        .map(|_| vec![rng::uniform(&mut r, -0.95, 0.95)])
        .collect();
    let req = DerivativeRequest::new(vec![vec![1], vec![2]], 1).unwrap();
    let derivs = picprop::net::spatial_derivatives(&params, &pts, &req).unwrap();
    let h = 1e-4;
    for (i, p) in pts.iter().enumerate() {
        let up = forward(&params, &[vec![p[0] + h]]).unwrap()[0];
        let u0 = forward(&params, &[vec![p[0]]]).unwrap()[0];
        let um = forward(&params, &[vec![p[0] - h]]).unwrap()[0];
        let fd1 = (up - um) / (2.0 * h);
        let fd2 = (up - 2.0 * u0 + um) / (h * h);
        let e1 = (derivs[0][i] - fd1).abs() / fd1.abs().max(1e-12);
        let e2 = (derivs[1][i] - fd2).abs() / fd2.abs().max(1e-12);
        assert!(e1 < 1e-5, "first-order mismatch {e1:.2e} at {p:?}");
        assert!(e2 < 1e-3, "second-order mismatch {e2:.2e} at {p:?}");
    }

    // Projection idempotence and membership on both region shapes.
    let ell = ConfidenceRegion::chi_squared(
        &[0.1, -0.2],
        &[vec![0.04, 0.01], vec![0.01, 0.09]],
        0.95,
        false,
    )
    .unwrap();
    let boxr = ConfidenceRegion::fixed(&[-1.0, 0.0], &[1.0, 2.0], 0.9).unwrap();
    for region in [&ell, &boxr] {
        for _ in 0..1000 {
            let q = vec![
                rng::uniform(&mut r, -6.0, 6.0),
                rng::uniform(&mut r, -6.0, 6.0),
            ];
            let p = region.project(&q).unwrap();
            assert!(region.contains(&p));
            let pp = region.project(&p).unwrap();
            for (a, b) in p.iter().zip(&pp) {
                assert!((a - b).abs() < 1e-9);
            }
            if let (Some(d), Some(rad)) = (region.mahalanobis(&q), region.radius()) {
                let dp = region.mahalanobis(&p).unwrap();
                assert!(dp <= rad + 1e-9);
                if d > rad {
                    assert!((dp - rad).abs() < 1e-9);
                }
            }
        }
    }

    // Monte-Carlo coverage of the data-driven constructions.
    let reps = 2000;
    let sigma = 0.05;
    let mut hits_chi2 = 0;
    let mut hits_t2 = 0;
    let mut hits_hoeff = 0;
    let sig_mat = vec![vec![sigma * sigma, 0.0], vec![0.0, sigma * sigma]];
    for _ in 0..reps {
        let z = vec![
            sigma * rng::standard_normal(&mut r),
            sigma * rng::standard_normal(&mut r),
        ];
        if ConfidenceRegion::chi_squared(&z, &sig_mat, 0.95, false)
            .unwrap()
            .contains(&[0.0, 0.0])
        {
            hits_chi2 += 1;
        }
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                vec![
                    sigma * rng::standard_normal(&mut r),
                    sigma * rng::standard_normal(&mut r),
                ]
            })
            .collect();
        if let Ok(region) = ConfidenceRegion::hotelling(&samples, 0.95, false) {
            if region.contains(&[0.0, 0.0]) {
                hits_t2 += 1;
            }
        }
        let usamples: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                vec![
                    rng::uniform(&mut r, -1.5, 1.5),
                    rng::uniform(&mut r, -1.5, 1.5),
                ]
            })
            .collect();
        if ConfidenceRegion::hoeffding(&usamples, &[0.0, 0.0], &[1.5, 1.5], 0.95)
            .unwrap()
            .contains(&[0.0, 0.0])
        {
            hits_hoeff += 1;
        }
    }
    for (name, hits) in [("chi2", hits_chi2), ("t2", hits_t2), ("hoeffding", hits_hoeff)] {
        let p = hits as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!(p >= 0.95 - 2.0 * se, "{name} coverage {p:.4}");
    }

    // Basic solver sanity retained from the stack below the suite.
    let p0 = vec![1.0, -2.0, 3.0];
    let (x, _, _) = neumann_inv_hvp(|v| Ok(v.to_vec()), &p0, 1.0, 1).unwrap();
    assert_eq!(x, p0);
    let out = cg_solve(|v| Ok(vec![2.0 * v[0], 4.0 * v[1]]), &[2.0, 4.0], 10, 1e-12).unwrap();
    assert!(out.iters <= 2 && out.converged);

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "criterion 8: PASS (derivative, projection and coverage suites, {:.1?})",
        elapsed
    );
}
