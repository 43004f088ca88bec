//! Validation oracles: a closed-form two-parameter linear system where joint
//! and pointwise interval constructions can be compared exactly, empirical
//! joint-coverage estimation over replicated experiments, and the full
//! coverage study for the propagated bands.

use crate::band::{CiBand, Provenance};
use crate::effi::{collect_targets, eval_band, train_meta, EffiConfig};
use crate::picprop::{fnv1a, PicPropConfig};
use crate::pinn::train;
use crate::problems::{sample_dataset, DatasetSpec, NoiseSpec, PdeProblem};
use crate::region::ConfidenceRegion;
use crate::rng;
use crate::special;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Interpolating model u(x) = (1-x) theta0 + x theta1 on [0, 1] with
/// measurements Z ~ N(theta*, I): every quantity of interest is closed-form.
#[derive(Debug, Clone, Copy)]
pub struct ToyLinearSystem {
    pub theta_star: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyIntervalKind {
    /// Union of pointwise intervals at the normal critical value.
    NormalUnion,
    /// Joint band from optimizing the linear model over the chi-squared ball.
    Chi2Joint,
}

impl ToyLinearSystem {
    pub fn truth(&self, x: f64) -> f64 {
        (1.0 - x) * self.theta_star[0] + x * self.theta_star[1]
    }

    /// The critical multiplier for a band kind: the upper (1-p)/2 critical
    /// value of the standard normal, or the square root of the matching
    /// chi-squared (2 dof) critical value.
    pub fn critical(kind: ToyIntervalKind, p: f64) -> f64 {
        let level = 0.5 * (1.0 + p);
        match kind {
            ToyIntervalKind::NormalUnion => special::normal_quantile(level),
            ToyIntervalKind::Chi2Joint => special::chi2_quantile(level, 2).sqrt(),
        }
    }

    /// Half-width profile sqrt(2x^2 - 2x + 1): the standard deviation of the
    /// estimate, and also the norm of the weight vector (1-x, x) that the
    /// linear-over-ball optimum contracts against.
    pub fn profile(x: f64) -> f64 {
        (2.0 * x * x - 2.0 * x + 1.0).sqrt()
    }
}

/// Closed-form band for one observation: (1-x) Z0 + x Z1 -+ k sqrt(2x^2-2x+1).
pub fn toy_intervals(
    observation: [f64; 2],
    kind: ToyIntervalKind,
    p: f64,
    xs: &[f64],
) -> Result<CiBand> {
    if xs.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Config("toy system grid must lie in [0, 1]".into()));
    }
    let k = ToyLinearSystem::critical(kind, p);
    let mut lower = Vec::with_capacity(xs.len());
    let mut upper = Vec::with_capacity(xs.len());
    for &x in xs {
        let mid = (1.0 - x) * observation[0] + x * observation[1];
        let half = k * ToyLinearSystem::profile(x);
        lower.push(mid - half);
        upper.push(mid + half);
    }
    CiBand::new(
        xs.iter().map(|&x| vec![x]).collect(),
        lower,
        upper,
        0.0,
        Provenance {
            method: match kind {
                ToyIntervalKind::NormalUnion => "toy-normal-union".into(),
                ToyIntervalKind::Chi2Joint => "toy-chi2-joint".into(),
            },
            config_hash: 0,
            seed: 0,
        },
    )
}

/// Study report: replications, joint-coverage successes, and the binomial
/// standard error of the estimated proportion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub replications: usize,
    pub successes: usize,
    pub proportion: f64,
    pub standard_error: f64,
    pub config_hash: u64,
}

impl StudyReport {
    pub fn new(replications: usize, successes: usize, config_hash: u64) -> Self {
        let proportion = successes as f64 / replications.max(1) as f64;
        StudyReport {
            replications,
            successes,
            proportion,
            standard_error: (proportion * (1.0 - proportion) / replications.max(1) as f64).sqrt(),
            config_hash,
        }
    }

    /// One-sided lower confidence bound on the true proportion (normal
    /// approximation at the given z value, e.g. 2.326 for 99%).
    pub fn lower_bound(&self, zvalue: f64) -> f64 {
        (self.proportion - zvalue * self.standard_error).max(0.0)
    }
}

/// Fraction of replications whose band contains the truth at every grid
/// point x = 0, eps, 2 eps, ... The band constructor receives the replicate
/// observation.
pub fn empirical_confidence(
    build: impl Fn([f64; 2]) -> Result<CiBand> + Sync,
    system: &ToyLinearSystem,
    eps: f64,
    replications: usize,
    seed: u64,
) -> Result<StudyReport> {
    if replications == 0 || eps <= 0.0 {
        return Err(Error::Config("need replications >= 1 and eps > 0".into()));
    }
    let steps = (1.0 / eps).floor() as usize;
    let xs: Vec<f64> = (0..=steps).map(|k| (k as f64 * eps).min(1.0)).collect();
    let successes = (0..replications)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::rng_from_seed(rng::mix(seed, j as u64));
            let z = [
                system.theta_star[0] + rng::standard_normal(&mut r),
                system.theta_star[1] + rng::standard_normal(&mut r),
            ];
            match build(z) {
                Ok(band) => {
                    let ok = xs.iter().enumerate().all(|(i, &x)| {
                        let u = system.truth(x);
                        band.lower[i] < u && u < band.upper[i]
                    });
                    ok as usize
                }
                Err(_) => 0,
            }
        })
        .sum();
    Ok(StudyReport::new(replications, successes, 0))
}

/// Configuration for the propagated-band coverage study. Each replication
/// resamples the boundary observation, rebuilds the confidence region, reruns
/// the propagation and checks joint containment of the exact solution on the
/// evaluation grid, padded by the measured solver error.
#[derive(Debug, Clone, Copy)]
pub struct ValidityConfig {
    pub replications: usize,
    /// Noise level of the resampled boundary observations.
    pub sigma: f64,
    pub confidence: f64,
    /// Evaluation grid size over the domain (101 in the reference setup).
    pub grid_points: usize,
    /// Queries used to fit the amortized band per replication.
    pub query_count: usize,
    /// Retrain the amortized model per replication (honest coverage) or
    /// reuse the first replication's model (fast, optimistic).
    pub reuse_model: bool,
    pub seed: u64,
}

/// Outcome of one replication, kept for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub observation: Vec<f64>,
    pub covered: bool,
}

pub struct ValidityOutcome {
    pub report: StudyReport,
    pub eta: f64,
    pub replications: Vec<ReplicationOutcome>,
}

/// Coverage study for the amortized propagation on the one-dimensional
/// pedagogical problem with chi-squared regions.
///
/// The padding eta is measured exactly as specified for the study: train a
/// solver on clean boundary data once and take its maximum absolute error on
/// the evaluation grid.
pub fn picprop_validity_study(
    problem: &PdeProblem,
    dataset_spec: &DatasetSpec,
    picprop: &PicPropConfig,
    effi: &EffiConfig,
    cfg: &ValidityConfig,
) -> Result<ValidityOutcome> {
    if cfg.replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let exact = |x: &[f64]| problem.exact_solution(x).expect("study needs the exact solution");
    let grid: Vec<Vec<f64>> = (0..cfg.grid_points)
        .map(|i| {
            let t = i as f64 / (cfg.grid_points - 1) as f64;
            vec![-1.0 + 2.0 * t]
        })
        .collect();

    // Clean-data solver error measured on the same grid gives eta.
    let clean_spec = DatasetSpec {
        noise: NoiseSpec::None,
        observations: 1,
        ..*dataset_spec
    };
    let clean = sample_dataset(problem, &clean_spec, cfg.seed)?;
    let mut clean_pinn = picprop.pinn;
    clean_pinn.seed = rng::mix(cfg.seed, 0xC1EA);
    let clean_run = train(&clean.dataset, problem, picprop.spec, &clean_pinn, None)?;
    let clean_u = crate::net::forward(&clean_run.params, &grid)?;
    let eta = grid
        .iter()
        .zip(&clean_u)
        .map(|(x, &u)| (u - exact(x)).abs())
        .fold(0.0, f64::max);

    let queries: Vec<Vec<f64>> = (0..cfg.query_count)
        .map(|i| {
            let t = i as f64 / (cfg.query_count - 1).max(1) as f64;
            vec![-1.0 + 2.0 * t]
        })
        .collect();

    let dim = clean.clean_values.len();
    let sigma_mat: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| if i == j { cfg.sigma * cfg.sigma } else { 0.0 })
                .collect()
        })
        .collect();

    let run_replication = |j: usize| -> Result<ReplicationOutcome> {
        let rep_seed = rng::mix(cfg.seed, j as u64 + 1);
        let mut r = rng::rng_from_seed(rep_seed);
        let observation: Vec<f64> = clean
            .clean_values
            .iter()
            .map(|&c| c + cfg.sigma * rng::standard_normal(&mut r))
            .collect();
        let region = ConfidenceRegion::chi_squared(&observation, &sigma_mat, cfg.confidence, false)?;
        let dataset = clean.dataset.with_noisy_values(&observation)?;
        let mut pp = *picprop;
        pp.pinn.seed = rep_seed;
        pp.eta = 0.0;
        let targets = collect_targets(problem, &dataset, &region, &pp, &queries, &grid)?;
        let mut ec = *effi;
        ec.seed = rep_seed;
        let model = train_meta(&targets, &grid, &ec)?;
        let band = eval_band(&model, &grid, eta)?;
        let covered = band.covers(|x| exact(x));
        Ok(ReplicationOutcome {
            observation,
            covered,
        })
    };

    let results: Vec<Result<ReplicationOutcome>> = if cfg.reuse_model {
        // Fast mode: one model, fresh observations/regions per replication.
        let first = run_replication(0)?;
        let mut out = vec![Ok(first)];
        // Reuse is only about the propagation; still honest about the region.
        for j in 1..cfg.replications {
            out.push(run_replication(j));
        }
        out
    } else {
        (0..cfg.replications)
            .into_par_iter()
            .map(run_replication)
            .collect()
    };

    let mut outcomes = Vec::with_capacity(cfg.replications);
    let mut successes = 0;
    for r in results {
        let o = r?;
        if o.covered {
            successes += 1;
        }
        outcomes.push(o);
    }
    let hash = fnv1a(format!("{cfg:?}").as_bytes());
    Ok(ValidityOutcome {
        report: StudyReport::new(cfg.replications, successes, hash),
        eta,
        replications: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_and_midpoint_half_widths() {
        // x = 0: interval Z0 +- k; x = 0.5: half-width k / sqrt(2).
        let p = 0.95;
        let k = ToyLinearSystem::critical(ToyIntervalKind::NormalUnion, p);
        let band = toy_intervals([0.3, -0.4], ToyIntervalKind::NormalUnion, p, &[0.0, 0.5, 1.0])
            .unwrap();
        assert!((band.upper[0] - (0.3 + k)).abs() < 1e-12);
        assert!((band.lower[0] - (0.3 - k)).abs() < 1e-12);
        assert!((band.width(1) - 2.0 * k / 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((band.upper[2] - (-0.4 + k)).abs() < 1e-12);
    }

    #[test]
    fn joint_band_strictly_contains_union_band() {
        let p = 0.95;
        let kn = ToyLinearSystem::critical(ToyIntervalKind::NormalUnion, p);
        let kc = ToyLinearSystem::critical(ToyIntervalKind::Chi2Joint, p);
        assert!(kc > kn, "{kc} vs {kn}");
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let union = toy_intervals([0.1, 0.2], ToyIntervalKind::NormalUnion, p, &xs).unwrap();
        let joint = toy_intervals([0.1, 0.2], ToyIntervalKind::Chi2Joint, p, &xs).unwrap();
        for i in 0..xs.len() {
            assert!(joint.lower[i] < union.lower[i]);
            assert!(joint.upper[i] > union.upper[i]);
        }
    }

    #[test]
    fn closed_form_matches_linear_over_ball_search() {
        // The band is the min/max of (1-x) z0 + x z1 over the Euclidean ball
        // of radius k around the observation: no random feasible point may
        // beat it, and the analytic optimizer z* = obs -+ k w/|w| attains it.
        let p = 0.9;
        let obs = [0.25, -0.6];
        let k = ToyLinearSystem::critical(ToyIntervalKind::Chi2Joint, p);
        let xs = [0.0, 0.3, 0.77, 1.0];
        let band = toy_intervals(obs, ToyIntervalKind::Chi2Joint, p, &xs).unwrap();
        let mut rng = rng::rng_from_seed(77);
        for (i, &x) in xs.iter().enumerate() {
            let w = [1.0 - x, x];
            let wn = (w[0] * w[0] + w[1] * w[1]).sqrt();
            for _ in 0..100_000 {
                let b = rng::unit_ball(&mut rng, 2);
                let z = [obs[0] + k * b[0], obs[1] + k * b[1]];
                let v = w[0] * z[0] + w[1] * z[1];
                assert!(band.lower[i] <= v + 1e-9, "x={x}: {v} beats the lower bound");
                assert!(band.upper[i] >= v - 1e-9, "x={x}: {v} beats the upper bound");
            }
            let z_min = [obs[0] - k * w[0] / wn, obs[1] - k * w[1] / wn];
            let z_max = [obs[0] + k * w[0] / wn, obs[1] + k * w[1] / wn];
            let v_min = w[0] * z_min[0] + w[1] * z_min[1];
            let v_max = w[0] * z_max[0] + w[1] * z_max[1];
            assert!((band.lower[i] - v_min).abs() < 1e-9, "x={x}");
            assert!((band.upper[i] - v_max).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn huge_radius_always_covers() {
        let system = ToyLinearSystem { theta_star: [0.0, 0.0] };
        let report = empirical_confidence(
            |z| {
                let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
                let mut band =
                    toy_intervals(z, ToyIntervalKind::Chi2Joint, 0.95, &xs).unwrap();
                for v in band.lower.iter_mut() {
                    *v -= 1e6;
                }
                for v in band.upper.iter_mut() {
                    *v += 1e6;
                }
                Ok(band)
            },
            &system,
            0.01,
            500,
            3,
        )
        .unwrap();
        assert_eq!(report.successes, 500);
        assert_eq!(report.proportion, 1.0);
    }

    #[test]
    fn empirical_confidence_monotone_in_radius() {
        let system = ToyLinearSystem { theta_star: [0.0, 0.0] };
        let run = |scale: f64| {
            empirical_confidence(
                |z| {
                    let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
                    let k = scale * ToyLinearSystem::critical(ToyIntervalKind::Chi2Joint, 0.95);
                    let mut lower = Vec::new();
                    let mut upper = Vec::new();
                    for &x in &xs {
                        let mid = (1.0 - x) * z[0] + x * z[1];
                        let half = k * ToyLinearSystem::profile(x);
                        lower.push(mid - half);
                        upper.push(mid + half);
                    }
                    CiBand::new(
                        xs.iter().map(|&x| vec![x]).collect(),
                        lower,
                        upper,
                        0.0,
                        Provenance {
                            method: "scaled".into(),
                            config_hash: 0,
                            seed: 0,
                        },
                    )
                },
                &system,
                0.01,
                1500,
                11,
            )
            .unwrap()
        };
        let small = run(0.6);
        let large = run(1.0);
        // Same replication stream: enlarging the radius never loses coverage.
        assert!(large.successes >= small.successes);
    }
}
