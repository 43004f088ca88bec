//! Per-query projected bi-level optimization: walk the boundary values inside
//! their confidence region to extremize the trained field at a query point.
//!
//! One run alternates warm-started inner training phases with meta steps on
//! the boundary values; after every meta step the iterate is projected back
//! into the region, so the returned configuration is always feasible and the
//! coverage guarantee applies to it.

use crate::band::{CiBand, MetaIterate, Provenance};
use crate::hypergrad::{
    hypergrad_aid, hypergrad_reverse, BilevelProblem, HypergradConfig, HypergradMethod,
    HypergradResult, QuadraticBilevel,
};
use crate::net::{NetworkSpec, ParamVector};
use crate::pinn::{OptimizerKind, PinnConfig, PinnObjective, Trainer, Trajectory};
use crate::problems::{BoundaryDataset, PdeProblem};
use crate::region::ConfidenceRegion;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicPropConfig {
    pub spec: NetworkSpec,
    pub pinn: PinnConfig,
    pub meta_optimizer: OptimizerKind,
    pub meta_lr: f64,
    /// Outer steps K_o.
    pub meta_steps: usize,
    pub hypergrad: HypergradConfig,
    /// Properness padding applied to the returned bounds.
    pub eta: f64,
    /// Return the best-seen iterate instead of the literal final one.
    pub return_best: bool,
}

impl PicPropConfig {
    pub fn validate(&self) -> Result<()> {
        self.pinn.validate()?;
        self.hypergrad.validate()?;
        if self.meta_lr <= 0.0 {
            return Err(Error::Config("meta learning rate must be positive".into()));
        }
        if self.meta_steps < 1 {
            return Err(Error::Config("meta_steps must be at least 1".into()));
        }
        if self.eta < 0.0 {
            return Err(Error::Config("eta must be nonnegative".into()));
        }
        if matches!(self.hypergrad.method, HypergradMethod::Reverse)
            && (self.hypergrad.k > self.pinn.inner_steps
                || self.hypergrad.k > self.pinn.warmup_steps)
        {
            return Err(Error::Config(
                "reverse unroll depth must not exceed the warmup and inner step counts".into(),
            ));
        }
        Ok(())
    }
}

/// A bi-level view of the physics-informed problem at a fixed query point:
/// inner loss is the training loss, outer objective the field value at the
/// query. Oracle calls set the boundary values before delegating.
pub struct PinnBilevel {
    inner: RefCell<PinnObjective>,
    spec: NetworkSpec,
    query: Vec<f64>,
}

impl PinnBilevel {
    pub fn new(
        problem: &PdeProblem,
        dataset: &BoundaryDataset,
        spec: NetworkSpec,
        pinn: &PinnConfig,
        query: &[f64],
    ) -> Result<Self> {
        let obj = PinnObjective::new(problem, dataset, pinn.w_f, pinn.w_b, pinn.chunk)?
            .with_spec(spec)?;
        Ok(PinnBilevel {
            inner: RefCell::new(obj),
            spec,
            query: query.to_vec(),
        })
    }

    fn params(&self, theta: &[f64]) -> Result<ParamVector> {
        ParamVector::new(self.spec, theta.to_vec())
    }
}

impl BilevelProblem for PinnBilevel {
    fn param_dim(&self) -> usize {
        self.spec.param_count()
    }

    fn data_dim(&self) -> usize {
        self.inner.borrow().data_dim()
    }

    fn loss_grad(&self, theta: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let mut obj = self.inner.borrow_mut();
        obj.set_noisy_values(z)?;
        Ok(obj.loss_and_grad(&self.params(theta)?)?.1)
    }

    fn hvp(&self, theta: &[f64], z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut obj = self.inner.borrow_mut();
        obj.set_noisy_values(z)?;
        obj.hvp(&self.params(theta)?, v)
    }

    fn mixed_vjp(&self, theta: &[f64], z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut obj = self.inner.borrow_mut();
        obj.set_noisy_values(z)?;
        obj.mixed_vjp(&self.params(theta)?, v)
    }

    fn upper_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.inner
            .borrow()
            .field_grad(&self.params(theta)?, &self.query)
    }
}

/// What the projected meta loop needs from an inner problem.
pub trait MetaDriver {
    fn data_dim(&self) -> usize;
    /// Initial training at the starting boundary configuration.
    fn warmup(&mut self, z: &[f64]) -> Result<()>;
    /// Warm-started inner phase at the current configuration.
    fn inner_phase(&mut self, z: &[f64]) -> Result<()>;
    /// Outer objective at the current inner solution.
    fn upper_value(&mut self, z: &[f64]) -> Result<f64>;
    fn hypergrad(&mut self, z: &[f64]) -> Result<HypergradResult>;
}

/// Outcome of one projected meta optimization.
#[derive(Debug, Clone)]
pub struct MetaRun {
    /// Objective at the literal final iterate z_{K_o}.
    pub final_value: f64,
    pub final_z: Vec<f64>,
    /// Best value seen across all meta iterates.
    pub best_value: f64,
    pub best_z: Vec<f64>,
    pub iterates: Vec<MetaIterate>,
    pub stationarity_warnings: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MetaOptConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
}

/// Projected meta descent/ascent over the region. Every iterate is projected
/// back after its step, so all visited configurations are members.
pub fn optimize_bound(
    driver: &mut impl MetaDriver,
    region: &ConfidenceRegion,
    side: BoundSide,
    meta: &MetaOptConfig,
) -> Result<MetaRun> {
    if region.dim() != driver.data_dim() {
        return Err(Error::RegionDimension {
            region: region.dim(),
            vector: driver.data_dim(),
        });
    }
    let mut z = region.center().to_vec();
    driver.warmup(&z)?;

    let better = |a: f64, b: f64| match side {
        BoundSide::Lower => a < b,
        BoundSide::Upper => a > b,
    };
    let mut iterates = Vec::with_capacity(meta.steps + 1);
    let mut best_value = f64::NAN;
    let mut best_z = z.clone();
    let mut warnings = 0usize;
    let mut m = vec![0.0; z.len()];
    let mut v = vec![0.0; z.len()];
    let mut t = 0usize;

    for _ in 0..meta.steps {
        let value = driver.upper_value(&z)?;
        iterates.push(MetaIterate {
            value,
            z: z.clone(),
        });
        if best_value.is_nan() || better(value, best_value) {
            best_value = value;
            best_z = z.clone();
        }
        let hg = driver.hypergrad(&z)?;
        if hg.diagnostics.stationarity_warning {
            warnings += 1;
        }
        // Descend for the lower bound, ascend for the upper one.
        let sign = match side {
            BoundSide::Lower => 1.0,
            BoundSide::Upper => -1.0,
        };
        match meta.optimizer {
            OptimizerKind::Sgd => {
                for (zi, gi) in z.iter_mut().zip(&hg.grad) {
                    *zi -= meta.lr * sign * gi;
                }
            }
            OptimizerKind::Adam => {
                t += 1;
                let bc1 = 1.0 - crate::pinn::ADAM_BETA1.powi(t as i32);
                let bc2 = 1.0 - crate::pinn::ADAM_BETA2.powi(t as i32);
                for i in 0..z.len() {
                    let g = sign * hg.grad[i];
                    m[i] = crate::pinn::ADAM_BETA1 * m[i] + (1.0 - crate::pinn::ADAM_BETA1) * g;
                    v[i] = crate::pinn::ADAM_BETA2 * v[i] + (1.0 - crate::pinn::ADAM_BETA2) * g * g;
                    z[i] -= meta.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + crate::pinn::ADAM_EPS);
                }
            }
        }
        z = region.project(&z)?;
        debug_assert!(region.contains(&z), "projected iterate left the region");
        driver.inner_phase(&z)?;
    }
    // The loop body already trained at the final z, so the value here is the
    // objective at theta_hat(z_{K_o}).
    let final_value = driver.upper_value(&z)?;
    iterates.push(MetaIterate {
        value: final_value,
        z: z.clone(),
    });
    if best_value.is_nan() || better(final_value, best_value) {
        best_value = final_value;
        best_z = z.clone();
    }
    Ok(MetaRun {
        final_value,
        final_z: z,
        best_value,
        best_z,
        iterates,
        stationarity_warnings: warnings,
    })
}

/// The physics-informed meta driver: a warm-started trainer plus the
/// hypergradient engine configured for the run.
pub struct PinnMetaDriver {
    pub trainer: Trainer,
    bilevel: PinnBilevel,
    query: Vec<f64>,
    hypergrad: HypergradConfig,
    trajectory: Trajectory,
    warmup_steps: usize,
    inner_steps: usize,
}

impl PinnMetaDriver {
    pub fn new(
        problem: &PdeProblem,
        dataset: &BoundaryDataset,
        config: &PicPropConfig,
        query: &[f64],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if !problem.contains(query) {
            return Err(Error::QueryOutsideDomain(query.to_vec()));
        }
        let mut pinn = config.pinn;
        pinn.seed = seed;
        let trainer = Trainer::new(problem, dataset, config.spec, pinn, None)?;
        let bilevel = PinnBilevel::new(problem, dataset, config.spec, &pinn, query)?;
        let cap = match config.hypergrad.method {
            HypergradMethod::Reverse => config.hypergrad.k,
            _ => 0,
        };
        Ok(PinnMetaDriver {
            trainer,
            bilevel,
            query: query.to_vec(),
            hypergrad: config.hypergrad,
            trajectory: Trajectory::new(pinn.optimizer, pinn.lr, cap.max(1)),
            warmup_steps: pinn.warmup_steps,
            inner_steps: pinn.inner_steps,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.trainer.params
    }

    fn record_reverse(&self) -> bool {
        matches!(self.hypergrad.method, HypergradMethod::Reverse)
    }

    /// Run steps, recording the trajectory tail when the reverse engine will
    /// need it. Each recorded window belongs to a single boundary
    /// configuration, so the unroll never crosses a meta update.
    fn run_recording(&mut self, steps: usize) -> Result<()> {
        if self.record_reverse() {
            self.trajectory.clear();
            let mut traj = std::mem::replace(
                &mut self.trajectory,
                Trajectory::new(OptimizerKind::Sgd, 0.0, 1),
            );
            let out = self.trainer.run(steps, Some(&mut traj));
            self.trajectory = traj;
            out
        } else {
            self.trainer.run(steps, None)
        }
    }
}

impl MetaDriver for PinnMetaDriver {
    fn data_dim(&self) -> usize {
        self.trainer.objective.data_dim()
    }

    fn warmup(&mut self, z: &[f64]) -> Result<()> {
        self.trainer.set_noisy_values(z)?;
        // The tail of the warmup phase backs the first reverse unroll.
        self.run_recording(self.warmup_steps)
    }

    fn inner_phase(&mut self, z: &[f64]) -> Result<()> {
        self.trainer.set_noisy_values(z)?;
        if self.trainer.config.reset_inner_state {
            self.trainer.reset_moments();
        }
        self.run_recording(self.inner_steps)
    }

    fn upper_value(&mut self, _z: &[f64]) -> Result<f64> {
        self.trainer
            .objective
            .field_value(&self.trainer.params, &self.query)
    }

    fn hypergrad(&mut self, z: &[f64]) -> Result<HypergradResult> {
        let theta = self.trainer.params.as_slice();
        match self.hypergrad.method {
            HypergradMethod::Reverse => {
                hypergrad_reverse(&self.bilevel, &self.trajectory, theta, z, self.hypergrad.k)
            }
            _ => hypergrad_aid(&self.bilevel, theta, z, &self.hypergrad),
        }
    }
}

/// Outcome of a single (query, side) optimization.
#[derive(Debug, Clone)]
pub struct QueryRun {
    pub query: Vec<f64>,
    pub side: BoundSide,
    /// Bound value with the eta padding applied.
    pub bound: f64,
    pub final_z: Vec<f64>,
    /// Inner solution at the final boundary configuration.
    pub params: ParamVector,
    pub run: MetaRun,
}

/// Solve the bound optimization at one query point.
pub fn picprop_query(
    problem: &PdeProblem,
    dataset: &BoundaryDataset,
    region: &ConfidenceRegion,
    config: &PicPropConfig,
    query: &[f64],
    side: BoundSide,
    seed: u64,
) -> Result<QueryRun> {
    let expected = dataset.noisy_indices().len();
    if region.dim() != expected {
        return Err(Error::RegionDimension {
            region: region.dim(),
            vector: expected,
        });
    }
    let mut driver = PinnMetaDriver::new(problem, dataset, config, query, seed)?;
    let meta = MetaOptConfig {
        optimizer: config.meta_optimizer,
        lr: config.meta_lr,
        steps: config.meta_steps,
    };
    let run = optimize_bound(&mut driver, region, side, &meta)?;
    let raw = if config.return_best {
        run.best_value
    } else {
        run.final_value
    };
    let (bound, final_z) = match side {
        BoundSide::Lower => (raw - config.eta, run.final_z.clone()),
        BoundSide::Upper => (raw + config.eta, run.final_z.clone()),
    };
    Ok(QueryRun {
        query: query.to_vec(),
        side,
        bound,
        final_z,
        params: driver.trainer.params.clone(),
        run,
    })
}

/// A failed (query, side) job, kept alongside the partial band.
#[derive(Debug, Clone)]
pub struct QueryFailure {
    pub query_index: usize,
    pub side: BoundSide,
    pub message: String,
}

#[derive(Debug)]
pub struct BandOutcome {
    pub band: CiBand,
    pub failures: Vec<QueryFailure>,
}

/// Run both bounds at every query (queries are independent jobs executed in
/// parallel with per-job derived seeds) and assemble the band. Failures are
/// propagated per query; successful queries are kept.
pub fn picprop_band(
    problem: &PdeProblem,
    dataset: &BoundaryDataset,
    region: &ConfidenceRegion,
    config: &PicPropConfig,
    queries: &[Vec<f64>],
) -> Result<BandOutcome> {
    if queries.is_empty() {
        return Err(Error::Config("query set is empty".into()));
    }
    config.validate()?;
    let jobs: Vec<(usize, BoundSide)> = (0..queries.len())
        .flat_map(|i| [(i, BoundSide::Lower), (i, BoundSide::Upper)])
        .collect();
    let results: Vec<(usize, BoundSide, Result<QueryRun>)> = jobs
        .par_iter()
        .map(|&(qi, side)| {
            // Both sides of a query share a seed, so they descend from the
            // same warmup path and differ only through the meta updates.
            let seed = crate::rng::mix(config.pinn.seed, qi as u64);
            let out = picprop_query(problem, dataset, region, config, &queries[qi], side, seed);
            (qi, side, out)
        })
        .collect();

    let mut lower = vec![f64::NAN; queries.len()];
    let mut upper = vec![f64::NAN; queries.len()];
    let mut trajs: Vec<(Vec<MetaIterate>, Vec<MetaIterate>)> =
        vec![(Vec::new(), Vec::new()); queries.len()];
    let mut failures = Vec::new();
    for (qi, side, res) in results {
        match res {
            Ok(run) => match side {
                BoundSide::Lower => {
                    lower[qi] = run.bound;
                    trajs[qi].0 = run.run.iterates;
                }
                BoundSide::Upper => {
                    upper[qi] = run.bound;
                    trajs[qi].1 = run.run.iterates;
                }
            },
            Err(e) => failures.push(QueryFailure {
                query_index: qi,
                side,
                message: e.to_string(),
            }),
        }
    }

    let mut kept_queries = Vec::new();
    let mut kept_lower = Vec::new();
    let mut kept_upper = Vec::new();
    let mut kept_trajs = Vec::new();
    for qi in 0..queries.len() {
        if lower[qi].is_finite() && upper[qi].is_finite() {
            if lower[qi] > upper[qi] {
                failures.push(QueryFailure {
                    query_index: qi,
                    side: BoundSide::Lower,
                    message: format!(
                        "bound ordering violated: lower {} > upper {}",
                        lower[qi], upper[qi]
                    ),
                });
                continue;
            }
            kept_queries.push(queries[qi].clone());
            kept_lower.push(lower[qi]);
            kept_upper.push(upper[qi]);
            kept_trajs.push(trajs[qi].clone());
        }
    }
    let mut band = CiBand::new(
        kept_queries,
        kept_lower,
        kept_upper,
        config.eta,
        Provenance {
            method: "picprop".into(),
            config_hash: config_hash(config),
            seed: config.pinn.seed,
        },
    )?;
    band.trajectories = Some(kept_trajs);
    Ok(BandOutcome { band, failures })
}

/// FNV-1a over the serialized config: stable across runs of the same build.
pub fn config_hash(config: &PicPropConfig) -> u64 {
    let s = serde_json::to_string(config).unwrap_or_default();
    fnv1a(s.as_bytes())
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Exactly solvable surrogate driver used to validate the meta loop.
pub struct QuadraticMetaDriver {
    pub problem: QuadraticBilevel,
    theta: Vec<f64>,
}

impl QuadraticMetaDriver {
    pub fn new(problem: QuadraticBilevel) -> Self {
        QuadraticMetaDriver {
            theta: vec![0.0; problem.param_dim()],
            problem,
        }
    }
}

impl MetaDriver for QuadraticMetaDriver {
    fn data_dim(&self) -> usize {
        self.problem.data_dim()
    }

    fn warmup(&mut self, z: &[f64]) -> Result<()> {
        self.theta = self.problem.theta_star(z);
        Ok(())
    }

    fn inner_phase(&mut self, z: &[f64]) -> Result<()> {
        // The inner problem is solved exactly.
        self.theta = self.problem.theta_star(z);
        Ok(())
    }

    fn upper_value(&mut self, _z: &[f64]) -> Result<f64> {
        Ok(self
            .problem
            .c
            .iter()
            .zip(&self.theta)
            .map(|(a, b)| a * b)
            .sum())
    }

    fn hypergrad(&mut self, z: &[f64]) -> Result<HypergradResult> {
        hypergrad_aid(
            &self.problem,
            &self.theta,
            z,
            &HypergradConfig::aid_cg(200, 1e-12),
        )
    }
}
