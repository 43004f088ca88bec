//! Amortized bound prediction: instead of re-running the bi-level
//! optimization at every location, collect optimized bound fields at K query
//! points and fit a single two-input meta-model u(x_q, x, indicator) to them.
//! Evaluating the model on its diagonal (x, x, -1|+1) yields the band for the
//! whole domain. The mixing weight `lambda` balances fitting the bounds at
//! the query points against regressing the full solution fields; `lambda = 0`
//! is the plain query-only regression.

use crate::band::{CiBand, Provenance};
use crate::net::{
    build_network, coordinate_leaf, forward, NetworkSpec, ParamLayers, ParamVector,
};
use crate::picprop::{fnv1a, picprop_query, BoundSide, PicPropConfig, QueryRun};
use crate::pinn::{OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::problems::{BoundaryDataset, PdeProblem};
use crate::region::ConfidenceRegion;
use crate::tape::{Tape, Var};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffiConfig {
    /// Loss mixing weight in [0, 1]: 0 fits query bounds only, 1 fits the
    /// full target fields.
    pub lambda: f64,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub train_steps: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eta: f64,
}

impl EffiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("meta-model learning rate must be positive".into()));
        }
        Ok(())
    }
}

impl Default for EffiConfig {
    fn default() -> Self {
        EffiConfig {
            lambda: 1.0,
            hidden_width: 32,
            hidden_depth: 2,
            train_steps: 3000,
            lr: 1e-2,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            eta: 0.0,
        }
    }
}

/// The optimized boundary configurations and solution fields for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryTargets {
    pub query: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    /// Bound values at the query itself (no padding).
    pub bound_lower: f64,
    pub bound_upper: f64,
    /// Optimized solution fields evaluated on the collocation grid.
    pub field_lower: Vec<f64>,
    pub field_upper: Vec<f64>,
}

/// Run the bound optimization at each query (both sides, in parallel) and
/// evaluate the optimized solutions on `grid`. The final inner state of each
/// run provides the target field directly.
pub fn collect_targets(
    problem: &PdeProblem,
    dataset: &BoundaryDataset,
    region: &ConfidenceRegion,
    config: &PicPropConfig,
    queries: &[Vec<f64>],
    grid: &[Vec<f64>],
) -> Result<Vec<QueryTargets>> {
    if queries.is_empty() {
        return Err(Error::Config("query set is empty".into()));
    }
    let jobs: Vec<(usize, BoundSide)> = (0..queries.len())
        .flat_map(|i| [(i, BoundSide::Lower), (i, BoundSide::Upper)])
        .collect();
    type TargetJob = (usize, BoundSide, QueryRun, Vec<f64>);
    let runs: Vec<Result<TargetJob>> = jobs
        .par_iter()
        .map(|&(qi, side)| {
            // Sides share the query seed (and so the warmup path).
            let seed = crate::rng::mix(config.pinn.seed, qi as u64);
            let run = picprop_query(problem, dataset, region, config, &queries[qi], side, seed)?;
            let field = forward(&run.params, grid)?;
            Ok((qi, side, run, field))
        })
        .collect();

    let mut targets: Vec<QueryTargets> = queries
        .iter()
        .map(|q| QueryTargets {
            query: q.clone(),
            z_lower: Vec::new(),
            z_upper: Vec::new(),
            bound_lower: f64::NAN,
            bound_upper: f64::NAN,
            field_lower: Vec::new(),
            field_upper: Vec::new(),
        })
        .collect();
    for res in runs {
        let (qi, side, run, field) = res?;
        let raw = if config.return_best {
            run.run.best_value
        } else {
            run.run.final_value
        };
        match side {
            BoundSide::Lower => {
                targets[qi].z_lower = run.final_z;
                targets[qi].bound_lower = raw;
                targets[qi].field_lower = field;
            }
            BoundSide::Upper => {
                targets[qi].z_upper = run.final_z;
                targets[qi].bound_upper = raw;
                targets[qi].field_upper = field;
            }
        }
    }
    Ok(targets)
}

/// The trained two-input meta-model. The input layout is
/// (query coords, location coords, indicator), indicator in {-1, +1}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaModel {
    pub params: ParamVector,
    pub problem_dim: usize,
}

impl MetaModel {
    pub fn input_dim(problem_dim: usize) -> usize {
        2 * problem_dim + 1
    }

    /// u_psi(x_q, x, indicator); indicator must be exactly +-1.
    pub fn eval(&self, query: &[f64], x: &[f64], indicator: f64) -> Result<f64> {
        if indicator != 1.0 && indicator != -1.0 {
            return Err(Error::Config(format!(
                "indicator must be -1 or +1, got {indicator}"
            )));
        }
        let mut input = Vec::with_capacity(Self::input_dim(self.problem_dim));
        input.extend_from_slice(query);
        input.extend_from_slice(x);
        input.push(indicator);
        Ok(forward(&self.params, &[input])?[0])
    }

    fn eval_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        forward(&self.params, inputs)
    }
}

fn meta_input(query: &[f64], x: &[f64], indicator: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(query.len() + x.len() + 1);
    v.extend_from_slice(query);
    v.extend_from_slice(x);
    v.push(indicator);
    v
}

struct Regression {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

fn diag_regression(targets: &[QueryTargets]) -> Regression {
    let mut inputs = Vec::with_capacity(2 * targets.len());
    let mut values = Vec::with_capacity(2 * targets.len());
    for t in targets {
        inputs.push(meta_input(&t.query, &t.query, -1.0));
        values.push(t.bound_lower);
        inputs.push(meta_input(&t.query, &t.query, 1.0));
        values.push(t.bound_upper);
    }
    Regression {
        inputs,
        targets: values,
    }
}

fn grid_regression(targets: &[QueryTargets], grid: &[Vec<f64>]) -> Regression {
    let mut inputs = Vec::with_capacity(2 * targets.len() * grid.len());
    let mut values = Vec::with_capacity(2 * targets.len() * grid.len());
    for t in targets {
        for (gi, x) in grid.iter().enumerate() {
            inputs.push(meta_input(&t.query, x, -1.0));
            values.push(t.field_lower[gi]);
        }
        for (gi, x) in grid.iter().enumerate() {
            inputs.push(meta_input(&t.query, x, 1.0));
            values.push(t.field_upper[gi]);
        }
    }
    Regression {
        inputs,
        targets: values,
    }
}

/// A regression branch compiled to a replayable graph: weighted mean squared
/// error of the meta-model over fixed inputs.
struct BranchGraph {
    tape: Tape,
    layers: ParamLayers,
    loss: Var,
    grads: Vec<Var>,
}

fn build_branch(spec: &NetworkSpec, params: &ParamVector, reg: &Regression) -> Result<BranchGraph> {
    let mut tape = Tape::new();
    let layers = ParamLayers::push(&mut tape, params);
    let x = coordinate_leaf(&mut tape, spec.input_dim, &reg.inputs)?;
    let u = build_network(&mut tape, spec, &layers, x);
    let tgt = tape.leaf(1, reg.targets.len(), &reg.targets);
    let d = tape.sub(u, tgt);
    let d2 = tape.mul(d, d);
    let loss = tape.mean_all(d2);
    let grads = tape.grad(loss, &layers.vars);
    Ok(BranchGraph {
        tape,
        layers,
        loss,
        grads,
    })
}

impl BranchGraph {
    fn eval(&mut self, params: &ParamVector) -> (f64, Vec<f64>) {
        self.layers.set_values(&mut self.tape, params);
        self.tape.replay();
        (
            self.tape.scalar_val(self.loss),
            self.layers.read_flat(&self.tape, &self.grads),
        )
    }
}

/// Fit the meta-model to the collected targets with the mixed objective:
/// (1 - lambda) x query-point mismatch + lambda x field regression averaged
/// over the collocation grid. Deterministic for a fixed seed.
pub fn train_meta(
    targets: &[QueryTargets],
    grid: &[Vec<f64>],
    cfg: &EffiConfig,
) -> Result<MetaModel> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let problem_dim = targets[0].query.len();
    let spec = NetworkSpec::new(
        MetaModel::input_dim(problem_dim),
        cfg.hidden_width,
        cfg.hidden_depth,
    )?;
    let mut params = ParamVector::init(spec, cfg.seed);
    let mut diag_graph = if cfg.lambda < 1.0 {
        Some(build_branch(&spec, &params, &diag_regression(targets))?)
    } else {
        None
    };
    let mut grid_graph = if cfg.lambda > 0.0 {
        Some(build_branch(&spec, &params, &grid_regression(targets, grid))?)
    } else {
        None
    };

    let dim = params.len();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    for step in 1..=cfg.train_steps {
        let mut grad = vec![0.0; dim];
        let mut loss_val = 0.0;
        if let Some(g) = diag_graph.as_mut() {
            let (l, gs) = g.eval(&params);
            loss_val += (1.0 - cfg.lambda) * l;
            for (acc, gv) in grad.iter_mut().zip(&gs) {
                *acc += (1.0 - cfg.lambda) * gv;
            }
        }
        if let Some(g) = grid_graph.as_mut() {
            let (l, gs) = g.eval(&params);
            loss_val += cfg.lambda * l;
            for (acc, gv) in grad.iter_mut().zip(&gs) {
                *acc += cfg.lambda * gv;
            }
        }
        if !loss_val.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: loss_val,
            });
        }
        let mut theta = params.to_vec();
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= cfg.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
                for i in 0..dim {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    theta[i] -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
        params = ParamVector::new(spec, theta)?;
    }
    Ok(MetaModel {
        params,
        problem_dim,
    })
}

/// The final training loss of a model against targets, for diagnostics and
/// lambda selection.
pub fn meta_loss(
    model: &MetaModel,
    targets: &[QueryTargets],
    grid: &[Vec<f64>],
    lambda: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    if lambda < 1.0 {
        let reg = diag_regression(targets);
        let u = model.eval_batch(&reg.inputs)?;
        let mse: f64 = u
            .iter()
            .zip(&reg.targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / reg.targets.len() as f64;
        loss += (1.0 - lambda) * mse;
    }
    if lambda > 0.0 {
        let reg = grid_regression(targets, grid);
        let u = model.eval_batch(&reg.inputs)?;
        let mse: f64 = u
            .iter()
            .zip(&reg.targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / reg.targets.len() as f64;
        loss += lambda * mse;
    }
    Ok(loss)
}

/// Diagonal evaluation of the meta-model: L(x) = u(x, x, -1) - eta,
/// U(x) = u(x, x, +1) + eta, with crossed pairs swapped and recorded.
pub fn eval_band(model: &MetaModel, queries: &[Vec<f64>], eta: f64) -> Result<CiBand> {
    let mut lower = Vec::with_capacity(queries.len());
    let mut upper = Vec::with_capacity(queries.len());
    let lo_inputs: Vec<Vec<f64>> = queries.iter().map(|q| meta_input(q, q, -1.0)).collect();
    let hi_inputs: Vec<Vec<f64>> = queries.iter().map(|q| meta_input(q, q, 1.0)).collect();
    let lo = model.eval_batch(&lo_inputs)?;
    let hi = model.eval_batch(&hi_inputs)?;
    for i in 0..queries.len() {
        lower.push(lo[i] - eta);
        upper.push(hi[i] + eta);
    }
    CiBand::new_with_swap_guard(
        queries.to_vec(),
        lower,
        upper,
        eta,
        Provenance {
            method: "effipicprop".into(),
            config_hash: fnv1a(
                serde_json::to_string(&model.params.spec)
                    .unwrap_or_default()
                    .as_bytes(),
            ),
            seed: 0,
        },
    )
}

/// (selected lambda, per-candidate validation MSEs)
pub type LambdaSelection = (f64, Vec<(f64, f64)>);

/// Hold out a fraction of the grid, train one model per candidate lambda on
/// the rest, and pick the lambda whose model best predicts the held-out field
/// values. Returns the winner and the per-candidate validation MSEs.
pub fn select_lambda(
    targets: &[QueryTargets],
    grid: &[Vec<f64>],
    cfg: &EffiConfig,
    candidates: &[f64],
    holdout_fraction: f64,
    seed: u64,
) -> Result<LambdaSelection> {
    if candidates.is_empty() {
        return Err(Error::Config("no lambda candidates".into()));
    }
    let n = grid.len();
    let n_val = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng_from_seed(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = (crate::rng::uniform(&mut rng, 0.0, (i + 1) as f64)) as usize;
        order.swap(i, j.min(i));
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_grid: Vec<Vec<f64>> = train_idx.iter().map(|&i| grid[i].clone()).collect();
    let val_grid: Vec<Vec<f64>> = val_idx.iter().map(|&i| grid[i].clone()).collect();
    let slice_fields = |t: &QueryTargets, idx: &[usize]| -> QueryTargets {
        QueryTargets {
            field_lower: idx.iter().map(|&i| t.field_lower[i]).collect(),
            field_upper: idx.iter().map(|&i| t.field_upper[i]).collect(),
            ..t.clone()
        }
    };
    let train_targets: Vec<QueryTargets> =
        targets.iter().map(|t| slice_fields(t, train_idx)).collect();
    let val_targets: Vec<QueryTargets> = targets.iter().map(|t| slice_fields(t, val_idx)).collect();

    let mut scores = Vec::new();
    let mut best = (f64::INFINITY, candidates[0]);
    for &lambda in candidates {
        let mut c = *cfg;
        c.lambda = lambda;
        let model = train_meta(&train_targets, &train_grid, &c)?;
        // Validation score: field regression error on held-out locations.
        let mse = meta_loss(&model, &val_targets, &val_grid, 1.0)?;
        scores.push((lambda, mse));
        if mse < best.0 {
            best = (mse, lambda);
        }
    }
    Ok((best.1, scores))
}
