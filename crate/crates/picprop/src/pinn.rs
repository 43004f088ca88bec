//! Physics-informed training of the field approximator: the residual +
//! boundary-mismatch loss, its parameter-side derivatives, and the inner
//! optimizers (SGD / Adam) with warm-start support.
//!
//! Loss, gradient, Hessian-vector-product and mixed-contraction graphs are
//! built once per objective and re-evaluated in place; collocation batches
//! run through a fixed-size chunk graph with zero-weighted padding lanes.

use crate::net::{
    build_network, coordinate_values, DerivativeGraph, DerivativeRequest, NetworkSpec,
    ParamLayers, ParamVector,
};
use crate::problems::{BoundaryDataset, PdeProblem};
use crate::tape::{Tape, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinnConfig {
    pub w_f: f64,
    pub w_b: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub warmup_steps: usize,
    pub inner_steps: usize,
    pub seed: u64,
    /// Collocation chunk size: bounds tape memory on large batches.
    pub chunk: usize,
    /// Reset the optimizer moments at the start of each inner phase instead
    /// of carrying them across warm starts.
    pub reset_inner_state: bool,
    /// Abort when the loss exceeds this or becomes non-finite.
    pub divergence_threshold: f64,
}

impl Default for PinnConfig {
    fn default() -> Self {
        PinnConfig {
            w_f: 1.0,
            w_b: 1.0,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            warmup_steps: 2000,
            inner_steps: 500,
            seed: 0,
            chunk: 512,
            reset_inner_state: false,
            divergence_threshold: 1e6,
        }
    }
}

impl PinnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.w_f < 0.0 || self.w_b < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.chunk == 0 {
            return Err(Error::Config("chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// The two retrievable parts of the physics-informed loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub force: f64,
    pub boundary: f64,
}

struct ChunkData {
    /// (dim x chunk) coordinates, padded by repeating the first point.
    x: Vec<f64>,
    forcing: Vec<f64>,
    /// Per-lane weight w_f / N_f, zero on padding lanes.
    lane_w: Vec<f64>,
}

/// Loss-and-gradient graph over one collocation chunk (or the boundary set).
struct GradGraph {
    tape: Tape,
    layers: ParamLayers,
    x: Var,
    /// Forcing row for force graphs, observed values row for boundary graphs.
    data: Var,
    lane_w: Var,
    loss: Var,
    grads: Vec<Var>,
}

/// GradGraph extended with the direction leaves and the second adjoint pass.
struct HvpGraph {
    base: GradGraph,
    v_leaves: Vec<Var>,
    hvps: Vec<Var>,
}

/// Boundary graph extended with the data-side adjoint of <grad, v>.
struct MixedGraph {
    base: GradGraph,
    v_leaves: Vec<Var>,
    mixed: Var,
}

/// The loss L(theta, z) for a fixed problem/dataset pair, with the derivative
/// oracles the optimizers and hypergradient engines consume. The boundary
/// values at the noisy components are the data vector z.
pub struct PinnObjective {
    pub problem: PdeProblem,
    pub spec: NetworkSpec,
    pub w_f: f64,
    pub w_b: f64,
    dataset: BoundaryDataset,
    chunk_size: usize,
    chunks: Vec<ChunkData>,
    boundary_x: Vec<f64>,
    boundary_values: Vec<f64>,
    boundary_lane_w: Vec<f64>,
    noisy_lanes: Vec<usize>,
    force_grad: RefCell<Option<GradGraph>>,
    boundary_grad: RefCell<Option<GradGraph>>,
    force_hvp: RefCell<Option<HvpGraph>>,
    boundary_hvp: RefCell<Option<HvpGraph>>,
    mixed: RefCell<Option<MixedGraph>>,
}

impl PinnObjective {
    pub fn new(
        problem: &PdeProblem,
        dataset: &BoundaryDataset,
        w_f: f64,
        w_b: f64,
        chunk: usize,
    ) -> Result<Self> {
        dataset.validate(problem)?;
        let dim = problem.input_dim();
        let n_force = dataset.force_points.len();
        let chunk_size = chunk.max(1).min(n_force);
        let mut chunks = Vec::new();
        for pts in dataset.force_points.chunks(chunk_size) {
            let mut padded: Vec<Vec<f64>> = pts.to_vec();
            while padded.len() < chunk_size {
                padded.push(pts[0].clone());
            }
            let mut lane_w = vec![w_f / n_force as f64; pts.len()];
            lane_w.resize(chunk_size, 0.0);
            chunks.push(ChunkData {
                x: coordinate_values(dim, &padded),
                forcing: padded.iter().map(|p| problem.forcing(p)).collect(),
                lane_w,
            });
        }
        let boundary_pts: Vec<Vec<f64>> =
            dataset.boundary_points.iter().map(|b| b.x.clone()).collect();
        let n_b = boundary_pts.len();
        Ok(PinnObjective {
            problem: *problem,
            spec: NetworkSpec::new(dim, 1, 1)?,
            w_f,
            w_b,
            dataset: dataset.clone(),
            chunk_size,
            chunks,
            boundary_x: coordinate_values(dim, &boundary_pts),
            boundary_values: dataset.boundary_points.iter().map(|b| b.value).collect(),
            boundary_lane_w: vec![w_b / n_b as f64; n_b],
            noisy_lanes: dataset.noisy_indices(),
            force_grad: RefCell::new(None),
            boundary_grad: RefCell::new(None),
            force_hvp: RefCell::new(None),
            boundary_hvp: RefCell::new(None),
            mixed: RefCell::new(None),
        })
    }

    pub fn with_spec(mut self, spec: NetworkSpec) -> Result<Self> {
        if spec.input_dim != self.problem.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.input_dim(),
                got: spec.input_dim,
            });
        }
        self.spec = spec;
        Ok(self)
    }

    pub fn dataset(&self) -> &BoundaryDataset {
        &self.dataset
    }

    pub fn data_dim(&self) -> usize {
        self.noisy_lanes.len()
    }

    pub fn force_count(&self) -> usize {
        self.dataset.force_points.len()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_values.len()
    }

    /// Replace the noisy boundary values (the z vector).
    pub fn set_noisy_values(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.noisy_lanes.len() {
            return Err(Error::RegionDimension {
                region: self.noisy_lanes.len(),
                vector: z.len(),
            });
        }
        for (&lane, &v) in self.noisy_lanes.iter().zip(z) {
            self.boundary_values[lane] = v;
            self.dataset.boundary_points[lane].value = v;
        }
        Ok(())
    }

    pub fn noisy_values(&self) -> Vec<f64> {
        self.noisy_lanes
            .iter()
            .map(|&l| self.boundary_values[l])
            .collect()
    }

    /// Weighted squared-residual chunk graph: SumAll(lane_w .* r^2).
    fn build_force_graph(&self, params: &ParamVector) -> Result<GradGraph> {
        let mut tape = Tape::new();
        let layers = ParamLayers::push(&mut tape, params);
        let chunk = &self.chunks[0];
        let x = tape.leaf(self.spec.input_dim, self.chunk_size, &chunk.x);
        let forcing = tape.leaf(1, self.chunk_size, &chunk.forcing);
        let lane_w = tape.leaf(1, self.chunk_size, &chunk.lane_w);
        let u = build_network(&mut tape, &self.spec, &layers, x);
        let req = DerivativeRequest::new(self.problem.residual_orders(), self.spec.input_dim)?;
        let dg = DerivativeGraph::build(&mut tape, u, x, &req)?;
        let derivs: Vec<Var> = self
            .problem
            .residual_orders()
            .iter()
            .map(|idx| dg.var_for(idx).expect("derivative built"))
            .collect();
        let r = self.problem.residual_graph(&mut tape, u, &derivs, forcing);
        let r2 = tape.mul(r, r);
        let weighted = tape.mul(r2, lane_w);
        let loss = tape.sum_all(weighted);
        let grads = tape.grad(loss, &layers.vars);
        Ok(GradGraph {
            tape,
            layers,
            x,
            data: forcing,
            lane_w,
            loss,
            grads,
        })
    }

    /// Weighted boundary-mismatch graph: SumAll(lane_w .* (u - values)^2).
    fn build_boundary_graph(&self, params: &ParamVector) -> Result<GradGraph> {
        let mut tape = Tape::new();
        let layers = ParamLayers::push(&mut tape, params);
        let n_b = self.boundary_count();
        let x = tape.leaf(self.spec.input_dim, n_b, &self.boundary_x);
        let values = tape.leaf(1, n_b, &self.boundary_values);
        let lane_w = tape.leaf(1, n_b, &self.boundary_lane_w);
        let u = build_network(&mut tape, &self.spec, &layers, x);
        let d = tape.sub(u, values);
        let d2 = tape.mul(d, d);
        let weighted = tape.mul(d2, lane_w);
        let loss = tape.sum_all(weighted);
        let grads = tape.grad(loss, &layers.vars);
        Ok(GradGraph {
            tape,
            layers,
            x,
            data: values,
            lane_w,
            loss,
            grads,
        })
    }

    fn extend_to_hvp(&self, mut base: GradGraph, params: &ParamVector) -> Result<HvpGraph> {
        let zero = vec![0.0; params.len()];
        let v_leaves = base.layers.push_like(&mut base.tape, &zero)?;
        let gv = base.layers.dot(&mut base.tape, &base.grads, &v_leaves);
        let hvps = base.tape.grad(gv, &base.layers.vars);
        Ok(HvpGraph {
            base,
            v_leaves,
            hvps,
        })
    }

    fn extend_to_mixed(&self, mut base: GradGraph, params: &ParamVector) -> Result<MixedGraph> {
        let zero = vec![0.0; params.len()];
        let v_leaves = base.layers.push_like(&mut base.tape, &zero)?;
        let gv = base.layers.dot(&mut base.tape, &base.grads, &v_leaves);
        let mixed = base.tape.grad(gv, &[base.data])[0];
        Ok(MixedGraph {
            base,
            v_leaves,
            mixed,
        })
    }

    /// Point the graph at a chunk / parameter assignment and re-evaluate.
    fn replay_force(&self, g: &mut GradGraph, params: &ParamVector, chunk: &ChunkData) {
        g.layers.set_values(&mut g.tape, params);
        g.tape.set_leaf(g.x, &chunk.x);
        g.tape.set_leaf(g.data, &chunk.forcing);
        g.tape.set_leaf(g.lane_w, &chunk.lane_w);
        g.tape.replay();
    }

    fn replay_boundary(&self, g: &mut GradGraph, params: &ParamVector) {
        g.layers.set_values(&mut g.tape, params);
        g.tape.set_leaf(g.data, &self.boundary_values);
        g.tape.replay();
    }

    fn check_finite(&self, force: f64, boundary: f64) -> Result<LossParts> {
        let total = force + boundary;
        if !total.is_finite() {
            let (term, value) = if force.is_finite() {
                ("boundary", boundary)
            } else {
                ("force", force)
            };
            return Err(Error::NonFiniteLoss { term, value });
        }
        Ok(LossParts {
            total,
            force,
            boundary,
        })
    }

    /// Loss value split into its parts.
    pub fn loss(&self, theta: &ParamVector) -> Result<LossParts> {
        // Reuses the gradient graphs; the adjoint lanes are just recomputed
        // alongside. Training always needs them anyway.
        Ok(self.loss_and_grad(theta)?.0)
    }

    /// Loss and its exact parameter gradient.
    pub fn loss_and_grad(&self, theta: &ParamVector) -> Result<(LossParts, Vec<f64>)> {
        let mut grad = vec![0.0; theta.len()];
        let mut force = 0.0;
        {
            let mut slot = self.force_grad.borrow_mut();
            if slot.is_none() {
                *slot = Some(self.build_force_graph(theta)?);
            }
            let g = slot.as_mut().unwrap();
            for chunk in &self.chunks {
                self.replay_force(g, theta, chunk);
                force += g.tape.scalar_val(g.loss);
                let flat = g.layers.read_flat(&g.tape, &g.grads);
                for (acc, v) in grad.iter_mut().zip(&flat) {
                    *acc += v;
                }
            }
        }
        let boundary = {
            let mut slot = self.boundary_grad.borrow_mut();
            if slot.is_none() {
                *slot = Some(self.build_boundary_graph(theta)?);
            }
            let g = slot.as_mut().unwrap();
            self.replay_boundary(g, theta);
            let flat = g.layers.read_flat(&g.tape, &g.grads);
            for (acc, v) in grad.iter_mut().zip(&flat) {
                *acc += v;
            }
            g.tape.scalar_val(g.loss)
        };
        Ok((self.check_finite(force, boundary)?, grad))
    }

    /// Hessian-vector product of the full loss.
    pub fn hvp(&self, theta: &ParamVector, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != theta.len() {
            return Err(Error::LayoutMismatch {
                expected: theta.len(),
                got: v.len(),
            });
        }
        let mut out = vec![0.0; theta.len()];
        {
            let mut slot = self.force_hvp.borrow_mut();
            if slot.is_none() {
                let base = self.build_force_graph(theta)?;
                *slot = Some(self.extend_to_hvp(base, theta)?);
            }
            let h = slot.as_mut().unwrap();
            for chunk in &self.chunks {
                h.base.layers.set_values(&mut h.base.tape, theta);
                h.base.tape.set_leaf(h.base.x, &chunk.x);
                h.base.tape.set_leaf(h.base.data, &chunk.forcing);
                h.base.tape.set_leaf(h.base.lane_w, &chunk.lane_w);
                h.base.layers.set_like(&mut h.base.tape, &h.v_leaves, v);
                h.base.tape.replay();
                let flat = h.base.layers.read_flat(&h.base.tape, &h.hvps);
                for (acc, x) in out.iter_mut().zip(&flat) {
                    *acc += x;
                }
            }
        }
        {
            let mut slot = self.boundary_hvp.borrow_mut();
            if slot.is_none() {
                let base = self.build_boundary_graph(theta)?;
                *slot = Some(self.extend_to_hvp(base, theta)?);
            }
            let h = slot.as_mut().unwrap();
            h.base.layers.set_values(&mut h.base.tape, theta);
            h.base.tape.set_leaf(h.base.data, &self.boundary_values);
            h.base.layers.set_like(&mut h.base.tape, &h.v_leaves, v);
            h.base.tape.replay();
            let flat = h.base.layers.read_flat(&h.base.tape, &h.hvps);
            for (acc, x) in out.iter_mut().zip(&flat) {
                *acc += x;
            }
        }
        Ok(out)
    }

    /// v' (d^2 L / dz dtheta) over the noisy components. Only the boundary
    /// term depends on z, so the force term never enters.
    pub fn mixed_vjp(&self, theta: &ParamVector, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != theta.len() {
            return Err(Error::LayoutMismatch {
                expected: theta.len(),
                got: v.len(),
            });
        }
        let mut slot = self.mixed.borrow_mut();
        if slot.is_none() {
            let base = self.build_boundary_graph(theta)?;
            *slot = Some(self.extend_to_mixed(base, theta)?);
        }
        let m = slot.as_mut().unwrap();
        m.base.layers.set_values(&mut m.base.tape, theta);
        m.base.tape.set_leaf(m.base.data, &self.boundary_values);
        m.base.layers.set_like(&mut m.base.tape, &m.v_leaves, v);
        m.base.tape.replay();
        let lanes = m.base.tape.val(m.mixed);
        Ok(self.noisy_lanes.iter().map(|&l| lanes[l]).collect())
    }

    /// Field value at a single point.
    pub fn field_value(&self, theta: &ParamVector, x: &[f64]) -> Result<f64> {
        Ok(crate::net::forward(theta, &[x.to_vec()])?[0])
    }

    /// Gradient of the field value at a point with respect to the parameters.
    pub fn field_grad(&self, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        crate::net::loss_gradient(theta, |tape, layers| {
            let xl = crate::net::coordinate_leaf(tape, self.spec.input_dim, &[x.to_vec()])?;
            let u = build_network(tape, &self.spec, layers, xl);
            Ok(tape.sum_all(u))
        })
        .map(|(_, g)| g)
    }
}

/// The physics-informed loss of a dataset/problem pair, split into parts.
pub fn pinn_loss(
    params: &ParamVector,
    dataset: &BoundaryDataset,
    problem: &PdeProblem,
    config: &PinnConfig,
) -> Result<LossParts> {
    let obj = PinnObjective::new(problem, dataset, config.w_f, config.w_b, config.chunk)?
        .with_spec(params.spec)?;
    obj.loss(params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One recorded inner step, enough to replay the update rule backwards.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub theta_before: Vec<f64>,
    pub grad: Vec<f64>,
    pub m_after: Vec<f64>,
    pub v_after: Vec<f64>,
    /// Adam step index used for bias correction at this step.
    pub t: usize,
}

/// Ring buffer of the last `cap` inner steps plus the update rule metadata.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub cap: usize,
    pub steps: std::collections::VecDeque<StepRecord>,
}

impl Trajectory {
    pub fn new(optimizer: OptimizerKind, lr: f64, cap: usize) -> Self {
        Trajectory {
            optimizer,
            lr,
            cap,
            steps: std::collections::VecDeque::new(),
        }
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    fn push(&mut self, rec: StepRecord) {
        if self.steps.len() == self.cap {
            self.steps.pop_front();
        }
        self.steps.push_back(rec);
    }
}

/// Stateful trainer: owns the objective, the parameters and the optimizer
/// moments, so bi-level loops can warm-start inner phases and update the
/// boundary values in place.
pub struct Trainer {
    pub objective: PinnObjective,
    pub params: ParamVector,
    pub config: PinnConfig,
    pub adam: AdamState,
    pub history: Vec<f64>,
    steps_taken: usize,
}

impl Trainer {
    pub fn new(
        problem: &PdeProblem,
        dataset: &BoundaryDataset,
        spec: NetworkSpec,
        config: PinnConfig,
        init: Option<ParamVector>,
    ) -> Result<Self> {
        config.validate()?;
        let objective = PinnObjective::new(problem, dataset, config.w_f, config.w_b, config.chunk)?
            .with_spec(spec)?;
        let params = match init {
            Some(p) => {
                if p.spec != spec {
                    return Err(Error::LayoutMismatch {
                        expected: spec.param_count(),
                        got: p.len(),
                    });
                }
                p
            }
            None => ParamVector::init(spec, config.seed),
        };
        let dim = params.len();
        Ok(Trainer {
            objective,
            params,
            config,
            adam: AdamState::new(dim),
            history: Vec::new(),
            steps_taken: 0,
        })
    }

    pub fn reset_moments(&mut self) {
        self.adam = AdamState::new(self.params.len());
    }

    pub fn set_noisy_values(&mut self, z: &[f64]) -> Result<()> {
        self.objective.set_noisy_values(z)
    }

    /// Run `steps` optimizer steps, optionally recording the trajectory for
    /// reverse-mode hypergradients. Divergence aborts with the step index.
    pub fn run(&mut self, steps: usize, mut record: Option<&mut Trajectory>) -> Result<()> {
        let dim = self.params.len();
        for _ in 0..steps {
            let (loss, grad) = self.objective.loss_and_grad(&self.params)?;
            if !loss.total.is_finite() || loss.total > self.config.divergence_threshold {
                return Err(Error::Divergence {
                    step: self.steps_taken,
                    loss: loss.total,
                });
            }
            self.history.push(loss.total);
            let theta_before: Vec<f64> = self.params.to_vec();
            let mut theta = theta_before.clone();
            match self.config.optimizer {
                OptimizerKind::Sgd => {
                    for i in 0..dim {
                        theta[i] -= self.config.lr * grad[i];
                    }
                    if let Some(tr) = record.as_deref_mut() {
                        tr.push(StepRecord {
                            theta_before,
                            grad: grad.clone(),
                            m_after: Vec::new(),
                            v_after: Vec::new(),
                            t: self.steps_taken + 1,
                        });
                    }
                }
                OptimizerKind::Adam => {
                    self.adam.t += 1;
                    let t = self.adam.t;
                    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
                    for i in 0..dim {
                        self.adam.m[i] = ADAM_BETA1 * self.adam.m[i] + (1.0 - ADAM_BETA1) * grad[i];
                        self.adam.v[i] =
                            ADAM_BETA2 * self.adam.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                        let mhat = self.adam.m[i] / bc1;
                        let vhat = self.adam.v[i] / bc2;
                        theta[i] -= self.config.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                    if let Some(tr) = record.as_deref_mut() {
                        tr.push(StepRecord {
                            theta_before,
                            grad: grad.clone(),
                            m_after: self.adam.m.clone(),
                            v_after: self.adam.v.clone(),
                            t,
                        });
                    }
                }
            }
            self.params = ParamVector::new(self.params.spec, theta)?;
            self.steps_taken += 1;
        }
        Ok(())
    }
}

/// Checkpoint bundle: everything needed to reload and re-evaluate a trained
/// approximator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamVector,
    pub config: PinnConfig,
    pub final_loss: LossParts,
}

/// Result of a standalone training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ParamVector,
    pub final_loss: LossParts,
    pub history: Vec<f64>,
}

/// Standard training: minimize the physics-informed loss for
/// `config.warmup_steps` steps, optionally warm-starting from `init`.
pub fn train(
    dataset: &BoundaryDataset,
    problem: &PdeProblem,
    spec: NetworkSpec,
    config: &PinnConfig,
    init: Option<ParamVector>,
) -> Result<TrainResult> {
    let mut trainer = Trainer::new(problem, dataset, spec, *config, init)?;
    trainer.run(config.warmup_steps, None)?;
    let final_loss = trainer.objective.loss(&trainer.params)?;
    Ok(TrainResult {
        params: trainer.params,
        final_loss,
        history: trainer.history,
    })
}

/// Moving average used for the monotone-trend diagnostics.
pub fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    if history.is_empty() || window == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(history.len());
    let mut acc = 0.0;
    for i in 0..history.len() {
        acc += history[i];
        if i >= window {
            acc -= history[i - window];
        }
        let n = (i + 1).min(window);
        out.push(acc / n as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{sample_dataset, DatasetSpec, NoiseSpec};

    fn pedagogical_setup(force: usize) -> (PdeProblem, BoundaryDataset) {
        let problem = PdeProblem::pedagogical();
        let spec = DatasetSpec {
            force_count: force,
            boundary_count: 2,
            bc_count: 0,
            observations: 1,
            noise: NoiseSpec::None,
        };
        let data = sample_dataset(&problem, &spec, 0).unwrap();
        (problem, data.dataset)
    }

    #[test]
    fn zero_field_loss_equals_mean_squared_forcing() {
        let (problem, dataset) = pedagogical_setup(64);
        let spec = NetworkSpec::new(1, 8, 2).unwrap();
        let params = ParamVector::zeros(spec);
        let cfg = PinnConfig::default();
        let loss = pinn_loss(&params, &dataset, &problem, &cfg).unwrap();
        // Clean boundary values are zero, so the boundary term vanishes and
        // the force term is the mean of f(x)^2 over the collocation grid.
        let expect: f64 = dataset
            .force_points
            .iter()
            .map(|p| problem.forcing(p).powi(2))
            .sum::<f64>()
            / dataset.force_points.len() as f64;
        assert!((loss.boundary).abs() < 1e-30);
        assert!((loss.force - expect).abs() < 1e-10);
        assert!((loss.total - loss.force - loss.boundary).abs() < 1e-15);
    }

    #[test]
    fn chunked_loss_matches_unchunked() {
        let (problem, dataset) = pedagogical_setup(50);
        let spec = NetworkSpec::new(1, 6, 2).unwrap();
        let params = ParamVector::init(spec, 3);
        let whole = PinnObjective::new(&problem, &dataset, 1.0, 1.0, 64)
            .unwrap()
            .with_spec(spec)
            .unwrap();
        let chunked = PinnObjective::new(&problem, &dataset, 1.0, 1.0, 16)
            .unwrap()
            .with_spec(spec)
            .unwrap();
        let (la, ga) = whole.loss_and_grad(&params).unwrap();
        let (lb, gb) = chunked.loss_and_grad(&params).unwrap();
        assert!((la.total - lb.total).abs() < 1e-12);
        for (a, b) in ga.iter().zip(&gb) {
            assert!((a - b).abs() < 1e-12);
        }
        let v: Vec<f64> = (0..params.len()).map(|i| (i as f64 * 0.01).sin()).collect();
        let ha = whole.hvp(&params, &v).unwrap();
        let hb = chunked.hvp(&params, &v).unwrap();
        for (a, b) in ha.iter().zip(&hb) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn vanishing_weights_zero_the_loss() {
        let (problem, dataset) = pedagogical_setup(16);
        let spec = NetworkSpec::new(1, 4, 1).unwrap();
        let params = ParamVector::zeros(spec);
        let cfg = PinnConfig {
            w_f: 0.0,
            ..PinnConfig::default()
        };
        let loss = pinn_loss(&params, &dataset, &problem, &cfg).unwrap();
        // w_f = 0 and boundary values matched exactly by the zero field.
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (problem, mut dataset) = pedagogical_setup(8);
        dataset.force_points.clear();
        let spec = NetworkSpec::new(1, 4, 1).unwrap();
        let cfg = PinnConfig::default();
        let err = pinn_loss(&ParamVector::zeros(spec), &dataset, &problem, &cfg).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (problem, dataset) = pedagogical_setup(12);
        let spec = NetworkSpec::new(1, 6, 2).unwrap();
        let params = ParamVector::init(spec, 3);
        let obj = PinnObjective::new(&problem, &dataset, 1.0, 1.0, 64)
            .unwrap()
            .with_spec(spec)
            .unwrap();
        let (_, grad) = obj.loss_and_grad(&params).unwrap();
        let h = 1e-5;
        let mut rng = crate::rng::rng_from_seed(1);
        for _ in 0..10 {
            let i = (crate::rng::uniform(&mut rng, 0.0, params.len() as f64)) as usize;
            let mut vp = params.to_vec();
            vp[i] += h;
            let lp = obj
                .loss(&ParamVector::new(spec, vp.clone()).unwrap())
                .unwrap()
                .total;
            vp[i] -= 2.0 * h;
            let lm = obj.loss(&ParamVector::new(spec, vp).unwrap()).unwrap().total;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() / fd.abs().max(1e-8) < 1e-4,
                "i={i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn hvp_matches_gradient_finite_difference() {
        let (problem, dataset) = pedagogical_setup(10);
        let spec = NetworkSpec::new(1, 5, 2).unwrap();
        let params = ParamVector::init(spec, 4);
        let obj = PinnObjective::new(&problem, &dataset, 1.0, 1.0, 64)
            .unwrap()
            .with_spec(spec)
            .unwrap();
        let mut rng = crate::rng::rng_from_seed(2);
        let v: Vec<f64> = (0..params.len())
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let hv = obj.hvp(&params, &v).unwrap();
        let h = 1e-5;
        let plus: Vec<f64> = params
            .as_slice()
            .iter()
            .zip(&v)
            .map(|(p, vi)| p + h * vi)
            .collect();
        let minus: Vec<f64> = params
            .as_slice()
            .iter()
            .zip(&v)
            .map(|(p, vi)| p - h * vi)
            .collect();
        let gp = obj
            .loss_and_grad(&ParamVector::new(spec, plus).unwrap())
            .unwrap()
            .1;
        let gm = obj
            .loss_and_grad(&ParamVector::new(spec, minus).unwrap())
            .unwrap()
            .1;
        let scale: f64 = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..hv.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!(
                (hv[i] - fd).abs() / scale.max(1e-9) < 2e-4,
                "{} vs {fd}",
                hv[i]
            );
        }
    }

    #[test]
    fn mixed_vjp_matches_finite_difference() {
        let (problem, dataset) = pedagogical_setup(10);
        let spec = NetworkSpec::new(1, 5, 2).unwrap();
        let params = ParamVector::init(spec, 5);
        let mut obj = PinnObjective::new(&problem, &dataset, 1.0, 0.7, 64)
            .unwrap()
            .with_spec(spec)
            .unwrap();
        let mut rng = crate::rng::rng_from_seed(3);
        let v: Vec<f64> = (0..params.len())
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let m = obj.mixed_vjp(&params, &v).unwrap();
        assert_eq!(m.len(), 2);
        let h = 1e-4;
        let z0 = obj.noisy_values();
        for j in 0..z0.len() {
            let mut zp = z0.clone();
            zp[j] += h;
            obj.set_noisy_values(&zp).unwrap();
            let gp = obj.loss_and_grad(&params).unwrap().1;
            zp[j] -= 2.0 * h;
            obj.set_noisy_values(&zp).unwrap();
            let gm = obj.loss_and_grad(&params).unwrap().1;
            obj.set_noisy_values(&z0).unwrap();
            let fd: f64 = gp
                .iter()
                .zip(&gm)
                .zip(&v)
                .map(|((a, b), vi)| (a - b) / (2.0 * h) * vi)
                .sum();
            assert!(
                (m[j] - fd).abs() / fd.abs().max(1e-9) < 1e-3,
                "z{j}: {} vs {fd}",
                m[j]
            );
        }
    }

    #[test]
    fn mixed_vjp_single_boundary_point_analytic() {
        // With only x = -1 noisy, the lane reads -(2 w_b / N_b) v' grad u(x_b).
        let (problem, dataset) = pedagogical_setup(8);
        let spec = NetworkSpec::new(1, 5, 2).unwrap();
        let params = ParamVector::init(spec, 6);
        let w_b = 0.7;
        let mut dataset = dataset;
        dataset.boundary_points[1].noisy = false;
        let obj = PinnObjective::new(&problem, &dataset, 0.0, w_b, 64)
            .unwrap()
            .with_spec(spec)
            .unwrap();
        let mut rng = crate::rng::rng_from_seed(7);
        let v: Vec<f64> = (0..params.len())
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let m = obj.mixed_vjp(&params, &v).unwrap();
        assert_eq!(m.len(), 1);
        let gu = obj.field_grad(&params, &[-1.0]).unwrap();
        let vg: f64 = v.iter().zip(&gu).map(|(a, b)| a * b).sum();
        let expect = -(2.0 * w_b / 2.0) * vg;
        assert!(
            (m[0] - expect).abs() < 1e-12 * expect.abs().max(1.0),
            "{} vs {expect}",
            m[0]
        );
    }

    #[test]
    fn zero_steps_is_identity() {
        let (problem, dataset) = pedagogical_setup(8);
        let spec = NetworkSpec::new(1, 4, 1).unwrap();
        let init = ParamVector::init(spec, 11);
        let cfg = PinnConfig {
            warmup_steps: 0,
            ..PinnConfig::default()
        };
        let out = train(&dataset, &problem, spec, &cfg, Some(init.clone())).unwrap();
        assert_eq!(out.params.as_slice(), init.as_slice());
    }

    #[test]
    fn training_is_deterministic() {
        let (problem, dataset) = pedagogical_setup(32);
        let spec = NetworkSpec::new(1, 8, 2).unwrap();
        let cfg = PinnConfig {
            warmup_steps: 50,
            seed: 21,
            ..PinnConfig::default()
        };
        let a = train(&dataset, &problem, spec, &cfg, None).unwrap();
        let b = train(&dataset, &problem, spec, &cfg, None).unwrap();
        for (x, y) in a.params.as_slice().iter().zip(b.params.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn smoothed_training_loss_trends_down() {
        let (problem, dataset) = pedagogical_setup(64);
        let spec = NetworkSpec::new(1, 16, 2).unwrap();
        let cfg = PinnConfig {
            warmup_steps: 400,
            seed: 2,
            ..PinnConfig::default()
        };
        let out = train(&dataset, &problem, spec, &cfg, None).unwrap();
        let s = smoothed(&out.history, 50);
        assert!(
            s.last().unwrap() < &(s[49] * 0.9),
            "no progress: {} -> {}",
            s[49],
            s.last().unwrap()
        );
    }

    #[test]
    fn smoothed_loss_monotone_on_all_problems() {
        use crate::problems::ProblemKind;
        for (kind, spec, force, steps) in [
            (ProblemKind::Pedagogical, NetworkSpec::new(1, 16, 2).unwrap(), 64, 300),
            (ProblemKind::Poisson2d, NetworkSpec::new(2, 12, 3).unwrap(), 100, 300),
            (ProblemKind::Burgers, NetworkSpec::new(2, 12, 3).unwrap(), 200, 300),
        ] {
            let problem = PdeProblem { kind, linear_advection: false };
            let data = sample_dataset(
                &problem,
                &DatasetSpec {
                    force_count: force,
                    boundary_count: 8,
                    bc_count: 6,
                    observations: 1,
                    noise: NoiseSpec::None,
                },
                1,
            )
            .unwrap();
            let cfg = PinnConfig {
                warmup_steps: steps,
                seed: 4,
                ..PinnConfig::default()
            };
            let out = train(&data.dataset, &problem, spec, &cfg, None).unwrap();
            let s = smoothed(&out.history, 50);
            for w in s.windows(2).skip(49) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-9),
                    "{}: smoothed loss increased {} -> {}",
                    problem.name(),
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn divergent_lr_reports_step() {
        let (problem, dataset) = pedagogical_setup(32);
        let spec = NetworkSpec::new(1, 8, 2).unwrap();
        let cfg = PinnConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 50.0,
            warmup_steps: 400,
            ..PinnConfig::default()
        };
        let err = train(&dataset, &problem, spec, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = NetworkSpec::new(1, 4, 1).unwrap();
        let ck = Checkpoint {
            spec,
            params: ParamVector::init(spec, 1),
            config: PinnConfig::default(),
            final_loss: LossParts {
                total: 0.5,
                force: 0.3,
                boundary: 0.2,
            },
        };
        let s = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&s).unwrap();
        assert_eq!(back.params.as_slice(), ck.params.as_slice());
    }
}
