//! The differentiable scalar-field approximator: a tanh MLP with exact
//! spatial derivatives up to second order and the parameter-side capabilities
//! (gradients, Hessian-vector products, mixed parameter/data contractions)
//! every solver in the crate builds on.
//!
//! All operations are pure functions of (parameters, inputs); mutation happens
//! only by constructing new [`ParamVector`]s, so values can be shared freely
//! across threads.

use crate::tape::{Tape, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Architecture of the MLP approximator: `hidden_width x hidden_depth`
/// hidden layers with tanh, one linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub activation: Activation,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_width: usize, hidden_depth: usize) -> Result<Self> {
        if !(1..=5).contains(&input_dim) {
            return Err(Error::InvalidSpec(format!(
                "input_dim must be in 1..=5, got {input_dim}"
            )));
        }
        if hidden_width < 1 || hidden_depth < 1 {
            return Err(Error::InvalidSpec(
                "hidden_width and hidden_depth must be at least 1".into(),
            ));
        }
        Ok(NetworkSpec {
            input_dim,
            hidden_width,
            hidden_depth,
            activation: Activation::Tanh,
            output_dim: 1,
        })
    }

    /// (fan_in, fan_out) per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::with_capacity(self.hidden_depth + 1);
        spans.push((self.input_dim, self.hidden_width));
        for _ in 1..self.hidden_depth {
            spans.push((self.hidden_width, self.hidden_width));
        }
        spans.push((self.hidden_width, self.output_dim));
        spans
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Flat parameter vector with the layout implied by its [`NetworkSpec`]:
/// per layer, weights in row-major `[out][in]` order followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub spec: NetworkSpec,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::LayoutMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!("non-finite parameter {bad}")));
        }
        Ok(ParamVector { spec, values })
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count()],
            spec,
        }
    }

    /// Symmetric uniform fan-in initialization: every weight and bias of a
    /// layer with fan-in `f` is drawn from U(-1/sqrt(f), 1/sqrt(f)).
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = crate::rng::rng_from_seed(seed);
        let mut values = Vec::with_capacity(spec.param_count());
        for (fan_in, fan_out) in spec.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in + 1) * fan_out {
                values.push(crate::rng::uniform(&mut rng, -bound, bound));
            }
        }
        ParamVector { spec, values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Index ranges of (weights, biases) per layer in the flat vector.
    pub fn layout(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        layout_of(&self.spec)
    }
}

fn layout_of(spec: &NetworkSpec) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let mut spans = Vec::new();
    let mut at = 0;
    for (fan_in, fan_out) in spec.layers() {
        let w = at..at + fan_in * fan_out;
        at += fan_in * fan_out;
        let b = at..at + fan_out;
        at += fan_out;
        spans.push((w, b));
    }
    spans
}

/// Multi-indices of requested spatial derivatives, e.g. `[1,0]` for d/dx and
/// `[0,2]` for d2/dy2 on a two-dimensional input. Total order at most 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivativeRequest {
    pub orders: Vec<Vec<usize>>,
}

impl DerivativeRequest {
    pub fn new(orders: Vec<Vec<usize>>, input_dim: usize) -> Result<Self> {
        for idx in &orders {
            if idx.len() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    got: idx.len(),
                });
            }
            let total: usize = idx.iter().sum();
            if total > 2 {
                return Err(Error::UnsupportedOrder { order: total });
            }
        }
        Ok(DerivativeRequest { orders })
    }
}

/// Per-layer parameter leaves (weight matrix and bias column per layer) tied
/// to a network spec; the bridge between flat vectors and tape graphs.
pub struct ParamLayers {
    pub spec: NetworkSpec,
    /// [W0, b0, W1, b1, ...]
    pub vars: Vec<Var>,
}

impl ParamLayers {
    pub fn push(tape: &mut Tape, params: &ParamVector) -> Self {
        let mut vars = Vec::with_capacity(2 * (params.spec.hidden_depth + 1));
        for ((wr, br), (fan_in, fan_out)) in params.layout().iter().zip(params.spec.layers()) {
            vars.push(tape.leaf(fan_out, fan_in, &params.as_slice()[wr.clone()]));
            vars.push(tape.leaf(fan_out, 1, &params.as_slice()[br.clone()]));
        }
        ParamLayers {
            spec: params.spec,
            vars,
        }
    }

    /// Overwrite the leaf values with a new flat parameter vector.
    pub fn set_values(&self, tape: &mut Tape, params: &ParamVector) {
        debug_assert_eq!(params.spec, self.spec);
        for (i, (wr, br)) in params.layout().iter().enumerate() {
            tape.set_leaf(self.vars[2 * i], &params.as_slice()[wr.clone()]);
            tape.set_leaf(self.vars[2 * i + 1], &params.as_slice()[br.clone()]);
        }
    }

    /// Push leaves shaped like the layers holding the flat vector `v`
    /// (for inner products against gradients).
    pub fn push_like(&self, tape: &mut Tape, v: &[f64]) -> Result<Vec<Var>> {
        if v.len() != self.spec.param_count() {
            return Err(Error::LayoutMismatch {
                expected: self.spec.param_count(),
                got: v.len(),
            });
        }
        let mut vars = Vec::with_capacity(self.vars.len());
        for ((wr, br), (fan_in, fan_out)) in layout_of(&self.spec).iter().zip(self.spec.layers()) {
            vars.push(tape.leaf(fan_out, fan_in, &v[wr.clone()]));
            vars.push(tape.leaf(fan_out, 1, &v[br.clone()]));
        }
        Ok(vars)
    }

    /// Update leaves previously created by [`Self::push_like`].
    pub fn set_like(&self, tape: &mut Tape, vars: &[Var], v: &[f64]) {
        for (i, (wr, br)) in layout_of(&self.spec).iter().enumerate() {
            tape.set_leaf(vars[2 * i], &v[wr.clone()]);
            tape.set_leaf(vars[2 * i + 1], &v[br.clone()]);
        }
    }

    /// Flatten per-layer matrices back into the parameter layout.
    pub fn read_flat(&self, tape: &Tape, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.param_count());
        for pair in vars.chunks(2) {
            out.extend_from_slice(tape.val(pair[0]));
            out.extend_from_slice(tape.val(pair[1]));
        }
        out
    }

    /// Inner product of per-layer gradient matrices with leaves of the same
    /// shapes, as a 1x1 node.
    pub fn dot(&self, tape: &mut Tape, grads: &[Var], vs: &[Var]) -> Var {
        let mut acc = tape.scalar(0.0);
        for (&g, &v) in grads.iter().zip(vs) {
            let p = tape.mul(g, v);
            let s = tape.sum_all(p);
            acc = tape.add(acc, s);
        }
        acc
    }
}

/// Coordinate batch as a (input_dim x n) matrix leaf.
pub fn coordinate_leaf(tape: &mut Tape, input_dim: usize, points: &[Vec<f64>]) -> Result<Var> {
    let n = points.len();
    let mut vals = vec![0.0; input_dim * n];
    for (j, p) in points.iter().enumerate() {
        if p.len() != input_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                got: p.len(),
            });
        }
        for (d, &c) in p.iter().enumerate() {
            vals[d * n + j] = c;
        }
    }
    Ok(tape.leaf(input_dim, n, &vals))
}

/// Row-major (dim x n) coordinate values for feeding [`Tape::set_leaf`].
pub fn coordinate_values(input_dim: usize, points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut vals = vec![0.0; input_dim * n];
    for (j, p) in points.iter().enumerate() {
        for (d, &c) in p.iter().enumerate() {
            vals[d * n + j] = c;
        }
    }
    vals
}

/// Build the MLP graph: x is (input_dim x n), result is (1 x n).
pub fn build_network(tape: &mut Tape, spec: &NetworkSpec, layers: &ParamLayers, x: Var) -> Var {
    debug_assert_eq!(tape.shape(x).0, spec.input_dim);
    let mut h = x;
    let n_layers = spec.hidden_depth + 1;
    for li in 0..n_layers {
        let w = layers.vars[2 * li];
        let b = layers.vars[2 * li + 1];
        let wh = tape.gemm(w, h);
        let z = tape.add(wh, b);
        h = if li + 1 == n_layers { z } else { tape.tanh(z) };
    }
    h
}

/// Evaluate the field at a batch of points.
pub fn forward(params: &ParamVector, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let layers = ParamLayers::push(&mut tape, params);
    let x = coordinate_leaf(&mut tape, params.spec.input_dim, points)?;
    let u = build_network(&mut tape, &params.spec, &layers, x);
    Ok(tape.val(u).to_vec())
}

/// Derivative variables shared across multi-indices: the full first-order
/// gradient matrix is computed once and second-order rows reuse it.
pub struct DerivativeGraph {
    entries: Vec<(Vec<usize>, Var)>,
}

impl DerivativeGraph {
    pub fn build(tape: &mut Tape, u: Var, x: Var, req: &DerivativeRequest) -> Result<Self> {
        let (dims, _) = tape.shape(x);
        let needs_any = req.orders.iter().any(|idx| idx.iter().sum::<usize>() >= 1);
        let g1 = if needs_any {
            let s = tape.sum_all(u);
            Some(tape.grad(s, &[x])[0])
        } else {
            None
        };
        // Cache the second-order pass per leading dimension.
        let mut second: Vec<Option<Var>> = vec![None; dims];
        let mut entries = Vec::new();
        for idx in &req.orders {
            let total: usize = idx.iter().sum();
            let var = match total {
                0 => u,
                1 => {
                    let d = idx.iter().position(|&o| o >= 1).unwrap();
                    let g1 = g1.expect("first-order prepared");
                    tape.select_row(g1, d)
                }
                2 => {
                    let mut it = idx.iter().enumerate().filter(|(_, &o)| o >= 1);
                    let (i, &oi) = it.next().unwrap();
                    let j = if oi == 2 {
                        i
                    } else {
                        it.next().map(|(j, _)| j).unwrap()
                    };
                    let g1 = g1.expect("first-order prepared");
                    let g2 = match second[i] {
                        Some(g2) => g2,
                        None => {
                            let gi = tape.select_row(g1, i);
                            let si = tape.sum_all(gi);
                            let g2 = tape.grad(si, &[x])[0];
                            second[i] = Some(g2);
                            g2
                        }
                    };
                    tape.select_row(g2, j)
                }
                order => return Err(Error::UnsupportedOrder { order }),
            };
            entries.push((idx.clone(), var));
        }
        Ok(DerivativeGraph { entries })
    }

    pub fn var_for(&self, idx: &[usize]) -> Option<Var> {
        self.entries
            .iter()
            .find(|(i, _)| i.as_slice() == idx)
            .map(|(_, v)| *v)
    }
}

/// Exact spatial derivatives of the network function at a batch of points,
/// one output vector per requested multi-index.
pub fn spatial_derivatives(
    params: &ParamVector,
    points: &[Vec<f64>],
    req: &DerivativeRequest,
) -> Result<Vec<Vec<f64>>> {
    let req = DerivativeRequest::new(req.orders.clone(), params.spec.input_dim)?;
    if points.is_empty() {
        return Ok(vec![Vec::new(); req.orders.len()]);
    }
    let mut tape = Tape::new();
    let layers = ParamLayers::push(&mut tape, params);
    let x = coordinate_leaf(&mut tape, params.spec.input_dim, points)?;
    let u = build_network(&mut tape, &params.spec, &layers, x);
    let dg = DerivativeGraph::build(&mut tape, u, x, &req)?;
    Ok(req
        .orders
        .iter()
        .map(|idx| tape.val(dg.var_for(idx).expect("built above")).to_vec())
        .collect())
}

/// Gradient of a scalar loss with respect to all parameters. The loss graph
/// is built by `build` from the per-layer parameter leaves and may contain
/// spatial derivatives of the network; the gradient is exact through the
/// whole chain.
pub fn loss_gradient<F>(params: &ParamVector, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &ParamLayers) -> Result<Var>,
{
    let mut tape = Tape::new();
    let layers = ParamLayers::push(&mut tape, params);
    let loss = build(&mut tape, &layers)?;
    let value = tape.scalar_val(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "loss",
            value,
        });
    }
    let gs = tape.grad(loss, &layers.vars);
    Ok((value, layers.read_flat(&tape, &gs)))
}

/// (Hessian of the loss) * v without materializing the Hessian: differentiate
/// the inner product of the gradient with the fixed direction `v`.
pub fn hessian_vector_product<F>(params: &ParamVector, build: F, v: &[f64]) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape, &ParamLayers) -> Result<Var>,
{
    if v.len() != params.len() {
        return Err(Error::LayoutMismatch {
            expected: params.len(),
            got: v.len(),
        });
    }
    let mut tape = Tape::new();
    let layers = ParamLayers::push(&mut tape, params);
    let loss = build(&mut tape, &layers)?;
    let value = tape.scalar_val(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "loss",
            value,
        });
    }
    let gs = tape.grad(loss, &layers.vars);
    let vs = layers.push_like(&mut tape, v)?;
    let gv = layers.dot(&mut tape, &gs, &vs);
    let hs = tape.grad(gv, &layers.vars);
    Ok(layers.read_flat(&tape, &hs))
}

/// v^T (d^2 L / d data d params): contraction of the mixed second derivative
/// of a loss depending on both parameters and data values. Returns the
/// data-shaped vector and a flag set when the loss does not depend on the
/// data at all.
pub fn mixed_second_product<F>(
    params: &ParamVector,
    data_values: &[f64],
    build: F,
    v: &[f64],
) -> Result<(Vec<f64>, bool)>
where
    F: FnOnce(&mut Tape, &ParamLayers, &[Var]) -> Result<Var>,
{
    if v.len() != params.len() {
        return Err(Error::LayoutMismatch {
            expected: params.len(),
            got: v.len(),
        });
    }
    let mut tape = Tape::new();
    let layers = ParamLayers::push(&mut tape, params);
    let zv: Vec<Var> = data_values.iter().map(|&z| tape.scalar(z)).collect();
    let loss = build(&mut tape, &layers, &zv)?;
    let value = tape.scalar_val(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "loss",
            value,
        });
    }
    let detached = !tape.depends_on(loss, &zv);
    let gs = tape.grad(loss, &layers.vars);
    let vs = layers.push_like(&mut tape, v)?;
    let gv = layers.dot(&mut tape, &gs, &vs);
    let ms = tape.grad(gv, &zv);
    let out: Vec<f64> = ms.iter().map(|&m| tape.scalar_val(m)).collect();
    Ok((out, detached))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    fn sum_of_squares(tape: &mut Tape, layers: &ParamLayers) -> Var {
        let mut acc = tape.scalar(0.0);
        for &v in &layers.vars {
            let sq = tape.mul(v, v);
            let s = tape.sum_all(sq);
            acc = tape.add(acc, s);
        }
        tape.scale(acc, 0.5)
    }

    #[test]
    fn zero_parameters_give_zero_field() {
        let spec = NetworkSpec::new(1, 32, 2).unwrap();
        let params = ParamVector::zeros(spec);
        let u = forward(&params, &pts(&[-1.0, -0.3, 0.0, 0.7, 1.0])).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_activation_vanishes_at_origin() {
        // Single hidden unit with identity-like weights: u(0) = w2 tanh(0) = 0.
        let spec = NetworkSpec::new(1, 1, 1).unwrap();
        let params = ParamVector::new(spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let u = forward(&params, &pts(&[0.0])).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = NetworkSpec::new(1, 32, 2).unwrap();
        let params = ParamVector::init(spec, 7);
        let a = forward(&params, &pts(&[0.25])).unwrap();
        let b = forward(&params, &pts(&[0.25])).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = NetworkSpec::new(2, 4, 1).unwrap();
        let params = ParamVector::init(spec, 1);
        let err = forward(&params, &[vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn near_affine_network_has_tiny_second_derivative() {
        // Tiny first-layer weights keep tanh in its linear regime.
        let spec = NetworkSpec::new(1, 1, 1).unwrap();
        let params = ParamVector::new(spec, vec![1e-3, 0.0, 1.0, 0.0]).unwrap();
        let req = DerivativeRequest::new(vec![vec![2]], 1).unwrap();
        let uxx = spatial_derivatives(&params, &pts(&[0.3, -0.8]), &req).unwrap();
        assert!(uxx[0].iter().all(|&v| v.abs() < 1e-6), "{:?}", uxx[0]);
    }

    #[test]
    fn order_above_two_rejected() {
        let err = DerivativeRequest::new(vec![vec![3]], 1).unwrap_err();
        assert!(matches!(err, Error::UnsupportedOrder { order: 3 }));
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let spec = NetworkSpec::new(1, 32, 2).unwrap();
        let params = ParamVector::init(spec, 42);
        let h = 1e-4;
        let xs = [-0.9, -0.4, 0.05, 0.33, 0.81];
        let req = DerivativeRequest::new(vec![vec![1]], 1).unwrap();
        let ux = spatial_derivatives(&params, &pts(&xs), &req).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let up = forward(&params, &pts(&[x + h])).unwrap()[0];
            let um = forward(&params, &pts(&[x - h])).unwrap()[0];
            let fd = (up - um) / (2.0 * h);
            assert!(
                rel_err(ux[0][i], fd) < 1e-5,
                "x={x}: autodiff {} vs fd {fd}",
                ux[0][i]
            );
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let spec = NetworkSpec::new(1, 32, 2).unwrap();
        let params = ParamVector::init(spec, 43);
        let h = 1e-4;
        let xs = [-0.7, -0.1, 0.52];
        let req = DerivativeRequest::new(vec![vec![2]], 1).unwrap();
        let uxx = spatial_derivatives(&params, &pts(&xs), &req).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let up = forward(&params, &pts(&[x + h])).unwrap()[0];
            let u0 = forward(&params, &pts(&[x])).unwrap()[0];
            let um = forward(&params, &pts(&[x - h])).unwrap()[0];
            let fd = (up - 2.0 * u0 + um) / (h * h);
            assert!(
                rel_err(uxx[0][i], fd) < 1e-3,
                "x={x}: autodiff {} vs fd {fd}",
                uxx[0][i]
            );
        }
    }

    #[test]
    fn mixed_second_derivative_matches_finite_differences() {
        let spec = NetworkSpec::new(2, 8, 2).unwrap();
        let params = ParamVector::init(spec, 5);
        let points = vec![vec![0.3, -0.4], vec![-0.6, 0.2]];
        let req = DerivativeRequest::new(vec![vec![1, 1]], 2).unwrap();
        let uxy = spatial_derivatives(&params, &points, &req).unwrap();
        let h = 1e-4;
        let ry = DerivativeRequest::new(vec![vec![0, 1]], 2).unwrap();
        for (i, p) in points.iter().enumerate() {
            let plus = spatial_derivatives(&params, &[vec![p[0] + h, p[1]]], &ry).unwrap()[0][0];
            let minus = spatial_derivatives(&params, &[vec![p[0] - h, p[1]]], &ry).unwrap()[0][0];
            let fd = (plus - minus) / (2.0 * h);
            assert!(rel_err(uxy[0][i], fd) < 1e-4);
        }
    }

    #[test]
    fn quadratic_loss_gradient_is_identity() {
        let spec = NetworkSpec::new(1, 4, 1).unwrap();
        let params = ParamVector::init(spec, 9);
        let (value, grad) = loss_gradient(&params, |tape, layers| Ok(sum_of_squares(tape, layers)))
            .unwrap();
        let expect: f64 = params.as_slice().iter().map(|p| 0.5 * p * p).sum();
        assert!((value - expect).abs() < 1e-14);
        for (g, p) in grad.iter().zip(params.as_slice()) {
            assert!((g - p).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_through_spatial_derivatives_matches_fd() {
        // Loss with a second spatial derivative inside; check d loss / d theta
        // against central differences over random coordinates.
        let spec = NetworkSpec::new(1, 8, 2).unwrap();
        let params = ParamVector::init(spec, 77);
        let xs: Vec<Vec<f64>> = pts(&[-0.5, 0.1, 0.6]);
        let build = |tape: &mut Tape, layers: &ParamLayers| {
            let x = coordinate_leaf(tape, 1, &xs)?;
            let u = build_network(tape, &spec, layers, x);
            let req = DerivativeRequest::new(vec![vec![1], vec![2]], 1)?;
            let dg = DerivativeGraph::build(tape, u, x, &req)?;
            let ux = dg.var_for(&[1]).unwrap();
            let uxx = dg.var_for(&[2]).unwrap();
            let uux = tape.mul(u, ux);
            let r = tape.sub(uxx, uux);
            let r2 = tape.mul(r, r);
            Ok(tape.mean_all(r2))
        };
        let (_, grad) = loss_gradient(&params, build).unwrap();

        let mut rng = crate::rng::rng_from_seed(3);
        let h = 1e-5;
        for _ in 0..10 {
            let idx = (crate::rng::uniform(&mut rng, 0.0, params.len() as f64)) as usize;
            let mut vp = params.to_vec();
            vp[idx] += h;
            let pp = ParamVector::new(spec, vp.clone()).unwrap();
            vp[idx] -= 2.0 * h;
            let pm = ParamVector::new(spec, vp).unwrap();
            let lp = loss_gradient(&pp, build).unwrap().0;
            let lm = loss_gradient(&pm, build).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                rel_err(grad[idx], fd) < 1e-4,
                "coord {idx}: {} vs {fd}",
                grad[idx]
            );
        }
    }

    #[test]
    fn non_finite_loss_reports_term() {
        let spec = NetworkSpec::new(1, 2, 1).unwrap();
        let params = ParamVector::init(spec, 1);
        let err = loss_gradient(&params, |tape, _| Ok(tape.scalar(f64::NAN))).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }

    #[test]
    fn hvp_identity_case() {
        // loss = ||theta||^2 / 2 has identity Hessian: HVP(v) = v.
        let spec = NetworkSpec::new(1, 2, 1).unwrap();
        let params = ParamVector::init(spec, 2);
        let dim = params.len();
        let v: Vec<f64> = (0..dim).map(|i| 0.1 * i as f64 - 0.2).collect();
        let hv = hessian_vector_product(
            &params,
            |tape, layers| Ok(sum_of_squares(tape, layers)),
            &v,
        )
        .unwrap();
        for (h, vi) in hv.iter().zip(&v) {
            assert!((h - vi).abs() < 1e-14);
        }
    }

    #[test]
    fn hvp_diagonal_case() {
        // loss = theta' diag(d) theta / 2 with d from the parameter index.
        let spec = NetworkSpec::new(1, 2, 1).unwrap();
        let params = ParamVector::init(spec, 2);
        let dim = params.len();
        let v: Vec<f64> = (0..dim).map(|i| 0.3 * i as f64 - 0.4).collect();
        let d: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64).collect();
        let dc = d.clone();
        let hv = hessian_vector_product(
            &params,
            move |tape, layers| {
                let dvs = layers.push_like(tape, &dc)?;
                let mut acc = tape.scalar(0.0);
                for (&p, &dv) in layers.vars.iter().zip(&dvs) {
                    let pp = tape.mul(p, p);
                    let w = tape.mul(pp, dv);
                    let s = tape.sum_all(w);
                    acc = tape.add(acc, s);
                }
                Ok(tape.scale(acc, 0.5))
            },
            &v,
        )
        .unwrap();
        for ((h, vi), di) in hv.iter().zip(&v).zip(&d) {
            assert!((h - vi * di).abs() < 1e-12);
        }
    }

    #[test]
    fn hvp_matches_directional_finite_difference_of_gradient() {
        let spec = NetworkSpec::new(1, 6, 2).unwrap();
        let params = ParamVector::init(spec, 21);
        let xs = pts(&[-0.4, 0.2, 0.7]);
        let build = |tape: &mut Tape, layers: &ParamLayers| {
            let x = coordinate_leaf(tape, 1, &xs)?;
            let u = build_network(tape, &spec, layers, x);
            let u2 = tape.mul(u, u);
            Ok(tape.mean_all(u2))
        };
        let mut rng = crate::rng::rng_from_seed(8);
        let v: Vec<f64> = (0..params.len())
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let hv = hessian_vector_product(&params, build, &v).unwrap();

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
        let gp = loss_gradient(&ParamVector::new(spec, plus).unwrap(), build)
            .unwrap()
            .1;
        let gm = loss_gradient(&ParamVector::new(spec, minus).unwrap(), build)
            .unwrap()
            .1;
        let norm: f64 = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..hv.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!(
                (hv[i] - fd).abs() / norm.max(1e-9) < 1e-4,
                "i={i}: {} vs {fd}",
                hv[i]
            );
        }
    }

    #[test]
    fn hvp_is_symmetric_bilinear_form() {
        let spec = NetworkSpec::new(1, 6, 2).unwrap();
        let params = ParamVector::init(spec, 31);
        let xs = pts(&[-0.3, 0.4]);
        let build = |tape: &mut Tape, layers: &ParamLayers| {
            let x = coordinate_leaf(tape, 1, &xs)?;
            let u = build_network(tape, &spec, layers, x);
            let req = DerivativeRequest::new(vec![vec![1]], 1)?;
            let dg = DerivativeGraph::build(tape, u, x, &req)?;
            let ux = dg.var_for(&[1]).unwrap();
            let s = tape.mul(ux, ux);
            Ok(tape.mean_all(s))
        };
        let mut rng = crate::rng::rng_from_seed(15);
        for _ in 0..3 {
            let v: Vec<f64> = (0..params.len())
                .map(|_| crate::rng::standard_normal(&mut rng))
                .collect();
            let w: Vec<f64> = (0..params.len())
                .map(|_| crate::rng::standard_normal(&mut rng))
                .collect();
            let hv = hessian_vector_product(&params, build, &v).unwrap();
            let hw = hessian_vector_product(&params, build, &w).unwrap();
            let vhw: f64 = v.iter().zip(&hw).map(|(a, b)| a * b).sum();
            let whv: f64 = w.iter().zip(&hv).map(|(a, b)| a * b).sum();
            assert!(
                (vhw - whv).abs() / vhw.abs().max(1e-12) < 1e-8,
                "{vhw} vs {whv}"
            );
        }
    }

    #[test]
    fn hvp_layout_mismatch_rejected() {
        let spec = NetworkSpec::new(1, 2, 1).unwrap();
        let params = ParamVector::init(spec, 1);
        let err = hessian_vector_product(&params, |tape, _| Ok(tape.scalar(0.0)), &[1.0])
            .unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch { .. }));
    }

    #[test]
    fn mixed_product_boundary_term_analytic() {
        // L = w_b * (u(x_b) - z)^2 with one boundary point:
        // v' dz dtheta L = -2 w_b * v' grad_theta u(x_b).
        let spec = NetworkSpec::new(1, 5, 2).unwrap();
        let params = ParamVector::init(spec, 12);
        let w_b = 0.7;
        let x_b = -1.0;
        let z0 = 0.05;
        let mut rng = crate::rng::rng_from_seed(4);
        let v: Vec<f64> = (0..params.len())
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();

        let (m, detached) = mixed_second_product(
            &params,
            &[z0],
            |tape, layers, zv| {
                let x = coordinate_leaf(tape, 1, &[vec![x_b]])?;
                let u = build_network(tape, &spec, layers, x);
                let d = tape.sub(u, zv[0]);
                let d2 = tape.mul(d, d);
                let s = tape.sum_all(d2);
                Ok(tape.scale(s, w_b))
            },
            &v,
        )
        .unwrap();
        assert!(!detached);

        let (_, gu) = loss_gradient(&params, |tape, layers| {
            let x = coordinate_leaf(tape, 1, &[vec![x_b]])?;
            let u = build_network(tape, &spec, layers, x);
            Ok(tape.sum_all(u))
        })
        .unwrap();
        let vdotg: f64 = v.iter().zip(&gu).map(|(a, b)| a * b).sum();
        let expect = -2.0 * w_b * vdotg;
        assert!(
            (m[0] - expect).abs() / expect.abs().max(1e-12) < 1e-10,
            "{} vs {expect}",
            m[0]
        );
    }

    #[test]
    fn mixed_product_matches_finite_difference() {
        let spec = NetworkSpec::new(1, 5, 2).unwrap();
        let params = ParamVector::init(spec, 13);
        let zs = [0.1, -0.2];
        let xb = [vec![-1.0], vec![1.0]];
        let build = |tape: &mut Tape, layers: &ParamLayers, zv: &[Var]| {
            let x = coordinate_leaf(tape, 1, &xb)?;
            let u = build_network(tape, &spec, layers, x);
            let mut acc = tape.scalar(0.0);
            for (i, z) in zv.iter().enumerate() {
                let ui = tape.select_row(u, 0);
                let col = tape.leaf(1, 2, &[1.0 - i as f64, i as f64]);
                let picked = tape.mul(ui, col);
                let uval = tape.sum_all(picked);
                let d = tape.sub(uval, *z);
                let d2 = tape.mul(d, d);
                acc = tape.add(acc, d2);
            }
            Ok(tape.scale(acc, 0.5))
        };
        let mut rng = crate::rng::rng_from_seed(6);
        let v: Vec<f64> = (0..params.len())
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let (m, _) = mixed_second_product(&params, &zs, build, &v).unwrap();

        // Finite-difference the parameter gradient along each data value.
        let h = 1e-4;
        for j in 0..zs.len() {
            let mut zp = zs.to_vec();
            zp[j] += h;
            let mut zm = zs.to_vec();
            zm[j] -= h;
            let gp = {
                let zp = zp.clone();
                loss_gradient(&params, |tape, layers| {
                    let zv: Vec<Var> = zp.iter().map(|&z| tape.scalar(z)).collect();
                    build(tape, layers, &zv)
                })
                .unwrap()
                .1
            };
            let gm = {
                let zm = zm.clone();
                loss_gradient(&params, |tape, layers| {
                    let zv: Vec<Var> = zm.iter().map(|&z| tape.scalar(z)).collect();
                    build(tape, layers, &zv)
                })
                .unwrap()
                .1
            };
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
    fn mixed_product_without_data_dependence_warns() {
        let spec = NetworkSpec::new(1, 2, 1).unwrap();
        let params = ParamVector::init(spec, 3);
        let v = vec![1.0; params.len()];
        let (m, detached) = mixed_second_product(
            &params,
            &[0.5],
            |tape, layers, _zv| Ok(sum_of_squares(tape, layers)),
            &v,
        )
        .unwrap();
        assert!(detached);
        assert!(m.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn param_vector_json_round_trip_is_lossless() {
        let spec = NetworkSpec::new(2, 20, 8).unwrap();
        let params = ParamVector::init(spec, 99);
        let json = serde_json::to_string(&params).unwrap();
        let back: ParamVector = serde_json::from_str(&json).unwrap();
        assert_eq!(params.spec, back.spec);
        for (a, b) in params.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = NetworkSpec::new(1, 32, 2).unwrap();
        assert_eq!(spec.param_count(), 32 + 32 + 32 * 32 + 32 + 32 + 1);
        let spec = NetworkSpec::new(2, 20, 8).unwrap();
        assert_eq!(
            spec.param_count(),
            (2 * 20 + 20) + 7 * (20 * 20 + 20) + (20 + 1)
        );
    }

    #[test]
    fn layer_round_trip_through_leaves() {
        let spec = NetworkSpec::new(2, 6, 3).unwrap();
        let params = ParamVector::init(spec, 4);
        let mut tape = Tape::new();
        let layers = ParamLayers::push(&mut tape, &params);
        let flat = layers.read_flat(&tape, &layers.vars);
        assert_eq!(flat, params.to_vec());
    }
}
