//! Benchmark PDE problems: residual operators, domains, exact solutions where
//! known, and reproducible samplers for collocation and boundary data.
//!
//! Problems are code-registered (no symbolic PDE parsing) and immutable;
//! samplers take explicit seeds.

use crate::rng::{self, SeededRng};
use crate::tape::{Tape, Var};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const BURGERS_VISCOSITY: f64 = 0.01 / PI;

/// Pointwise residual of u_xx - u^2 u_x = f(x) on [-1, 1] with
/// f(x) = -pi^2 sin(pi x) - pi cos(pi x) sin^2(pi x); exact solution sin(pi x).
pub fn pedagogical_residual(u: f64, u_x: f64, u_xx: f64, x: f64) -> f64 {
    u_xx - u * u * u_x - pedagogical_forcing(x)
}

pub fn pedagogical_forcing(x: f64) -> f64 {
    let s = (PI * x).sin();
    let c = (PI * x).cos();
    -PI * PI * s - PI * c * s * s
}

/// Pointwise residual of u_xx + u_yy = f(x, y) with f matching the exact
/// solution e^x + e^y on [-1, 1]^2.
pub fn poisson2d_residual(u_xx: f64, u_yy: f64, x: f64, y: f64) -> f64 {
    u_xx + u_yy - poisson2d_forcing(x, y)
}

pub fn poisson2d_forcing(x: f64, y: f64) -> f64 {
    x.exp() + y.exp()
}

/// Pointwise residual of the viscous Burgers equation
/// u_t + u u_x - nu u_xx = 0  (nu = 0.01/pi) on [-1,1] x [0,1].
/// `linear_advection` swaps the nonlinear transport term for a plain u_x.
pub fn burgers_residual(u: f64, u_x: f64, u_xx: f64, u_t: f64, linear_advection: bool) -> f64 {
    let transport = if linear_advection { u_x } else { u * u_x };
    u_t + transport - BURGERS_VISCOSITY * u_xx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Pedagogical,
    Poisson2d,
    Burgers,
}

/// A registered PDE problem: residual and boundary operators, domain bounds,
/// exact solution when known, forcing, and sampler layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub kind: ProblemKind,
    /// Reproduce the linear-transport variant of the Burgers equation.
    pub linear_advection: bool,
}

impl PdeProblem {
    pub fn pedagogical() -> Self {
        PdeProblem {
            kind: ProblemKind::Pedagogical,
            linear_advection: false,
        }
    }

    pub fn poisson2d() -> Self {
        PdeProblem {
            kind: ProblemKind::Poisson2d,
            linear_advection: false,
        }
    }

    pub fn burgers() -> Self {
        PdeProblem {
            kind: ProblemKind::Burgers,
            linear_advection: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::Pedagogical => "pedagogical",
            ProblemKind::Poisson2d => "poisson2d",
            ProblemKind::Burgers => "burgers",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            ProblemKind::Pedagogical => 1,
            _ => 2,
        }
    }

    /// Hyper-rectangle bounds of the domain closure.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match self.kind {
            ProblemKind::Pedagogical => vec![(-1.0, 1.0)],
            ProblemKind::Poisson2d => vec![(-1.0, 1.0), (-1.0, 1.0)],
            ProblemKind::Burgers => vec![(-1.0, 1.0), (0.0, 1.0)],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let dom = self.domain();
        x.len() == dom.len()
            && x.iter()
                .zip(&dom)
                .all(|(&c, &(lo, hi))| c >= lo - 1e-12 && c <= hi + 1e-12)
    }

    pub fn exact_solution(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            ProblemKind::Pedagogical => Some((PI * x[0]).sin()),
            ProblemKind::Poisson2d => Some(x[0].exp() + x[1].exp()),
            ProblemKind::Burgers => None,
        }
    }

    pub fn forcing(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Pedagogical => pedagogical_forcing(x[0]),
            ProblemKind::Poisson2d => poisson2d_forcing(x[0], x[1]),
            ProblemKind::Burgers => 0.0,
        }
    }

    /// Derivative multi-indices the residual consumes, in the order expected
    /// by [`PdeProblem::residual`] and [`PdeProblem::residual_graph`].
    pub fn residual_orders(&self) -> Vec<Vec<usize>> {
        match self.kind {
            ProblemKind::Pedagogical => vec![vec![1], vec![2]],
            ProblemKind::Poisson2d => vec![vec![2, 0], vec![0, 2]],
            ProblemKind::Burgers => vec![vec![1, 0], vec![2, 0], vec![0, 1]],
        }
    }

    /// Numeric residual from the field value and its derivatives (ordered as
    /// in [`Self::residual_orders`]) at a point.
    pub fn residual(&self, u: f64, derivs: &[f64], x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Pedagogical => pedagogical_residual(u, derivs[0], derivs[1], x[0]),
            ProblemKind::Poisson2d => poisson2d_residual(derivs[0], derivs[1], x[0], x[1]),
            ProblemKind::Burgers => {
                burgers_residual(u, derivs[0], derivs[1], derivs[2], self.linear_advection)
            }
        }
    }

    /// Residual as a tape node; `forcing` is the precomputed forcing values at
    /// the batch points (constant with respect to differentiation).
    pub fn residual_graph(&self, tape: &mut Tape, u: Var, derivs: &[Var], forcing: Var) -> Var {
        match self.kind {
            ProblemKind::Pedagogical => {
                let (ux, uxx) = (derivs[0], derivs[1]);
                let uu = tape.mul(u, u);
                let uuux = tape.mul(uu, ux);
                let lhs = tape.sub(uxx, uuux);
                tape.sub(lhs, forcing)
            }
            ProblemKind::Poisson2d => {
                let lap = tape.add(derivs[0], derivs[1]);
                tape.sub(lap, forcing)
            }
            ProblemKind::Burgers => {
                let (ux, uxx, ut) = (derivs[0], derivs[1], derivs[2]);
                let transport = if self.linear_advection {
                    ux
                } else {
                    tape.mul(u, ux)
                };
                let adv = tape.add(ut, transport);
                let visc = tape.scale(uxx, BURGERS_VISCOSITY);
                tape.sub(adv, visc)
            }
        }
    }

    /// Interior collocation points: equispaced for the one-dimensional
    /// problem, grid-mesh (cell midpoints) for the two-dimensional ones.
    pub fn collocation(&self, total: usize) -> Vec<Vec<f64>> {
        assert!(total >= 1);
        match self.kind {
            ProblemKind::Pedagogical => (0..total)
                .map(|i| vec![-1.0 + 2.0 * (i as f64 + 0.5) / total as f64])
                .collect(),
            ProblemKind::Poisson2d => {
                let side = (total as f64).sqrt().round().max(1.0) as usize;
                let mut pts = Vec::with_capacity(side * side);
                for i in 0..side {
                    for j in 0..side {
                        pts.push(vec![
                            -1.0 + 2.0 * (i as f64 + 0.5) / side as f64,
                            -1.0 + 2.0 * (j as f64 + 0.5) / side as f64,
                        ]);
                    }
                }
                pts
            }
            ProblemKind::Burgers => {
                // x spans twice the length of t; keep cells roughly square.
                let nx = ((total as f64) * 2.0).sqrt().round().max(1.0) as usize;
                let nt = total.div_ceil(nx);
                let mut pts = Vec::with_capacity(nx * nt);
                for i in 0..nx {
                    for j in 0..nt {
                        pts.push(vec![
                            -1.0 + 2.0 * (i as f64 + 0.5) / nx as f64,
                            (j as f64 + 0.5) / nt as f64,
                        ]);
                    }
                }
                pts
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointRole {
    Force,
    Boundary,
    Initial,
}

/// A boundary or initial-condition data point. `noisy` marks the components
/// the confidence region lives over; clean points keep their value fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub value: f64,
    pub role: PointRole,
    pub noisy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Uniform { half_width: f64 },
    None,
}

/// Noisy data locations and values: the object confidence regions live over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDataset {
    pub force_points: Vec<Vec<f64>>,
    pub boundary_points: Vec<BoundaryPoint>,
    pub noise_meta: Option<NoiseSpec>,
}

impl BoundaryDataset {
    pub fn validate(&self, problem: &PdeProblem) -> Result<()> {
        if self.force_points.is_empty() || self.boundary_points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dom = problem.domain();
        for p in &self.boundary_points {
            let on_boundary = match problem.kind {
                ProblemKind::Pedagogical => p.x[0].abs() == 1.0,
                ProblemKind::Poisson2d => p.x.iter().any(|c| c.abs() == 1.0),
                ProblemKind::Burgers => match p.role {
                    PointRole::Initial => p.x[1] == 0.0,
                    _ => p.x[0].abs() == 1.0,
                },
            };
            if !on_boundary {
                return Err(Error::Config(format!(
                    "boundary point {:?} is not on the boundary",
                    p.x
                )));
            }
            if p.x.len() != dom.len() {
                return Err(Error::DimensionMismatch {
                    expected: dom.len(),
                    got: p.x.len(),
                });
            }
        }
        Ok(())
    }

    /// Indices of the noisy components, in dataset order.
    pub fn noisy_indices(&self) -> Vec<usize> {
        self.boundary_points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.noisy)
            .map(|(i, _)| i)
            .collect()
    }

    /// Current values at the noisy components: the vector the confidence
    /// region constrains.
    pub fn noisy_values(&self) -> Vec<f64> {
        self.boundary_points
            .iter()
            .filter(|p| p.noisy)
            .map(|p| p.value)
            .collect()
    }

    /// Copy of the dataset with the noisy components replaced by `z`.
    pub fn with_noisy_values(&self, z: &[f64]) -> Result<Self> {
        let idx = self.noisy_indices();
        if z.len() != idx.len() {
            return Err(Error::RegionDimension {
                region: idx.len(),
                vector: z.len(),
            });
        }
        let mut out = self.clone();
        for (&i, &v) in idx.iter().zip(z) {
            out.boundary_points[i].value = v;
        }
        Ok(out)
    }

    /// CSV with columns `coordinates..., value, role`.
    pub fn to_csv(&self, dim: usize) -> String {
        let mut s = String::new();
        let coords: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
        s.push_str(&coords.join(","));
        s.push_str(",value,role\n");
        for p in &self.force_points {
            for c in p {
                s.push_str(&format!("{c:.17e},"));
            }
            s.push_str(",force\n");
        }
        for p in &self.boundary_points {
            for c in &p.x {
                s.push_str(&format!("{c:.17e},"));
            }
            let role = match p.role {
                PointRole::Force => "force",
                PointRole::Boundary => "boundary",
                PointRole::Initial => "initial",
            };
            s.push_str(&format!("{:.17e},{role}\n", p.value));
        }
        s
    }
}

/// How to draw a dataset: sizes, replicate observation count, noise family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Interior collocation points (total).
    pub force_count: usize,
    /// Noisy boundary points: per side for the Poisson problem, the number of
    /// initial points for Burgers; the pedagogical problem always has two.
    pub boundary_count: usize,
    /// Clean boundary points per side for Burgers (ignored elsewhere).
    pub bc_count: usize,
    /// Replicate observations per noisy component.
    pub observations: usize,
    pub noise: NoiseSpec,
}

/// A drawn dataset plus the raw replicate observations and the clean values,
/// for feeding region constructors and coverage studies.
#[derive(Debug, Clone)]
pub struct SampledData {
    pub dataset: BoundaryDataset,
    /// `observations[j]` is the j-th replicate of the noisy value vector.
    pub observations: Vec<Vec<f64>>,
    pub clean_values: Vec<f64>,
}

fn noisy_draw(rng: &mut SeededRng, clean: f64, noise: &NoiseSpec) -> f64 {
    match noise {
        NoiseSpec::Gaussian { sigma } => clean + sigma * rng::standard_normal(rng),
        NoiseSpec::Uniform { half_width } => clean + rng::uniform(rng, -half_width, *half_width),
        NoiseSpec::None => clean,
    }
}

/// Lay out the noisy/clean boundary structure of a problem with clean values.
pub fn boundary_layout(problem: &PdeProblem, spec: &DatasetSpec) -> Vec<BoundaryPoint> {
    match problem.kind {
        ProblemKind::Pedagogical => [-1.0, 1.0]
            .iter()
            .map(|&x| BoundaryPoint {
                x: vec![x],
                value: 0.0,
                role: PointRole::Boundary,
                noisy: true,
            })
            .collect(),
        ProblemKind::Poisson2d => {
            let per_side = spec.boundary_count;
            let mut pts = Vec::with_capacity(4 * per_side);
            let line = |i: usize| -1.0 + 2.0 * (i as f64 + 0.5) / per_side as f64;
            for i in 0..per_side {
                for &(x, y) in &[
                    (line(i), -1.0),
                    (line(i), 1.0),
                    (-1.0, line(i)),
                    (1.0, line(i)),
                ] {
                    pts.push(BoundaryPoint {
                        x: vec![x, y],
                        value: x.exp() + y.exp(),
                        role: PointRole::Boundary,
                        noisy: true,
                    });
                }
            }
            pts
        }
        ProblemKind::Burgers => {
            let mut pts = Vec::new();
            let n_ic = spec.boundary_count.max(2);
            for i in 0..n_ic {
                let x = -1.0 + 2.0 * i as f64 / (n_ic - 1) as f64;
                pts.push(BoundaryPoint {
                    x: vec![x, 0.0],
                    value: -(PI * x).sin(),
                    role: PointRole::Initial,
                    noisy: true,
                });
            }
            for side in [-1.0, 1.0] {
                for j in 0..spec.bc_count {
                    let t = (j as f64 + 0.5) / spec.bc_count as f64;
                    pts.push(BoundaryPoint {
                        x: vec![side, t],
                        value: 0.0,
                        role: PointRole::Boundary,
                        noisy: false,
                    });
                }
            }
            pts
        }
    }
}

/// Reproducible dataset draw: noise is applied only to the noisy components
/// (zero-mean), and each replicate observation redraws all of them.
pub fn sample_dataset(problem: &PdeProblem, spec: &DatasetSpec, seed: u64) -> Result<SampledData> {
    if spec.force_count == 0 || spec.observations == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::rng_from_seed(seed);
    let force_points = problem.collocation(spec.force_count);
    let mut boundary_points = boundary_layout(problem, spec);
    let clean_values: Vec<f64> = boundary_points
        .iter()
        .filter(|p| p.noisy)
        .map(|p| p.value)
        .collect();

    let observations: Vec<Vec<f64>> = (0..spec.observations)
        .map(|_| {
            clean_values
                .iter()
                .map(|&c| noisy_draw(&mut rng, c, &spec.noise))
                .collect()
        })
        .collect();

    // The dataset carries the per-component observation mean.
    let n = clean_values.len();
    let mut mean = vec![0.0; n];
    for obs in &observations {
        for (m, &v) in mean.iter_mut().zip(obs) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= spec.observations as f64;
    }
    let mut k = 0;
    for p in &mut boundary_points {
        if p.noisy {
            p.value = mean[k];
            k += 1;
        }
    }

    let dataset = BoundaryDataset {
        force_points,
        boundary_points,
        noise_meta: Some(spec.noise),
    };
    dataset.validate(problem)?;
    Ok(SampledData {
        dataset,
        observations,
        clean_values,
    })
}
