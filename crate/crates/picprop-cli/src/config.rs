//! Run configuration: a single TOML file with sections for the problem, the
//! confidence region, the method and its optimizers, the query layout and the
//! output. Validation reports field-level messages.

use picprop::effi::EffiConfig;
use picprop::es::EsConfig;
use picprop::hypergrad::{HypergradConfig, HypergradMethod};
use picprop::net::NetworkSpec;
use picprop::picprop::PicPropConfig;
use picprop::pinn::{OptimizerKind, PinnConfig};
use picprop::problems::{DatasetSpec, NoiseSpec, PdeProblem, ProblemKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: MethodKind,
    pub problem: ProblemSection,
    #[serde(default)]
    pub region: RegionSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub hypergrad: HypergradSection,
    #[serde(default)]
    pub method_options: MethodOptions,
    #[serde(default)]
    pub queries: QuerySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Picprop,
    Es,
    Simpicprop,
    Effipicprop,
    Validity,
    ToyLinear,
    HypergradCheck,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Picprop => "picprop",
            MethodKind::Es => "es",
            MethodKind::Simpicprop => "simpicprop",
            MethodKind::Effipicprop => "effipicprop",
            MethodKind::Validity => "validity",
            MethodKind::ToyLinear => "toy-linear",
            MethodKind::HypergradCheck => "hypergrad-check",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    #[serde(default = "default_collocation")]
    pub collocation: usize,
    #[serde(default = "default_boundary_count")]
    pub boundary_count: usize,
    #[serde(default)]
    pub bc_count: usize,
    #[serde(default = "one")]
    pub observations: usize,
    #[serde(default)]
    pub linear_advection: bool,
    #[serde(default)]
    pub noise: NoiseSection,
}

fn default_collocation() -> usize {
    128
}

fn default_boundary_count() -> usize {
    2
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_family")]
    pub family: NoiseFamily,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    None,
}

fn default_family() -> NoiseFamily {
    NoiseFamily::None
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            family: NoiseFamily::None,
            sigma: 0.0,
            half_width: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    #[serde(default = "default_region_kind")]
    pub kind: RegionKind,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub one_sided: bool,
    /// Known per-component standard deviation for the chi-squared region.
    #[serde(default)]
    pub sigma: f64,
    /// Box half-width for fixed regions; support half-width for Hoeffding.
    #[serde(default)]
    pub half_width: f64,
    /// Support centers for the Hoeffding region (defaults to zeros).
    #[serde(default)]
    pub support_center: Option<Vec<f64>>,
}

fn default_p() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Chi2,
    T2,
    Hoeffding,
    Fixed,
    Degenerate,
}

fn default_region_kind() -> RegionKind {
    RegionKind::Degenerate
}

impl Default for RegionSection {
    fn default() -> Self {
        RegionSection {
            kind: RegionKind::Degenerate,
            p: 0.95,
            one_sided: false,
            sigma: 0.0,
            half_width: 0.0,
            support_center: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_depth")]
    pub hidden_depth: usize,
}

fn default_width() -> usize {
    32
}

fn default_depth() -> usize {
    2
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden_width: 32,
            hidden_depth: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "opt_adam")]
    pub inner: OptKind,
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    #[serde(default = "opt_sgd")]
    pub meta: OptKind,
    #[serde(default = "default_meta_lr")]
    pub meta_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_meta_steps")]
    pub meta_steps: usize,
    #[serde(default = "one_f")]
    pub w_f: f64,
    #[serde(default = "one_f")]
    pub w_b: f64,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default)]
    pub reset_inner_state: bool,
}

fn opt_adam() -> OptKind {
    OptKind::Adam
}

fn opt_sgd() -> OptKind {
    OptKind::Sgd
}

fn default_inner_lr() -> f64 {
    1e-3
}

fn default_meta_lr() -> f64 {
    0.01
}

fn default_warmup() -> usize {
    2000
}

fn default_inner_steps() -> usize {
    500
}

fn default_meta_steps() -> usize {
    50
}

fn one_f() -> f64 {
    1.0
}

fn default_chunk() -> usize {
    512
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Sgd,
    Adam,
}

impl From<OptKind> for OptimizerKind {
    fn from(k: OptKind) -> Self {
        match k {
            OptKind::Sgd => OptimizerKind::Sgd,
            OptKind::Adam => OptimizerKind::Adam,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            inner: OptKind::Adam,
            inner_lr: 1e-3,
            meta: OptKind::Sgd,
            meta_lr: 0.01,
            warmup_steps: 2000,
            inner_steps: 500,
            meta_steps: 50,
            w_f: 1.0,
            w_b: 1.0,
            chunk: 512,
            reset_inner_state: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypergradSection {
    #[serde(default = "default_hg_method")]
    pub method: HgMethod,
    #[serde(default = "default_hg_k")]
    pub k: usize,
    #[serde(default = "default_ns_scale")]
    pub ns_scale: f64,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

fn default_hg_method() -> HgMethod {
    HgMethod::AidNs
}

fn default_hg_k() -> usize {
    50
}

fn default_ns_scale() -> f64 {
    1e-3
}

fn default_cg_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HgMethod {
    Reverse,
    AidNs,
    AidCg,
}

impl Default for HypergradSection {
    fn default() -> Self {
        HypergradSection {
            method: HgMethod::AidNs,
            k: 50,
            ns_scale: 1e-3,
            cg_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodOptions {
    #[serde(default)]
    pub eta: f64,
    /// Search trials for the exhaustive baseline.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_trial_steps")]
    pub trial_steps: usize,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default)]
    pub dump_trials: bool,
    /// Loss mixing weight for the amortized model.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub lambda_mode: LambdaMode,
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default = "default_meta_lr2")]
    pub model_lr: f64,
    /// Replications for the validity study / toy system.
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Training queries for the amortized model and the validity study.
    #[serde(default = "default_query_count")]
    pub query_count: usize,
    #[serde(default)]
    pub reuse_model: bool,
    /// Random bi-level instances for the hypergradient check.
    #[serde(default = "default_instances")]
    pub instances: usize,
}

fn default_trials() -> usize {
    1000
}

fn default_trial_steps() -> usize {
    300
}

fn yes() -> bool {
    true
}

fn default_lambda() -> f64 {
    1.0
}

fn default_train_steps() -> usize {
    3000
}

fn default_meta_lr2() -> f64 {
    1e-2
}

fn default_reps() -> usize {
    50
}

fn default_grid_points() -> usize {
    101
}

fn default_query_count() -> usize {
    6
}

fn default_instances() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[derive(Default)]
pub enum LambdaMode {
    #[default]
    Fixed,
    ValidationSplit,
}


impl Default for MethodOptions {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    #[serde(default)]
    pub kind: QueryKind,
    /// Grid count along x (1-D problems and the x axis of 2-D ones).
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_count2")]
    pub y_count: usize,
    /// Time slices for the time-dependent problem.
    #[serde(default)]
    pub t_values: Vec<f64>,
    /// Explicit points for `kind = "list"`.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

fn default_count() -> usize {
    41
}

fn default_count2() -> usize {
    11
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum QueryKind {
    #[default]
    Grid,
    List,
}


impl Default for QuerySection {
    fn default() -> Self {
        QuerySection {
            kind: QueryKind::Grid,
            count: 41,
            y_count: 11,
            t_values: Vec::new(),
            points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: String,
}

fn default_out() -> String {
    "runs".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out(),
        }
    }
}

/// A field-level validation failure.
#[derive(Debug)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn problem(&self) -> Result<PdeProblem, FieldError> {
        let kind = match self.problem.name.as_str() {
            "pedagogical" => ProblemKind::Pedagogical,
            "poisson2d" => ProblemKind::Poisson2d,
            "burgers" => ProblemKind::Burgers,
            other => {
                return Err(FieldError {
                    field: "problem.name".into(),
                    message: format!("unknown problem `{other}`"),
                })
            }
        };
        Ok(PdeProblem {
            kind,
            linear_advection: self.problem.linear_advection,
        })
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, FieldError> {
        match self.problem.noise.family {
            NoiseFamily::None => Ok(NoiseSpec::None),
            NoiseFamily::Gaussian => {
                if self.problem.noise.sigma <= 0.0 {
                    return Err(FieldError {
                        field: "problem.noise.sigma".into(),
                        message: "gaussian noise needs sigma > 0".into(),
                    });
                }
                Ok(NoiseSpec::Gaussian {
                    sigma: self.problem.noise.sigma,
                })
            }
            NoiseFamily::Uniform => {
                if self.problem.noise.half_width <= 0.0 {
                    return Err(FieldError {
                        field: "problem.noise.half_width".into(),
                        message: "uniform noise needs half_width > 0".into(),
                    });
                }
                Ok(NoiseSpec::Uniform {
                    half_width: self.problem.noise.half_width,
                })
            }
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, FieldError> {
        Ok(DatasetSpec {
            force_count: self.problem.collocation,
            boundary_count: self.problem.boundary_count,
            bc_count: self.problem.bc_count,
            observations: self.problem.observations,
            noise: self.noise_spec()?,
        })
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, FieldError> {
        let problem = self.problem()?;
        NetworkSpec::new(
            problem.input_dim(),
            self.network.hidden_width,
            self.network.hidden_depth,
        )
        .map_err(|e| FieldError {
            field: "network".into(),
            message: e.to_string(),
        })
    }

    pub fn pinn_config(&self) -> PinnConfig {
        PinnConfig {
            w_f: self.optimizer.w_f,
            w_b: self.optimizer.w_b,
            optimizer: self.optimizer.inner.into(),
            lr: self.optimizer.inner_lr,
            warmup_steps: self.optimizer.warmup_steps,
            inner_steps: self.optimizer.inner_steps,
            seed: self.seed,
            chunk: self.optimizer.chunk,
            reset_inner_state: self.optimizer.reset_inner_state,
            divergence_threshold: 1e6,
        }
    }

    pub fn hypergrad_config(&self) -> HypergradConfig {
        HypergradConfig {
            method: match self.hypergrad.method {
                HgMethod::Reverse => HypergradMethod::Reverse,
                HgMethod::AidNs => HypergradMethod::AidNs,
                HgMethod::AidCg => HypergradMethod::AidCg,
            },
            k: self.hypergrad.k,
            ns_scale: self.hypergrad.ns_scale,
            cg_tol: self.hypergrad.cg_tol,
        }
    }

    pub fn picprop_config(&self) -> Result<PicPropConfig, FieldError> {
        let cfg = PicPropConfig {
            spec: self.network_spec()?,
            pinn: self.pinn_config(),
            meta_optimizer: self.optimizer.meta.into(),
            meta_lr: self.optimizer.meta_lr,
            meta_steps: self.optimizer.meta_steps,
            hypergrad: self.hypergrad_config(),
            eta: self.method_options.eta,
            return_best: false,
        };
        cfg.validate().map_err(|e| FieldError {
            field: "optimizer".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn es_config(&self) -> Result<EsConfig, FieldError> {
        if self.method_options.trials < 1 {
            return Err(FieldError {
                field: "method_options.trials".into(),
                message: "needs at least one trial".into(),
            });
        }
        Ok(EsConfig {
            spec: self.network_spec()?,
            pinn: self.pinn_config(),
            trials: self.method_options.trials,
            trial_steps: self.method_options.trial_steps,
            warm_start: self.method_options.warm_start,
            eta: self.method_options.eta,
            seed: self.seed,
        })
    }

    pub fn effi_config(&self) -> Result<EffiConfig, FieldError> {
        let lambda = match self.method {
            MethodKind::Simpicprop => 0.0,
            _ => self.method_options.lambda,
        };
        if !(0.0..=1.0).contains(&lambda) {
            return Err(FieldError {
                field: "method_options.lambda".into(),
                message: format!("lambda must be in [0, 1], got {lambda}"),
            });
        }
        Ok(EffiConfig {
            lambda,
            hidden_width: self.network.hidden_width,
            hidden_depth: self.network.hidden_depth,
            train_steps: self.method_options.train_steps,
            lr: self.method_options.model_lr,
            optimizer: OptimizerKind::Adam,
            seed: self.seed,
            eta: self.method_options.eta,
        })
    }

    /// Full validation pass; collects every field error.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errors = Vec::new();
        if let Err(e) = self.problem() {
            errors.push(e);
        }
        if let Err(e) = self.noise_spec() {
            errors.push(e);
        }
        if let Err(e) = self.network_spec() {
            errors.push(e);
        }
        if let Err(e) = self.picprop_config() {
            errors.push(e);
        }
        if let Err(e) = self.effi_config() {
            errors.push(e);
        }
        if !(0.0 < self.region.p && self.region.p < 1.0) {
            errors.push(FieldError {
                field: "region.p".into(),
                message: format!("confidence must be in (0, 1), got {}", self.region.p),
            });
        }
        match self.region.kind {
            RegionKind::Chi2 if self.region.sigma <= 0.0 => errors.push(FieldError {
                field: "region.sigma".into(),
                message: "chi2 region needs sigma > 0".into(),
            }),
            RegionKind::Fixed | RegionKind::Hoeffding if self.region.half_width <= 0.0 => {
                errors.push(FieldError {
                    field: "region.half_width".into(),
                    message: "box regions need half_width > 0".into(),
                })
            }
            RegionKind::T2 if self.problem.observations < 2 => errors.push(FieldError {
                field: "problem.observations".into(),
                message: "the t-squared region needs several observations".into(),
            }),
            _ => {}
        }
        if self.method_options.eta < 0.0 {
            errors.push(FieldError {
                field: "method_options.eta".into(),
                message: "eta must be nonnegative".into(),
            });
        }
        if matches!(self.queries.kind, QueryKind::List) && self.queries.points.is_empty() {
            errors.push(FieldError {
                field: "queries.points".into(),
                message: "list queries need at least one point".into(),
            });
        }
        if matches!(self.method, MethodKind::Validity)
            && self.problem.name != "pedagogical"
        {
            errors.push(FieldError {
                field: "method".into(),
                message: "the validity study runs on the pedagogical problem".into(),
            });
        }
        errors
    }

    /// Query points implied by the config for the problem.
    pub fn query_points(&self, problem: &PdeProblem) -> Result<Vec<Vec<f64>>, FieldError> {
        if matches!(self.queries.kind, QueryKind::List) {
            for p in &self.queries.points {
                if !problem.contains(p) {
                    return Err(FieldError {
                        field: "queries.points".into(),
                        message: format!("{p:?} is outside the domain"),
                    });
                }
            }
            return Ok(self.queries.points.clone());
        }
        let line = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            if n == 1 {
                return vec![0.5 * (lo + hi)];
            }
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Ok(match problem.kind {
            ProblemKind::Pedagogical => line(self.queries.count, -1.0, 1.0)
                .into_iter()
                .map(|x| vec![x])
                .collect(),
            ProblemKind::Poisson2d => {
                let xs = line(self.queries.count, -1.0, 1.0);
                let ys = line(self.queries.y_count, -1.0, 1.0);
                xs.iter()
                    .flat_map(|&x| ys.iter().map(move |&y| vec![x, y]))
                    .collect()
            }
            ProblemKind::Burgers => {
                let xs = line(self.queries.count, -1.0, 1.0);
                let ts = if self.queries.t_values.is_empty() {
                    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
                } else {
                    self.queries.t_values.clone()
                };
                xs.iter()
                    .flat_map(|&x| ts.iter().map(move |&t| vec![x, t]))
                    .collect()
            }
        })
    }
}
