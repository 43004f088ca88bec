//! Run dispatch: sample data, construct the region, execute the configured
//! method and persist bands, reports and provenance into a run directory.

use crate::config::{LambdaMode, MethodKind, QueryKind, RegionKind, RunConfig};
use anyhow::{anyhow, bail, Context, Result};
use picprop::band::CiBand;
use picprop::effi::{collect_targets, eval_band, select_lambda, train_meta};
use picprop::es::exhaustive_search;
use picprop::hypergrad::{
    hypergrad_aid, hypergrad_reverse, BilevelProblem, HypergradConfig, QuadraticBilevel,
};
use picprop::picprop::{fnv1a, picprop_band};
use picprop::pinn::{OptimizerKind, StepRecord, Trajectory};
use picprop::problems::{sample_dataset, SampledData};
use picprop::region::ConfidenceRegion;
use picprop::rng;
use picprop::validation::{
    empirical_confidence, picprop_validity_study, toy_intervals, ToyIntervalKind, ToyLinearSystem,
    ValidityConfig,
};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub struct RunContext {
    pub dir: PathBuf,
    pub log: fs::File,
}

impl RunContext {
    pub fn log(&mut self, line: &str) {
        let _ = writeln!(self.log, "{line}");
    }
}

/// Output root: the environment variable wins over the config.
pub fn output_root(cfg: &RunConfig) -> PathBuf {
    std::env::var("PICPROP_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(&cfg.output.dir))
}

/// Create the timestamped run directory with the config snapshot and
/// provenance record.
pub fn prepare_run_dir(cfg: &RunConfig, config_text: &str, stem: &str) -> Result<RunContext> {
    let root = output_root(cfg);
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs();
    let mut dir = root.join(format!("{stem}-{ts}"));
    let mut k = 0;
    while dir.exists() {
        k += 1;
        dir = root.join(format!("{stem}-{ts}-{k}"));
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), config_text)?;
    let provenance = serde_json::json!({
        "method": cfg.method.name(),
        "seed": cfg.seed,
        "config_hash": fnv1a(config_text.as_bytes()),
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::write(
        dir.join("provenance.json"),
        serde_json::to_string_pretty(&provenance)?,
    )?;
    let log = fs::File::create(dir.join("diagnostics.log"))?;
    Ok(RunContext { dir, log })
}

fn write_band(ctx: &RunContext, band: &CiBand, stem: &str) -> Result<()> {
    fs::write(ctx.dir.join(format!("{stem}.csv")), band.to_csv())?;
    fs::write(
        ctx.dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&band.to_json())?,
    )?;
    Ok(())
}

/// Build the confidence region implied by the config and the sampled data.
pub fn build_region(cfg: &RunConfig, data: &SampledData) -> Result<ConfidenceRegion> {
    let n = data.clean_values.len();
    let region = match cfg.region.kind {
        RegionKind::Degenerate => {
            ConfidenceRegion::degenerate(&data.dataset.noisy_values())
        }
        RegionKind::Chi2 => {
            let s2 = cfg.region.sigma * cfg.region.sigma;
            let sigma: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| if i == j { s2 } else { 0.0 }).collect())
                .collect();
            ConfidenceRegion::chi_squared(
                &data.dataset.noisy_values(),
                &sigma,
                cfg.region.p,
                cfg.region.one_sided,
            )?
        }
        RegionKind::T2 => {
            ConfidenceRegion::hotelling(&data.observations, cfg.region.p, cfg.region.one_sided)?
        }
        RegionKind::Hoeffding => {
            let center = cfg
                .region
                .support_center
                .clone()
                .unwrap_or_else(|| vec![0.0; n]);
            let widths = vec![cfg.region.half_width; n];
            ConfidenceRegion::hoeffding(&data.observations, &center, &widths, cfg.region.p)?
        }
        RegionKind::Fixed => {
            let lo: Vec<f64> = data
                .clean_values
                .iter()
                .map(|v| v - cfg.region.half_width)
                .collect();
            let hi: Vec<f64> = data
                .clean_values
                .iter()
                .map(|v| v + cfg.region.half_width)
                .collect();
            ConfidenceRegion::fixed(&lo, &hi, cfg.region.p)?
        }
    };
    Ok(region)
}

/// Training queries for the amortized model: an equispaced grid of
/// `query_count` points over the domain (first axis for 2-D problems crossed
/// with the configured time/second-axis values).
fn amortized_queries(cfg: &RunConfig, problem: &picprop::problems::PdeProblem) -> Vec<Vec<f64>> {
    let k = cfg.method_options.query_count.max(1);
    match problem.input_dim() {
        1 => (0..k)
            .map(|i| vec![-1.0 + 2.0 * i as f64 / (k - 1).max(1) as f64])
            .collect(),
        _ => {
            let dom = problem.domain();
            let per_axis = (k as f64).sqrt().ceil() as usize;
            let line = |lo: f64, hi: f64| -> Vec<f64> {
                (0..per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1).max(1) as f64)
                    .collect()
            };
            let xs = line(dom[0].0, dom[0].1);
            let ys = line(dom[1].0, dom[1].1);
            xs.iter()
                .flat_map(|&x| ys.iter().map(move |&y| vec![x, y]))
                .take(k.max(per_axis * per_axis.min(k)))
                .collect()
        }
    }
}

pub fn run(cfg: &RunConfig, config_text: &str, stem: &str) -> Result<PathBuf> {
    let errors = cfg.validate();
    if !errors.is_empty() {
        bail!(
            "invalid config:\n{}",
            errors
                .iter()
                .map(|e| format!("  {e}"))
                .collect::<Vec<_>>()
                .join("\n")
        );
    }
    let mut ctx = prepare_run_dir(cfg, config_text, stem)?;
    match cfg.method {
        MethodKind::ToyLinear => run_toy_linear(cfg, &mut ctx)?,
        MethodKind::HypergradCheck => run_hypergrad_check(cfg, &mut ctx)?,
        MethodKind::Picprop => run_picprop(cfg, &mut ctx)?,
        MethodKind::Es => run_es(cfg, &mut ctx)?,
        MethodKind::Simpicprop | MethodKind::Effipicprop => run_effi(cfg, &mut ctx)?,
        MethodKind::Validity => run_validity(cfg, &mut ctx)?,
    }
    Ok(ctx.dir)
}

fn run_picprop(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let problem = cfg.problem().map_err(|e| anyhow!("{e}"))?;
    let data = sample_dataset(&problem, &cfg.dataset_spec().map_err(|e| anyhow!("{e}"))?, cfg.seed)?;
    let region = build_region(cfg, &data)?;
    let queries = cfg.query_points(&problem).map_err(|e| anyhow!("{e}"))?;
    let picprop_cfg = cfg.picprop_config().map_err(|e| anyhow!("{e}"))?;
    ctx.log(&format!(
        "picprop: {} queries, region dim {}",
        queries.len(),
        region.dim()
    ));
    let out = picprop_band(&problem, &data.dataset, &region, &picprop_cfg, &queries)?;
    for f in &out.failures {
        ctx.log(&format!(
            "FAILED query {} ({:?}): {}",
            f.query_index, f.side, f.message
        ));
    }
    write_band(ctx, &out.band, "band")?;
    fs::write(
        ctx.dir.join("region.json"),
        serde_json::to_string_pretty(&region.to_json())?,
    )?;
    if !out.failures.is_empty() {
        bail!("{} query jobs failed (partial band kept)", out.failures.len());
    }
    Ok(())
}

fn run_es(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let problem = cfg.problem().map_err(|e| anyhow!("{e}"))?;
    let data = sample_dataset(&problem, &cfg.dataset_spec().map_err(|e| anyhow!("{e}"))?, cfg.seed)?;
    let region = build_region(cfg, &data)?;
    let queries = cfg.query_points(&problem).map_err(|e| anyhow!("{e}"))?;
    let es_cfg = cfg.es_config().map_err(|e| anyhow!("{e}"))?;
    let out = exhaustive_search(&problem, &data.dataset, &region, &queries, &es_cfg)?;
    ctx.log(&format!(
        "es: {} trials completed, {} skipped",
        out.audit.values.len(),
        out.audit.skipped.len()
    ));
    write_band(ctx, &out.band, "band")?;
    if cfg.method_options.dump_trials {
        fs::write(
            ctx.dir.join("trials.json"),
            serde_json::to_string(&out.audit)?,
        )?;
    }
    fs::write(
        ctx.dir.join("region.json"),
        serde_json::to_string_pretty(&region.to_json())?,
    )?;
    Ok(())
}

fn run_effi(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let problem = cfg.problem().map_err(|e| anyhow!("{e}"))?;
    let data = sample_dataset(&problem, &cfg.dataset_spec().map_err(|e| anyhow!("{e}"))?, cfg.seed)?;
    let region = build_region(cfg, &data)?;
    let eval_queries = cfg.query_points(&problem).map_err(|e| anyhow!("{e}"))?;
    let train_queries = amortized_queries(cfg, &problem);
    let picprop_cfg = cfg.picprop_config().map_err(|e| anyhow!("{e}"))?;
    let mut effi_cfg = cfg.effi_config().map_err(|e| anyhow!("{e}"))?;
    let grid = problem.collocation(cfg.problem.collocation.min(2000));

    ctx.log(&format!(
        "{}: {} training queries, {} evaluation points",
        cfg.method.name(),
        train_queries.len(),
        eval_queries.len()
    ));
    let targets = collect_targets(
        &problem,
        &data.dataset,
        &region,
        &picprop_cfg,
        &train_queries,
        &grid,
    )?;
    fs::write(
        ctx.dir.join("targets.json"),
        serde_json::to_string(&targets)?,
    )?;
    if matches!(cfg.method, MethodKind::Effipicprop)
        && matches!(cfg.method_options.lambda_mode, LambdaMode::ValidationSplit)
    {
        let (best, scores) = select_lambda(
            &targets,
            &grid,
            &effi_cfg,
            &[0.0, 0.25, 0.5, 0.75, 1.0],
            0.1,
            cfg.seed,
        )?;
        for (l, mse) in &scores {
            ctx.log(&format!("lambda {l}: validation mse {mse:.3e}"));
        }
        ctx.log(&format!("selected lambda {best}"));
        effi_cfg.lambda = best;
    }
    let model = train_meta(&targets, &grid, &effi_cfg)?;
    fs::write(
        ctx.dir.join("meta_model.json"),
        serde_json::to_string(&model)?,
    )?;
    let band = eval_band(&model, &eval_queries, effi_cfg.eta)?;
    if !band.swapped.is_empty() {
        ctx.log(&format!(
            "swapped {} crossed bound pairs: {:?}",
            band.swapped.len(),
            band.swapped
        ));
    }
    write_band(ctx, &band, "band")?;
    fs::write(
        ctx.dir.join("region.json"),
        serde_json::to_string_pretty(&region.to_json())?,
    )?;
    Ok(())
}

fn run_validity(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let problem = cfg.problem().map_err(|e| anyhow!("{e}"))?;
    let picprop_cfg = cfg.picprop_config().map_err(|e| anyhow!("{e}"))?;
    let effi_cfg = cfg.effi_config().map_err(|e| anyhow!("{e}"))?;
    let out = picprop_validity_study(
        &problem,
        &cfg.dataset_spec().map_err(|e| anyhow!("{e}"))?,
        &picprop_cfg,
        &effi_cfg,
        &ValidityConfig {
            replications: cfg.method_options.replications,
            sigma: cfg.region.sigma.max(cfg.problem.noise.sigma),
            confidence: cfg.region.p,
            grid_points: cfg.method_options.grid_points,
            query_count: cfg.method_options.query_count,
            reuse_model: cfg.method_options.reuse_model,
            seed: cfg.seed,
        },
    )?;
    ctx.log(&format!(
        "validity: {}/{} covered, eta {:.5}",
        out.report.successes, out.report.replications, out.eta
    ));
    fs::write(
        ctx.dir.join("report.json"),
        serde_json::to_string_pretty(&out.report)?,
    )?;
    let mut csv = String::from("replication,covered\n");
    for (i, r) in out.replications.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", r.covered as u8));
    }
    fs::write(ctx.dir.join("replications.csv"), csv)?;
    Ok(())
}

fn run_toy_linear(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let system = ToyLinearSystem {
        theta_star: [0.0, 0.0],
    };
    let reps = cfg.method_options.replications.max(1);
    let p = cfg.region.p;
    let eps = 1.0 / (cfg.method_options.grid_points.max(2) - 1) as f64;
    let xs: Vec<f64> = (0..cfg.method_options.grid_points)
        .map(|k| (k as f64 * eps).min(1.0))
        .collect();

    // Per-replication joint-coverage indicators for both constructions,
    // reduced to a running convergence curve.
    let mut chi2_hits = Vec::with_capacity(reps);
    let mut normal_hits = Vec::with_capacity(reps);
    for j in 0..reps {
        let mut r = rng::rng_from_seed(rng::mix(cfg.seed, j as u64));
        let z = [
            system.theta_star[0] + rng::standard_normal(&mut r),
            system.theta_star[1] + rng::standard_normal(&mut r),
        ];
        let joint = toy_intervals(z, ToyIntervalKind::Chi2Joint, p, &xs)?;
        let union = toy_intervals(z, ToyIntervalKind::NormalUnion, p, &xs)?;
        let check = |band: &CiBand| {
            band.queries.iter().enumerate().all(|(i, q)| {
                let u = system.truth(q[0]);
                band.lower[i] < u && u < band.upper[i]
            })
        };
        chi2_hits.push(check(&joint) as u32);
        normal_hits.push(check(&union) as u32);
    }
    let mut csv = String::from("replications,empirical_chi2_joint,empirical_normal_union\n");
    let (mut c, mut n) = (0u32, 0u32);
    for j in 0..reps {
        c += chi2_hits[j];
        n += normal_hits[j];
        let jn = (j + 1) as f64;
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            j + 1,
            c as f64 / jn,
            n as f64 / jn
        ));
    }
    fs::write(ctx.dir.join("convergence.csv"), csv)?;
    ctx.log(&format!(
        "toy-linear: chi2 {:.4}, normal {:.4} over {reps} replications",
        c as f64 / reps as f64,
        n as f64 / reps as f64
    ));

    // One sample band pair for plotting.
    let mut r = rng::rng_from_seed(cfg.seed);
    let z = [rng::standard_normal(&mut r), rng::standard_normal(&mut r)];
    let joint = toy_intervals(z, ToyIntervalKind::Chi2Joint, p, &xs)?;
    let union = toy_intervals(z, ToyIntervalKind::NormalUnion, p, &xs)?;
    write_band(ctx, &joint, "band")?;
    write_band(ctx, &union, "band_union")?;
    let _ = empirical_confidence(
        |z| toy_intervals(z, ToyIntervalKind::Chi2Joint, p, &xs),
        &system,
        eps,
        1,
        cfg.seed,
    )?;
    Ok(())
}

fn run_hypergrad_check(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let instances = cfg.method_options.instances.max(1);
    let mut csv = String::from("instance,theta_dim,data_dim,method,relative_error\n");
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut r = rng::rng_from_seed(rng::mix(cfg.seed, i as u64));
        let ntheta = 2 + (rng::uniform(&mut r, 0.0, 19.0) as usize).min(18);
        let nz = 1 + (rng::uniform(&mut r, 0.0, 19.0) as usize).min(18);
        let q = random_quadratic(ntheta, nz, &mut r);
        let z: Vec<f64> = (0..nz).map(|_| rng::standard_normal(&mut r)).collect();
        let expect = q.analytic_hypergrad();
        let scale = expect.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let theta = q.theta_star(&z);
        let bound = q
            .a
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);

        let ns = hypergrad_aid(&q, &theta, &z, &HypergradConfig::aid_ns(200, 0.9 / bound))?;
        let cg = hypergrad_aid(&q, &theta, &z, &HypergradConfig::aid_cg(400, 1e-10))?;
        let lr = 0.9 / bound;
        let steps = 400;
        let (tf, traj) = run_quadratic_sgd(&q, &z, lr, steps);
        let rv = hypergrad_reverse(&q, &traj, &tf, &z, steps)?;
        for (name, out) in [("reverse", &rv), ("aid_ns", &ns), ("aid_cg", &cg)] {
            let err = out
                .grad
                .iter()
                .zip(&expect)
                .map(|(g, e)| (g - e) * (g - e))
                .sum::<f64>()
                .sqrt()
                / scale;
            worst = worst.max(err);
            csv.push_str(&format!("{i},{ntheta},{nz},{name},{err:.3e}\n"));
        }
    }
    fs::write(ctx.dir.join("hypergrad_check.csv"), csv)?;
    ctx.log(&format!(
        "hypergrad-check: {instances} instances, worst relative error {worst:.3e}"
    ));
    Ok(())
}

fn random_quadratic(ntheta: usize, nz: usize, r: &mut rng::SeededRng) -> QuadraticBilevel {
    let b: Vec<Vec<f64>> = (0..ntheta)
        .map(|_| (0..ntheta).map(|_| rng::standard_normal(r)).collect())
        .collect();
    let mut a = vec![vec![0.0; ntheta]; ntheta];
    for i in 0..ntheta {
        for j in 0..ntheta {
            let mut s = if i == j { 0.5 * ntheta as f64 } else { 0.0 };
            for row in &b {
                s += row[i] * row[j];
            }
            a[i][j] = s;
        }
    }
    QuadraticBilevel {
        a,
        m: (0..ntheta)
            .map(|_| (0..nz).map(|_| rng::standard_normal(r)).collect())
            .collect(),
        c: (0..ntheta).map(|_| rng::standard_normal(r)).collect(),
    }
}

fn run_quadratic_sgd(
    q: &QuadraticBilevel,
    z: &[f64],
    lr: f64,
    steps: usize,
) -> (Vec<f64>, Trajectory) {
    let mut theta = vec![0.0; q.param_dim()];
    let mut traj = Trajectory::new(OptimizerKind::Sgd, lr, steps);
    for t in 1..=steps {
        let g = q.loss_grad(&theta, z).expect("quadratic gradient");
        if traj.steps.len() == traj.cap {
            traj.steps.pop_front();
        }
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

/// `plot` subcommand: read band CSVs from a run directory and emit SVGs.
pub fn plot(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a run directory", dir.display());
    }
    let band_csv = dir.join("band.csv");
    if !band_csv.exists() {
        bail!(
            "missing expected data files in {}: band.csv (run the `run` command first)",
            dir.display()
        );
    }
    let problem = read_problem_kind(dir);
    let truth = problem.as_ref().and_then(problem_truth);
    let (dim, queries, lower, upper) = crate::plot::read_band_csv(&band_csv)?;
    let mut written = Vec::new();
    match dim {
        1 => {
            let mut rows: Vec<(f64, f64, f64)> = queries
                .iter()
                .zip(lower.iter().zip(&upper))
                .map(|(q, (l, u))| (q[0], *l, *u))
                .collect();
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let series = crate::plot::Series {
                xs: rows.iter().map(|r| r.0).collect(),
                lower: rows.iter().map(|r| r.1).collect(),
                upper: rows.iter().map(|r| r.2).collect(),
                truth: truth
                    .as_ref()
                    .map(|t| rows.iter().map(|r| t(&[r.0])).collect()),
            };
            let svg = crate::plot::band_svg("interval band", "x", &series)?;
            let path = dir.join("band.svg");
            fs::write(&path, svg)?;
            written.push(path);
        }
        2 => {
            // Slices along the first axis at the reference values, plotted
            // against the second axis, and vice versa for space-time bands.
            let time_dependent = matches!(
                problem,
                Some(picprop::problems::ProblemKind::Burgers)
            );
            if time_dependent {
                for t in [0.0, 0.25, 0.5, 0.75] {
                    let series = crate::plot::slice_series(
                        &queries,
                        &lower,
                        &upper,
                        truth.as_deref(),
                        1,
                        t,
                        0,
                    );
                    if series.xs.is_empty() {
                        continue;
                    }
                    let svg = crate::plot::band_svg(&format!("band at t = {t}"), "x", &series)?;
                    let path = dir.join(format!("slice_t_{t:.2}.svg"));
                    fs::write(&path, svg)?;
                    written.push(path);
                }
            } else {
                for x in [-0.5, 0.0, 0.5, 1.0] {
                    let series = crate::plot::slice_series(
                        &queries,
                        &lower,
                        &upper,
                        truth.as_deref(),
                        0,
                        x,
                        1,
                    );
                    if series.xs.is_empty() {
                        continue;
                    }
                    let svg = crate::plot::band_svg(&format!("band at x = {x}"), "y", &series)?;
                    let path = dir.join(format!("slice_x_{x:.2}.svg"));
                    fs::write(&path, svg)?;
                    written.push(path);
                }
            }
        }
        d => bail!("cannot plot {d}-dimensional bands"),
    }
    if written.is_empty() {
        bail!("no plottable slices found in {}", dir.display());
    }
    Ok(written)
}

fn read_problem_kind(dir: &Path) -> Option<picprop::problems::ProblemKind> {
    let text = fs::read_to_string(dir.join("config.toml")).ok()?;
    let cfg = RunConfig::parse(&text).ok()?;
    cfg.problem().ok().map(|p| p.kind)
}

#[allow(clippy::type_complexity)]
fn problem_truth(
    kind: &picprop::problems::ProblemKind,
) -> Option<Box<dyn Fn(&[f64]) -> f64>> {
    match kind {
        picprop::problems::ProblemKind::Pedagogical => Some(Box::new(|x: &[f64]| {
            (std::f64::consts::PI * x[0]).sin()
        })),
        picprop::problems::ProblemKind::Poisson2d => {
            Some(Box::new(|x: &[f64]| x[0].exp() + x[1].exp()))
        }
        picprop::problems::ProblemKind::Burgers => None,
    }
}

/// `list` subcommand: run directories under the output root.
pub fn list_runs(root: &Path) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    if !root.is_dir() {
        return Ok(rows);
    }
    let mut entries: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let dir = e.path();
        let method = fs::read_to_string(dir.join("provenance.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v["method"].as_str().map(String::from))
            .unwrap_or_else(|| "?".into());
        let has_band = dir.join("band.csv").exists();
        rows.push(format!(
            "{}  method={method}  band={}",
            dir.display(),
            if has_band { "yes" } else { "no" }
        ));
    }
    Ok(rows)
}

/// Ensure queries kind is referenced (list mode used by tests).
pub fn _query_kind_used(k: QueryKind) -> bool {
    matches!(k, QueryKind::Grid | QueryKind::List)
}
