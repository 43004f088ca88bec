//! Exhaustive-search baseline: sample boundary configurations from the
//! region, train a solver per sample, take pointwise min/max over the
//! resulting fields.
//!
//! Trial t draws its configuration from seed mix(seed, t), so trial sets with
//! the same seed are nested by prefix and band widths grow monotonically with
//! the trial count.

use crate::band::{CiBand, Provenance};
use crate::net::{forward, NetworkSpec};
use crate::picprop::fnv1a;
use crate::pinn::{train, PinnConfig, TrainResult};
use crate::problems::{BoundaryDataset, PdeProblem};
use crate::region::ConfidenceRegion;
use crate::rng;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub spec: NetworkSpec,
    pub pinn: PinnConfig,
    pub trials: usize,
    /// Training steps per trial.
    pub trial_steps: usize,
    /// Train a shared base solution at the region center first and fine-tune
    /// each trial from it instead of training from scratch.
    pub warm_start: bool,
    pub eta: f64,
    pub seed: u64,
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        self.pinn.validate()?;
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-trial record kept for audits and nested-prefix reductions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsAudit {
    /// Sampled boundary configuration per completed trial.
    pub zs: Vec<Vec<f64>>,
    /// Field values at the queries per completed trial (trial-major).
    pub values: Vec<Vec<f64>>,
    /// Trials skipped because training diverged.
    pub skipped: Vec<usize>,
}

impl EsAudit {
    /// Band from the first `trials` completed trials (nested prefix).
    pub fn band_prefix(
        &self,
        queries: &[Vec<f64>],
        trials: usize,
        eta: f64,
        provenance: Provenance,
    ) -> Result<CiBand> {
        let take = trials.min(self.values.len());
        if take == 0 {
            return Err(Error::Config("no completed trials".into()));
        }
        let nq = queries.len();
        let mut lower = vec![f64::INFINITY; nq];
        let mut upper = vec![f64::NEG_INFINITY; nq];
        for vals in self.values.iter().take(take) {
            for (i, &v) in vals.iter().enumerate() {
                lower[i] = lower[i].min(v);
                upper[i] = upper[i].max(v);
            }
        }
        for i in 0..nq {
            lower[i] -= eta;
            upper[i] += eta;
        }
        CiBand::new(queries.to_vec(), lower, upper, eta, provenance)
    }
}

pub struct EsOutcome {
    pub band: CiBand,
    pub audit: EsAudit,
}

/// Run the search: L(x) = min over trials - eta, U(x) = max + eta.
/// Divergent trials are skipped with a logged index and do not count toward
/// the effective trial total.
pub fn exhaustive_search(
    problem: &PdeProblem,
    dataset: &BoundaryDataset,
    region: &ConfidenceRegion,
    queries: &[Vec<f64>],
    config: &EsConfig,
) -> Result<EsOutcome> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::Config("query set is empty".into()));
    }
    let expected = dataset.noisy_indices().len();
    if region.dim() != expected {
        return Err(Error::RegionDimension {
            region: region.dim(),
            vector: expected,
        });
    }
    for q in queries {
        if !problem.contains(q) {
            return Err(Error::QueryOutsideDomain(q.clone()));
        }
    }

    let base: Option<TrainResult> = if config.warm_start {
        let center = dataset.with_noisy_values(region.center())?;
        let mut cfg = config.pinn;
        cfg.seed = config.seed;
        Some(train(&center, problem, config.spec, &cfg, None)?)
    } else {
        None
    };

    let per_trial: Vec<(usize, Vec<f64>, Option<Vec<f64>>)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = rng::mix(config.seed, t as u64 + 1);
            let z = region.sample_with_seed(trial_seed);
            debug_assert!(region.contains(&z));
            let data = match dataset.with_noisy_values(&z) {
                Ok(d) => d,
                Err(_) => return (t, z, None),
            };
            let mut cfg = config.pinn;
            cfg.seed = trial_seed;
            cfg.warmup_steps = config.trial_steps;
            let init = base.as_ref().map(|b| b.params.clone());
            match train(&data, problem, config.spec, &cfg, init) {
                Ok(out) => match forward(&out.params, queries) {
                    Ok(vals) => (t, z, Some(vals)),
                    Err(_) => (t, z, None),
                },
                Err(_) => (t, z, None),
            }
        })
        .collect();

    let mut audit = EsAudit {
        zs: Vec::new(),
        values: Vec::new(),
        skipped: Vec::new(),
    };
    for (t, z, vals) in per_trial {
        match vals {
            Some(v) => {
                audit.zs.push(z);
                audit.values.push(v);
            }
            None => audit.skipped.push(t),
        }
    }
    let provenance = Provenance {
        method: "es".into(),
        config_hash: fnv1a(serde_json::to_string(config).unwrap_or_default().as_bytes()),
        seed: config.seed,
    };
    let band = audit.band_prefix(queries, audit.values.len(), config.eta, provenance)?;
    Ok(EsOutcome { band, audit })
}
