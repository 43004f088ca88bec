//! Confidence regions over noisy boundary values: ellipsoids from the
//! chi-squared and Hotelling statistics, boxes from the Hoeffding bound or
//! given by experts. Regions support membership, projection and uniform
//! sampling; all are immutable and safe to share across threads.
//!
//! Critical values default to the upper (1-p)/2 convention (quantile at
//! (1+p)/2), the more conservative choice; `one_sided` switches to the plain
//! quantile at p.

use crate::rng::{self, SeededRng};
use crate::special;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[allow(clippy::needless_range_loop)]
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solve L y = b with L lower-triangular.
fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for (lik, yk) in l[i][..i].iter().zip(&y) {
            s -= lik * yk;
        }
        y[i] = s / l[i][i];
    }
    y
}

/// Solve L' x = y with L lower-triangular.
fn solve_lower_transpose(l: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Inverse of an SPD matrix from its Cholesky factor.
fn spd_inverse(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = l.len();
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let y = solve_lower(l, &e);
        let x = solve_lower_transpose(l, &y);
        for i in 0..n {
            inv[i][j] = x[i];
        }
    }
    inv
}

fn matvec_lower(l: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| (0..=i).map(|k| l[i][k] * x[k]).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Shape {
    Ellipsoid {
        /// Covariance of the underlying statistic (the metric is its inverse).
        sigma: Vec<Vec<f64>>,
        /// Mahalanobis radius.
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

/// Provenance of the construction, carried into serialized regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub statistic: String,
    pub m: usize,
    pub n: usize,
    pub critical_value: Option<f64>,
}

/// A confidence region for the clean boundary data: either the Mahalanobis
/// ball {z : (z-c)' M (z-c) <= r^2} with M the inverse covariance, or an
/// axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRegion {
    center: Vec<f64>,
    shape: Shape,
    confidence: f64,
    construction: Construction,
    /// Cholesky factor of sigma for ellipsoids (derived, not serialized).
    chol: Option<Vec<Vec<f64>>>,
}

fn critical_level(p: f64, one_sided: bool) -> f64 {
    if one_sided {
        p
    } else {
        0.5 * (1.0 + p)
    }
}

impl ConfidenceRegion {
    /// Scenario 1: Gaussian noise with known covariance, one observation.
    /// Ellipsoid centered at the observation with metric Sigma^-1 and radius
    /// the square root of the upper (1-p)/2 chi-squared critical value.
    pub fn chi_squared(
        observation: &[f64],
        sigma: &[Vec<f64>],
        p: f64,
        one_sided: bool,
    ) -> Result<Self> {
        let n = observation.len();
        check_confidence(p)?;
        if sigma.len() != n || sigma.iter().any(|row| row.len() != n) {
            return Err(Error::RegionDimension {
                region: n,
                vector: sigma.len(),
            });
        }
        let chol = cholesky(sigma).ok_or(Error::SingularMatrix)?;
        let crit = special::chi2_quantile(critical_level(p, one_sided), n);
        Ok(ConfidenceRegion {
            center: observation.to_vec(),
            shape: Shape::Ellipsoid {
                sigma: sigma.to_vec(),
                radius: crit.sqrt(),
            },
            confidence: p,
            construction: Construction {
                statistic: "chi2".into(),
                m: 1,
                n,
                critical_value: Some(crit),
            },
            chol: Some(chol),
        })
    }

    /// Scenario 2: Gaussian noise with unknown covariance, m > n observations.
    /// Ellipsoid centered at the sample mean with metric the inverse sample
    /// covariance and radius m^{-1/2} times the square root of the upper
    /// (1-p)/2 Hotelling T^2(n, m-1) critical value.
    pub fn hotelling(samples: &[Vec<f64>], p: f64, one_sided: bool) -> Result<Self> {
        check_confidence(p)?;
        let m = samples.len();
        let n = samples.first().map(|s| s.len()).unwrap_or(0);
        if m <= n || n == 0 {
            return Err(Error::TooFewSamples { m, n });
        }
        let mut mean = vec![0.0; n];
        for s in samples {
            for (mu, &v) in mean.iter_mut().zip(s) {
                *mu += v;
            }
        }
        for mu in &mut mean {
            *mu /= m as f64;
        }
        let mut cov = vec![vec![0.0; n]; n];
        for s in samples {
            for i in 0..n {
                for j in 0..n {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= (m - 1) as f64;
            }
        }
        let chol = cholesky(&cov).ok_or(Error::DegenerateCovariance)?;
        let crit = special::hotelling_t2_quantile(critical_level(p, one_sided), n, m - 1);
        Ok(ConfidenceRegion {
            center: mean,
            shape: Shape::Ellipsoid {
                sigma: cov,
                radius: crit.sqrt() / (m as f64).sqrt(),
            },
            confidence: p,
            construction: Construction {
                statistic: "hotelling_t2".into(),
                m,
                n,
                critical_value: Some(crit),
            },
            chol: Some(chol),
        })
    }

    /// Scenario 3: bounded noise of unknown distribution. A per-component
    /// Hoeffding interval at level 1 - (1-p)/n (union-bound allocation),
    /// intersected with the known support.
    pub fn hoeffding(
        samples: &[Vec<f64>],
        support_center: &[f64],
        half_widths: &[f64],
        p: f64,
    ) -> Result<Self> {
        check_confidence(p)?;
        let m = samples.len();
        let n = support_center.len();
        if m == 0 || n == 0 {
            return Err(Error::EmptyDataset);
        }
        if half_widths.len() != n {
            return Err(Error::RegionDimension {
                region: n,
                vector: half_widths.len(),
            });
        }
        if let Some(i) = half_widths.iter().position(|&d| d <= 0.0) {
            return Err(Error::NonPositiveHalfWidth { index: i });
        }
        let mut mean = vec![0.0; n];
        for s in samples {
            if s.len() != n {
                return Err(Error::RegionDimension {
                    region: n,
                    vector: s.len(),
                });
            }
            for (mu, &v) in mean.iter_mut().zip(s) {
                *mu += v;
            }
        }
        for mu in &mut mean {
            *mu /= m as f64;
        }
        let delta = (1.0 - p) / n as f64;
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        let mut center = vec![0.0; n];
        for j in 0..n {
            // Range of a sample is 2 D_j, so the bound is 2 D_j sqrt(ln(2/delta)/(2m)).
            let w = 2.0 * half_widths[j] * ((2.0 / delta).ln() / (2.0 * m as f64)).sqrt();
            lo[j] = (mean[j] - w).max(support_center[j] - half_widths[j]);
            hi[j] = (mean[j] + w).min(support_center[j] + half_widths[j]);
            center[j] = 0.5 * (lo[j] + hi[j]);
        }
        Ok(ConfidenceRegion {
            center,
            shape: Shape::Box { lo, hi },
            confidence: p,
            construction: Construction {
                statistic: "hoeffding".into(),
                m,
                n,
                critical_value: Some(((2.0 / delta).ln() / (2.0 * m as f64)).sqrt()),
            },
            chol: None,
        })
    }

    /// Scenario 4: a box given by domain experts, with the stated confidence
    /// taken at face value.
    pub fn fixed(lo: &[f64], hi: &[f64], p: f64) -> Result<Self> {
        check_confidence(p)?;
        if lo.len() != hi.len() {
            return Err(Error::RegionDimension {
                region: lo.len(),
                vector: hi.len(),
            });
        }
        if let Some(i) = lo.iter().zip(hi).position(|(l, h)| l > h) {
            return Err(Error::InvalidBounds { index: i });
        }
        let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        Ok(ConfidenceRegion {
            center,
            shape: Shape::Box {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            confidence: p,
            construction: Construction {
                statistic: "expert".into(),
                m: 0,
                n: lo.len(),
                critical_value: None,
            },
            chol: None,
        })
    }

    /// Single-point region (clean data).
    pub fn degenerate(point: &[f64]) -> Self {
        ConfidenceRegion {
            center: point.to_vec(),
            shape: Shape::Box {
                lo: point.to_vec(),
                hi: point.to_vec(),
            },
            confidence: 1.0,
            construction: Construction {
                statistic: "degenerate".into(),
                m: 0,
                n: point.len(),
                critical_value: None,
            },
            chol: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn construction(&self) -> &Construction {
        &self.construction
    }

    pub fn is_ellipsoid(&self) -> bool {
        matches!(self.shape, Shape::Ellipsoid { .. })
    }

    /// Box bounds when the region is a box.
    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match &self.shape {
            Shape::Box { lo, hi } => Some((lo, hi)),
            _ => None,
        }
    }

    /// Mahalanobis radius of ellipsoid regions.
    pub fn radius(&self) -> Option<f64> {
        match &self.shape {
            Shape::Ellipsoid { radius, .. } => Some(*radius),
            _ => None,
        }
    }

    /// Mahalanobis distance from the center (ellipsoids only).
    pub fn mahalanobis(&self, q: &[f64]) -> Option<f64> {
        match &self.shape {
            Shape::Ellipsoid { .. } => {
                let l = self.chol.as_ref().expect("ellipsoid keeps its factor");
                let d: Vec<f64> = q.iter().zip(&self.center).map(|(a, b)| a - b).collect();
                let y = solve_lower(l, &d);
                Some(y.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
            _ => None,
        }
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        if q.len() != self.dim() {
            return false;
        }
        match &self.shape {
            Shape::Ellipsoid { radius, .. } => {
                self.mahalanobis(q).unwrap() <= radius * (1.0 + 1e-12) + 1e-15
            }
            Shape::Box { lo, hi } => q
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&l, &h))| v >= l - 1e-12 && v <= h + 1e-12),
        }
    }

    /// Nearest member: identity inside; componentwise clip for boxes; radial
    /// scaling in the Mahalanobis metric for ellipsoids.
    pub fn project(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dim() {
            return Err(Error::RegionDimension {
                region: self.dim(),
                vector: q.len(),
            });
        }
        Ok(match &self.shape {
            Shape::Box { lo, hi } => q
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| v.clamp(l, h))
                .collect(),
            Shape::Ellipsoid { radius, .. } => {
                let l = self.chol.as_ref().expect("ellipsoid keeps its factor");
                let d: Vec<f64> = q.iter().zip(&self.center).map(|(a, b)| a - b).collect();
                let y = solve_lower(l, &d);
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= *radius {
                    q.to_vec()
                } else {
                    let scaled: Vec<f64> = y.iter().map(|v| v * radius / norm).collect();
                    let back = matvec_lower(l, &scaled);
                    back.iter().zip(&self.center).map(|(a, b)| a + b).collect()
                }
            }
        })
    }

    /// Uniform sample: per-component uniform for boxes, uniform in the
    /// Mahalanobis ball (whitened) for ellipsoids.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        match &self.shape {
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| if l == h { l } else { rng::uniform(rng, l, h) })
                .collect(),
            Shape::Ellipsoid { radius, .. } => {
                let l = self.chol.as_ref().expect("ellipsoid keeps its factor");
                let w = rng::unit_ball(rng, self.dim());
                let scaled: Vec<f64> = w.iter().map(|v| v * radius).collect();
                let back = matvec_lower(l, &scaled);
                back.iter().zip(&self.center).map(|(a, b)| a + b).collect()
            }
        }
    }

    pub fn sample_with_seed(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::rng_from_seed(seed);
        self.sample(&mut rng)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "center": self.center,
            "p": self.confidence,
            "construction": self.construction,
        });
        match &self.shape {
            Shape::Ellipsoid { sigma, radius } => {
                let l = self.chol.as_ref().expect("ellipsoid keeps its factor");
                v["kind"] = "ellipsoid".into();
                v["metric"] = serde_json::json!(spd_inverse(l));
                v["covariance"] = serde_json::json!(sigma);
                v["radius"] = serde_json::json!(radius);
            }
            Shape::Box { lo, hi } => {
                v["kind"] = "box".into();
                v["bounds"] = serde_json::json!({ "lo": lo, "hi": hi });
            }
        }
        v
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let center: Vec<f64> = serde_json::from_value(v["center"].clone())
            .map_err(|e| Error::Config(format!("region center: {e}")))?;
        let p = v["p"].as_f64().ok_or_else(|| Error::Config("region p".into()))?;
        let construction: Construction = serde_json::from_value(v["construction"].clone())
            .map_err(|e| Error::Config(format!("region construction: {e}")))?;
        match v["kind"].as_str() {
            Some("ellipsoid") => {
                let sigma: Vec<Vec<f64>> = serde_json::from_value(v["covariance"].clone())
                    .map_err(|e| Error::Config(format!("region covariance: {e}")))?;
                let radius = v["radius"]
                    .as_f64()
                    .ok_or_else(|| Error::Config("region radius".into()))?;
                let chol = cholesky(&sigma).ok_or(Error::SingularMatrix)?;
                Ok(ConfidenceRegion {
                    center,
                    shape: Shape::Ellipsoid { sigma, radius },
                    confidence: p,
                    construction,
                    chol: Some(chol),
                })
            }
            Some("box") => {
                let lo: Vec<f64> = serde_json::from_value(v["bounds"]["lo"].clone())
                    .map_err(|e| Error::Config(format!("region bounds: {e}")))?;
                let hi: Vec<f64> = serde_json::from_value(v["bounds"]["hi"].clone())
                    .map_err(|e| Error::Config(format!("region bounds: {e}")))?;
                Ok(ConfidenceRegion {
                    center,
                    shape: Shape::Box { lo, hi },
                    confidence: p,
                    construction,
                    chol: None,
                })
            }
            _ => Err(Error::Config("region kind must be ellipsoid or box".into())),
        }
    }
}

fn check_confidence(p: f64) -> Result<()> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Config(format!("confidence p must be in (0,1), got {p}")));
    }
    Ok(())
}
