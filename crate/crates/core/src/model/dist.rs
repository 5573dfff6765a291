use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::quad;
use crate::error::{Error, Result};

/// Quantile at which log-normal tails are first cut before chunked extension.
pub const TAIL_MASS: f64 = 1e-12;
/// Absolute quadrature tolerance relative to the unit mass of the density.
pub const QUAD_TOL: f64 = 1e-10;

const MAX_TAIL_CHUNKS: usize = 200;

/// Capability density `g(λ)` on `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapabilityDist {
    /// `ln λ ~ N(mu, sigma²)`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// `P(λ > x) = (scale / x)^shape` for `x ≥ scale`.
    Pareto {
        scale: f64,
        shape: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// All firms share one capability.
    PointMass {
        at: f64,
    },
}

impl Default for CapabilityDist {
    fn default() -> Self {
        CapabilityDist::LogNormal { mu: 0.0, sigma: 0.5 }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl CapabilityDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CapabilityDist::LogNormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            CapabilityDist::Pareto { scale, shape } => {
                scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite()
            }
            CapabilityDist::Uniform { low, high } => low >= 0.0 && high > low && high.is_finite(),
            CapabilityDist::PointMass { at } => at > 0.0 && at.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("capability_dist", format!("invalid parameters {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            CapabilityDist::LogNormal { mu, sigma } => std_normal().pdf((x.ln() - mu) / sigma) / (sigma * x),
            CapabilityDist::Pareto { scale, shape } => {
                if x < scale {
                    0.0
                } else {
                    shape / x * (scale / x).powf(shape)
                }
            }
            CapabilityDist::Uniform { low, high } => {
                if (low..=high).contains(&x) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            CapabilityDist::PointMass { .. } => 0.0,
        }
    }

    /// `P(λ ≥ t)` in closed form.
    pub fn survival(&self, t: f64) -> f64 {
        match *self {
            CapabilityDist::LogNormal { mu, sigma } => {
                if t <= 0.0 {
                    1.0
                } else {
                    std_normal().sf((t.ln() - mu) / sigma)
                }
            }
            CapabilityDist::Pareto { scale, shape } => {
                if t <= scale {
                    1.0
                } else {
                    (scale / t).powf(shape)
                }
            }
            CapabilityDist::Uniform { low, high } => ((high - t) / (high - low)).clamp(0.0, 1.0),
            CapabilityDist::PointMass { at } => {
                if at >= t {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    /// Mean and standard deviation of `ln λ`.
    pub fn ln_moments(&self) -> (f64, f64) {
        match *self {
            CapabilityDist::LogNormal { mu, sigma } => (mu, sigma),
            CapabilityDist::Pareto { scale, shape } => (scale.ln() + 1.0 / shape, 1.0 / shape),
            CapabilityDist::Uniform { low, high } => {
                // antiderivatives of ln x and ln² x
                let f1 = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() - x };
                let f2 = |x: f64| {
                    if x == 0.0 {
                        0.0
                    } else {
                        let l = x.ln();
                        x * (l * l - 2.0 * l + 2.0)
                    }
                };
                let m1 = (f1(high) - f1(low)) / (high - low);
                let m2 = (f2(high) - f2(low)) / (high - low);
                (m1, (m2 - m1 * m1).max(0.0).sqrt())
            }
            CapabilityDist::PointMass { at } => (at.ln(), 0.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CapabilityDist::LogNormal { mu, sigma } => {
                rng.sample(rand_distr::LogNormal::new(mu, sigma).expect("validated"))
            }
            CapabilityDist::Pareto { scale, shape } => {
                rng.sample(rand_distr::Pareto::new(scale, shape).expect("validated"))
            }
            CapabilityDist::Uniform { low, high } => {
                // open at zero so ln λ stays finite
                loop {
                    let x = rng.random_range(low..high);
                    if x > 0.0 {
                        break x;
                    }
                }
            }
            CapabilityDist::PointMass { at } => at,
        }
    }

    /// `∫_{λ ≥ t} h(ln λ) g(λ) dλ` by adaptive quadrature; `tol` is absolute.
    pub fn integrate_above<H: Fn(f64) -> f64>(&self, t: f64, h: H, tol: f64) -> Result<f64> {
        let ln_t = if t > 0.0 { t.ln() } else { f64::NEG_INFINITY };
        match *self {
            CapabilityDist::LogNormal { mu, sigma } => {
                let n = std_normal();
                let z = n.inverse_cdf(TAIL_MASS);
                let g = |u: f64| h(u) * n.pdf((u - mu) / sigma) / sigma;
                let hi = mu - z * sigma;
                let lo = mu + z * sigma;
                if ln_t >= hi {
                    return Ok(0.0);
                }
                let start = ln_t.max(lo);
                let mut total = quad::integrate(g, start, hi, tol)?;
                // Extend past the quantile cut while the integrand still
                // carries weight there (power moments tilt the mass outward).
                let mut edge = hi;
                for _ in 0..MAX_TAIL_CHUNKS {
                    let chunk = quad::integrate(g, edge, edge + sigma, tol)?;
                    total += chunk;
                    edge += sigma;
                    if chunk.abs() <= tol {
                        break;
                    }
                }
                if ln_t < lo {
                    let mut edge = lo;
                    for _ in 0..MAX_TAIL_CHUNKS {
                        let left = (edge - sigma).max(ln_t);
                        let chunk = quad::integrate(g, left, edge, tol)?;
                        total += chunk;
                        edge = left;
                        if chunk.abs() <= tol || edge <= ln_t {
                            break;
                        }
                    }
                }
                Ok(total)
            }
            CapabilityDist::Pareto { scale, shape } => {
                // substitute v = P(λ ≥ x): λ = scale v^{-1/shape}, dv = g dλ
                let top = self.survival(t);
                if top <= 0.0 {
                    return Ok(0.0);
                }
                let ls = scale.ln();
                quad::integrate(|v| h(ls - v.ln() / shape), 0.0, top, tol)
            }
            CapabilityDist::Uniform { low, high } => {
                let lo = t.max(low);
                if lo >= high {
                    return Ok(0.0);
                }
                let d = high - low;
                quad::integrate(|x| if x > 0.0 { h(x.ln()) / d } else { 0.0 }, lo, high, tol)
            }
            CapabilityDist::PointMass { at } => Ok(if at >= t { h(at.ln()) } else { 0.0 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn masses_integrate_to_one() {
        for d in [
            CapabilityDist::LogNormal { mu: 0.3, sigma: 0.8 },
            CapabilityDist::Pareto { scale: 1.0, shape: 3.0 },
            CapabilityDist::Uniform { low: 0.0, high: 1.0 },
            CapabilityDist::PointMass { at: 2.0 },
        ] {
            let m = d.integrate_above(0.0, |_| 1.0, QUAD_TOL).unwrap();
            assert!((m - 1.0).abs() < 1e-10, "{d:?}: {m}");
        }
    }

    #[test]
    fn survival_matches_quadrature() {
        let d = CapabilityDist::Pareto { scale: 0.5, shape: 2.5 };
        let m = d.integrate_above(1.3, |_| 1.0, QUAD_TOL).unwrap();
        assert!((m - d.survival(1.3)).abs() < 1e-10);
    }

    #[test]
    fn ln_moments_match_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for d in [
            CapabilityDist::Pareto { scale: 2.0, shape: 4.0 },
            CapabilityDist::Uniform { low: 0.5, high: 3.0 },
        ] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng).ln()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let (m, s) = d.ln_moments();
            assert!((mean - m).abs() < 4.0 * s / (n as f64).sqrt() + 1e-12, "{d:?}");
            assert!((sd - s).abs() < 0.01 * s, "{d:?}");
        }
    }
}
