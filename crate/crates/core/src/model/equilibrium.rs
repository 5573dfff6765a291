use serde::{Deserialize, Serialize};

use super::dist::{CapabilityDist, QUAD_TOL, TAIL_MASS};
use super::ModelParams;
use crate::error::{Error, Result};

/// Productivity distribution of survivors: `g` renormalized above `phi_star`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedDist {
    pub dist: CapabilityDist,
    pub phi_star: f64,
    /// `∫_{φ*} g`, computed by the same quadrature used for expectations.
    pub mass: f64,
}

impl TruncatedDist {
    pub fn pdf(&self, phi: f64) -> f64 {
        if phi < self.phi_star {
            0.0
        } else {
            self.dist.pdf(phi) / self.mass
        }
    }

    /// `∫ h(ln φ) μ(φ) dφ`.
    pub fn expect<H: Fn(f64) -> f64>(&self, h: H) -> Result<f64> {
        Ok(self.dist.integrate_above(self.phi_star, h, QUAD_TOL * self.mass)? / self.mass)
    }

    pub fn total_mass(&self) -> Result<f64> {
        self.expect(|_| 1.0)
    }
}

pub fn equilibrium_distribution(params: &ModelParams, phi_star: f64) -> Result<TruncatedDist> {
    let dist = params.capability_dist;
    dist.validate()?;
    let closed = dist.survival(phi_star);
    if closed <= TAIL_MASS {
        return Err(Error::EmptyMarket { mass: closed });
    }
    let mass = dist.integrate_above(phi_star, |_| 1.0, QUAD_TOL * closed.min(1.0))?;
    if mass <= TAIL_MASS {
        return Err(Error::EmptyMarket { mass });
    }
    Ok(TruncatedDist { dist, phi_star, mass })
}

/// Exponent convention inside the survivors' power mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerConvention {
    /// `φ^{σ-1}`, the CES aggregate.
    #[default]
    Standard,
    /// `φ^{1-σ}` as typeset in the source derivation.
    AsPrinted,
}

/// `[ E(φ^{σ-1} | φ ≥ φ*) ]^{1/(σ-1)}`.
pub fn aggregate_productivity_tilde(
    params: &ModelParams,
    phi_star: f64,
    sigma: f64,
    convention: PowerConvention,
) -> Result<f64> {
    if !(sigma > 1.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma = {sigma} must exceed 1")));
    }
    let e = match convention {
        PowerConvention::Standard => sigma - 1.0,
        PowerConvention::AsPrinted => 1.0 - sigma,
    };
    match params.capability_dist {
        CapabilityDist::Pareto { shape, .. } if e >= shape => {
            return Err(Error::Divergence(format!(
                "Pareto shape {shape} does not exceed power {e}"
            )));
        }
        CapabilityDist::Uniform { low, .. } if low == 0.0 && phi_star <= 0.0 && e <= -1.0 => {
            return Err(Error::Divergence(format!("power {e} is not integrable at zero")));
        }
        _ => {}
    }
    let mu = equilibrium_distribution(params, phi_star)?;
    let m = mu.expect(|u| (e * u).exp())?;
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::Divergence(format!("power mean integral is {m}")));
    }
    Ok(m.powf(1.0 / (sigma - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(dist: CapabilityDist) -> ModelParams {
        ModelParams {
            capability_dist: dist,
            ..ModelParams::default()
        }
    }

    #[test]
    fn uniform_truncation() {
        let p = with(CapabilityDist::Uniform { low: 0.0, high: 1.0 });
        let mu = equilibrium_distribution(&p, 0.5).unwrap();
        assert!((mu.pdf(0.75) - 2.0).abs() < 1e-12);
        assert_eq!(mu.pdf(0.25), 0.0);
        assert!((mu.total_mass().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn below_support_is_unchanged() {
        let p = with(CapabilityDist::Pareto { scale: 2.0, shape: 3.0 });
        let mu = equilibrium_distribution(&p, 1.0).unwrap();
        assert!((mu.pdf(3.0) - p.capability_dist.pdf(3.0)).abs() < 1e-10);
    }

    #[test]
    fn point_mass_power_mean() {
        let p = with(CapabilityDist::PointMass { at: 1.7 });
        for sigma in [1.5, 3.0, 8.0] {
            for conv in [PowerConvention::Standard, PowerConvention::AsPrinted] {
                let v = aggregate_productivity_tilde(&p, 1.0, sigma, conv).unwrap();
                let expect = match conv {
                    PowerConvention::Standard => 1.7,
                    PowerConvention::AsPrinted => 1.7f64.powf(-1.0),
                };
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heavy_tail_diverges() {
        let p = with(CapabilityDist::Pareto { scale: 1.0, shape: 2.0 });
        assert!(matches!(
            aggregate_productivity_tilde(&p, 1.0, 4.0, PowerConvention::Standard),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn empty_market() {
        let p = with(CapabilityDist::Uniform { low: 0.0, high: 1.0 });
        assert!(matches!(
            equilibrium_distribution(&p, 1.0),
            Err(Error::EmptyMarket { .. })
        ));
    }

    #[test]
    fn pareto_closed_form() {
        // E[φ^k | φ ≥ t] = shape t^k / (shape - k) for t ≥ scale
        let p = with(CapabilityDist::Pareto { scale: 1.0, shape: 4.0 });
        let (t, sigma) = (1.5f64, 3.0);
        let k = sigma - 1.0;
        let exact = (4.0 * t.powf(k) / (4.0 - k)).powf(1.0 / k);
        let v = aggregate_productivity_tilde(&p, t, sigma, PowerConvention::Standard).unwrap();
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
    }
}
