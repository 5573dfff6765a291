//! Heterogeneous-firm model with superstar spillovers.
//!
//! Firms draw a capability `λ`; productivity is `φ = λ c exp(αH + τB + ψF)`.
//! Demand is CES with aggregate shifter `Θ`, so total revenue is
//! `Θ^{1-ρ} q^ρ` and optimal profit is `(1-ρ) Θ (ρφ/w)^{ρ/(1-ρ)} - f`.
//! Everything is evaluated in logs to stay finite for extreme parameters.

mod dist;
mod endogenous;
mod equilibrium;
pub mod quad;
mod sim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dist::{CapabilityDist, QUAD_TOL, TAIL_MASS};
pub use endogenous::{simulate_endogenous, EndogenousConfig, EndogenousSample};
pub use equilibrium::{aggregate_productivity_tilde, equilibrium_distribution, PowerConvention, TruncatedDist};
pub use sim::{simulate_panel, GroundTruth, SimPanelConfig, TruthRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub rho: f64,
    pub theta: f64,
    pub w: f64,
    pub f: f64,
    pub f_e: f64,
    pub delta: f64,
    pub alpha: f64,
    pub tau: f64,
    pub psi: f64,
    pub c: f64,
    pub capability_dist: CapabilityDist,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            rho: 0.75,
            theta: 1.0,
            w: 1.0,
            f: 0.5,
            f_e: 0.2,
            delta: 0.1,
            alpha: 0.005,
            tau: 0.002,
            psi: 0.002,
            c: 1.0,
            capability_dist: CapabilityDist::default(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.validate_shared()?;
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// The simulator also accepts `delta = 0` (no exit).
    pub(crate) fn validate_for_simulation(&self) -> Result<()> {
        self.validate_shared()?;
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config("delta", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn validate_shared(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("rho", "must lie in (0, 1)"));
        }
        for (name, v) in [("theta", self.theta), ("w", self.w), ("c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive and finite"));
            }
        }
        for (name, v) in [("f", self.f), ("f_e", self.f_e)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be non-negative and finite"));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("tau", self.tau), ("psi", self.psi)] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        self.capability_dist.validate()
    }

    /// `ρ / (1 - ρ)`.
    fn markup_exponent(&self) -> f64 {
        self.rho / (1.0 - self.rho)
    }

    fn elasticity(&self, channel: Channel) -> f64 {
        match channel {
            Channel::H => self.alpha,
            Channel::B => self.tau,
            Channel::F => self.psi,
        }
    }

    /// `αH + τB + ψF`.
    pub fn spill_shift(&self, e: &SpillExposure) -> f64 {
        self.alpha * e.hspill + self.tau * e.bspill + self.psi * e.fspill
    }
}

/// Spillover exposure of a firm's market cell; `hspill` is in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpillExposure {
    pub hspill: f64,
    pub bspill: f64,
    pub fspill: f64,
}

impl SpillExposure {
    pub fn new(hspill: f64, bspill: f64, fspill: f64) -> Self {
        SpillExposure { hspill, bspill, fspill }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.hspill, self.bspill, self.fspill];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "exposure {self:?} must be finite and non-negative"
            )));
        }
        if self.hspill > 100.0 {
            return Err(Error::Domain(format!("hspill {} exceeds 100", self.hspill)));
        }
        Ok(())
    }

    fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::H => self.hspill,
            Channel::B => self.bspill,
            Channel::F => self.fspill,
        }
    }

    fn with(mut self, channel: Channel, v: f64) -> Self {
        match channel {
            Channel::H => self.hspill = v,
            Channel::B => self.bspill = v,
            Channel::F => self.fspill = v,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    H,
    B,
    F,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::H, Channel::B, Channel::F];
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} must be positive")))
    }
}

pub fn productivity_phi(lambda: f64, e: &SpillExposure, p: &ModelParams) -> Result<f64> {
    positive("lambda", lambda)?;
    Ok(lambda * p.spill_shift(e).exp() * p.c)
}

/// Profit-maximizing price `w / (ρ φ)`.
pub fn optimal_price(phi: f64, p: &ModelParams) -> Result<f64> {
    positive("phi", phi)?;
    Ok(p.w / (p.rho * phi))
}

/// Profit-maximizing quantity `Θ (ρφ/w)^{1/(1-ρ)}`.
pub fn optimal_quantity(phi: f64, p: &ModelParams) -> Result<f64> {
    positive("phi", phi)?;
    Ok(p.theta * ((p.rho * phi / p.w).ln() / (1.0 - p.rho)).exp())
}

fn profit_from_ln_phi(ln_phi: f64, p: &ModelParams) -> f64 {
    let a = p.markup_exponent();
    let ln_variable = (1.0 - p.rho).ln() + p.theta.ln() + a * (p.rho.ln() + ln_phi - p.w.ln());
    ln_variable.exp() - p.f
}

/// Per-period optimal profit at productivity `phi`.
pub fn profit_at_phi(phi: f64, p: &ModelParams) -> Result<f64> {
    positive("phi", phi)?;
    Ok(profit_from_ln_phi(phi.ln(), p))
}

pub fn optimal_profit(lambda: f64, e: &SpillExposure, p: &ModelParams) -> Result<f64> {
    positive("lambda", lambda)?;
    Ok(profit_from_ln_phi(lambda.ln() + p.spill_shift(e) + p.c.ln(), p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub lambda: f64,
    /// Set when `f = 0`, where every firm is profitable and the cutoff is 0.
    pub degenerate: bool,
}

/// Zero-profit capability, the exact root of [`optimal_profit`].
pub fn cutoff_capability(e: &SpillExposure, p: &ModelParams) -> Result<Cutoff> {
    if p.f == 0.0 {
        return Ok(Cutoff {
            lambda: 0.0,
            degenerate: true,
        });
    }
    let a = p.markup_exponent();
    let ln_phi = ((p.f / ((1.0 - p.rho) * p.theta)).ln()) / a - p.rho.ln() + p.w.ln();
    let ln_lambda = ln_phi - p.spill_shift(e) - p.c.ln();
    Ok(Cutoff {
        lambda: ln_lambda.exp(),
        degenerate: false,
    })
}

/// Survivor integrals at the cutoff: mass `S`, `N = ∫ ln λ g`, and `λ*`.
struct Survivors {
    cutoff: f64,
    mass: f64,
    ln_mass: f64,
}

fn survivors(e: &SpillExposure, p: &ModelParams) -> Result<Survivors> {
    let cutoff = cutoff_capability(e, p)?.lambda;
    let closed = p.capability_dist.survival(cutoff);
    if closed < TAIL_MASS {
        return Err(Error::EmptyMarket { mass: closed });
    }
    let tol = QUAD_TOL * closed.min(1.0);
    let mass = p.capability_dist.integrate_above(cutoff, |_| 1.0, tol)?;
    if mass < TAIL_MASS {
        return Err(Error::EmptyMarket { mass });
    }
    let ln_mass = p.capability_dist.integrate_above(cutoff, |u| u, tol)?;
    Ok(Survivors { cutoff, mass, ln_mass })
}

/// `E[ln φ | λ ≥ λ*]`.
pub fn expected_log_productivity(e: &SpillExposure, p: &ModelParams) -> Result<f64> {
    let s = survivors(e, p)?;
    Ok(p.spill_shift(e) + p.c.ln() + s.ln_mass / s.mass)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalEffect {
    pub direct: f64,
    pub indirect: f64,
    pub total: f64,
}

/// Derivative of [`expected_log_productivity`] with respect to one exposure,
/// split into the productivity shift itself and the selection effect of the
/// moving cutoff.
pub fn spillover_marginal_effect(e: &SpillExposure, p: &ModelParams, channel: Channel) -> Result<MarginalEffect> {
    let s = survivors(e, p)?;
    let direct = p.elasticity(channel);
    // λ* = K exp(-elasticity × exposure)
    let dcut = -direct * s.cutoff;
    // d/dλ* of the truncated mean of ln λ
    let density = p.capability_dist.pdf(s.cutoff);
    let indirect = if density == 0.0 || dcut == 0.0 {
        0.0
    } else {
        density / s.mass * (s.ln_mass / s.mass - s.cutoff.ln()) * dcut
    };
    Ok(MarginalEffect {
        direct,
        indirect,
        total: direct + indirect,
    })
}

/// Centered finite difference of [`expected_log_productivity`] along one channel.
pub fn finite_difference_effect(e: &SpillExposure, p: &ModelParams, channel: Channel, step: f64) -> Result<f64> {
    let x = e.get(channel);
    let up = expected_log_productivity(&e.with(channel, x + step), p)?;
    let down = expected_log_productivity(&e.with(channel, x - step), p)?;
    Ok((up - down) / (2.0 * step))
}

/// Value of a firm with productivity `phi`: `max(0, π(φ)/δ)`.
pub fn entry_value(phi: f64, p: &ModelParams) -> Result<f64> {
    if !(p.delta > 0.0) {
        return Err(Error::Domain(format!("delta = {} must be positive", p.delta)));
    }
    Ok((profit_at_phi(phi, p)? / p.delta).max(0.0))
}
