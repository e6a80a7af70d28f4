//! Bernoulli allocation weights.
//!
//! Under allocation strategy `alpha` every node is treated independently with
//! probability `alpha`, so the treated count among `d` neighbours is
//! Binomial(d, alpha).

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// A counterfactual policy treating each node independently with probability `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    alpha: f64,
}

impl AllocationPolicy {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn pi_neighborhood(&self, s: usize, d: usize) -> Result<f64> {
        pi_neighborhood(s, d, self.alpha)
    }

    pub fn pi_joint(&self, z: u8, s: usize, d: usize) -> Result<f64> {
        pi_joint(z, s, d, self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Domain(format!("allocation probability {alpha} outside [0, 1]")))
    }
}

/// Probability that `s` of `d` neighbours are treated: `C(d,s) a^s (1-a)^(d-s)`.
pub fn pi_neighborhood(s: usize, d: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if s > d {
        return Err(Error::Domain(format!("treated count {s} exceeds neighbourhood size {d}")));
    }
    if alpha == 0.0 {
        return Ok(if s == 0 { 1.0 } else { 0.0 });
    }
    if alpha == 1.0 {
        return Ok(if s == d { 1.0 } else { 0.0 });
    }
    let log = ln_binomial(d as u64, s as u64)
        + s as f64 * alpha.ln()
        + (d - s) as f64 * (-alpha).ln_1p();
    Ok(log.exp())
}

/// Joint probability of own treatment `z` and `s` treated neighbours out of `d`.
pub fn pi_joint(z: u8, s: usize, d: usize, alpha: f64) -> Result<f64> {
    if z > 1 {
        return Err(Error::Domain(format!("treatment {z} is not 0/1")));
    }
    Ok(bernoulli(z, alpha) * pi_neighborhood(s, d, alpha)?)
}

/// Probability of one specific neighbourhood vector with `s` treated out of
/// `k`, i.e. `pi_neighborhood / C(k, s)`.
pub fn assignment_prob(s: usize, k: usize, alpha: f64) -> f64 {
    debug_assert!(s <= k);
    alpha.powi(s as i32) * (1.0 - alpha).powi((k - s) as i32)
}

#[inline]
pub(crate) fn bernoulli(z: u8, alpha: f64) -> f64 {
    if z == 1 {
        alpha
    } else {
        1.0 - alpha
    }
}
