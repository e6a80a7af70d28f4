//! IPW, regression (REG), bias-corrected doubly robust (DR-BC) and
//! weighted-regression (IP-WLS) estimators of average potential outcomes,
//! and the DE / IE / TE / OE contrasts built from them.
//!
//! Every estimator is an average over components of a per-component average
//! of node-level terms. For arm target `(z, alpha)`:
//!
//! - IPW: `w_i Y_i` with `w_i = 1(Z_i = z) a(S_i; K_i, alpha) / f_i`,
//! - REG: `m_i(z, Hbar_i(alpha))`,
//! - DR-BC: `m_i(z, Hbar_i(alpha)) + w_i (Y_i - m_i(Z_i, h_i))`,
//!
//! where `a(s; k, alpha) = alpha^s (1 - alpha)^(k - s)` is the probability of
//! one particular neighbourhood assignment, `f_i` the joint propensity and
//! `Hbar_i(alpha)` the expected exposure regressor. Marginal targets replace
//! `1(Z_i = z)` by `alpha^Z_i (1 - alpha)^(1 - Z_i)` and average `m` over `z`.

use serde::{Deserialize, Serialize};

use crate::allocation::{assignment_prob, bernoulli, check_alpha};
use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, NeighborhoodOrder, NodeData};
use crate::outcome::{predict_beta, propensity_counts, OutcomeDesign, OutcomeFit, OutcomeFrame, OutcomeVariant};
use crate::propensity::PropensityFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ipw,
    Reg,
    #[serde(rename = "drbc")]
    DrBc,
    #[serde(rename = "ipwls")]
    IpWls,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [EstimatorKind::Ipw, EstimatorKind::Reg, EstimatorKind::DrBc, EstimatorKind::IpWls];

    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Ipw => "IPW",
            EstimatorKind::Reg => "REG",
            EstimatorKind::DrBc => "DR-BC",
            EstimatorKind::IpWls => "IP-WLS",
        }
    }

    pub fn needs_propensity(&self) -> bool {
        !matches!(self, EstimatorKind::Reg)
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ipw" => Ok(EstimatorKind::Ipw),
            "reg" => Ok(EstimatorKind::Reg),
            "drbc" => Ok(EstimatorKind::DrBc),
            "ipwls" => Ok(EstimatorKind::IpWls),
            _ => Err(Error::Spec(format!("unknown estimator `{s}`"))),
        }
    }
}

/// An average potential outcome: `mu_{z, alpha}` or the marginal `mu_alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Arm { z: u8, alpha: f64 },
    Marginal { alpha: f64 },
}

impl Target {
    pub fn alpha(&self) -> f64 {
        match *self {
            Target::Arm { alpha, .. } | Target::Marginal { alpha } => alpha,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Target::Arm { z, alpha } => format!("mu({z},{alpha})"),
            Target::Marginal { alpha } => format!("mu({alpha})"),
        }
    }
}

/// How component averages are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Average of component averages.
    #[default]
    Canonical,
    /// Average over all nodes. Non-canonical; for comparison only.
    Global,
}

/// Per-component sums of node-level terms.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ComponentSums {
    pub sums: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl ComponentSums {
    pub fn mean(&self, pooling: Pooling) -> f64 {
        match pooling {
            Pooling::Canonical => {
                let total: f64 = self.sums.iter().zip(&self.sizes).map(|(s, &n)| s / n as f64).sum();
                total / self.sums.len() as f64
            }
            Pooling::Global => self.sums.iter().sum::<f64>() / self.sizes.iter().sum::<usize>() as f64,
        }
    }

    /// Estimating-function values `psi_nu(mu)`; they sum to zero at [`mean`](Self::mean).
    pub fn psi(&self, mu: f64, pooling: Pooling) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.sizes)
            .map(|(s, &n)| match pooling {
                Pooling::Canonical => s / n as f64 - mu,
                Pooling::Global => s - n as f64 * mu,
            })
            .collect()
    }

    fn component_means(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.sizes).map(|(s, &n)| s / n as f64).collect()
    }

    fn mix(a: &ComponentSums, wa: f64, b: &ComponentSums, wb: f64) -> ComponentSums {
        ComponentSums {
            sums: a.sums.iter().zip(&b.sums).map(|(x, y)| wa * x + wb * y).collect(),
            sizes: a.sizes.clone(),
        }
    }
}

/// One estimated average potential outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeMean {
    pub kind: EstimatorKind,
    pub target: Target,
    /// Pooled estimate.
    pub value: f64,
    /// Component averages `Yhat_nu`.
    pub per_component: Vec<f64>,
}

/// Causal contrasts of average potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimand {
    /// `mu_{1,alpha} - mu_{0,alpha}`.
    De { alpha: f64 },
    /// `mu_{0,alpha} - mu_{0,alpha'}`. The spillover among the treated is the
    /// same contrast on arm 1 and can be formed from the means directly.
    Ie { alpha: f64, alpha_prime: f64 },
    /// `mu_{1,alpha} - mu_{0,alpha'}`, computed as `DE + IE`.
    Te { alpha: f64, alpha_prime: f64 },
    /// `mu_alpha - mu_{alpha'}`.
    Oe { alpha: f64, alpha_prime: f64 },
}

impl Estimand {
    pub fn alpha(&self) -> f64 {
        match *self {
            Estimand::De { alpha } => alpha,
            Estimand::Ie { alpha, .. } | Estimand::Te { alpha, .. } | Estimand::Oe { alpha, .. } => alpha,
        }
    }

    pub fn alpha_prime(&self) -> Option<f64> {
        match *self {
            Estimand::De { .. } => None,
            Estimand::Ie { alpha_prime, .. } | Estimand::Te { alpha_prime, .. } | Estimand::Oe { alpha_prime, .. } => {
                Some(alpha_prime)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimand::De { .. } => "DE",
            Estimand::Ie { .. } => "IE",
            Estimand::Te { .. } => "TE",
            Estimand::Oe { .. } => "OE",
        }
    }

    pub fn label(&self) -> String {
        match self.alpha_prime() {
            None => format!("{}({})", self.name(), self.alpha()),
            Some(ap) => format!("{}({},{})", self.name(), self.alpha(), ap),
        }
    }

    /// The means the contrast is a linear combination of, with coefficients.
    pub fn contrast(&self) -> Vec<(Target, f64)> {
        match *self {
            Estimand::De { alpha } => vec![(Target::Arm { z: 1, alpha }, 1.0), (Target::Arm { z: 0, alpha }, -1.0)],
            Estimand::Ie { alpha, alpha_prime } => {
                vec![(Target::Arm { z: 0, alpha }, 1.0), (Target::Arm { z: 0, alpha: alpha_prime }, -1.0)]
            }
            Estimand::Te { alpha, alpha_prime } => {
                vec![(Target::Arm { z: 1, alpha }, 1.0), (Target::Arm { z: 0, alpha: alpha_prime }, -1.0)]
            }
            Estimand::Oe { alpha, alpha_prime } => {
                vec![(Target::Marginal { alpha }, 1.0), (Target::Marginal { alpha: alpha_prime }, -1.0)]
            }
        }
    }

    /// Point value given a lookup of means. `None` when a mean is missing.
    pub fn evaluate(&self, mean: &dyn Fn(Target) -> Option<f64>) -> Option<f64> {
        let arm = |z, alpha| mean(Target::Arm { z, alpha });
        match *self {
            Estimand::De { alpha } => Some(arm(1, alpha)? - arm(0, alpha)?),
            Estimand::Ie { alpha, alpha_prime } => Some(arm(0, alpha)? - arm(0, alpha_prime)?),
            Estimand::Te { alpha, alpha_prime } => {
                let de = Estimand::De { alpha }.evaluate(mean)?;
                let ie = Estimand::Ie { alpha, alpha_prime }.evaluate(mean)?;
                Some(de + ie)
            }
            Estimand::Oe { alpha, alpha_prime } => {
                Some(mean(Target::Marginal { alpha })? - mean(Target::Marginal { alpha: alpha_prime })?)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha())?;
        if let Some(ap) = self.alpha_prime() {
            check_alpha(ap)?;
        }
        Ok(())
    }
}

/// Distinct targets needed for a set of estimands, in first-use order.
pub fn required_targets(estimands: &[Estimand]) -> Result<Vec<Target>> {
    let mut out: Vec<Target> = Vec::new();
    for e in estimands {
        e.validate()?;
        for (t, _) in e.contrast() {
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// A point estimate of one contrast with optional sandwich interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EstimatorKind,
    pub estimand: Estimand,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Contrasts for `estimands` from one estimator's means. Estimands whose
/// means are missing are left out.
pub fn effects(kind: EstimatorKind, means: &[PotentialOutcomeMean], estimands: &[Estimand]) -> Vec<EffectEstimate> {
    let lookup = |t: Target| means.iter().find(|m| m.kind == kind && m.target == t).map(|m| m.value);
    estimands
        .iter()
        .filter_map(|e| {
            e.evaluate(&lookup).map(|point| EffectEstimate { kind, estimand: *e, point, se: None, ci: None })
        })
        .collect()
}

/// Quantities shared by every estimator on one dataset: exposure regressors,
/// covariate terms, propensity-set counts and (optionally) joint propensities.
#[derive(Debug, Clone)]
pub struct EstimationContext {
    pub(crate) frame: OutcomeFrame,
    pub(crate) s_p: Vec<usize>,
    pub(crate) k_p: Vec<usize>,
    log_f: Option<Vec<f64>>,
    floored: usize,
    pooling: Pooling,
}

impl EstimationContext {
    /// `order` fixes whose treatments enter the IP weights; it must match the
    /// propensity model.
    pub fn new(g: &ComponentGraph, data: &NodeData, design: &OutcomeDesign, order: NeighborhoodOrder) -> Result<Self> {
        let frame = OutcomeFrame::new(g, data, design)?;
        let (s_p, k_p) = propensity_counts(g, data, order);
        Ok(Self { frame, s_p, k_p, log_f: None, floored: 0, pooling: Pooling::Canonical })
    }

    /// Builds a context whose IP weights come from a fitted treatment model.
    pub fn with_propensity(g: &ComponentGraph, data: &NodeData, design: &OutcomeDesign, fit_p: &PropensityFit) -> Result<Self> {
        let ctx = Self::new(g, data, design, fit_p.order())?;
        let f = fit_p.observed_propensities(g, data)?;
        ctx.with_floored_log_propensities(f.log_f, f.floored)
    }

    /// Supplies `log f_i` directly, e.g. known propensities.
    pub fn with_log_propensities(self, log_f: Vec<f64>) -> Result<Self> {
        self.with_floored_log_propensities(log_f, 0)
    }

    fn with_floored_log_propensities(mut self, log_f: Vec<f64>, floored: usize) -> Result<Self> {
        if log_f.len() != self.frame.n() {
            return Err(Error::Data("propensity vector misaligned with nodes".into()));
        }
        self.log_f = Some(log_f);
        self.floored = floored;
        Ok(self)
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    /// Nodes whose joint propensity was floored.
    pub fn floored(&self) -> usize {
        self.floored
    }

    pub fn design(&self) -> &OutcomeDesign {
        &self.frame.design
    }

    pub(crate) fn log_f(&self) -> Result<&[f64]> {
        self.log_f
            .as_deref()
            .ok_or_else(|| Error::Spec("estimator needs joint propensities but none were supplied".into()))
    }

    /// IP weights for `target` (zero for off-arm nodes).
    pub(crate) fn weights(&self, target: Target, log_f: &[f64]) -> Result<Vec<f64>> {
        check_alpha(target.alpha())?;
        let mut w = Vec::with_capacity(self.frame.n());
        for i in 0..self.frame.n() {
            let zi = self.frame.z[i];
            let v = match target {
                Target::Arm { z, alpha } => {
                    if zi == z {
                        assignment_prob(self.s_p[i], self.k_p[i], alpha) * (-log_f[i]).exp()
                    } else {
                        0.0
                    }
                }
                Target::Marginal { alpha } => {
                    bernoulli(zi, alpha) * assignment_prob(self.s_p[i], self.k_p[i], alpha) * (-log_f[i]).exp()
                }
            };
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite IP weight at node {i}")));
            }
            w.push(v);
        }
        Ok(w)
    }

    fn accumulate(&self, term: impl Fn(usize) -> f64) -> ComponentSums {
        let comps = &self.frame.components;
        ComponentSums {
            sums: comps.iter().map(|c| c.iter().map(|&i| term(i)).sum()).collect(),
            sizes: comps.iter().map(|c| c.len()).collect(),
        }
    }

    pub(crate) fn ipw_sums(&self, target: Target, log_f: &[f64]) -> Result<ComponentSums> {
        let w = self.weights(target, log_f)?;
        Ok(self.accumulate(|i| w[i] * self.frame.y[i]))
    }

    fn regression_terms(&self, target: Target, beta: &[f64], arm: bool) -> Result<Vec<f64>> {
        check_alpha(target.alpha())?;
        let hbar = self.frame.expected_h(target.alpha())?;
        let inter = self.frame.design.interaction;
        Ok((0..self.frame.n())
            .map(|i| {
                let x = self.frame.x_row(i);
                match target {
                    Target::Arm { z, .. } => predict_beta(beta, arm, inter, z, hbar[i], &x),
                    Target::Marginal { alpha } => {
                        alpha * predict_beta(beta, arm, inter, 1, hbar[i], &x)
                            + (1.0 - alpha) * predict_beta(beta, arm, inter, 0, hbar[i], &x)
                    }
                }
            })
            .collect())
    }

    pub(crate) fn reg_sums(&self, target: Target, beta: &[f64], arm: bool) -> Result<ComponentSums> {
        let r = self.regression_terms(target, beta, arm)?;
        Ok(self.accumulate(|i| r[i]))
    }

    pub(crate) fn drbc_sums(&self, target: Target, beta: &[f64], arm: bool, log_f: &[f64]) -> Result<ComponentSums> {
        let r = self.regression_terms(target, beta, arm)?;
        let w = self.weights(target, log_f)?;
        let inter = self.frame.design.interaction;
        Ok(self.accumulate(|i| {
            let fitted = predict_beta(beta, arm, inter, self.frame.z[i], self.frame.h[i], &self.frame.x_row(i));
            r[i] + w[i] * (self.frame.y[i] - fitted)
        }))
    }

    /// IP-WLS sums from arm-specific coefficients (`beta[z]`).
    pub(crate) fn ipwls_sums(&self, target: Target, beta0: &[f64], beta1: &[f64]) -> Result<ComponentSums> {
        match target {
            Target::Arm { z, alpha } => {
                let beta = if z == 1 { beta1 } else { beta0 };
                self.reg_sums(Target::Arm { z, alpha }, beta, true)
            }
            Target::Marginal { alpha } => {
                let s1 = self.reg_sums(Target::Arm { z: 1, alpha }, beta1, true)?;
                let s0 = self.reg_sums(Target::Arm { z: 0, alpha }, beta0, true)?;
                Ok(ComponentSums::mix(&s1, alpha, &s0, 1.0 - alpha))
            }
        }
    }

    fn finish(&self, kind: EstimatorKind, target: Target, sums: ComponentSums) -> PotentialOutcomeMean {
        PotentialOutcomeMean { kind, target, value: sums.mean(self.pooling), per_component: sums.component_means() }
    }

    pub fn ipw(&self, target: Target) -> Result<PotentialOutcomeMean> {
        let sums = self.ipw_sums(target, self.log_f()?)?;
        Ok(self.finish(EstimatorKind::Ipw, target, sums))
    }

    /// Regression estimator from a pooled (non-arm) outcome fit.
    pub fn reg(&self, fit_o: &OutcomeFit, target: Target) -> Result<PotentialOutcomeMean> {
        self.check_fit(fit_o, false)?;
        let sums = self.reg_sums(target, fit_o.beta(), false)?;
        Ok(self.finish(EstimatorKind::Reg, target, sums))
    }

    pub fn drbc(&self, fit_o: &OutcomeFit, target: Target) -> Result<PotentialOutcomeMean> {
        let arm = fit_o.variant().arm().is_some();
        self.check_fit(fit_o, arm)?;
        let sums = self.drbc_sums(target, fit_o.beta(), arm, self.log_f()?)?;
        Ok(self.finish(EstimatorKind::DrBc, target, sums))
    }

    /// IP-WLS for the arm target matching a weighted fit's `(z, alpha)`.
    pub fn ipwls_arm(&self, fit_z: &OutcomeFit) -> Result<PotentialOutcomeMean> {
        let (z, alpha) = weighted_arm(fit_z)?;
        self.check_fit(fit_z, true)?;
        let target = Target::Arm { z, alpha };
        let sums = self.reg_sums(target, fit_z.beta(), true)?;
        Ok(self.finish(EstimatorKind::IpWls, target, sums))
    }

    /// Marginal IP-WLS from the two arm fits at the same `alpha`.
    pub fn ipwls_marginal(&self, fit_0: &OutcomeFit, fit_1: &OutcomeFit) -> Result<PotentialOutcomeMean> {
        let (z0, a0) = weighted_arm(fit_0)?;
        let (z1, a1) = weighted_arm(fit_1)?;
        if z0 != 0 || z1 != 1 || a0 != a1 {
            return Err(Error::Spec("marginal IP-WLS needs arm 0 and arm 1 fits at the same alpha".into()));
        }
        self.check_fit(fit_0, true)?;
        self.check_fit(fit_1, true)?;
        let target = Target::Marginal { alpha: a0 };
        let sums = self.ipwls_sums(target, fit_0.beta(), fit_1.beta())?;
        Ok(self.finish(EstimatorKind::IpWls, target, sums))
    }

    fn check_fit(&self, fit: &OutcomeFit, arm: bool) -> Result<()> {
        if fit.design() != &self.frame.design {
            return Err(Error::Spec("outcome fit was made with a different design".into()));
        }
        if fit.variant().arm().is_some() != arm {
            return Err(Error::Spec("regression estimator needs a fit on all nodes, not an arm-specific fit".into()));
        }
        Ok(())
    }
}

fn weighted_arm(fit: &OutcomeFit) -> Result<(u8, f64)> {
    match fit.variant() {
        OutcomeVariant::Wls { z, alpha } | OutcomeVariant::Wlmm { z, alpha } => Ok((z, alpha)),
        _ => Err(Error::Spec("IP-WLS needs an arm-specific weighted fit".into())),
    }
}

fn arm_target(z: u8, alpha: f64) -> Target {
    Target::Arm { z, alpha }
}

/// IPW estimate of `mu_{z, alpha}`.
pub fn ipw_mean(g: &ComponentGraph, data: &NodeData, fit_p: &PropensityFit, z: u8, alpha: f64) -> Result<PotentialOutcomeMean> {
    EstimationContext::with_propensity(g, data, &OutcomeDesign::default(), fit_p)?.ipw(arm_target(z, alpha))
}

/// IPW estimate of `mu_alpha`.
pub fn ipw_mean_marginal(g: &ComponentGraph, data: &NodeData, fit_p: &PropensityFit, alpha: f64) -> Result<PotentialOutcomeMean> {
    EstimationContext::with_propensity(g, data, &OutcomeDesign::default(), fit_p)?.ipw(Target::Marginal { alpha })
}

/// Regression estimate of `mu_{z, alpha}`.
pub fn reg_mean(g: &ComponentGraph, data: &NodeData, fit_o: &OutcomeFit, z: u8, alpha: f64) -> Result<PotentialOutcomeMean> {
    EstimationContext::new(g, data, fit_o.design(), NeighborhoodOrder::First)?.reg(fit_o, arm_target(z, alpha))
}

/// Regression estimate of `mu_alpha`.
pub fn reg_mean_marginal(g: &ComponentGraph, data: &NodeData, fit_o: &OutcomeFit, alpha: f64) -> Result<PotentialOutcomeMean> {
    EstimationContext::new(g, data, fit_o.design(), NeighborhoodOrder::First)?.reg(fit_o, Target::Marginal { alpha })
}

/// DR-BC estimate of `mu_{z, alpha}`.
pub fn drbc_mean(
    g: &ComponentGraph,
    data: &NodeData,
    fit_p: &PropensityFit,
    fit_o: &OutcomeFit,
    z: u8,
    alpha: f64,
) -> Result<PotentialOutcomeMean> {
    EstimationContext::with_propensity(g, data, fit_o.design(), fit_p)?.drbc(fit_o, arm_target(z, alpha))
}

/// DR-BC estimate of `mu_alpha`.
pub fn drbc_mean_marginal(
    g: &ComponentGraph,
    data: &NodeData,
    fit_p: &PropensityFit,
    fit_o: &OutcomeFit,
    alpha: f64,
) -> Result<PotentialOutcomeMean> {
    EstimationContext::with_propensity(g, data, fit_o.design(), fit_p)?.drbc(fit_o, Target::Marginal { alpha })
}

/// IP-WLS estimate of `mu_{z, alpha}` with a fixed-effects weighted fit.
pub fn ipwls_mean(
    g: &ComponentGraph,
    data: &NodeData,
    fit_p: &PropensityFit,
    design: &OutcomeDesign,
    z: u8,
    alpha: f64,
) -> Result<PotentialOutcomeMean> {
    let fit = crate::outcome::fit_wls(g, data, design, fit_p, z, alpha)?;
    EstimationContext::new(g, data, design, fit_p.order())?.ipwls_arm(&fit)
}
