//! End-to-end analysis: fit the nuisance models, compute the requested
//! estimators, and attach sandwich standard errors to every contrast.
//!
//! Each estimator gets its own stack `theta = (targets, outcome, propensity)`.
//! Variance components sitting at their zero boundary are held fixed rather
//! than stacked, since the score is not centred there.

use std::borrow::Cow;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    required_targets, EffectEstimate, Estimand, EstimationContext, EstimatorKind, Pooling, PotentialOutcomeMean,
    Target,
};
use crate::graph::{ComponentGraph, NodeData};
use crate::mestimation::{critical_value, wald_interval, SandwichOptions, SandwichResult, Stack};
use crate::outcome::{
    fit_lmm, fit_ols, fit_wlmm_weighted, fit_wls_weighted, Multilevel, OutcomeDesign, OutcomeFit, OutcomeVariant,
};
use crate::propensity::{fit_propensity, interference_sets, ObservedPropensities, PropensityFit, PropensityModel, PropensitySpec};

/// Variance components below this (for `sigma2_c`, relative to `sigma2_eps`)
/// are treated as sitting on the boundary.
pub const BOUNDARY: f64 = 1e-4;

/// Fixed-effects or random-intercept outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    #[default]
    Fixed,
    Multilevel,
}

/// Everything needed to go from data to effect estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub propensity: PropensitySpec,
    pub outcome: OutcomeDesign,
    pub outcome_model: OutcomeModel,
    pub estimators: Vec<EstimatorKind>,
    pub estimands: Vec<Estimand>,
    pub pooling: Pooling,
    /// Inflate the sandwich meat by `m / (m - p)`.
    pub small_sample: bool,
    pub confidence: f64,
    /// Compute sandwich standard errors.
    pub variance: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            propensity: PropensitySpec::default(),
            outcome: OutcomeDesign::default(),
            outcome_model: OutcomeModel::Fixed,
            estimators: EstimatorKind::ALL.to_vec(),
            estimands: vec![Estimand::De { alpha: 0.5 }],
            pooling: Pooling::Canonical,
            small_sample: false,
            confidence: 0.95,
            variance: true,
        }
    }
}

impl AnalysisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::Spec("no estimators requested".into()));
        }
        if self.estimands.is_empty() {
            return Err(Error::Spec("no estimands requested".into()));
        }
        required_targets(&self.estimands)?;
        critical_value(self.confidence)?;
        if self.propensity.quadrature_points == 0 {
            return Err(Error::Spec("quadrature needs at least one point".into()));
        }
        Ok(())
    }
}

/// Fitted (or failed) nuisance models shared by the estimators.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub propensity: Option<Result<PropensityFit>>,
    pub outcome: Option<Result<OutcomeFit>>,
}

/// Fits whichever nuisance models the requested estimators need.
pub fn fit_nuisance(g: &ComponentGraph, data: &NodeData, spec: &AnalysisSpec) -> NuisanceFits {
    let needs_p = spec.estimators.iter().any(|k| k.needs_propensity());
    let needs_o = spec.estimators.iter().any(|k| matches!(k, EstimatorKind::Reg | EstimatorKind::DrBc));
    NuisanceFits {
        propensity: needs_p.then(|| fit_propensity(g, data, &spec.propensity)),
        outcome: needs_o.then(|| fit_outcome(g, data, spec)),
    }
}

pub fn fit_outcome(g: &ComponentGraph, data: &NodeData, spec: &AnalysisSpec) -> Result<OutcomeFit> {
    match spec.outcome_model {
        OutcomeModel::Fixed => fit_ols(g, data, &spec.outcome),
        OutcomeModel::Multilevel => fit_lmm(g, data, &spec.outcome),
    }
}

/// Per-estimator diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Nodes whose joint propensity was floored.
    pub floored: usize,
    pub condition: Option<f64>,
    pub max_mean_psi: Option<f64>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    /// Compact `key=value` rendering for tabular output.
    pub fn summary(&self) -> String {
        let mut parts = vec![format!("floored={}", self.floored)];
        if let Some(c) = self.condition {
            parts.push(format!("cond={c:.3e}"));
        }
        for w in &self.warnings {
            parts.push(format!("warn={w}"));
        }
        parts.join(";")
    }
}

/// One estimator's output.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub kind: EstimatorKind,
    pub means: Vec<PotentialOutcomeMean>,
    /// Contrasts with sandwich SE and Wald interval when available.
    pub effects: Vec<EffectEstimate>,
    pub sandwich: Option<SandwichResult>,
    /// Why the sandwich could not be computed.
    pub variance_error: Option<Error>,
    /// Weighted fits used by IP-WLS.
    pub arm_fits: Vec<OutcomeFit>,
    pub diagnostics: Diagnostics,
}

/// Output of [`analyze`].
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub fits: NuisanceFits,
    pub estimators: Vec<(EstimatorKind, Result<EstimatorReport>)>,
}

/// Fits the nuisance models and runs every requested estimator.
pub fn analyze(g: &ComponentGraph, data: &NodeData, spec: &AnalysisSpec) -> Result<AnalysisReport> {
    spec.validate()?;
    data.check_aligned(g)?;
    let fits = fit_nuisance(g, data, spec);
    estimate(g, data, spec, fits)
}

/// Runs the estimators given already fitted nuisance models.
pub fn estimate(g: &ComponentGraph, data: &NodeData, spec: &AnalysisSpec, fits: NuisanceFits) -> Result<AnalysisReport> {
    spec.validate()?;
    let targets = required_targets(&spec.estimands)?;
    let estimators = spec
        .estimators
        .iter()
        .map(|&kind| (kind, run_estimator(g, data, spec, &fits, &targets, kind)))
        .collect();
    Ok(AnalysisReport { fits, estimators })
}

fn take<'a, T>(fit: &'a Option<Result<T>>, what: &str) -> Result<&'a T> {
    match fit {
        Some(Ok(f)) => Ok(f),
        Some(Err(e)) => Err(e.clone()),
        None => Err(Error::Spec(format!("{what} model was not fitted"))),
    }
}

fn run_estimator(
    g: &ComponentGraph,
    data: &NodeData,
    spec: &AnalysisSpec,
    fits: &NuisanceFits,
    targets: &[Target],
    kind: EstimatorKind,
) -> Result<EstimatorReport> {
    let fit_p = if kind.needs_propensity() { Some(take(&fits.propensity, "treatment")?) } else { None };
    let fit_o = if matches!(kind, EstimatorKind::Reg | EstimatorKind::DrBc) {
        Some(take(&fits.outcome, "outcome")?)
    } else {
        None
    };
    let ctx = match fit_p {
        Some(fp) => EstimationContext::with_propensity(g, data, &spec.outcome, fp)?,
        None => EstimationContext::new(g, data, &spec.outcome, spec.propensity.order)?,
    }
    .with_pooling(spec.pooling);

    let mut diagnostics = Diagnostics { floored: ctx.floored(), ..Default::default() };
    if ctx.floored() > 0 {
        diagnostics.warnings.push(format!("{} joint propensities floored", ctx.floored()));
    }
    if kind == EstimatorKind::IpWls && spec.outcome_model == OutcomeModel::Multilevel {
        diagnostics.warnings.push("no DR guarantee for IP-WLS with a multilevel outcome model".into());
    }

    let mut arm_fits: Vec<OutcomeFit> = Vec::new();
    if kind == EstimatorKind::IpWls {
        let log_f = ctx.log_f()?.to_vec();
        for (z, alpha) in arm_pairs(targets) {
            let w = ctx.weights(Target::Arm { z, alpha }, &log_f)?;
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::Insufficient(format!("all weights are zero for arm {z} at alpha {alpha}")));
            }
            let fit = match spec.outcome_model {
                OutcomeModel::Fixed => fit_wls_weighted(g, data, &spec.outcome, &w, z, alpha)?,
                OutcomeModel::Multilevel => fit_wlmm_weighted(g, data, &spec.outcome, &w, z, alpha)?,
            };
            arm_fits.push(fit);
        }
    }

    let means: Vec<PotentialOutcomeMean> = targets
        .iter()
        .map(|&t| match kind {
            EstimatorKind::Ipw => ctx.ipw(t),
            EstimatorKind::Reg => ctx.reg(fit_o.expect("outcome fit"), t),
            EstimatorKind::DrBc => ctx.drbc(fit_o.expect("outcome fit"), t),
            EstimatorKind::IpWls => match t {
                Target::Arm { z, alpha } => ctx.ipwls_arm(find_arm(&arm_fits, z, alpha)),
                Target::Marginal { alpha } => {
                    ctx.ipwls_marginal(find_arm(&arm_fits, 0, alpha), find_arm(&arm_fits, 1, alpha))
                }
            },
        })
        .collect::<Result<_>>()?;

    let mut effects = crate::estimators::effects(kind, &means, &spec.estimands);
    let (sandwich, variance_error) = if spec.variance {
        let built = StackInputs { g, data, ctx: &ctx, spec, fit_p, fit_o, arm_fits: &arm_fits, targets, means: &means };
        match built.sandwich(kind) {
            Ok(res) => (Some(res), None),
            Err(e) => (None, Some(e)),
        }
    } else {
        (None, None)
    };
    if let Some(res) = &sandwich {
        diagnostics.condition = Some(res.condition);
        diagnostics.max_mean_psi = Some(res.max_mean_psi);
        diagnostics.warnings.extend(res.warnings.iter().cloned());
        let zc = critical_value(spec.confidence)?;
        for e in &mut effects {
            let mut tau = vec![0.0; res.theta.len()];
            for (t, c) in e.estimand.contrast() {
                let j = targets.iter().position(|x| *x == t).expect("target in stack");
                tau[j] += c;
            }
            let se = res.contrast_se(&tau)?;
            e.se = Some(se);
            e.ci = Some(wald_interval(e.point, se, zc));
        }
    }
    if let Some(e) = &variance_error {
        diagnostics.warnings.push(format!("variance failed: {e}"));
    }
    Ok(EstimatorReport { kind, means, effects, sandwich, variance_error, arm_fits, diagnostics })
}

fn arm_pairs(targets: &[Target]) -> Vec<(u8, f64)> {
    let mut out: Vec<(u8, f64)> = Vec::new();
    for t in targets {
        let pairs = match *t {
            Target::Arm { z, alpha } => vec![(z, alpha)],
            Target::Marginal { alpha } => vec![(0, alpha), (1, alpha)],
        };
        for p in pairs {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

fn find_arm(fits: &[OutcomeFit], z: u8, alpha: f64) -> &OutcomeFit {
    fits.iter()
        .find(|f| f.variant().arm() == Some(z) && arm_alpha(f) == alpha)
        .expect("arm fit for every required pair")
}

fn arm_alpha(f: &OutcomeFit) -> f64 {
    match f.variant() {
        OutcomeVariant::Wls { alpha, .. } | OutcomeVariant::Wlmm { alpha, .. } => alpha,
        _ => f64::NAN,
    }
}

struct StackInputs<'a> {
    g: &'a ComponentGraph,
    data: &'a NodeData,
    ctx: &'a EstimationContext,
    spec: &'a AnalysisSpec,
    fit_p: Option<&'a PropensityFit>,
    fit_o: Option<&'a OutcomeFit>,
    arm_fits: &'a [OutcomeFit],
    targets: &'a [Target],
    means: &'a [PotentialOutcomeMean],
}

/// Positions of one outcome fit's parameters in `theta`.
#[derive(Debug, Clone)]
struct OutcomeSlots {
    beta: Vec<usize>,
    s2e: Option<usize>,
    s2c: Option<usize>,
    fixed_s2c: f64,
}

impl OutcomeSlots {
    fn push(fit: &OutcomeFit, prefix: &str, theta: &mut Vec<f64>, names: &mut Vec<String>) -> Self {
        let mut beta = Vec::new();
        for (b, n) in fit.beta().iter().zip(fit.names()) {
            beta.push(theta.len());
            theta.push(*b);
            names.push(format!("{prefix}{n}"));
        }
        let (mut s2e, mut s2c, mut fixed_s2c) = (None, None, 0.0);
        if fit.variant().is_multilevel() {
            let e = fit.sigma2_eps().expect("multilevel fit has sigma2_eps");
            let c = fit.sigma2_c().expect("multilevel fit has sigma2_c");
            s2e = Some(theta.len());
            theta.push(e);
            names.push(format!("{prefix}sigma2_eps"));
            if c >= BOUNDARY * e {
                s2c = Some(theta.len());
                theta.push(c);
                names.push(format!("{prefix}sigma2_c"));
            } else {
                fixed_s2c = c;
            }
        }
        Self { beta, s2e, s2c, fixed_s2c }
    }

    fn deps(&self) -> Vec<usize> {
        self.beta.iter().copied().chain(self.s2e).chain(self.s2c).collect()
    }

    fn beta(&self, theta: &[f64]) -> Vec<f64> {
        self.beta.iter().map(|&k| theta[k]).collect()
    }

    fn scores(&self, ml: &Multilevel, theta: &[f64]) -> DMatrix<f64> {
        let beta = self.beta(theta);
        match self.s2e {
            None => ml.scores(&beta, 1.0, 0.0, &[]),
            Some(ie) => {
                let s2c = self.s2c.map_or(self.fixed_s2c, |k| theta[k]);
                let free: Vec<usize> = if self.s2c.is_some() { vec![0, 1] } else { vec![0] };
                ml.scores(&beta, theta[ie], s2c, &free)
            }
        }
    }
}

/// Propensity parameters in `theta` and cached observed propensities.
struct PropensitySlots<'a> {
    model: PropensityModel,
    sets: Vec<Vec<usize>>,
    gamma: Vec<usize>,
    phi: Option<usize>,
    fit: &'a PropensityFit,
    cached: Vec<f64>,
}

impl<'a> PropensitySlots<'a> {
    fn push(
        g: &ComponentGraph,
        data: &NodeData,
        fit: &'a PropensityFit,
        cached: Vec<f64>,
        theta: &mut Vec<f64>,
        names: &mut Vec<String>,
    ) -> Result<Self> {
        let model = PropensityModel::new(g, data, fit.terms(), fit.rule().clone())?;
        let mut gamma = Vec::new();
        for (v, n) in fit.gamma().iter().zip(fit.coefficient_names()) {
            gamma.push(theta.len());
            theta.push(*v);
            names.push(format!("ps:{n}"));
        }
        let phi = if fit.phi_b() >= BOUNDARY {
            theta.push(fit.phi_b());
            names.push("ps:phi_b".into());
            Some(theta.len() - 1)
        } else {
            None
        };
        Ok(Self { model, sets: interference_sets(g, fit.order()), gamma, phi, fit, cached })
    }

    fn deps(&self) -> Vec<usize> {
        self.gamma.iter().copied().chain(self.phi).collect()
    }

    fn params(&self, theta: &[f64]) -> (Vec<f64>, f64) {
        let gamma = self.gamma.iter().map(|&k| theta[k]).collect();
        (gamma, self.phi.map_or(self.fit.phi_b(), |k| theta[k]))
    }

    fn log_f(&self, theta: &[f64]) -> Cow<'_, [f64]> {
        let (gamma, phi) = self.params(theta);
        if gamma == self.fit.gamma() && phi == self.fit.phi_b() {
            return Cow::Borrowed(&self.cached);
        }
        let raw = self.model.observed_log_propensities(&gamma, phi, &self.sets);
        Cow::Owned(ObservedPropensities::from_raw(raw, self.fit.floor()).log_f)
    }

    fn scores(&self, theta: &[f64]) -> DMatrix<f64> {
        let (mut gamma, phi) = self.params(theta);
        let p = gamma.len();
        gamma.push(phi);
        let full = self.model.score_matrix(&gamma);
        let cols = if self.phi.is_some() { p + 1 } else { p };
        full.columns(0, cols).into_owned()
    }
}

impl StackInputs<'_> {
    fn sandwich(&self, kind: EstimatorKind) -> Result<SandwichResult> {
        let frame = &self.ctx.frame;
        let m = frame.components.len();
        let pooling = self.ctx.pooling();
        let mut theta: Vec<f64> = self.means.iter().map(|mu| mu.value).collect();
        let mut names: Vec<String> = self.targets.iter().map(|t| format!("{}:{}", kind.label(), t.label())).collect();
        let nt = self.targets.len();

        let outcome = self.fit_o.map(|f| OutcomeSlots::push(f, "om:", &mut theta, &mut names));
        let arms: Vec<OutcomeSlots> = self
            .arm_fits
            .iter()
            .map(|f| {
                let prefix = format!("om[z={},a={}]:", f.variant().arm().unwrap_or(0), arm_alpha(f));
                OutcomeSlots::push(f, &prefix, &mut theta, &mut names)
            })
            .collect();
        let prop = match self.fit_p {
            Some(fp) => Some(PropensitySlots::push(
                self.g,
                self.data,
                fp,
                self.ctx.log_f()?.to_vec(),
                &mut theta,
                &mut names,
            )?),
            None => None,
        };

        let arm_keys: Vec<(u8, f64)> = self.arm_fits.iter().map(|f| (f.variant().arm().unwrap_or(0), arm_alpha(f))).collect();
        let mut stack = Stack::new(theta, names, m)?;
        let target_idx: Vec<usize> = (0..nt).collect();
        let ctx = self.ctx;
        let targets = self.targets;

        let mut deps = target_idx.clone();
        if let Some(o) = &outcome {
            deps.extend(o.beta.iter().copied());
        }
        if kind == EstimatorKind::IpWls {
            for a in &arms {
                deps.extend(a.beta.iter().copied());
            }
        }
        if kind != EstimatorKind::Reg && kind != EstimatorKind::IpWls {
            if let Some(p) = &prop {
                deps.extend(p.deps());
            }
        }

        let prop_ref = prop.as_ref();
        let outcome_ref = outcome.as_ref();
        let arms_ref = &arms;
        let arm_keys_ref = &arm_keys;
        stack.push(nt, deps, move |th: &[f64]| {
            let mut out = DMatrix::zeros(m, nt);
            for (j, &t) in targets.iter().enumerate() {
                let sums = match kind {
                    EstimatorKind::Ipw => ctx.ipw_sums(t, &prop_ref.expect("propensity").log_f(th))?,
                    EstimatorKind::Reg => ctx.reg_sums(t, &outcome_ref.expect("outcome").beta(th), false)?,
                    EstimatorKind::DrBc => ctx.drbc_sums(
                        t,
                        &outcome_ref.expect("outcome").beta(th),
                        false,
                        &prop_ref.expect("propensity").log_f(th),
                    )?,
                    EstimatorKind::IpWls => {
                        let beta_for = |z: u8| {
                            let k = arm_keys_ref
                                .iter()
                                .position(|&(az, aa)| az == z && aa == t.alpha())
                                .or_else(|| arm_keys_ref.iter().position(|&(az, _)| az == z));
                            k.map(|k| arms_ref[k].beta(th)).unwrap_or_default()
                        };
                        ctx.ipwls_sums(t, &beta_for(0), &beta_for(1))?
                    }
                };
                for (nu, v) in sums.psi(th[j], pooling).into_iter().enumerate() {
                    out[(nu, j)] = v;
                }
            }
            Ok(out)
        })?;

        if let Some(o) = outcome_ref {
            let rows = frame.rows(false);
            let ml = Multilevel::new(rows, frame.y.clone(), vec![1.0; frame.n()], &frame.components);
            let len = o.deps().len();
            stack.push(len, o.deps(), move |th: &[f64]| Ok(o.scores(&ml, th)))?;
        }

        for (slots, &(z, alpha)) in arms_ref.iter().zip(arm_keys_ref) {
            let p = prop_ref.expect("IP-WLS has a propensity model");
            let rows = frame.rows(true);
            let mut deps = slots.deps();
            deps.extend(p.deps());
            let len = slots.deps().len();
            stack.push(len, deps, move |th: &[f64]| {
                let w = ctx.weights(Target::Arm { z, alpha }, &p.log_f(th))?;
                let ml = Multilevel::new(rows.clone(), frame.y.clone(), w, &frame.components);
                Ok(slots.scores(&ml, th))
            })?;
        }

        if let Some(p) = prop_ref {
            let len = p.deps().len();
            stack.push(len, p.deps(), move |th: &[f64]| Ok(p.scores(th)))?;
        }

        stack.sandwich(SandwichOptions { small_sample: self.spec.small_sample })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Term;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    /// Components of 8 nodes on a ring, covariate x, random-intercept treatment.
    fn dataset(m: usize, seed: u64, noise: f64) -> (ComponentGraph, NodeData) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).unwrap();
        let size = 8;
        let n = m * size;
        let mut edges = Vec::new();
        for c in 0..m {
            for k in 0..size {
                edges.push((c * size + k, c * size + (k + 1) % size));
            }
        }
        let g = ComponentGraph::load(&edges, n).unwrap();
        let x: Vec<f64> = (0..n).map(|_| std.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..m).map(|_| 0.7 * std.sample(&mut rng)).collect();
        let z: Vec<u8> = (0..n)
            .map(|i| {
                let p = 1.0 / (1.0 + (-(0.1 + 0.5 * x[i] + b[i / size])).exp());
                u8::from(rng.random::<f64>() < p)
            })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let s = g.neighborhood_treatment_sum(&z, i).unwrap() as f64 / 2.0;
                let zf = f64::from(z[i]);
                1.0 + 2.0 * zf + s + zf * s + x[i] + noise * std.sample(&mut rng)
            })
            .collect();
        (g, NodeData::new(vec!["x".into()], vec![x], z, y).unwrap())
    }

    fn spec() -> AnalysisSpec {
        AnalysisSpec {
            propensity: PropensitySpec { terms: vec![Term::column("x")], ..Default::default() },
            outcome: OutcomeDesign { terms: vec![Term::column("x")], ..Default::default() },
            estimands: vec![
                Estimand::De { alpha: 0.5 },
                Estimand::Ie { alpha: 0.7, alpha_prime: 0.3 },
                Estimand::Te { alpha: 0.7, alpha_prime: 0.3 },
                Estimand::Oe { alpha: 0.6, alpha_prime: 0.6 },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn full_pipeline_runs_for_every_estimator() {
        let (g, d) = dataset(40, 1, 1.0);
        let report = analyze(&g, &d, &spec()).unwrap();
        for (kind, r) in &report.estimators {
            let r = r.as_ref().unwrap_or_else(|e| panic!("{kind}: {e}"));
            let res = r.sandwich.as_ref().unwrap_or_else(|| panic!("{kind}: {:?}", r.variance_error));
            assert!(res.max_mean_psi < 1e-3, "{kind}: {}", res.max_mean_psi);
            let de = &r.effects[0];
            // DE(0.5) = 2 + 0.5 in this design
            assert!((de.point - 2.5).abs() < 4.0 * de.se.unwrap() + 0.05, "{kind}: {:?}", de);
            let oe = &r.effects[3];
            assert_eq!(oe.point, 0.0);
            assert!(oe.se.unwrap() < 1e-9);
            for e in &r.effects {
                let (lo, hi) = e.ci.unwrap();
                assert!(lo <= e.point && e.point <= hi);
            }
        }
    }

    #[test]
    fn regression_se_vanishes_without_noise() {
        let (g, d) = dataset(30, 2, 0.0);
        let s = AnalysisSpec { estimators: vec![EstimatorKind::Reg], ..spec() };
        let report = analyze(&g, &d, &s).unwrap();
        let r = report.estimators[0].1.as_ref().unwrap();
        assert!(r.effects[0].se.unwrap() < 1e-6);
        assert!((r.effects[0].point - 2.5).abs() < 1e-9);
    }

    #[test]
    fn multilevel_pipeline_and_warning() {
        let (g, d) = dataset(40, 3, 1.0);
        let s = AnalysisSpec { outcome_model: OutcomeModel::Multilevel, ..spec() };
        let report = analyze(&g, &d, &s).unwrap();
        for (kind, r) in &report.estimators {
            let r = r.as_ref().unwrap_or_else(|e| panic!("{kind}: {e}"));
            assert!(r.sandwich.is_some(), "{kind}: {:?}", r.variance_error);
            let warned = r.diagnostics.warnings.iter().any(|w| w.contains("no DR guarantee"));
            assert_eq!(warned, *kind == EstimatorKind::IpWls);
        }
    }

    #[test]
    fn failing_treatment_model_only_affects_dependent_estimators() {
        let (g, d) = dataset(10, 4, 1.0);
        let mut s = spec();
        s.propensity.terms = vec![Term::column("x"), Term::column("x")];
        let report = analyze(&g, &d, &s).unwrap();
        for (kind, r) in &report.estimators {
            assert_eq!(r.is_ok(), *kind == EstimatorKind::Reg, "{kind}");
        }
        assert!(matches!(report.estimators[0].1, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(AnalysisSpec { estimators: vec![], ..spec() }.validate().is_err());
        assert!(AnalysisSpec { estimands: vec![Estimand::De { alpha: -0.1 }], ..spec() }.validate().is_err());
    }
}
