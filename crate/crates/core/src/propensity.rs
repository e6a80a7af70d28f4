//! Random-intercept logistic treatment model and joint neighbourhood
//! propensities.
//!
//! Within component `nu` treatments are independent given a shared intercept
//! `b ~ N(0, phi_b)`, with `P(Z_j = 1 | b) = logistic(x_j' gamma + b)`. Every
//! integral over `b` uses a fixed Gauss–Hermite rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{check_full_rank, term_matrix, Term};
use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, NeighborhoodOrder, NodeData};
use crate::optim;
use crate::quadrature::GaussHermite;

const REL_TOL: f64 = 1e-8;
const MAX_ITERS: u64 = 500;

/// Treatment-model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensitySpec {
    /// Covariate terms; an intercept is always added.
    pub terms: Vec<Term>,
    /// Which neighbours enter the joint propensity.
    pub order: NeighborhoodOrder,
    /// Gauss–Hermite points.
    pub quadrature_points: usize,
    /// Joint propensities below this are floored and counted.
    pub floor: f64,
}

impl Default for PropensitySpec {
    fn default() -> Self {
        Self { terms: Vec::new(), order: NeighborhoodOrder::First, quadrature_points: 10, floor: 1e-12 }
    }
}

/// Fitted treatment model.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    gamma: Vec<f64>,
    phi_b: f64,
    rule: GaussHermite,
    terms: Vec<Term>,
    order: NeighborhoodOrder,
    floor: f64,
    loglik: f64,
    converged: bool,
    iterations: u64,
}

/// Log joint propensities of the observed treatments, after flooring.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPropensities {
    pub log_f: Vec<f64>,
    /// Nodes whose propensity fell below the floor.
    pub floored: usize,
}

impl ObservedPropensities {
    pub(crate) fn from_raw(mut log_f: Vec<f64>, floor: f64) -> Self {
        let lf = floor.ln();
        let mut floored = 0;
        for v in &mut log_f {
            if !(*v >= lf) {
                *v = lf;
                floored += 1;
            }
        }
        Self { log_f, floored }
    }
}

impl PropensityFit {
    /// A model with given coefficients, e.g. a known data-generating process.
    pub fn from_parameters(terms: Vec<Term>, gamma: Vec<f64>, phi_b: f64, q: usize) -> Result<Self> {
        if gamma.len() != terms.len() + 1 {
            return Err(Error::Spec(format!(
                "{} coefficients for {} terms plus intercept",
                gamma.len(),
                terms.len()
            )));
        }
        if !(phi_b >= 0.0 && phi_b.is_finite()) {
            return Err(Error::Domain(format!("random-intercept variance {phi_b} must be >= 0")));
        }
        Ok(Self {
            gamma,
            phi_b,
            rule: GaussHermite::new(q)?,
            terms,
            order: NeighborhoodOrder::First,
            floor: 1e-12,
            loglik: f64::NAN,
            converged: true,
            iterations: 0,
        })
    }

    /// Sets which neighbours enter the joint propensity.
    pub fn with_order(mut self, order: NeighborhoodOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn order(&self) -> NeighborhoodOrder {
        self.order
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Joint propensity of each node's observed treatment and that of its
    /// interference set (per [`order`](Self::order)).
    pub fn observed_propensities(&self, g: &ComponentGraph, data: &NodeData) -> Result<ObservedPropensities> {
        let model = PropensityModel::new(g, data, &self.terms, self.rule.clone())?;
        let sets = interference_sets(g, self.order);
        let raw = model.observed_log_propensities(&self.gamma, self.phi_b, &sets);
        Ok(ObservedPropensities::from_raw(raw, self.floor))
    }

    /// `(intercept, terms...)` coefficients.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn phi_b(&self) -> f64 {
        self.phi_b
    }

    pub fn rule(&self) -> &GaussHermite {
        &self.rule
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Maximized marginal log-likelihood (NaN when built from parameters).
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string()).chain(self.terms.iter().map(|t| t.to_string())).collect()
    }

    /// `x_j' gamma` for every node.
    pub fn linear_predictor(&self, data: &NodeData) -> Result<Vec<f64>> {
        let x = design(data, &self.terms)?;
        Ok((x * DVector::from_column_slice(&self.gamma)).as_slice().to_vec())
    }
}

pub(crate) fn interference_sets(g: &ComponentGraph, order: NeighborhoodOrder) -> Vec<Vec<usize>> {
    (0..g.n_nodes()).map(|i| g.interference_set(i, order)).collect()
}

fn design(data: &NodeData, terms: &[Term]) -> Result<DMatrix<f64>> {
    let t = term_matrix(data, terms)?;
    let n = data.n_nodes();
    Ok(DMatrix::from_fn(n, terms.len() + 1, |i, k| if k == 0 { 1.0 } else { t[(i, k - 1)] }))
}

/// `log(logistic(x))`, stable in both tails.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log of `E_b[prod_j p_j^{z_j} (1 - p_j)^{1 - z_j}]`, `p_j = logistic(eta_j + b)`,
/// `b ~ N(0, phi_b)`.
pub fn log_integrate_joint(eta: &[f64], z: &[u8], phi_b: f64, rule: &GaussHermite) -> f64 {
    let (b, w) = rule.normal_points(phi_b);
    let terms: Vec<f64> = b
        .iter()
        .zip(&w)
        .map(|(&bq, &wq)| {
            wq.ln()
                + eta
                    .iter()
                    .zip(z)
                    .map(|(&e, &zj)| log_sigmoid(if zj == 1 { e + bq } else { -(e + bq) }))
                    .sum::<f64>()
        })
        .collect();
    log_sum_exp(&terms)
}

/// Joint probability of own treatment `z` and neighbour treatments `z_nbr`
/// (aligned with `g.neighbors(i)`).
pub fn joint_propensity(
    fit: &PropensityFit,
    g: &ComponentGraph,
    data: &NodeData,
    i: usize,
    z: u8,
    z_nbr: &[u8],
) -> Result<f64> {
    data.check_aligned(g)?;
    let nbrs = g.neighbors(i);
    if z_nbr.len() != nbrs.len() {
        return Err(Error::Data(format!(
            "{} neighbour treatments for degree {}",
            z_nbr.len(),
            nbrs.len()
        )));
    }
    let eta = fit.linear_predictor(data)?;
    let mut e = vec![eta[i]];
    let mut zz = vec![z];
    e.extend(nbrs.iter().map(|&j| eta[j]));
    zz.extend_from_slice(z_nbr);
    Ok(log_integrate_joint(&e, &zz, fit.phi_b, &fit.rule).exp())
}

/// As [`joint_propensity`] with the product also over second-order neighbours
/// (`z_nbr2` aligned with `g.second_order_neighbors(i)`).
pub fn joint_propensity_second_order(
    fit: &PropensityFit,
    g: &ComponentGraph,
    data: &NodeData,
    i: usize,
    z: u8,
    z_nbr1: &[u8],
    z_nbr2: &[u8],
) -> Result<f64> {
    data.check_aligned(g)?;
    let first = g.neighbors(i);
    let second = g.second_order_neighbors(i);
    if z_nbr1.len() != first.len() || z_nbr2.len() != second.len() {
        return Err(Error::Data("neighbour treatment vectors misaligned".into()));
    }
    let eta = fit.linear_predictor(data)?;
    let mut e = vec![eta[i]];
    let mut zz = vec![z];
    e.extend(first.iter().chain(&second).map(|&j| eta[j]));
    zz.extend_from_slice(z_nbr1);
    zz.extend_from_slice(z_nbr2);
    Ok(log_integrate_joint(&e, &zz, fit.phi_b, &fit.rule).exp())
}

/// Data prepared for repeated likelihood and propensity evaluations.
#[derive(Debug, Clone)]
pub(crate) struct PropensityModel {
    x: DMatrix<f64>,
    z: Vec<u8>,
    components: Vec<Vec<usize>>,
    rule: GaussHermite,
}

impl PropensityModel {
    pub(crate) fn new(g: &ComponentGraph, data: &NodeData, terms: &[Term], rule: GaussHermite) -> Result<Self> {
        data.check_aligned(g)?;
        Ok(Self { x: design(data, terms)?, z: data.z().to_vec(), components: g.components().to_vec(), rule })
    }

    pub(crate) fn n_params(&self) -> usize {
        self.x.ncols()
    }

    fn eta(&self, gamma: &[f64]) -> DVector<f64> {
        &self.x * DVector::from_column_slice(gamma)
    }

    /// `log P(Z_j = observed | b_q)` for every node and quadrature point.
    fn log_table(&self, gamma: &[f64], phi: f64) -> (DMatrix<f64>, Vec<f64>) {
        let eta = self.eta(gamma);
        let (b, w) = self.rule.normal_points(phi);
        let table = DMatrix::from_fn(self.z.len(), b.len(), |j, q| {
            let v = eta[j] + b[q];
            log_sigmoid(if self.z[j] == 1 { v } else { -v })
        });
        (table, w.iter().map(|w| w.ln()).collect())
    }

    /// Marginal log-likelihood contribution of each component.
    pub(crate) fn component_logliks(&self, gamma: &[f64], phi: f64) -> Vec<f64> {
        let (table, logw) = self.log_table(gamma, phi);
        self.components
            .iter()
            .map(|members| {
                let per_q: Vec<f64> = (0..logw.len())
                    .map(|q| logw[q] + members.iter().map(|&j| table[(j, q)]).sum::<f64>())
                    .collect();
                log_sum_exp(&per_q)
            })
            .collect()
    }

    pub(crate) fn loglik(&self, gamma: &[f64], phi: f64) -> f64 {
        self.component_logliks(gamma, phi).iter().sum()
    }

    /// Gradient of the log-likelihood in `(gamma, log phi)`.
    fn gradient_log_phi(&self, gamma: &[f64], rho: f64) -> Vec<f64> {
        let phi = rho.exp();
        let eta = self.eta(gamma);
        let (b, w) = self.rule.normal_points(phi);
        let (table, _) = self.log_table(gamma, phi);
        let p = self.n_params();
        let mut grad = vec![0.0; p + 1];
        for members in &self.components {
            let per_q: Vec<f64> = (0..b.len())
                .map(|q| w[q].ln() + members.iter().map(|&j| table[(j, q)]).sum::<f64>())
                .collect();
            let lse = log_sum_exp(&per_q);
            for q in 0..b.len() {
                let post = (per_q[q] - lse).exp();
                if post == 0.0 {
                    continue;
                }
                let mut resid_sum = 0.0;
                for &j in members {
                    let r = f64::from(self.z[j]) - sigmoid(eta[j] + b[q]);
                    resid_sum += r;
                    for k in 0..p {
                        grad[k] += post * r * self.x[(j, k)];
                    }
                }
                grad[p] += post * resid_sum * b[q] / 2.0;
            }
        }
        grad
    }

    /// Log joint propensity of the observed treatments of `{i} ∪ sets[i]`.
    pub(crate) fn observed_log_propensities(&self, gamma: &[f64], phi: f64, sets: &[Vec<usize>]) -> Vec<f64> {
        let (table, logw) = self.log_table(gamma, phi);
        let mut buf = vec![0.0; logw.len()];
        sets.iter()
            .enumerate()
            .map(|(i, set)| {
                for (q, slot) in buf.iter_mut().enumerate() {
                    *slot = logw[q] + table[(i, q)] + set.iter().map(|&j| table[(j, q)]).sum::<f64>();
                }
                log_sum_exp(&buf)
            })
            .collect()
    }

    /// Plain logistic regression by Newton's method.
    fn logistic_mle(&self) -> Result<(Vec<f64>, bool)> {
        let p = self.n_params();
        let mut gamma = vec![0.0; p];
        for _ in 0..100 {
            let eta = self.eta(&gamma);
            let mut info = DMatrix::zeros(p, p);
            let mut score = DVector::zeros(p);
            for j in 0..self.z.len() {
                let pr = sigmoid(eta[j]);
                let row = self.x.row(j);
                score += row.transpose() * (f64::from(self.z[j]) - pr);
                info += row.transpose() * row * (pr * (1.0 - pr));
            }
            let step = info
                .cholesky()
                .ok_or_else(|| Error::Numerical("singular information in logistic fit".into()))?
                .solve(&score);
            for k in 0..p {
                gamma[k] += step[k];
            }
            if !gamma.iter().all(|g| g.is_finite()) {
                return Err(Error::Numerical("logistic fit diverged (separation?)".into()));
            }
            if step.amax() < 1e-10 {
                return Ok((gamma, true));
            }
        }
        Ok((gamma, false))
    }
}

/// Maximum-likelihood fit of the random-intercept logistic model.
///
/// Starts from the plain logistic fit, refines `(gamma, log phi_b)` with a
/// short simplex stage and then BFGS, and keeps `phi_b = 0` when the boundary
/// is at least as good.
pub fn fit_propensity(g: &ComponentGraph, data: &NodeData, spec: &PropensitySpec) -> Result<PropensityFit> {
    let rule = GaussHermite::new(spec.quadrature_points)?;
    let model = PropensityModel::new(g, data, &spec.terms, rule.clone())?;
    let names: Vec<String> =
        std::iter::once("(Intercept)".to_string()).chain(spec.terms.iter().map(|t| t.to_string())).collect();
    check_full_rank(&model.x, &names)?;
    let p = model.n_params();

    let (gamma0, logistic_ok) = model.logistic_mle()?;
    let ll0 = model.loglik(&gamma0, 0.0);

    let neg = |v: &[f64]| -model.loglik(&v[..p], v[p].exp());
    let neg_grad = |v: &[f64]| model.gradient_log_phi(&v[..p], v[p]).iter().map(|g| -g).collect::<Vec<_>>();

    let mut start = gamma0.clone();
    start.push(0.5f64.ln());
    let simplex = optim::nelder_mead(&neg, &start, 0.3, 40 * (p as u64 + 1));
    let mut best = simplex.x.clone();
    let mut iterations = simplex.iterations;
    let mut converged = false;
    let mut budget = MAX_ITERS;
    for _ in 0..4 {
        let run = optim::bfgs(&neg, &neg_grad, &best, REL_TOL, budget);
        iterations += run.iterations;
        budget = budget.saturating_sub(run.iterations);
        if run.value <= neg(&best) {
            best = run.x;
        }
        let grad = neg_grad(&best);
        let small = grad.iter().map(|v| v.abs()).fold(0.0, f64::max) <= 1e-4 * (1.0 + neg(&best).abs()).sqrt();
        if run.converged && small {
            converged = true;
            break;
        }
        if best[p] < -25.0 || budget == 0 {
            break;
        }
    }

    let ll = -neg(&best);
    let (gamma, phi_b, loglik, converged) = if !(ll > ll0) || best[p] < -25.0 {
        (gamma0, 0.0, ll0, logistic_ok)
    } else {
        (best[..p].to_vec(), best[p].exp(), ll, converged)
    };
    if !converged {
        return Err(Error::NonConvergence { what: "treatment model".into(), iterations });
    }
    Ok(PropensityFit {
        gamma,
        phi_b,
        rule,
        terms: spec.terms.clone(),
        order: spec.order,
        floor: spec.floor,
        loglik,
        converged,
        iterations,
    })
}

/// Per-component scores of the marginal log-likelihood with respect to
/// `(gamma, phi_b)`, by central differences (forward in `phi_b` when it is
/// within one step of zero). Rows are components.
pub fn propensity_score_equations(fit: &PropensityFit, g: &ComponentGraph, data: &NodeData) -> Result<DMatrix<f64>> {
    let model = PropensityModel::new(g, data, &fit.terms, fit.rule.clone())?;
    let mut theta = fit.gamma.clone();
    theta.push(fit.phi_b);
    Ok(model.score_matrix(&theta))
}

pub(crate) fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

impl PropensityModel {
    /// Finite-difference score matrix at `theta = (gamma, phi)`.
    pub(crate) fn score_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.n_params();
        let m = self.components.len();
        let mut out = DMatrix::zeros(m, p + 1);
        for k in 0..=p {
            let h = fd_step(theta[k]);
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[k] += h;
            let forward = k == p && theta[k] - h < 0.0;
            if !forward {
                down[k] -= h;
            }
            let lu = self.component_logliks(&up[..p], up[p]);
            let ld = self.component_logliks(&down[..p], down[p]);
            let denom = if forward { h } else { 2.0 * h };
            for nu in 0..m {
                out[(nu, k)] = (lu[nu] - ld[nu]) / denom;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trapezoid_joint(eta: &[f64], z: &[u8], phi: f64) -> f64 {
        let sd = phi.sqrt();
        let n = 20_000;
        let (lo, hi) = (-10.0 * sd, 10.0 * sd);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for k in 0..=n {
            let b = lo + h * k as f64;
            let dens = (-b * b / (2.0 * phi)).exp() / (2.0 * std::f64::consts::PI * phi).sqrt();
            let prod: f64 = eta
                .iter()
                .zip(z)
                .map(|(&e, &zj)| {
                    let p = 1.0 / (1.0 + (-(e + b)).exp());
                    if zj == 1 { p } else { 1.0 - p }
                })
                .product();
            let wk = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += wk * dens * prod;
        }
        total * h
    }

    fn star_data(n_leaves: usize) -> (ComponentGraph, NodeData) {
        let edges: Vec<(usize, usize)> = (1..=n_leaves).map(|j| (0, j)).collect();
        let g = ComponentGraph::load(&edges, n_leaves + 1).unwrap();
        let n = n_leaves + 1;
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 0.5).collect();
        let d = NodeData::new(vec!["x".into()], vec![x], vec![0; n], vec![0.0; n]).unwrap();
        (g, d)
    }

    #[test]
    fn intercept_only_no_variance() {
        let (g, d) = star_data(2);
        let fit = PropensityFit::from_parameters(vec![], vec![0.0], 0.0, 10).unwrap();
        for z in 0..=1 {
            for a in 0..=1 {
                for b in 0..=1 {
                    let v = joint_propensity(&fit, &g, &d, 0, z, &[a, b]).unwrap();
                    assert!((v - 0.125).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn no_variance_factorizes() {
        let (g, d) = star_data(3);
        let fit = PropensityFit::from_parameters(vec![Term::column("x")], vec![0.2, -0.7], 0.0, 10).unwrap();
        let eta = fit.linear_predictor(&d).unwrap();
        let zs = [1u8, 0, 1, 1];
        let expect: f64 = (0..4)
            .map(|j| {
                let p = 1.0 / (1.0 + (-eta[j]).exp());
                if zs[j] == 1 { p } else { 1.0 - p }
            })
            .product();
        let got = joint_propensity(&fit, &g, &d, 0, zs[0], &zs[1..]).unwrap();
        assert!((got - expect).abs() < 1e-14 * expect);
    }

    #[test]
    fn matches_trapezoid_at_thirty_points() {
        let (g, d) = star_data(3);
        let fit = PropensityFit::from_parameters(vec![Term::column("x")], vec![0.4, 1.1], 1.0, 30).unwrap();
        let eta = fit.linear_predictor(&d).unwrap();
        let zs = [0u8, 1, 1, 0];
        let got = joint_propensity(&fit, &g, &d, 0, zs[0], &zs[1..]).unwrap();
        let oracle = trapezoid_joint(&eta, &zs, 1.0);
        assert!((got - oracle).abs() / oracle < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn second_order_on_path() {
        let g = ComponentGraph::load(&[(0, 1), (1, 2), (2, 3), (3, 4)], 5).unwrap();
        let x = vec![-1.0, 0.5, 0.0, 2.0, -0.3];
        let d = NodeData::new(vec!["x".into()], vec![x], vec![0; 5], vec![0.0; 5]).unwrap();
        let fit = PropensityFit::from_parameters(vec![Term::column("x")], vec![-0.2, 0.6], 1.0, 30).unwrap();
        let eta = fit.linear_predictor(&d).unwrap();
        let got = joint_propensity_second_order(&fit, &g, &d, 2, 1, &[0, 1], &[1, 1]).unwrap();
        let order_eta = [eta[2], eta[1], eta[3], eta[0], eta[4]];
        let oracle = trapezoid_joint(&order_eta, &[1, 0, 1, 1, 1], 1.0);
        assert!((got - oracle).abs() / oracle < 1e-8);

        let tri = ComponentGraph::load(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        let d3 = NodeData::new(vec!["x".into()], vec![vec![0.1, 0.2, 0.3]], vec![0; 3], vec![0.0; 3]).unwrap();
        let a = joint_propensity(&fit, &tri, &d3, 0, 1, &[0, 1]).unwrap();
        let b = joint_propensity_second_order(&fit, &tri, &d3, 0, 1, &[0, 1], &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marginalizes_to_one() {
        let x: Vec<f64> = (0..11).map(|i| (i as f64 * 0.77).sin() * 2.0).collect();
        let d = NodeData::new(vec!["x".into()], vec![x], vec![0; 11], vec![0.0; 11]).unwrap();
        let fit = PropensityFit::from_parameters(vec![Term::column("x")], vec![0.3, -0.8], 2.0, 10).unwrap();
        let eta = fit.linear_predictor(&d).unwrap();
        let mut total = 0.0;
        for mask in 0u32..(1 << 11) {
            let zs: Vec<u8> = (0..11).map(|j| (mask >> j & 1) as u8).collect();
            total += log_integrate_joint(&eta, &zs, 2.0, fit.rule()).exp();
        }
        assert!((total - 1.0).abs() < 1e-8);
    }

    fn simulated(m: usize, size: usize, gamma: [f64; 2], phi: f64, seed: u64) -> (ComponentGraph, NodeData) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).unwrap();
        let mut edges = Vec::new();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for c in 0..m {
            let b = phi.sqrt() * std.sample(&mut rng);
            for k in 0..size {
                let id = c * size + k;
                if k > 0 {
                    edges.push((id - 1, id));
                }
                let xi: f64 = std.sample(&mut rng);
                let p = sigmoid(gamma[0] + gamma[1] * xi + b);
                z.push(u8::from(rand::Rng::random::<f64>(&mut rng) < p));
                x.push(xi);
            }
        }
        let n = m * size;
        let g = ComponentGraph::load(&edges, n).unwrap();
        let d = NodeData::new(vec!["x".into()], vec![x], z, vec![0.0; n]).unwrap();
        (g, d)
    }

    #[test]
    fn recovers_logistic_when_no_variance() {
        let (g, d) = simulated(400, 10, [0.3, -0.8], 0.0, 11);
        let spec = PropensitySpec { terms: vec![Term::column("x")], ..Default::default() };
        let fit = fit_propensity(&g, &d, &spec).unwrap();
        // Oracle: plain logistic regression on the same data
        let model = PropensityModel::new(&g, &d, &spec.terms, GaussHermite::new(10).unwrap()).unwrap();
        let (plain, _) = model.logistic_mle().unwrap();
        assert!(fit.phi_b() < 0.05, "phi {}", fit.phi_b());
        for k in 0..2 {
            assert!((fit.gamma()[k] - plain[k]).abs() < 0.05);
        }
        let se = 0.035;
        assert!((fit.gamma()[0] - 0.3).abs() < 3.0 * se * 1.5);
        assert!((fit.gamma()[1] + 0.8).abs() < 3.0 * se * 1.5);
    }

    #[test]
    fn scores_vanish_at_mle_and_match_logistic() {
        let (g, d) = simulated(60, 12, [0.1, 0.5], 1.0, 5);
        let spec = PropensitySpec { terms: vec![Term::column("x")], ..Default::default() };
        let fit = fit_propensity(&g, &d, &spec).unwrap();
        assert!(fit.phi_b() > 0.1);
        let scores = propensity_score_equations(&fit, &g, &d).unwrap();
        for k in 0..3 {
            let total: f64 = scores.column(k).sum();
            assert!(total.abs() < 1e-2, "score {k}: {total}");
        }

        let zero = PropensityFit::from_parameters(vec![Term::column("x")], vec![0.2, -0.4], 0.0, 10).unwrap();
        let s0 = propensity_score_equations(&zero, &g, &d).unwrap();
        let x = d.column("x").unwrap();
        for (nu, members) in g.components().iter().enumerate() {
            let mut closed = [0.0; 2];
            for &j in members {
                let r = f64::from(d.z()[j]) - sigmoid(0.2 - 0.4 * x[j]);
                closed[0] += r;
                closed[1] += r * x[j];
            }
            for k in 0..2 {
                assert!((s0[(nu, k)] - closed[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let (g, d) = simulated(20, 8, [0.1, 0.5], 1.0, 9);
        let model = PropensityModel::new(&g, &d, &[Term::column("x")], GaussHermite::new(10).unwrap()).unwrap();
        let theta = [0.05, 0.4, 0.3f64.ln()];
        let grad = model.gradient_log_phi(&theta[..2], theta[2]);
        for k in 0..3 {
            let h = 1e-5;
            let mut up = theta;
            let mut dn = theta;
            up[k] += h;
            dn[k] -= h;
            let fd = (model.loglik(&up[..2], up[2].exp()) - model.loglik(&dn[..2], dn[2].exp())) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{k}: {fd} vs {}", grad[k]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn refinement_converges(eta in proptest::collection::vec(-5.0f64..5.0, 1..7), bits in 0u32..128, phi in 0.0f64..1.0) {
            let z: Vec<u8> = (0..eta.len()).map(|j| (bits >> j & 1) as u8).collect();
            let a = log_integrate_joint(&eta, &z, phi, &GaussHermite::new(20).unwrap()).exp();
            let b = log_integrate_joint(&eta, &z, phi, &GaussHermite::new(40).unwrap()).exp();
            prop_assert!(a > 0.0 && a <= 1.0);
            prop_assert!((a - b).abs() < 1e-8);
        }

        #[test]
        fn one_step_gradient(delta in -1e-4f64..1e-4) {
            let (g, d) = simulated(10, 6, [0.1, 0.5], 1.0, 2);
            let fit = PropensityFit::from_parameters(vec![Term::column("x")], vec![0.1, 0.3], 0.8, 10).unwrap();
            let model = PropensityModel::new(&g, &d, fit.terms(), fit.rule().clone()).unwrap();
            let scores = propensity_score_equations(&fit, &g, &d).unwrap();
            let s1: f64 = scores.column(1).sum();
            let before = model.loglik(&[0.1, 0.3], 0.8);
            let after = model.loglik(&[0.1, 0.3 + delta], 0.8);
            prop_assert!((after - before - s1 * delta).abs() < 50.0 * delta * delta + 1e-9);
        }
    }
}
