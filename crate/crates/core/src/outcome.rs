//! Outcome regressions: OLS, inverse-probability weighted LS, and
//! random-intercept linear mixed models (unweighted and weighted).
//!
//! The outcome model is linear in
//! `(1, Z, h(S), Z*h(S), x)` where `S` is the treated count of an exposure
//! set and `h` an exposure map. Arm-specific weighted fits drop the `Z`
//! columns, which are constant on the arm.
//!
//! Multilevel fits integrate the component intercept `c ~ N(0, sigma2_c)` in
//! closed form. With `lambda = sigma2_c / sigma2_eps`, each component needs
//! only `W = sum w`, `S1 = sum w r` and `S2 = sum w r^2`:
//! `-(W/2) log(2 pi sigma2_eps) - (S2 - lambda S1^2 / (1 + lambda W)) / (2 sigma2_eps)
//!  - log(1 + lambda W) / 2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocation::{assignment_prob, pi_neighborhood};
use crate::design::{check_full_rank, term_matrix, Term};
use crate::error::{Error, Result};
use crate::graph::{ComponentGraph, NeighborhoodOrder, NodeData};
use crate::optim;
use crate::propensity::{fd_step, PropensityFit};

/// Whose treatments make up a node's exposure count `S`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureSet {
    /// Direct neighbours.
    #[default]
    FirstOrder,
    /// Neighbours and neighbours of neighbours.
    SecondOrder,
    /// Direct neighbours sharing the node's value of a covariate column.
    MatchingCovariate(String),
}

/// Map from treated count `s` out of `k` to the exposure regressor `h`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureMap {
    /// `s / k`, and 0 when `k = 0`.
    #[default]
    Proportion,
    /// `s`.
    Count,
    /// `table[s]`.
    Table(Vec<f64>),
}

impl ExposureMap {
    pub fn h(&self, s: usize, k: usize) -> Result<f64> {
        if s > k {
            return Err(Error::Domain(format!("treated count {s} exceeds exposure set size {k}")));
        }
        match self {
            ExposureMap::Proportion => Ok(if k == 0 { 0.0 } else { s as f64 / k as f64 }),
            ExposureMap::Count => Ok(s as f64),
            ExposureMap::Table(t) => t
                .get(s)
                .copied()
                .ok_or_else(|| Error::Spec(format!("exposure table has no entry for count {s}"))),
        }
    }

    /// `sum_s h(s, k) pi(s; k, alpha)`.
    pub fn expected(&self, k: usize, alpha: f64) -> Result<f64> {
        match self {
            ExposureMap::Proportion => Ok(if k == 0 { 0.0 } else { alpha }),
            ExposureMap::Count => Ok(k as f64 * alpha),
            ExposureMap::Table(_) => {
                let mut total = 0.0;
                for s in 0..=k {
                    total += self.h(s, k)? * pi_neighborhood(s, k, alpha)?;
                }
                Ok(total)
            }
        }
    }
}

/// Outcome-model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeDesign {
    pub terms: Vec<Term>,
    pub exposure: ExposureSet,
    pub map: ExposureMap,
    /// Include the `Z * h` column.
    pub interaction: bool,
}

impl Default for OutcomeDesign {
    fn default() -> Self {
        Self {
            terms: Vec::new(),
            exposure: ExposureSet::FirstOrder,
            map: ExposureMap::Proportion,
            interaction: true,
        }
    }
}

impl OutcomeDesign {
    /// Nodes whose treatments count toward `i`'s exposure.
    pub fn exposure_members(&self, g: &ComponentGraph, data: &NodeData, i: usize) -> Result<Vec<usize>> {
        match &self.exposure {
            ExposureSet::FirstOrder => Ok(g.neighbors(i).to_vec()),
            ExposureSet::SecondOrder => Ok(g.interference_set(i, NeighborhoodOrder::Second)),
            ExposureSet::MatchingCovariate(col) => {
                let x = data
                    .column(col)
                    .ok_or_else(|| Error::Spec(format!("unknown covariate column `{col}`")))?;
                Ok(g.neighbors(i).iter().copied().filter(|&j| x[j] == x[i]).collect())
            }
        }
    }

    /// Coefficient names; `arm` designs omit the treatment columns.
    pub fn coefficient_names(&self, arm: bool) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        if !arm {
            names.push("Z".into());
        }
        names.push("h".into());
        if self.interaction && !arm {
            names.push("Z:h".into());
        }
        names.extend(self.terms.iter().map(|t| t.to_string()));
        names
    }
}

/// Which estimator produced an [`OutcomeFit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeVariant {
    Ols,
    Wls { z: u8, alpha: f64 },
    Lmm,
    Wlmm { z: u8, alpha: f64 },
}

impl OutcomeVariant {
    /// The treatment arm of an arm-specific fit.
    pub fn arm(&self) -> Option<u8> {
        match self {
            OutcomeVariant::Wls { z, .. } | OutcomeVariant::Wlmm { z, .. } => Some(*z),
            _ => None,
        }
    }

    pub fn is_multilevel(&self) -> bool {
        matches!(self, OutcomeVariant::Lmm | OutcomeVariant::Wlmm { .. })
    }
}

/// A fitted outcome regression.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeFit {
    beta: Vec<f64>,
    names: Vec<String>,
    sigma2_eps: Option<f64>,
    sigma2_c: Option<f64>,
    variant: OutcomeVariant,
    design: OutcomeDesign,
    loglik: f64,
    converged: bool,
}

impl OutcomeFit {
    /// A fit with given coefficients (in [`OutcomeDesign::coefficient_names`] order).
    pub fn from_coefficients(design: OutcomeDesign, variant: OutcomeVariant, beta: Vec<f64>) -> Result<Self> {
        let names = design.coefficient_names(variant.arm().is_some());
        if names.len() != beta.len() {
            return Err(Error::Spec(format!("{} coefficients for {} design columns", beta.len(), names.len())));
        }
        Ok(Self { beta, names, sigma2_eps: None, sigma2_c: None, variant, design, loglik: f64::NAN, converged: true })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn sigma2_eps(&self) -> Option<f64> {
        self.sigma2_eps
    }

    pub fn sigma2_c(&self) -> Option<f64> {
        self.sigma2_c
    }

    pub fn variant(&self) -> OutcomeVariant {
        self.variant
    }

    pub fn design(&self) -> &OutcomeDesign {
        &self.design
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Fixed-effects prediction at exposure regressor `h` and term values `x`.
    /// Arm-specific fits describe one arm only and ignore `z`.
    pub fn predict(&self, z: u8, h: f64, x: &[f64]) -> f64 {
        predict_beta(&self.beta, self.variant.arm().is_some(), self.design.interaction, z, h, x)
    }

    /// Prediction with `s` of `d` exposure-set members treated.
    pub fn predict_marginal(&self, z: u8, s: usize, d: usize, x: &[f64]) -> Result<f64> {
        Ok(self.predict(z, self.design.map.h(s, d)?, x))
    }
}

pub(crate) fn predict_beta(beta: &[f64], arm: bool, interaction: bool, z: u8, h: f64, x: &[f64]) -> f64 {
    let zf = f64::from(z);
    let (mut v, mut k) = if arm {
        (beta[0] + beta[1] * h, 2)
    } else {
        (beta[0] + beta[1] * zf + beta[2] * h, 3)
    };
    if interaction && !arm {
        v += beta[3] * zf * h;
        k = 4;
    }
    for (b, xv) in beta[k..].iter().zip(x) {
        v += b * xv;
    }
    v
}

/// Per-node quantities shared by every outcome fit and estimator.
#[derive(Debug, Clone)]
pub(crate) struct OutcomeFrame {
    pub design: OutcomeDesign,
    pub k: Vec<usize>,
    pub h: Vec<f64>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub z: Vec<u8>,
    pub components: Vec<Vec<usize>>,
}

impl OutcomeFrame {
    pub fn new(g: &ComponentGraph, data: &NodeData, design: &OutcomeDesign) -> Result<Self> {
        data.check_aligned(g)?;
        let n = g.n_nodes();
        let mut k = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        for i in 0..n {
            let members = design.exposure_members(g, data, i)?;
            let s = members.iter().filter(|&&j| data.z()[j] == 1).count();
            if let ExposureMap::Table(t) = &design.map {
                if t.len() <= members.len() {
                    return Err(Error::Spec(format!(
                        "exposure table has {} entries but node {i} has {} exposure members",
                        t.len(),
                        members.len()
                    )));
                }
            }
            h.push(design.map.h(s, members.len())?);
            k.push(members.len());
        }
        Ok(Self {
            design: design.clone(),
            k,
            h,
            x: term_matrix(data, &design.terms)?,
            y: data.y().to_vec(),
            z: data.z().to_vec(),
            components: g.components().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Observed design matrix (full or arm-specific).
    pub fn rows(&self, arm: bool) -> DMatrix<f64> {
        let names = self.design.coefficient_names(arm);
        let p = names.len();
        let mut out = DMatrix::zeros(self.n(), p);
        for i in 0..self.n() {
            let zf = f64::from(self.z[i]);
            let mut c = 0;
            out[(i, c)] = 1.0;
            c += 1;
            if !arm {
                out[(i, c)] = zf;
                c += 1;
            }
            out[(i, c)] = self.h[i];
            c += 1;
            if self.design.interaction && !arm {
                out[(i, c)] = zf * self.h[i];
                c += 1;
            }
            for t in 0..self.x.ncols() {
                out[(i, c + t)] = self.x[(i, t)];
            }
        }
        out
    }

    /// `sum_s h(s, k_i) pi(s; k_i, alpha)` for every node.
    pub fn expected_h(&self, alpha: f64) -> Result<Vec<f64>> {
        self.k.iter().map(|&k| self.design.map.expected(k, alpha)).collect()
    }
}

/// IP weights `1(Z_i = z) a(S_i, K_i, alpha) / f_i` for the observed
/// treatments, where `S_i, K_i` count the propensity's interference set.
pub(crate) fn arm_weights(
    z_obs: &[u8],
    s_p: &[usize],
    k_p: &[usize],
    log_f: &[f64],
    z: u8,
    alpha: f64,
) -> Vec<f64> {
    (0..z_obs.len())
        .map(|i| {
            if z_obs[i] == z {
                assignment_prob(s_p[i], k_p[i], alpha) * (-log_f[i]).exp()
            } else {
                0.0
            }
        })
        .collect()
}

pub(crate) fn propensity_counts(g: &ComponentGraph, data: &NodeData, order: NeighborhoodOrder) -> (Vec<usize>, Vec<usize>) {
    (0..g.n_nodes())
        .map(|i| {
            let set = g.interference_set(i, order);
            (set.iter().filter(|&&j| data.z()[j] == 1).count(), set.len())
        })
        .unzip()
}

/// Weighted least squares restricted to positive weights.
pub(crate) fn weighted_ls(rows: &DMatrix<f64>, y: &[f64], w: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let used: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    let p = rows.ncols();
    if used.len() <= p {
        return Err(Error::Insufficient(format!(
            "{} observations with positive weight for {p} coefficients",
            used.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite regression weight".into()));
    }
    let scaled = DMatrix::from_fn(used.len(), p, |r, c| rows[(used[r], c)] * w[used[r]].sqrt());
    check_full_rank(&scaled, names)?;
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for &i in &used {
        let row = rows.row(i);
        gram += row.transpose() * row * w[i];
        rhs += row.transpose() * (w[i] * y[i]);
    }
    let beta = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    Ok(beta.as_slice().to_vec())
}

fn gaussian_loglik(rows: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let fitted = rows * b;
    let (mut rss, mut total) = (0.0, 0.0);
    for i in 0..y.len() {
        if w[i] > 0.0 {
            rss += w[i] * (y[i] - fitted[i]).powi(2);
            total += w[i];
        }
    }
    let s2 = rss / total;
    -0.5 * total * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0)
}

/// Ordinary least squares on every node.
pub fn fit_ols(g: &ComponentGraph, data: &NodeData, design: &OutcomeDesign) -> Result<OutcomeFit> {
    let frame = OutcomeFrame::new(g, data, design)?;
    let rows = frame.rows(false);
    let names = design.coefficient_names(false);
    let w = vec![1.0; frame.n()];
    let beta = weighted_ls(&rows, &frame.y, &w, &names)?;
    let loglik = gaussian_loglik(&rows, &frame.y, &w, &beta);
    Ok(OutcomeFit {
        beta,
        names,
        sigma2_eps: None,
        sigma2_c: None,
        variant: OutcomeVariant::Ols,
        design: design.clone(),
        loglik,
        converged: true,
    })
}

/// Arm-specific weighted least squares with caller-supplied weights
/// (zero outside the arm).
pub fn fit_wls_weighted(
    g: &ComponentGraph,
    data: &NodeData,
    design: &OutcomeDesign,
    weights: &[f64],
    z: u8,
    alpha: f64,
) -> Result<OutcomeFit> {
    let frame = OutcomeFrame::new(g, data, design)?;
    if weights.len() != frame.n() {
        return Err(Error::Data("weight vector misaligned with nodes".into()));
    }
    let rows = frame.rows(true);
    let names = design.coefficient_names(true);
    let beta = weighted_ls(&rows, &frame.y, weights, &names)?;
    let loglik = gaussian_loglik(&rows, &frame.y, weights, &beta);
    Ok(OutcomeFit {
        beta,
        names,
        sigma2_eps: None,
        sigma2_c: None,
        variant: OutcomeVariant::Wls { z, alpha },
        design: design.clone(),
        loglik,
        converged: true,
    })
}

fn ip_weights(g: &ComponentGraph, data: &NodeData, fit_p: &PropensityFit, z: u8, alpha: f64) -> Result<Vec<f64>> {
    crate::allocation::check_alpha(alpha)?;
    let f = fit_p.observed_propensities(g, data)?;
    let (s_p, k_p) = propensity_counts(g, data, fit_p.order());
    Ok(arm_weights(data.z(), &s_p, &k_p, &f.log_f, z, alpha))
}

/// Weighted least squares on arm `z` with IP weights for allocation `alpha`.
pub fn fit_wls(
    g: &ComponentGraph,
    data: &NodeData,
    design: &OutcomeDesign,
    fit_p: &PropensityFit,
    z: u8,
    alpha: f64,
) -> Result<OutcomeFit> {
    let w = ip_weights(g, data, fit_p, z, alpha)?;
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::Insufficient(format!("all weights are zero for arm {z} at alpha {alpha}")));
    }
    fit_wls_weighted(g, data, design, &w, z, alpha)
}

/// Sufficient statistics of one component for the multilevel likelihood.
#[derive(Debug, Clone)]
struct ComponentStats {
    members: Vec<usize>,
    w_sum: f64,
    wl: DVector<f64>,
    wll: DMatrix<f64>,
    wly: DVector<f64>,
    wy: f64,
}

/// Random-intercept Gaussian likelihood with (pseudo-)weights.
#[derive(Debug, Clone)]
pub(crate) struct Multilevel {
    rows: DMatrix<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    stats: Vec<ComponentStats>,
    total_weight: f64,
}

/// Result of a multilevel fit.
#[derive(Debug, Clone)]
pub(crate) struct MultilevelFit {
    pub beta: Vec<f64>,
    pub sigma2_eps: f64,
    pub sigma2_c: f64,
    pub loglik: f64,
    pub converged: bool,
}

impl Multilevel {
    pub fn new(rows: DMatrix<f64>, y: Vec<f64>, w: Vec<f64>, components: &[Vec<usize>]) -> Self {
        let p = rows.ncols();
        let stats = components
            .iter()
            .map(|c| {
                let members: Vec<usize> = c.iter().copied().filter(|&i| w[i] > 0.0).collect();
                let mut s = ComponentStats {
                    w_sum: 0.0,
                    wl: DVector::zeros(p),
                    wll: DMatrix::zeros(p, p),
                    wly: DVector::zeros(p),
                    wy: 0.0,
                    members: members.clone(),
                };
                for &i in &members {
                    let row = rows.row(i).transpose();
                    s.w_sum += w[i];
                    s.wl += &row * w[i];
                    s.wll += &row * row.transpose() * w[i];
                    s.wly += &row * (w[i] * y[i]);
                    s.wy += w[i] * y[i];
                }
                s
            })
            .collect::<Vec<_>>();
        let total_weight = stats.iter().map(|s| s.w_sum).sum();
        Self { rows, y, w, stats, total_weight }
    }

    /// GLS coefficients for a variance ratio `lambda`.
    fn beta_for(&self, lambda: f64) -> Option<DVector<f64>> {
        let p = self.rows.ncols();
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for s in &self.stats {
            let c = lambda / (1.0 + lambda * s.w_sum);
            a += &s.wll - &s.wl * s.wl.transpose() * c;
            b += &s.wly - &s.wl * (c * s.wy);
        }
        a.lu().solve(&b)
    }

    fn residual_sums(&self, s: &ComponentStats, beta: &DVector<f64>) -> (f64, f64) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for &i in &s.members {
            let r = self.y[i] - (self.rows.row(i) * beta)[0];
            s1 += self.w[i] * r;
            s2 += self.w[i] * r * r;
        }
        (s1, s2)
    }

    /// Profile log-likelihood in `lambda` (variance ratio), with its maximizers.
    fn profile(&self, lambda: f64) -> Option<(f64, DVector<f64>, f64)> {
        let beta = self.beta_for(lambda)?;
        let mut q = 0.0;
        let mut logdet = 0.0;
        for s in &self.stats {
            let (s1, s2) = self.residual_sums(s, &beta);
            let c = lambda / (1.0 + lambda * s.w_sum);
            q += s2 - c * s1 * s1;
            logdet += (lambda * s.w_sum).ln_1p();
        }
        let sigma2 = q / self.total_weight;
        if !(sigma2 > 0.0) {
            return None;
        }
        let ll = -0.5 * self.total_weight * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * logdet;
        Some((ll, beta, sigma2))
    }

    /// Maximum (pseudo-)likelihood over `(beta, sigma2_eps, sigma2_c)`.
    pub fn fit(&self) -> Result<MultilevelFit> {
        let eval = |u: f64| self.profile(u.exp()).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
        let grid: Vec<f64> = (0..31).map(|k| -20.0 + k as f64).collect();
        let (mut u_best, mut ll_best) = (grid[0], eval(grid[0]));
        for &u in &grid[1..] {
            let v = eval(u);
            if v > ll_best {
                u_best = u;
                ll_best = v;
            }
        }
        let (lo, hi) = ((u_best - 1.0).max(-20.0), (u_best + 1.0).min(10.0));
        let (u_opt, neg) = optim::brent(&|u| -eval(u), lo, hi);
        if -neg > ll_best {
            u_best = u_opt;
        }
        let boundary = self.profile(0.0);
        let interior = self.profile(u_best.exp());
        let (lambda, (ll, beta, s2)) = match (boundary, interior) {
            (Some(b), Some(i)) if b.0 >= i.0 => (0.0, b),
            (_, Some(i)) => (u_best.exp(), i),
            (Some(b), None) => (0.0, b),
            (None, None) => return Err(Error::Numerical("multilevel likelihood undefined".into())),
        };
        let converged = u_best < 9.99;
        if !converged {
            return Err(Error::NonConvergence { what: "random-intercept variance".into(), iterations: 31 });
        }
        Ok(MultilevelFit { beta: beta.as_slice().to_vec(), sigma2_eps: s2, sigma2_c: lambda * s2, loglik: ll, converged })
    }

    /// Per-component log-likelihood at arbitrary parameters.
    pub fn component_logliks(&self, beta: &[f64], s2e: f64, s2c: f64) -> Vec<f64> {
        let b = DVector::from_column_slice(beta);
        let lambda = s2c / s2e;
        self.stats
            .iter()
            .map(|s| {
                if s.members.is_empty() {
                    return 0.0;
                }
                let (s1, s2) = self.residual_sums(s, &b);
                let c = lambda / (1.0 + lambda * s.w_sum);
                -0.5 * s.w_sum * (2.0 * std::f64::consts::PI * s2e).ln()
                    - (s2 - c * s1 * s1) / (2.0 * s2e)
                    - 0.5 * (lambda * s.w_sum).ln_1p()
            })
            .collect()
    }

    /// Per-component scores: closed form in `beta`, and central differences
    /// in whichever variance components are listed in `free`
    /// (0 = sigma2_eps, 1 = sigma2_c). Rows are components.
    pub fn scores(&self, beta: &[f64], s2e: f64, s2c: f64, free: &[usize]) -> DMatrix<f64> {
        let p = beta.len();
        let m = self.stats.len();
        let b = DVector::from_column_slice(beta);
        let lambda = s2c / s2e;
        let mut out = DMatrix::zeros(m, p + free.len());
        for (nu, s) in self.stats.iter().enumerate() {
            if s.members.is_empty() {
                continue;
            }
            let (s1, _) = self.residual_sums(s, &b);
            let c = lambda / (1.0 + lambda * s.w_sum);
            let mut g = DVector::zeros(p);
            for &i in &s.members {
                let row = self.rows.row(i).transpose();
                let r = self.y[i] - (row.transpose() * &b)[0];
                g += row * (self.w[i] * r);
            }
            g -= &s.wl * (c * s1);
            g /= s2e;
            for k in 0..p {
                out[(nu, k)] = g[k];
            }
        }
        for (col, &which) in free.iter().enumerate() {
            let base = [s2e, s2c];
            let h = fd_step(base[which]);
            let mut up = base;
            let mut dn = base;
            up[which] += h;
            dn[which] -= h;
            let lu = self.component_logliks(beta, up[0], up[1]);
            let ld = self.component_logliks(beta, dn[0], dn[1]);
            for nu in 0..m {
                out[(nu, p + col)] = (lu[nu] - ld[nu]) / (2.0 * h);
            }
        }
        out
    }
}

fn multilevel_fit(
    frame: &OutcomeFrame,
    design: &OutcomeDesign,
    w: Vec<f64>,
    arm: bool,
    variant: OutcomeVariant,
) -> Result<OutcomeFit> {
    if frame.components.len() < 2 {
        return Err(Error::Insufficient("a random-intercept model needs at least two components".into()));
    }
    let rows = frame.rows(arm);
    let names = design.coefficient_names(arm);
    // rank and size checks are those of the weighted LS problem
    weighted_ls(&rows, &frame.y, &w, &names)?;
    let ml = Multilevel::new(rows, frame.y.clone(), w, &frame.components).fit()?;
    Ok(OutcomeFit {
        beta: ml.beta,
        names,
        sigma2_eps: Some(ml.sigma2_eps),
        sigma2_c: Some(ml.sigma2_c),
        variant,
        design: design.clone(),
        loglik: ml.loglik,
        converged: ml.converged,
    })
}

/// Random-intercept linear mixed model by maximum likelihood.
pub fn fit_lmm(g: &ComponentGraph, data: &NodeData, design: &OutcomeDesign) -> Result<OutcomeFit> {
    let frame = OutcomeFrame::new(g, data, design)?;
    let w = vec![1.0; frame.n()];
    multilevel_fit(&frame, design, w, false, OutcomeVariant::Lmm)
}

/// Weighted random-intercept pseudolikelihood on arm `z` with IP weights for
/// allocation `alpha`.
pub fn fit_wlmm(
    g: &ComponentGraph,
    data: &NodeData,
    design: &OutcomeDesign,
    fit_p: &PropensityFit,
    z: u8,
    alpha: f64,
) -> Result<OutcomeFit> {
    let w = ip_weights(g, data, fit_p, z, alpha)?;
    fit_wlmm_weighted(g, data, design, &w, z, alpha)
}

/// [`fit_wlmm`] with caller-supplied weights (zero outside the arm).
pub fn fit_wlmm_weighted(
    g: &ComponentGraph,
    data: &NodeData,
    design: &OutcomeDesign,
    weights: &[f64],
    z: u8,
    alpha: f64,
) -> Result<OutcomeFit> {
    let frame = OutcomeFrame::new(g, data, design)?;
    if weights.len() != frame.n() {
        return Err(Error::Data("weight vector misaligned with nodes".into()));
    }
    multilevel_fit(&frame, design, weights.to_vec(), true, OutcomeVariant::Wlmm { z, alpha })
}
