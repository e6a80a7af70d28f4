//! Stacked estimating equations and the empirical sandwich covariance.
//!
//! A [`Stack`] is a parameter vector `theta` plus blocks of per-component
//! estimating functions. Each block declares which entries of `theta` it
//! depends on, so the bread matrix `U = -(1/m) sum dpsi/dtheta'` is built by
//! central differences that only re-evaluate the affected blocks. The result
//! `Sigma = U^-1 V U^-T` is stored without the `1/m` factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::propensity::fd_step;

/// Condition number of `U` above which the sandwich is refused.
pub const MAX_CONDITION: f64 = 1e10;

type BlockFn<'a> = Box<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync + 'a>;

struct Block<'a> {
    len: usize,
    deps: Vec<usize>,
    psi: BlockFn<'a>,
}

/// Estimating functions for `m` independent components.
pub struct Stack<'a> {
    theta: Vec<f64>,
    names: Vec<String>,
    m: usize,
    blocks: Vec<Block<'a>>,
}

/// Options for [`Stack::sandwich`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SandwichOptions {
    /// Inflate `V` by `m / (m - p)`.
    pub small_sample: bool,
}

/// Sandwich covariance with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    pub theta: Vec<f64>,
    pub names: Vec<String>,
    pub m: usize,
    /// `U^-1 V U^-T`; the covariance of `theta-hat` is `sigma / m`.
    pub sigma: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub condition: f64,
    /// `max |(1/m) sum_nu psi_nu|` at `theta-hat`.
    pub max_mean_psi: f64,
    pub warnings: Vec<String>,
}

impl<'a> Stack<'a> {
    pub fn new(theta: Vec<f64>, names: Vec<String>, m: usize) -> Result<Self> {
        if theta.len() != names.len() {
            return Err(Error::Spec("parameter names do not match parameter vector".into()));
        }
        if m == 0 {
            return Err(Error::Insufficient("no components".into()));
        }
        Ok(Self { theta, names, m, blocks: Vec::new() })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Adds `len` estimating functions depending on `theta[deps]`. `psi`
    /// returns an `m x len` matrix, one row per component.
    pub fn push<F>(&mut self, len: usize, deps: Vec<usize>, psi: F) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync + 'a,
    {
        if deps.iter().any(|&k| k >= self.theta.len()) {
            return Err(Error::Spec("block depends on a parameter outside the stack".into()));
        }
        self.blocks.push(Block { len, deps, psi: Box::new(psi) });
        Ok(())
    }

    fn eval_block(&self, b: &Block<'_>, theta: &[f64]) -> Result<DMatrix<f64>> {
        let out = (b.psi)(theta)?;
        if out.nrows() != self.m || out.ncols() != b.len {
            return Err(Error::Spec(format!(
                "estimating block returned {}x{}, expected {}x{}",
                out.nrows(),
                out.ncols(),
                self.m,
                b.len
            )));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite estimating function".into()));
        }
        Ok(out)
    }

    /// `m x p` matrix of stacked estimating functions at `theta`.
    pub fn psi(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.theta.len();
        let mut out = DMatrix::zeros(self.m, p);
        let mut col = 0;
        for b in &self.blocks {
            let v = self.eval_block(b, theta)?;
            out.columns_mut(col, b.len).copy_from(&v);
            col += b.len;
        }
        Ok(out)
    }

    /// Bread matrix `-(1/m) sum_nu dpsi_nu / dtheta'` by central differences.
    pub fn bread(&self) -> Result<DMatrix<f64>> {
        let p = self.theta.len();
        let mut u = DMatrix::zeros(p, p);
        for k in 0..p {
            let h = fd_step(self.theta[k]);
            let mut up = self.theta.clone();
            let mut dn = self.theta.clone();
            up[k] += h;
            dn[k] -= h;
            let mut row = 0;
            for b in &self.blocks {
                if b.deps.contains(&k) {
                    let a = self.eval_block(b, &up)?;
                    let c = self.eval_block(b, &dn)?;
                    for j in 0..b.len {
                        let mut d = 0.0;
                        for nu in 0..self.m {
                            d += a[(nu, j)] - c[(nu, j)];
                        }
                        u[(row + j, k)] = -d / (2.0 * h * self.m as f64);
                    }
                }
                row += b.len;
            }
        }
        Ok(u)
    }

    /// Empirical sandwich `U^-1 V U^-T` at the stored `theta`.
    pub fn sandwich(&self, opts: SandwichOptions) -> Result<SandwichResult> {
        let p = self.theta.len();
        let rows: usize = self.blocks.iter().map(|b| b.len).sum();
        if rows != p {
            return Err(Error::Spec(format!("{rows} estimating functions for {p} parameters")));
        }
        let mut warnings = Vec::new();
        if self.m < p + 1 {
            warnings.push(format!("only {} components for {p} stacked parameters", self.m));
        }
        let psi = self.psi(&self.theta)?;
        let mf = self.m as f64;
        let max_mean_psi = (0..p).map(|j| (psi.column(j).sum() / mf).abs()).fold(0.0, f64::max);
        let mut v = psi.transpose() * &psi / mf;
        if opts.small_sample && self.m > p {
            v *= mf / (mf - p as f64);
        }
        let u = self.bread()?;
        let sv = u.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let lu = u.clone().lu();
        let a = lu.solve(&v).ok_or(Error::IllConditioned { condition })?;
        let s = lu.solve(&a.transpose()).ok_or(Error::IllConditioned { condition })?;
        let sigma = (&s + s.transpose()) * 0.5;
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite sandwich covariance".into()));
        }
        Ok(SandwichResult {
            theta: self.theta.clone(),
            names: self.names.clone(),
            m: self.m,
            sigma,
            u,
            v,
            condition,
            max_mean_psi,
            warnings,
        })
    }
}

impl SandwichResult {
    /// `sqrt(tau' Sigma tau / m)`.
    pub fn contrast_se(&self, tau: &[f64]) -> Result<f64> {
        contrast_se(self, tau, self.m)
    }
}

/// Standard error `sqrt(tau' Sigma tau / m)` of the contrast `tau' theta`.
/// Quadratic forms below `-1e-10` are rejected; smaller negatives are
/// rounding and clamp to zero.
pub fn contrast_se(res: &SandwichResult, tau: &[f64], m: usize) -> Result<f64> {
    if tau.len() != res.sigma.nrows() {
        return Err(Error::Spec(format!("contrast has {} entries for {} parameters", tau.len(), res.sigma.nrows())));
    }
    let t = DVector::from_column_slice(tau);
    let q = (t.transpose() * &res.sigma * &t)[0];
    if q < -1e-10 {
        return Err(Error::Numerical(format!("negative contrast variance {q:e}")));
    }
    Ok((q.max(0.0) / m as f64).sqrt())
}

/// Wald interval `point -/+ z se`.
pub fn wald_interval(point: f64, se: f64, z: f64) -> (f64, f64) {
    (point - z * se, point + z * se)
}

/// Two-sided standard-normal critical value for confidence `level`.
pub fn critical_value(level: f64) -> Result<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    if (level - 0.95).abs() < 1e-12 {
        return Ok(1.96);
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mean_stack(o: &[f64]) -> Stack<'_> {
        let mu = o.iter().sum::<f64>() / o.len() as f64;
        let mut s = Stack::new(vec![mu], vec!["mu".into()], o.len()).unwrap();
        s.push(1, vec![0], move |t| Ok(DMatrix::from_fn(o.len(), 1, |i, _| o[i] - t[0]))).unwrap();
        s
    }

    #[test]
    fn pure_mean_stack() {
        let o = [1.0, 2.0, 3.0];
        let res = mean_stack(&o).sandwich(SandwichOptions::default()).unwrap();
        assert!((res.sigma[(0, 0)] - 2.0 / 3.0).abs() < 1e-9);
        let se = res.contrast_se(&[1.0]).unwrap();
        assert!((se * se - 2.0 / 9.0).abs() < 1e-9);
        assert!((res.u[(0, 0)] - 1.0).abs() < 1e-12);
        let se3 = res.contrast_se(&[-3.0]).unwrap();
        assert!((se3 - 3.0 * se).abs() < 1e-12);
        let res2 = mean_stack(&o).sandwich(SandwichOptions { small_sample: true }).unwrap();
        assert!((res2.sigma[(0, 0)] - 1.0).abs() < 1e-9);
    }

    fn regression_data(n: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<[f64; 2]> = (0..n).map(|_| [1.0, rng.random::<f64>() * 4.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 1.0 + 0.5 * r[1] + r[1] * (rng.random::<f64>() - 0.5)).collect();
        (x, y)
    }

    /// `(mu, beta)` stack with mu = mean prediction at x = 2.
    fn ols_stack<'a>(x: &'a [[f64; 2]], y: &'a [f64], beta: [f64; 2]) -> Stack<'a> {
        let n = y.len();
        let mu = beta[0] + 2.0 * beta[1];
        let mut s = Stack::new(vec![mu, beta[0], beta[1]], vec!["mu".into(), "b0".into(), "b1".into()], n).unwrap();
        s.push(1, vec![0, 1, 2], move |t| Ok(DMatrix::from_fn(n, 1, |_, _| t[1] + 2.0 * t[2] - t[0]))).unwrap();
        s.push(2, vec![1, 2], move |t| {
            Ok(DMatrix::from_fn(n, 2, |i, j| x[i][j] * (y[i] - t[1] * x[i][0] - t[2] * x[i][1])))
        })
        .unwrap();
        s
    }

    fn ols(x: &[[f64; 2]], y: &[f64]) -> [f64; 2] {
        let xm = DMatrix::from_fn(y.len(), 2, |i, j| x[i][j]);
        let b = (xm.transpose() * &xm).try_inverse().unwrap() * xm.transpose() * DVector::from_column_slice(y);
        [b[0], b[1]]
    }

    #[test]
    fn matches_hc0_for_singleton_components() {
        let (x, y) = regression_data(20, 4);
        let beta = ols(&x, &y);
        let res = ols_stack(&x, &y, beta).sandwich(SandwichOptions::default()).unwrap();
        let xm = DMatrix::from_fn(20, 2, |i, j| x[i][j]);
        let bread = (xm.transpose() * &xm).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..20 {
            let e = y[i] - beta[0] - beta[1] * x[i][1];
            let r = xm.row(i).transpose();
            meat += &r * r.transpose() * (e * e);
        }
        let hc0 = &bread * meat * &bread;
        for a in 0..2 {
            for b in 0..2 {
                let got = res.sigma[(1 + a, 1 + b)] / 20.0;
                assert!((got - hc0[(a, b)]).abs() < 1e-6 * hc0[(a, b)].abs().max(1e-8), "{got} {}", hc0[(a, b)]);
            }
        }
        // analytic bread blocks: -1 for the target, the Gram matrix / m for beta
        assert!((res.u[(0, 0)] - 1.0).abs() < 1e-9);
        let gram = xm.transpose() * &xm / 20.0;
        for a in 0..2 {
            for b in 0..2 {
                assert!((res.u[(1 + a, 1 + b)] - gram[(a, b)]).abs() < 1e-6 * gram[(a, b)].abs());
            }
        }
        assert!(res.max_mean_psi < 1e-10);
        // contrast through the target equals the delta method on beta
        let se_mu = res.contrast_se(&[1.0, 0.0, 0.0]).unwrap();
        let se_delta = res.contrast_se(&[0.0, 1.0, 2.0]).unwrap();
        assert!((se_mu - se_delta).abs() < 1e-8);
    }

    #[test]
    fn component_order_does_not_matter() {
        let (x, y) = regression_data(25, 9);
        let beta = ols(&x, &y);
        let a = ols_stack(&x, &y, beta).sandwich(SandwichOptions::default()).unwrap();
        let mut idx: Vec<usize> = (0..25).collect();
        idx.reverse();
        idx.swap(3, 17);
        let x2: Vec<[f64; 2]> = idx.iter().map(|&i| x[i]).collect();
        let y2: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let b = ols_stack(&x2, &y2, beta).sandwich(SandwichOptions::default()).unwrap();
        // identical finite-difference steps, so only summation order differs
        assert!((&a.sigma - &b.sigma).amax() < 1e-12 * a.sigma.amax());
    }

    #[test]
    fn noiseless_regression_gives_zero_se() {
        let x: Vec<[f64; 2]> = (0..10).map(|i| [1.0, i as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 - r[1]).collect();
        let res = ols_stack(&x, &y, [3.0, -1.0]).sandwich(SandwichOptions::default()).unwrap();
        assert!(res.contrast_se(&[1.0, 0.0, 0.0]).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_singular_bread() {
        let mut s = Stack::new(vec![0.0, 0.0], vec!["a".into(), "b".into()], 3).unwrap();
        s.push(2, vec![0], |t| Ok(DMatrix::from_fn(3, 2, |i, _| i as f64 - t[0]))).unwrap();
        assert!(matches!(s.sandwich(SandwichOptions::default()), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn critical_values() {
        assert_eq!(critical_value(0.95).unwrap(), 1.96);
        assert!((critical_value(0.9).unwrap() - 1.6448536).abs() < 1e-6);
        assert!(critical_value(1.0).is_err());
        assert_eq!(wald_interval(1.0, 0.5, 2.0), (0.0, 2.0));
    }
}
