//! Thin wrappers over `argmin` for the likelihood fits.

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason};
use argmin::solver::brent::BrentOpt;
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::BFGS;

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
    pub converged: bool,
}

struct Problem<'a> {
    f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    g: Option<&'a (dyn Fn(&[f64]) -> Vec<f64> + Sync)>,
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        let v = (self.f)(p);
        Ok(if v.is_finite() { v } else { f64::INFINITY })
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        let g = self.g.expect("gradient supplied for quasi-Newton runs");
        Ok(g(p))
    }
}

/// Nelder–Mead from an axis-aligned simplex with edge `step`.
pub(crate) fn nelder_mead(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    step: f64,
    max_iters: u64,
) -> Minimum {
    let mut simplex = vec![x0.to_vec()];
    for k in 0..x0.len() {
        let mut v = x0.to_vec();
        v[k] += step;
        simplex.push(v);
    }
    let fallback = || Minimum { x: x0.to_vec(), value: f(x0), iterations: 0, converged: false };
    let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(1e-10) else {
        return fallback();
    };
    match Executor::new(Problem { f, g: None }, solver).configure(|s| s.max_iters(max_iters)).run() {
        Ok(res) => {
            let st = res.state();
            Minimum {
                x: st.get_best_param().cloned().unwrap_or_else(|| x0.to_vec()),
                value: st.get_best_cost(),
                iterations: st.get_iter(),
                converged: matches!(st.get_termination_reason(), Some(TerminationReason::SolverConverged)),
            }
        }
        Err(_) => fallback(),
    }
}

/// BFGS with a More–Thuente line search. Stops when the objective changes by
/// less than `rel_tol * (1 + |f(x0)|)` between iterations or after
/// `max_iters`.
pub(crate) fn bfgs(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    g: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    x0: &[f64],
    rel_tol: f64,
    max_iters: u64,
) -> Minimum {
    let f0 = f(x0);
    let n = x0.len();
    let start = Minimum { x: x0.to_vec(), value: f0, iterations: 0, converged: false };
    let tol = rel_tol * (1.0 + f0.abs());
    let Ok(solver) = BFGS::new(MoreThuenteLineSearch::new()).with_tolerance_cost(tol) else {
        return start;
    };
    let solver = match solver.with_tolerance_grad(1e-10) {
        Ok(s) => s,
        Err(_) => return start,
    };
    let h0: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let run = Executor::new(Problem { f, g: Some(g) }, solver)
        .configure(|s| s.param(x0.to_vec()).inv_hessian(h0).max_iters(max_iters))
        .run();
    match run {
        Ok(res) => {
            let st = res.state();
            let x = st.get_best_param().cloned().unwrap_or_else(|| x0.to_vec());
            let value = f(&x);
            Minimum {
                converged: matches!(st.get_termination_reason(), Some(TerminationReason::SolverConverged)),
                x,
                value,
                iterations: st.get_iter(),
            }
        }
        Err(_) => start,
    }
}

/// Brent minimization of a scalar function on `[lo, hi]`.
pub(crate) fn brent(f: &(dyn Fn(f64) -> f64 + Sync), lo: f64, hi: f64) -> (f64, f64) {
    struct Scalar<'a>(&'a (dyn Fn(f64) -> f64 + Sync));
    impl CostFunction for Scalar<'_> {
        type Param = f64;
        type Output = f64;
        fn cost(&self, p: &f64) -> Result<f64, argmin::core::Error> {
            let v = (self.0)(*p);
            Ok(if v.is_finite() { v } else { f64::INFINITY })
        }
    }
    let solver = BrentOpt::new(lo, hi).set_tolerance(1e-10, 1e-10);
    match Executor::new(Scalar(f), solver).configure(|s| s.max_iters(500)).run() {
        Ok(res) => {
            let x = res.state().get_best_param().copied().unwrap_or(lo);
            (x, f(x))
        }
        Err(_) => (lo, f(lo)),
    }
}
