//! Gauss–Hermite quadrature for expectations over a centred normal.

use crate::error::{Error, Result};

/// Gauss–Hermite rule for the weight `exp(-t^2)`, with nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds a `q`-point rule by Newton iteration on the orthonormal Hermite
    /// recurrence.
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::Domain("quadrature needs at least one point".into()));
        }
        if q == 1 {
            return Ok(Self { nodes: vec![0.0], weights: vec![std::f64::consts::PI.sqrt()] });
        }
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let n = q as f64;
        let mut x = vec![0.0; q];
        let mut w = vec![0.0; q];
        let mut z = 0.0f64;
        for i in 0..q.div_ceil(2) {
            z = match i {
                0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-0.16667),
                1 => z - 1.14 * n.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let (mut p1, mut p2) = (pim4, 0.0);
                for j in 0..q {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence { what: format!("{q}-point Hermite roots"), iterations: 100 });
            }
            x[i] = z;
            x[q - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[q - 1 - i] = w[i];
        }
        x.reverse();
        w.reverse();
        if q % 2 == 1 {
            x[q / 2] = 0.0;
        }
        Ok(Self { nodes: x, weights: w })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Abscissae `t_q` for the weight `exp(-t^2)`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights for the weight `exp(-t^2)`; they sum to `sqrt(pi)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Random-effect values `b_q = sqrt(2 var) t_q` and probability weights
    /// `w_q / sqrt(pi)` approximating `N(0, var)`.
    pub fn normal_points(&self, var: f64) -> (Vec<f64>, Vec<f64>) {
        let scale = (2.0 * var.max(0.0)).sqrt();
        let norm = std::f64::consts::PI.sqrt();
        (
            self.nodes.iter().map(|t| scale * t).collect(),
            self.weights.iter().map(|w| w / norm).collect(),
        )
    }

    /// `E[g(b)]` for `b ~ N(0, var)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, var: f64, mut g: F) -> f64 {
        let (b, p) = self.normal_points(var);
        b.iter().zip(&p).map(|(&bq, &pq)| pq * g(bq)).sum()
    }
}
