//! Pure-Neumann solves with a zero-mean constraint.
//!
//! The saddle system `[K m; mᵀ 0][y; λ] = [b; 0]` is solved by factoring
//! `K` with one node pinned: for the compatible right-hand side `b − λm`
//! with `λ = Σb / Σm` the pinned system has the same solutions up to a
//! constant, which the weighted-mean projection removes.

use sprs::FillInReduction;
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::linalg::{self, SparseOperator};

const RESIDUAL_TOL: f64 = 1e-10;

pub struct NeumannSolver {
    k: SparseOperator,
    weights: Vec<f64>,
    volume: f64,
    factor: LdlNumeric<f64, usize>,
}

impl std::fmt::Debug for NeumannSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeumannSolver")
            .field("dim", &self.k.dim())
            .field("volume", &self.volume)
            .finish()
    }
}

/// Solution of the constrained system.
#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub x: Vec<f64>,
    /// Lagrange multiplier of the mean constraint.
    pub multiplier: f64,
}

impl NeumannSolver {
    pub fn new(k: SparseOperator, weights: Vec<f64>) -> Result<Self> {
        assert_eq!(k.dim(), weights.len());
        let n = k.dim();
        let volume: f64 = weights.iter().sum();
        if !(volume > 0.0) {
            return Err(Error::Numerical("constraint weights must have positive sum".into()));
        }
        let mut pin = vec![false; n];
        pin[0] = true;
        let pinned = k.eliminate(&pin);
        let factor = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
            .numeric(pinned.csr().view())
            .map_err(|e| Error::Numerical(format!("sparse factorization failed: {e}")))?;
        if factor.d().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Numerical(
                "stiffness matrix is not positive definite on the zero-mean space".into(),
            ));
        }
        Ok(NeumannSolver {
            k,
            weights,
            volume,
            factor,
        })
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn pinned_solve(&self, r: &[f64]) -> Vec<f64> {
        let mut r = r.to_vec();
        r[0] = 0.0;
        self.factor.solve(&r)
    }

    fn project(&self, x: &mut [f64]) {
        let c = linalg::dot(&self.weights, x) / self.volume;
        x.iter_mut().for_each(|v| *v -= c);
    }

    fn residual(&self, x: &[f64], lambda: f64, b: &[f64]) -> Vec<f64> {
        let mut r = self.k.apply(x);
        for i in 0..r.len() {
            r[i] = b[i] - r[i] - lambda * self.weights[i];
        }
        r
    }

    pub fn solve(&self, b: &[f64]) -> Result<ConstrainedSolution> {
        let n = self.k.dim();
        assert_eq!(b.len(), n);
        let bn = linalg::norm2(b);
        if bn == 0.0 {
            return Ok(ConstrainedSolution {
                x: vec![0.0; n],
                multiplier: 0.0,
            });
        }
        let lambda = b.iter().sum::<f64>() / self.volume;
        let rhs: Vec<f64> = b.iter().zip(&self.weights).map(|(bi, mi)| bi - lambda * mi).collect();
        let mut x = self.pinned_solve(&rhs);
        self.project(&mut x);
        let mut r = self.residual(&x, lambda, b);
        let mut rel = linalg::norm2(&r) / bn;
        if rel > 1e-13 {
            // one step of iterative refinement
            let shift = r.iter().sum::<f64>() / self.volume;
            r.iter_mut().zip(&self.weights).for_each(|(ri, mi)| *ri -= shift * mi);
            let dx = self.pinned_solve(&r);
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            self.project(&mut x);
            rel = linalg::norm2(&self.residual(&x, lambda, b)) / bn;
        }
        let mean = linalg::dot(&self.weights, &x).abs();
        if rel <= RESIDUAL_TOL && mean <= 1e-10 * linalg::norm2(&x).max(f64::MIN_POSITIVE) * self.volume {
            return Ok(ConstrainedSolution { x, multiplier: lambda });
        }
        log::warn!("direct Neumann solve left relative residual {rel:.3e}; falling back to MINRES");
        self.solve_minres(b)
    }

    /// Iterative solve of the augmented saddle system.
    pub fn solve_minres(&self, b: &[f64]) -> Result<ConstrainedSolution> {
        let n = self.k.dim();
        let mut rhs = b.to_vec();
        rhs.push(0.0);
        let apply = |x: &[f64], y: &mut [f64]| {
            self.k.apply_into(&x[..n], &mut y[..n]);
            for i in 0..n {
                y[i] += x[n] * self.weights[i];
            }
            y[n] = linalg::dot(&self.weights, &x[..n]);
        };
        let sol = linalg::minres(apply, &rhs, 1e-12, 20 * (n + 1))?;
        let mut x = sol.x;
        let multiplier = x.pop().unwrap_or(0.0);
        let rel = linalg::norm2(&self.residual(&x, multiplier, b)) / linalg::norm2(b);
        if rel > RESIDUAL_TOL {
            return Err(Error::Convergence {
                what: "zero-mean Neumann solve",
                iterations: sol.iterations,
                residual: rel,
            });
        }
        self.project(&mut x);
        Ok(ConstrainedSolution { x, multiplier })
    }
}
