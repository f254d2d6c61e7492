//! Sparse symmetric operators and the Krylov solvers used on them.

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

/// Symmetric sparse matrix in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    mat: CsMat<f64>,
}

impl SparseOperator {
    /// Sums duplicate triplets.
    pub fn from_triplets(n: usize, rows: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Self {
        let tri = TriMat::from_triplets((n, n), rows, cols, vals);
        SparseOperator { mat: tri.to_csr() }
    }

    pub fn from_csr(mat: CsMat<f64>) -> Self {
        assert!(mat.is_csr() && mat.rows() == mat.cols());
        SparseOperator { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn csr(&self) -> &CsMat<f64> {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        for (i, row) in self.mat.outer_iterator().enumerate() {
            y[i] = row.iter().map(|(j, &v)| v * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply(y))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mat.outer_iterator().map(|r| r.iter().map(|(_, v)| v).sum()).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        SparseOperator { mat: self.mat.map(|v| c * v) }
    }

    /// Largest `|A_ij − A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.mat.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for (i, row) in self.mat.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.asymmetry() <= rel_tol
    }

    /// Replaces row and column `i` by the identity for every flagged index.
    pub fn eliminate(&self, fixed: &[bool]) -> Self {
        assert_eq!(fixed.len(), self.dim());
        let n = self.dim();
        let (mut r, mut c, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for (i, row) in self.mat.outer_iterator().enumerate() {
            if fixed[i] {
                continue;
            }
            for (j, &a) in row.iter() {
                if !fixed[j] {
                    r.push(i);
                    c.push(j);
                    v.push(a);
                }
            }
        }
        for (i, &f) in fixed.iter().enumerate() {
            if f {
                r.push(i);
                c.push(i);
                v.push(1.0);
            }
        }
        Self::from_triplets(n, r, c, v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of an iterative solve.
#[derive(Debug, Clone)]
pub struct KrylovSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual estimate at exit.
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD `apply`.
pub fn cg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovSolution> {
    let n = b.len();
    let bn = norm2(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(KrylovSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 1..=max_iter {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return Err(Error::Numerical(format!(
                "conjugate gradients hit a non-positive curvature {pq:.3e} at iteration {it}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm2(&r) / bn;
        if res <= tol {
            return Ok(KrylovSolution {
                x,
                iterations: it,
                residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Convergence {
        what: "conjugate gradients",
        iterations: max_iter,
        residual: res,
    })
}

/// Unpreconditioned MINRES for symmetric (possibly indefinite) `apply`.
pub fn minres(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovSolution> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = norm2(b);
    if beta1 == 0.0 {
        return Ok(KrylovSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut res = 1.0;
    for it in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply(&v, &mut y);
        if it >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                y[i] -= c * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for i in 0..n {
            y[i] -= c * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm2(&y);
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        res = phibar / beta1;
        if res <= tol || beta == 0.0 {
            return Ok(KrylovSolution {
                x,
                iterations: it,
                residual: res,
            });
        }
    }
    Err(Error::Convergence {
        what: "MINRES",
        iterations: max_iter,
        residual: res,
    })
}
