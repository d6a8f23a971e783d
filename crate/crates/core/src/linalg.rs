//! Thin dense linear-algebra layer over `faer`.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Col, Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Jitter ladder for Cholesky, as multiples of the matrix trace.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<SymEigen> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i]).collect();
    Ok(SymEigen {
        values,
        vectors: evd.U().to_owned(),
    })
}

pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigensolver failed: {e:?}")))
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(a: MatRef<'_, f64>) -> Result<(f64, f64)> {
    let v = sym_eigenvalues(a)?;
    Ok((v[0], v[v.len() - 1]))
}

/// Spectral norm of a symmetric matrix.
pub fn op_norm_sym(a: MatRef<'_, f64>) -> Result<f64> {
    let (lo, hi) = extreme_eigenvalues(a)?;
    Ok(lo.abs().max(hi.abs()))
}

pub fn trace(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// `UᵀU` with the upper triangle mirrored from the lower one, so the result
/// is bitwise symmetric.
pub fn gram_t(u: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = u.transpose() * u;
    mirror_lower(&mut g);
    g
}

pub fn mirror_lower(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Cholesky factor of an SPD matrix with the fixed jitter ladder.
#[derive(Debug)]
pub struct Cholesky {
    llt: Llt<f64>,
    /// Absolute jitter added to the diagonal.
    pub jitter: f64,
}

impl Cholesky {
    pub fn factor(a: MatRef<'_, f64>) -> Result<Self> {
        let tr = trace(a).abs().max(f64::MIN_POSITIVE);
        for rung in JITTER_LADDER {
            let jitter = rung * tr;
            let attempt = if jitter == 0.0 {
                a.llt(Side::Lower)
            } else {
                let mut b = a.to_owned();
                for i in 0..b.nrows() {
                    b[(i, i)] += jitter;
                }
                b.llt(Side::Lower)
            };
            if let Ok(llt) = attempt {
                if jitter > 0.0 {
                    log::debug!("cholesky needed jitter {jitter:e}");
                }
                return Ok(Cholesky { llt, jitter });
            }
        }
        let min_eigenvalue = sym_eigenvalues(a).map(|v| v[0]).unwrap_or(f64::NAN);
        Err(Error::Conditioning { min_eigenvalue })
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let col = Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
        let x = self.llt.solve(&col);
        (0..x.nrows()).map(|i| x[i]).collect()
    }

    /// `ln det A` (including jitter).
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `L z = b` for the leading `b.len()` rows.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        forward_substitute(self.llt.L(), b)
    }

    /// Solves `Lᵀ x = z` restricted to the leading `z.len()` block.
    pub fn backward(&self, z: &[f64]) -> Vec<f64> {
        backward_substitute(self.llt.L(), z)
    }

    /// Diagonal of `A⁻¹`.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim();
        let l = self.llt.L();
        // A⁻¹ = L⁻ᵀ L⁻¹; diag entry i is the squared norm of column i of L⁻¹.
        let mut linv = Mat::<f64>::identity(n, n);
        l.solve_lower_triangular_in_place(&mut linv);
        (0..n)
            .map(|i| (i..n).map(|k| linv[(k, i)] * linv[(k, i)]).sum())
            .collect()
    }
}

/// Forward substitution on the leading block of a lower-triangular matrix.
pub fn forward_substitute(l: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut z = vec![0.0; k];
    for i in 0..k {
        let mut acc = b[i];
        for j in 0..i {
            acc -= l[(i, j)] * z[j];
        }
        z[i] = acc / l[(i, i)];
    }
    z
}

/// Back substitution `Lᵀ x = z` on the leading `z.len()` block.
pub fn backward_substitute(l: MatRef<'_, f64>, z: &[f64]) -> Vec<f64> {
    let k = z.len();
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = z[i];
        for j in i + 1..k {
            acc -= l[(j, i)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn col_to_vec(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// `Mᵀ v` for a dense matrix and a slice.
pub fn mat_t_vec(m: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.nrows(), v.len());
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)] * v[i]).sum())
        .collect()
}

/// `M v`.
pub fn mat_vec(m: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), v.len());
    let mut out = vec![0.0; m.nrows()];
    for j in 0..m.ncols() {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * vj;
        }
    }
    out
}
