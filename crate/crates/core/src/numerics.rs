//! Dense complex linear-algebra kernel shared by the solvers.
//!
//! Matrices are `nalgebra` dense matrices over `Complex64`. Hermitian
//! eigendecomposition runs cyclic Jacobi on the real-symmetric embedding
//! `[[Re, -Im], [Im, Re]]` and recovers one complex eigenvector per duplicate
//! pair of real eigenvectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;
pub type RealMatrix = DMatrix<f64>;

/// Relative off-diagonal norm at which Jacobi sweeps stop.
const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 60;
const HERMITIAN_TOL: f64 = 1e-12;

/// Eigenpairs of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(lambda) V^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(lam);
        }
        if n == 0 {
            return ComplexMatrix::zeros(0, 0);
        }
        &scaled * self.eigenvectors.adjoint()
    }
}

/// Eigenpairs of a real symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: RealMatrix,
}

pub fn ensure_finite(m: &ComplexMatrix, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} has non-finite entries")))
    }
}

fn ensure_square(rows: usize, cols: usize, what: &str) -> Result<()> {
    if rows != cols {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// `(M + M^H) / 2`.
pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    m.nrows() == m.ncols() && (m - m.adjoint()).norm() <= tol * m.norm().max(1.0)
}

/// Real-symmetric embedding `[[Re M, -Im M], [Im M, Re M]]` of a Hermitian matrix.
pub fn real_embedding(m: &ComplexMatrix) -> RealMatrix {
    let (r, c) = m.shape();
    let mut out = RealMatrix::zeros(2 * r, 2 * c);
    for j in 0..c {
        for i in 0..r {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + r, j + c)] = z.re;
            out[(i + r, j)] = z.im;
            out[(i, j + c)] = -z.im;
        }
    }
    out
}

/// Inverse of [`real_embedding`], averaging the two copies of each part so the
/// result is exact for embeddings perturbed off the structured subspace.
pub fn from_real_embedding(r: &RealMatrix) -> ComplexMatrix {
    let n = r.nrows() / 2;
    let m = r.ncols() / 2;
    ComplexMatrix::from_fn(n, m, |i, j| {
        let re = 0.5 * (r[(i, j)] + r[(i + n, j + m)]);
        let im = 0.5 * (r[(i + n, j)] - r[(i, j + m)]);
        Complex64::new(re, im)
    })
}

/// Cyclic Jacobi eigendecomposition of a real symmetric matrix.
///
/// The input is symmetrized first. Eigenvalues come back sorted descending
/// with a stable order for ties, so diagonal inputs keep the standard basis.
pub fn symmetric_eig(a: &RealMatrix) -> SymmetricEig {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eig needs a square matrix");
    let mut a = (a + a.transpose()) * 0.5;
    let mut v = RealMatrix::identity(n, n);
    let scale = a.norm();

    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for q in 0..n {
                for p in 0..q {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if (2.0 * off).sqrt() <= JACOBI_TOL * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    // Negligible against both diagonal entries.
                    if apq.abs() * 1e-2 < f64::EPSILON * app.abs().min(aqq.abs()) {
                        a[(p, q)] = 0.0;
                        a[(q, p)] = 0.0;
                        continue;
                    }
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    rotate(&mut a, &mut v, p, q, c, s);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = RealMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    SymmetricEig {
        eigenvalues,
        eigenvectors,
    }
}

fn rotate(a: &mut RealMatrix, v: &mut RealMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eigenvalue(a: &RealMatrix) -> f64 {
    symmetric_eig(a)
        .eigenvalues
        .last()
        .copied()
        .unwrap_or(f64::INFINITY)
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Each complex eigenpair `z = x + iy` appears twice in the embedding, as
/// `(x; y)` and `(-y; x)`. Pairs are collapsed by pivoted complex Gram-Schmidt
/// over the real eigenvectors: each step takes the earliest (largest
/// eigenvalue) candidate whose residual is within a factor two of the largest
/// remaining one, so clusters of repeated eigenvalues are resolved without a
/// gap threshold. Each eigenvector is phase-normalized so that its
/// largest-magnitude entry is real and positive.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<HermitianEig> {
    ensure_square(m.nrows(), m.ncols(), "hermitian_eig input")?;
    ensure_finite(m, "hermitian_eig input")?;
    if !is_hermitian(m, HERMITIAN_TOL) {
        return Err(Error::Invalid(
            "hermitian_eig input is not Hermitian".to_string(),
        ));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(HermitianEig {
            eigenvalues: Vec::new(),
            eigenvectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let h = hermitian_part(m);
    let emb = symmetric_eig(&real_embedding(&h));

    let mut residuals: Vec<ComplexVector> = (0..2 * n)
        .map(|c| {
            let col = emb.eigenvectors.column(c);
            ComplexVector::from_fn(n, |i, _| Complex64::new(col[i], col[i + n]))
        })
        .collect();
    let mut used = vec![false; 2 * n];
    let mut pairs: Vec<(f64, ComplexVector)> = Vec::with_capacity(n);

    for _ in 0..n {
        let max_r2 = residuals
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(r, _)| r.norm_squared())
            .fold(0.0, f64::max);
        let pick = (0..2 * n)
            .find(|&j| !used[j] && residuals[j].norm_squared() >= 0.5 * max_r2)
            .expect("an unused candidate always exists");
        used[pick] = true;
        let u = residuals[pick].unscale(residuals[pick].norm());
        for (j, r) in residuals.iter_mut().enumerate() {
            if !used[j] {
                let coef = u.dotc(r);
                r.axpy(-coef, &u, Complex64::new(1.0, 0.0));
            }
        }
        let rayleigh = u.dotc(&(&h * &u)).re;
        pairs.push((rayleigh, u));
    }

    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut eigenvectors = ComplexMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (j, (lam, mut u)) in pairs.into_iter().enumerate() {
        normalize_phase(&mut u);
        eigenvectors.set_column(j, &u);
        eigenvalues.push(lam);
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

fn normalize_phase(u: &mut ComplexVector) {
    let mut best = 0;
    for i in 1..u.len() {
        if u[i].norm() > u[best].norm() {
            best = i;
        }
    }
    let pivot = u[best];
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        u.apply(|z| *z *= phase);
    }
}

/// Principal eigenvector scaled by the square root of its eigenvalue, plus the
/// ratio `lambda_2 / lambda_1` as a rank-one quality measure.
///
/// The zero matrix (or one with no positive eigenvalue) gives a zero vector and
/// ratio 0.
pub fn principal_rank1(m: &ComplexMatrix) -> Result<(ComplexVector, f64)> {
    let eig = hermitian_eig(m)?;
    let n = eig.dim();
    if n == 0 {
        return Ok((ComplexVector::zeros(0), 0.0));
    }
    let l1 = eig.eigenvalues[0];
    if l1 <= 0.0 {
        return Ok((ComplexVector::zeros(n), 0.0));
    }
    let ratio = if n > 1 {
        (eig.eigenvalues[1] / l1).max(0.0)
    } else {
        0.0
    };
    let v = eig.eigenvectors.column(0).scale(l1.sqrt());
    Ok((v, ratio))
}

/// Kronecker product.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec(m: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &ComplexVector, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// `x x^H`.
pub fn outer(x: &ComplexVector) -> ComplexMatrix {
    x * x.adjoint()
}

/// `Tr(A B)`, real part. Both arguments are Hermitian at every call site.
pub fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter()
        .zip(b.transpose().iter())
        .map(|(x, y)| (x * y).re)
        .sum()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Inverse of [`dbm_to_watts`]. Zero watts maps to `-inf`; negative input gives NaN.
pub fn watts_to_dbm(watts: f64) -> f64 {
    if watts == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * watts.log10() + 30.0
    }
}

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
