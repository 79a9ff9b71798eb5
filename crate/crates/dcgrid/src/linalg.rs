//! Small dense solvers: Riccati via the Hamiltonian sign function, Lyapunov
//! via Kronecker products, spectral helpers.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AreError {
    #[error("Hamiltonian matrix has eigenvalues on the imaginary axis (min |Re| = {0:.3e})")]
    NotHyperbolic(f64),
    #[error("matrix sign iteration did not converge")]
    NoConvergence,
    #[error("stable invariant subspace is singular")]
    SingularSubspace,
    #[error("Riccati solution is not stabilizing")]
    NotStabilizing,
    #[error("dimension mismatch")]
    Dimension,
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    max_real_eigenvalue(a) < 0.0
}

/// Smallest singular value of A − jωI.
pub fn sigma_min_shifted(a: &DMatrix<f64>, omega: f64) -> f64 {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        Complex::new(a[(i, j)], if i == j { -omega } else { 0.0 })
    });
    m.singular_values().min()
}

/// Solves Aᵀ X + X A = −Q by vectorization.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, (-q).iter().copied());
    let x = k.lu().solve(&rhs)?;
    Some(DMatrix::from_iterator(n, n, x.iter().copied()))
}

pub fn riccati_residual(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    a.transpose() * x + x * a + x * g * x + q
}

/// Stabilizing symmetric solution of Aᵀ X + X A + X G X + Q = 0, i.e. the
/// stable invariant subspace of H = [[A, G], [−Q, −Aᵀ]].
pub fn solve_are(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>, AreError> {
    let n = a.nrows();
    if a.ncols() != n || g.shape() != (n, n) || q.shape() != (n, n) {
        return Err(AreError::Dimension);
    }
    // Diagonal similarity on the state keeps badly scaled models tractable.
    let s = balance_scales(a);
    let si = DMatrix::from_diagonal(&s.map(|v| 1.0 / v));
    let sd = DMatrix::from_diagonal(&s);
    let a_s = &si * a * &sd;
    let g_s = &si * g * &si;
    let q_s = &sd * q * &sd;

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a_s);
    h.view_mut((0, n), (n, n)).copy_from(&g_s);
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q_s));
    h.view_mut((n, n), (n, n)).copy_from(&(-a_s.transpose()));

    let ev = eigenvalues(&h);
    let scale = ev.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let min_re = ev.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    if min_re <= 1e-10 * scale {
        return Err(AreError::NotHyperbolic(min_re));
    }

    let w = matrix_sign(&h)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m1 = DMatrix::zeros(n, 2 * n);
    let mut m2 = DMatrix::zeros(n, 2 * n);
    m1.view_mut((0, 0), (n, n))
        .copy_from(&(&eye - w.view((0, 0), (n, n))));
    m1.view_mut((0, n), (n, n))
        .copy_from(&(-w.view((0, n), (n, n))));
    m2.view_mut((0, 0), (n, n))
        .copy_from(&(-w.view((n, 0), (n, n))));
    m2.view_mut((0, n), (n, n))
        .copy_from(&(&eye - w.view((n, n), (n, n))));
    // X M1 = M2  ⇔  M1ᵀ Xᵀ = M2ᵀ
    let svd = m1.transpose().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-13 * smax {
        return Err(AreError::SingularSubspace);
    }
    let xt = svd
        .solve(&m2.transpose(), 0.0)
        .map_err(|_| AreError::SingularSubspace)?;
    let mut x = xt.transpose();
    x = (&x + x.transpose()) * 0.5;

    newton_refine(&a_s, &g_s, &q_s, &mut x);

    let x = &si * x * &si;
    let x = (&x + x.transpose()) * 0.5;
    if !is_hurwitz(&(a + g * &x)) {
        return Err(AreError::NotStabilizing);
    }
    Ok(x)
}

fn balance_scales(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut s = DVector::from_element(n, 1.0);
    // Equalize row/column norms of A by powers of two (Osborne-style sweeps).
    for _ in 0..40 {
        let mut changed = false;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if i != j {
                    c += (a[(j, i)] * s[i] / s[j]).abs();
                    r += (a[(i, j)] * s[j] / s[i]).abs();
                }
            }
            if c > 0.0 && r > 0.0 {
                let f = (r / c).sqrt().log2().round();
                if f != 0.0 {
                    s[i] *= 2f64.powf(f);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    s
}

fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>, AreError> {
    let m = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..200 {
        let zi = z.clone().try_inverse().ok_or(AreError::NoConvergence)?;
        let det = z.clone().lu().determinant().abs();
        let c = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / m)
        } else {
            1.0
        };
        let next = (&z * c + zi / c) * 0.5;
        let diff = (&next - &z).norm();
        let nrm = next.norm();
        z = next;
        if diff <= 1e-14 * nrm {
            return Ok(z);
        }
    }
    Err(AreError::NoConvergence)
}

fn newton_refine(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, x: &mut DMatrix<f64>) {
    let mut res = riccati_residual(a, g, q, x).norm();
    for _ in 0..6 {
        if res == 0.0 {
            return;
        }
        let acl = a + g * &*x;
        let r = riccati_residual(a, g, q, x);
        let Some(dx) = solve_lyapunov(&acl, &r) else {
            return;
        };
        let cand = &*x + dx;
        let cand = (&cand + cand.transpose()) * 0.5;
        let cres = riccati_residual(a, g, q, &cand).norm();
        if cres < res {
            *x = cand;
            res = cres;
        } else {
            return;
        }
    }
}

/// Controllability matrix [b, Ab, …, A^{n−1}b].
pub fn controllability(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut c = DMatrix::zeros(n, n);
    let mut v = b.clone();
    for k in 0..n {
        c.set_column(k, &v);
        v = a * v;
    }
    c
}

/// Numerical rank test of the controllability matrix after column scaling.
pub fn is_controllable(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    let mut c = controllability(a, b);
    for mut col in c.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    let n = c.nrows();
    for mut row in c.row_iter_mut() {
        let nrm = row.norm();
        if nrm > 0.0 {
            row /= nrm;
        }
    }
    let sv = c.singular_values();
    sv.min() > 1e-10 * sv.max() && sv.len() == n
}
