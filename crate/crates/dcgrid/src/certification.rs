//! Offline stability certificates for the distributed L1 design: coupling
//! bound, distance to instability, local Riccati equation and the filter
//! small-gain condition.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{MicrogridTopology, NodeId, SmallSignalModel};
use crate::l1::{desired_matrix, L1Config, Realization};
use crate::linalg::{self, AreError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("desired matrix is not Hurwitz (max Re λ = {0:.3e})")]
    NotHurwitz(f64),
    #[error("local Riccati equation: {0}")]
    Riccati(#[from] AreError),
    #[error("negative coupling data")]
    InvalidInput,
}

/// Design constants shared by every DGU's L1 controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Defaults {
    pub poles: [f64; 3],
    pub realization: Realization,
    pub gamma: f64,
    pub omega_c: f64,
    /// Per-component [lower, upper] bounds of the uncertainty box.
    pub theta_box: [[f64; 2]; 3],
    /// ε = epsilon_scale · (Ξ² + 1).
    pub epsilon_scale: f64,
}

impl Default for L1Defaults {
    fn default() -> Self {
        Self {
            poles: [1.2e5, 1.5e5, 1.8e5],
            realization: Realization::Modal,
            gamma: 1e6,
            omega_c: 2.0 * PI * 500.0,
            theta_box: [[-2e4, 2e4]; 3],
            epsilon_scale: 0.01,
        }
    }
}

impl L1Defaults {
    pub fn a_m(&self) -> Matrix3<f64> {
        desired_matrix(&self.poles, self.realization)
    }

    pub fn b(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, 1.0)
    }

    pub fn epsilon(&self, xi_sq: f64) -> f64 {
        self.epsilon_scale * (xi_sq + 1.0)
    }
}

pub fn coupling_bound(neighbor_couplings: &[Matrix3<f64>]) -> f64 {
    neighbor_couplings
        .iter()
        .map(|a| (a.transpose() * a).symmetric_eigenvalues().max())
        .sum()
}

fn to_dyn(a: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, a.iter().copied())
}

/// γ = min_ω σ_min(A_m − jωI) by bisection on the Hamiltonian imaginary-axis test.
pub fn min_distance(a_m: &Matrix3<f64>) -> Result<f64, CertError> {
    min_distance_dyn(&to_dyn(a_m))
}

pub fn min_distance_dyn(a: &DMatrix<f64>) -> Result<f64, CertError> {
    let ev = linalg::eigenvalues(a);
    let max_re = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(CertError::NotHurwitz(max_re));
    }
    let mut hi = ev.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    for z in &ev {
        hi = hi.min(linalg::sigma_min_shifted(a, z.im));
    }
    hi = hi.min(linalg::sigma_min_shifted(a, 0.0));
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if crosses_axis(a, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// True when some ω has σ_min(A − jωI) ≤ σ.
fn crosses_axis(a: &DMatrix<f64>, sigma: f64) -> bool {
    let n = a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    for k in 0..n {
        h[(k, n + k)] = sigma;
        h[(n + k, k)] = -sigma;
    }
    let ev = linalg::eigenvalues(&h);
    let scale = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    ev.iter().any(|z| {
        z.re.abs() <= 1e-6 * z.norm() + 1e-14 * scale
            && linalg::sigma_min_shifted(a, z.im) <= sigma * (1.0 + 1e-8)
    })
}

/// Stabilizing P of A_mᵀP + P A_m + N P P + (Ξ² + ε) I = 0.
pub fn solve_local_are(
    a_m: &Matrix3<f64>,
    n_i: usize,
    xi_sq: f64,
    epsilon: f64,
) -> Result<Matrix3<f64>, CertError> {
    if xi_sq < 0.0 || epsilon < 0.0 {
        return Err(CertError::InvalidInput);
    }
    let a = to_dyn(a_m);
    let g = DMatrix::identity(3, 3) * n_i as f64;
    let q = DMatrix::identity(3, 3) * (xi_sq + epsilon);
    let p = linalg::solve_are(&a, &g, &q)?;
    Ok(Matrix3::from_iterator(p.iter().copied()))
}

/// Residual norm of the local ARE, absolute and relative to its term magnitudes.
pub fn are_residual(
    a_m: &Matrix3<f64>,
    n_i: usize,
    xi_sq: f64,
    epsilon: f64,
    p: &Matrix3<f64>,
) -> (f64, f64) {
    let c = Matrix3::identity() * (xi_sq + epsilon);
    let t1 = a_m.transpose() * p;
    let t2 = p * a_m;
    let t3 = p * p * n_i as f64;
    let r = t1 + t2 + t3 + c;
    let abs = r.norm();
    let scale = t1.norm() + t2.norm() + t3.norm() + c.norm();
    (abs, if scale > 0.0 { abs / scale } else { abs })
}

pub fn theta_bound(theta_set: &[[f64; 2]; 3]) -> f64 {
    theta_set
        .iter()
        .map(|[lo, hi]| lo.abs().max(hi.abs()))
        .sum()
}

/// ‖H(s)(1 − C(s))‖_L1 with H = (sI − A_m)⁻¹ b and C = ω_c/(s + ω_c),
/// maximized over the output channels.
pub fn l1_norm(a_m: &Matrix3<f64>, b: &Vector3<f64>, omega_c: f64) -> f64 {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(a_m);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-b * omega_c));
    m[(3, 3)] = -omega_c;
    let v0 = Vector4::new(b[0], b[1], b[2], 1.0);

    let slowest = linalg::eigenvalues(&to_dyn(a_m))
        .iter()
        .map(|z| z.re.abs())
        .fold(omega_c, f64::min);
    let horizon = 40.0 / slowest;
    let response = |t: f64| -> Vector4<f64> { (m * t).exp() * v0 };

    (0..3)
        .map(|k| {
            let f = |t: f64| response(t)[k].abs();
            integrate_abs(&f, horizon)
        })
        .fold(0.0, f64::max)
}

fn integrate_abs(f: &dyn Fn(f64) -> f64, horizon: f64) -> f64 {
    const PANELS: usize = 64;
    let h = horizon / PANELS as f64;
    let coarse: f64 = (0..PANELS)
        .map(|k| {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        })
        .sum();
    let tol = 1e-12 * coarse.abs().max(f64::MIN_POSITIVE) / PANELS as f64;
    (0..PANELS)
        .map(|k| {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, a, b, fa, fm, fb, whole, tol, 60)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

pub fn l1_norm_condition(
    a_m: &Matrix3<f64>,
    b: &Vector3<f64>,
    omega_c: f64,
    theta_max: f64,
) -> (f64, bool) {
    if theta_max == 0.0 {
        return (0.0, true);
    }
    let lambda = l1_norm(a_m, b, omega_c) * theta_max;
    (lambda, lambda < 1.0)
}

/// Per-DGU certificate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DguCert {
    pub id: NodeId,
    pub n_neighbors: usize,
    pub xi_sq: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub gamma_threshold: f64,
    pub are_residual: Option<f64>,
    pub p_min_eigenvalue: Option<f64>,
    pub lambda: f64,
    pub theta_max: f64,
    pub pass_distance: bool,
    pub pass_are: bool,
    pub pass_l1: bool,
    pub pass: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub dgus: Vec<DguCert>,
    pub global_pass: bool,
}

impl CertReport {
    pub fn entry(&self, id: NodeId) -> Option<&DguCert> {
        self.dgus.iter().find(|d| d.id == id)
    }
}

/// Certificate plus the ARE solution needed to run the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDesign {
    pub cert: DguCert,
    pub p: Option<Matrix3<f64>>,
}

impl LocalDesign {
    pub fn l1_config(&self, l1: &L1Defaults) -> L1Config {
        L1Config {
            a_m: l1.a_m(),
            b: l1.b(),
            f: Vector3::new(1.0, 0.0, 0.0),
            gamma: l1.gamma,
            omega_c: l1.omega_c,
            theta_max: self.cert.theta_max,
            p: self.p.unwrap_or_else(Matrix3::zeros),
            epsilon: self.cert.epsilon,
            xi_sq: self.cert.xi_sq,
            n_i: self.cert.n_neighbors,
        }
    }
}

/// Runs every check for one DGU from its neighbour coupling matrices alone.
pub fn certify_local(id: NodeId, couplings: &[Matrix3<f64>], l1: &L1Defaults) -> LocalDesign {
    let a_m = l1.a_m();
    let n_i = couplings.len();
    let xi_sq = coupling_bound(couplings);
    let epsilon = l1.epsilon(xi_sq);
    let threshold = (n_i as f64 * xi_sq).sqrt();
    let theta_max = theta_bound(&l1.theta_box);
    let mut failures = Vec::new();

    let gamma = match min_distance(&a_m) {
        Ok(g) => g,
        Err(e) => {
            failures.push(format!("distance: {e}"));
            0.0
        }
    };
    let pass_distance = gamma > threshold;
    if !pass_distance && failures.is_empty() {
        failures.push(format!(
            "distance: gamma {gamma:.6e} <= sqrt(N xi^2) {threshold:.6e}"
        ));
    }

    let (mut are_res, mut p_min, mut p) = (None, None, None);
    match solve_local_are(&a_m, n_i, xi_sq, epsilon) {
        Ok(sol) => {
            let (_, rel) = are_residual(&a_m, n_i, xi_sq, epsilon, &sol);
            are_res = Some(rel);
            p_min = Some(sol.symmetric_eigenvalues().min());
            p = Some(sol);
        }
        Err(e) => failures.push(format!("riccati: {e}")),
    }
    let pass_are = matches!((are_res, p_min), (Some(r), Some(m)) if r < 1e-8 && m > 0.0);
    if !pass_are && p.is_some() {
        failures.push("riccati: residual or definiteness check failed".into());
    }

    let (lambda, pass_l1) = l1_norm_condition(&a_m, &l1.b(), l1.omega_c, theta_max);
    if !pass_l1 {
        failures.push(format!("l1-norm: lambda {lambda:.6e} >= 1"));
    }
    let pass = pass_distance && pass_are && pass_l1;
    LocalDesign {
        cert: DguCert {
            id,
            n_neighbors: n_i,
            xi_sq,
            epsilon,
            gamma,
            gamma_threshold: threshold,
            are_residual: are_res,
            p_min_eigenvalue: p_min,
            lambda,
            theta_max,
            pass_distance,
            pass_are,
            pass_l1,
            pass,
            failures,
        },
        p,
    }
}

/// Coupling matrices seen by DGU `k`: for each neighbour the larger of the
/// two directed coupling magnitudes.
pub fn neighbor_couplings(models: &[SmallSignalModel], topo: &MicrogridTopology, k: usize) -> Vec<Matrix3<f64>> {
    let id = topo.dgus()[k].id;
    models[k]
        .a_ij_aug
        .iter()
        .map(|(j, a_ij)| {
            let back = topo
                .index_of(*j)
                .and_then(|jj| models[jj].a_ij_aug.get(&id).copied())
                .unwrap_or(*a_ij);
            if back.norm() > a_ij.norm() {
                back
            } else {
                *a_ij
            }
        })
        .collect()
}

pub fn certify_designs(
    topo: &MicrogridTopology,
    models: &[SmallSignalModel],
    l1: &L1Defaults,
) -> Vec<LocalDesign> {
    (0..topo.dgus().len())
        .map(|k| certify_local(topo.dgus()[k].id, &neighbor_couplings(models, topo, k), l1))
        .collect()
}

pub fn certify(topo: &MicrogridTopology, models: &[SmallSignalModel], l1: &L1Defaults) -> CertReport {
    let dgus: Vec<DguCert> = certify_designs(topo, models, l1)
        .into_iter()
        .map(|d| d.cert)
        .collect();
    let global_pass = dgus.iter().all(|d| d.pass);
    CertReport { dgus, global_pass }
}

/// Re-certifies only `new_id` and its neighbours after a plug-in, copying
/// every other entry from `previous`.
pub fn certify_plug_in(
    previous: &CertReport,
    topo_after: &MicrogridTopology,
    models_after: &[SmallSignalModel],
    new_id: NodeId,
    l1: &L1Defaults,
) -> CertReport {
    let affected: Vec<NodeId> = std::iter::once(new_id)
        .chain(topo_after.neighbor_map().get(&new_id).into_iter().flatten().copied())
        .collect();
    let dgus: Vec<DguCert> = topo_after
        .dgus()
        .iter()
        .enumerate()
        .map(|(k, d)| match previous.entry(d.id) {
            Some(old) if !affected.contains(&d.id) => old.clone(),
            _ => certify_local(d.id, &neighbor_couplings(models_after, topo_after, k), l1).cert,
        })
        .collect();
    let global_pass = dgus.iter().all(|d| d.pass);
    CertReport { dgus, global_pass }
}
