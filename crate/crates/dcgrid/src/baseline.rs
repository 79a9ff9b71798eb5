//! Decentralized state feedback with integral action (LQI) designed on the
//! nominal decoupled DGU model.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, AreError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("(A, B) is not controllable")]
    Uncontrollable,
    #[error("input weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("state weight must be positive semidefinite")]
    IndefiniteWeight,
    #[error("requested poles are not closed under conjugation")]
    NotConjugateClosed,
    #[error("closed loop is not Hurwitz")]
    NotStabilizing,
    #[error(transparent)]
    Riccati(#[from] AreError),
}

/// Gains for u_bl = −(k_i ĩ_t + k_v ṽ_dc + k_xi ξ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineGains {
    pub k_i: f64,
    pub k_v: f64,
    pub k_xi: f64,
}

impl BaselineGains {
    pub fn as_row(&self) -> Vector3<f64> {
        Vector3::new(self.k_i, self.k_v, self.k_xi)
    }

    fn from_slice(k: &[f64]) -> Self {
        Self {
            k_i: k[0],
            k_v: k[1],
            k_xi: k[2],
        }
    }
}

/// Augmented third-order model ẋ = A x + B u with x = [ĩ_t, ṽ_dc, ξ].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
}

/// Nominal converter constants shared by every baseline design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalParams {
    pub l_t: f64,
    pub c_t: f64,
    pub r_t: f64,
}

impl Default for NominalParams {
    fn default() -> Self {
        Self {
            l_t: 2.794e-6,
            c_t: 60.6e-6,
            r_t: 0.1,
        }
    }
}

/// Decoupled nominal model about duty `d_nom`, output `v_ref` and load power `p_load`.
pub fn nominal_model(nom: &NominalParams, d_nom: f64, v_ref: f64, p_load: f64) -> AugmentedModel {
    let m = 1.0 - d_nom;
    let i_bar = p_load / (v_ref * m);
    let a = Matrix3::new(
        -nom.r_t / nom.l_t,
        -m / nom.l_t,
        0.0,
        m / nom.c_t,
        0.0,
        0.0,
        0.0,
        -1.0,
        0.0,
    );
    let b = Vector3::new(v_ref / nom.l_t, -i_bar / nom.c_t, 0.0);
    AugmentedModel { a, b }
}

fn to_dyn(model: &AugmentedModel) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_iterator(3, 3, model.a.iter().copied()),
        DVector::from_iterator(3, model.b.iter().copied()),
    )
}

pub fn closed_loop(model: &AugmentedModel, gains: &BaselineGains) -> Matrix3<f64> {
    model.a - model.b * gains.as_row().transpose()
}

pub fn synth_lqi(
    model: &AugmentedModel,
    q: &Matrix3<f64>,
    r: f64,
) -> Result<BaselineGains, BaselineError> {
    let (a, b) = to_dyn(model);
    let qd = DMatrix::from_iterator(3, 3, q.iter().copied());
    let k = lqr(&a, &b, &qd, r)?;
    let gains = BaselineGains::from_slice(k.as_slice());
    check_hurwitz(model, &gains)?;
    Ok(gains)
}

/// Single-input continuous LQR gain k = bᵀP/r of any order.
pub fn lqr(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    r: f64,
) -> Result<DVector<f64>, BaselineError> {
    if !(r > 0.0) {
        return Err(BaselineError::NonPositiveWeight(r));
    }
    let qs = (q + q.transpose()) * 0.5;
    if qs.symmetric_eigenvalues().min() < -1e-12 * qs.norm().max(1.0) {
        return Err(BaselineError::IndefiniteWeight);
    }
    if !linalg::is_controllable(a, b) {
        return Err(BaselineError::Uncontrollable);
    }
    let g = -(b * b.transpose()) / r;
    let p = linalg::solve_are(a, &g, &qs)?;
    Ok((p * b) / r)
}

/// Single-input pole placement by Ackermann's formula.
pub fn synth_pole_place(
    model: &AugmentedModel,
    poles: &[Complex<f64>; 3],
) -> Result<BaselineGains, BaselineError> {
    if !conjugate_closed(poles) {
        return Err(BaselineError::NotConjugateClosed);
    }
    let (a, b) = to_dyn(model);
    if !linalg::is_controllable(&a, &b) {
        return Err(BaselineError::Uncontrollable);
    }
    // Characteristic polynomial s³ + c2 s² + c1 s + c0 from the roots.
    let mut poly = vec![Complex::new(1.0, 0.0)];
    for p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
        for (k, coef) in poly.iter().enumerate() {
            next[k] += coef;
            next[k + 1] -= coef * p;
        }
        poly = next;
    }
    let coef: Vec<f64> = poly.iter().map(|z| z.re).collect();
    let eye = DMatrix::<f64>::identity(3, 3);
    let phi = &a * &a * &a + &a * &a * coef[1] + &a * coef[2] + eye * coef[3];
    let ctrb = linalg::controllability(&a, &b);
    let inv = ctrb.try_inverse().ok_or(BaselineError::Uncontrollable)?;
    let last = inv.row(2).into_owned();
    let k = last * phi;
    Ok(BaselineGains::from_slice(k.as_slice()))
}

fn conjugate_closed(poles: &[Complex<f64>]) -> bool {
    let tol = 1e-9;
    let mut used = vec![false; poles.len()];
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        let p = poles[i];
        let scale = p.norm().max(1.0);
        if p.im.abs() <= tol * scale {
            used[i] = true;
            continue;
        }
        let partner = (0..poles.len())
            .find(|&j| j != i && !used[j] && (poles[j] - p.conj()).norm() <= tol * scale);
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return false,
        }
    }
    true
}

fn check_hurwitz(model: &AugmentedModel, gains: &BaselineGains) -> Result<(), BaselineError> {
    let cl = closed_loop(model, gains);
    let d = DMatrix::from_iterator(3, 3, cl.iter().copied());
    if linalg::is_hurwitz(&d) {
        Ok(())
    } else {
        Err(BaselineError::NotStabilizing)
    }
}

/// u_bl = −K x with x = [ĩ_t, ṽ_dc, ξ].
pub fn baseline_control(gains: &BaselineGains, x_aug: &Vector3<f64>) -> f64 {
    -(gains.k_i * x_aug[0] + gains.k_v * x_aug[1] + gains.k_xi * x_aug[2])
}
