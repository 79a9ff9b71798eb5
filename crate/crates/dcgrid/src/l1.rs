//! Distributed L1 adaptive augmentation: state predictor with neighbour
//! predictor coupling, projection-based adaptation and filtered control.

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

/// Upper duty limit of the composite control.
pub const D_MAX: f64 = 0.95;

/// Width of the smooth projection boundary layer.
pub const PROJECTION_EPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Realization {
    /// A_m = −diag(poles).
    #[default]
    Modal,
    /// Control-canonical companion matrix of Π(s + pole).
    Companion,
}

pub fn desired_matrix(poles: &[f64; 3], realization: Realization) -> Matrix3<f64> {
    match realization {
        Realization::Modal => Matrix3::from_diagonal(&Vector3::new(-poles[0], -poles[1], -poles[2])),
        Realization::Companion => companion(poles),
    }
}

/// Companion matrix with rows [0 1 0], [0 0 1], [−a0 −a1 −a2] for Π(s + p_k).
pub fn companion(poles: &[f64; 3]) -> Matrix3<f64> {
    let [p1, p2, p3] = *poles;
    let a2 = p1 + p2 + p3;
    let a1 = p1 * p2 + p1 * p3 + p2 * p3;
    let a0 = p1 * p2 * p3;
    Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -a0, -a1, -a2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Config {
    pub a_m: Matrix3<f64>,
    pub b: Vector3<f64>,
    /// Direction of the exogenous reference term in the predictor.
    pub f: Vector3<f64>,
    pub gamma: f64,
    pub omega_c: f64,
    pub theta_max: f64,
    pub p: Matrix3<f64>,
    pub epsilon: f64,
    pub xi_sq: f64,
    pub n_i: usize,
}

impl L1Config {
    /// Radius of the 2-norm ball whose points all satisfy ‖θ‖₁ ≤ θ_max.
    pub fn projection_radius(&self) -> f64 {
        self.theta_max / 3f64.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerState {
    pub x_hat: Vector3<f64>,
    pub theta_hat: Vector3<f64>,
    pub lpf_state: f64,
    pub xi_int: f64,
    pub u_l1: f64,
    pub u_total: f64,
}

/// Exact zero-order-hold discretization of ẋ = A x + w.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorZoh {
    pub dt: f64,
    pub phi: Matrix3<f64>,
    pub gam: Matrix3<f64>,
}

impl PredictorZoh {
    pub fn new(a_m: &Matrix3<f64>, dt: f64) -> Self {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(a_m * dt));
        m.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(Matrix3::identity() * dt));
        let e = m.exp();
        Self {
            dt,
            phi: e.fixed_view::<3, 3>(0, 0).into_owned(),
            gam: e.fixed_view::<3, 3>(0, 3).into_owned(),
        }
    }

    pub fn step(&self, x: &Vector3<f64>, w: &Vector3<f64>) -> Vector3<f64> {
        self.phi * x + self.gam * w
    }
}

/// Input held over the step: b(u_L1 + θ̂ᵀx) + F d̂ + Σ Â_ij x̂_j.
pub fn predictor_input(
    cfg: &L1Config,
    st: &ControllerState,
    x_meas: &Vector3<f64>,
    neighbor_xhat: &[(Matrix3<f64>, Vector3<f64>)],
    d_hat: f64,
) -> Vector3<f64> {
    let mut w = cfg.b * (st.u_l1 + st.theta_hat.dot(x_meas)) + cfg.f * d_hat;
    for (a_ij, xj) in neighbor_xhat {
        w += a_ij * xj;
    }
    w
}

pub fn predictor_step(
    cfg: &L1Config,
    st: &ControllerState,
    x_meas: &Vector3<f64>,
    neighbor_xhat: &[(Matrix3<f64>, Vector3<f64>)],
    d_hat: f64,
    dt: f64,
) -> Vector3<f64> {
    let zoh = PredictorZoh::new(&cfg.a_m, dt);
    let w = predictor_input(cfg, st, x_meas, neighbor_xhat, d_hat);
    zoh.step(&st.x_hat, &w)
}

/// Smooth projection on the ball ‖θ‖₂ ≤ radius with boundary layer `eps`.
pub fn projection(theta: &Vector3<f64>, y: &Vector3<f64>, radius: f64, eps: f64) -> Vector3<f64> {
    if radius <= 0.0 {
        return Vector3::zeros();
    }
    let r2 = radius * radius;
    let f = ((1.0 + eps) * theta.norm_squared() - r2) / (eps * r2);
    let grad = theta * (2.0 * (1.0 + eps) / (eps * r2));
    let gy = grad.dot(y);
    if f > 0.0 && gy > 0.0 {
        y - grad * (gy * f.min(1.0) / grad.norm_squared())
    } else {
        *y
    }
}

/// One Euler step of θ̂̇ = Γ Proj(θ̂, −x x̃ᵀ P b) with x̃ = x̂ − x.
pub fn adaptive_step(
    cfg: &L1Config,
    st: &ControllerState,
    x_meas: &Vector3<f64>,
    x_hat: &Vector3<f64>,
    dt: f64,
) -> Vector3<f64> {
    let x_tilde = x_hat - x_meas;
    let y = -x_meas * x_tilde.dot(&(cfg.p * cfg.b));
    let radius = cfg.projection_radius();
    let dir = projection(&st.theta_hat, &y, radius, PROJECTION_EPS);
    let mut next = st.theta_hat + dir * (cfg.gamma * dt);
    let nrm = next.norm();
    if nrm > radius {
        next *= radius / nrm;
    }
    next
}

/// First-order low-pass C(s) = ω_c/(s + ω_c), zero-order-hold exact.
pub fn lpf_step(cfg: &L1Config, st: &ControllerState, raw: f64, dt: f64) -> f64 {
    let a = 1.0 - (-cfg.omega_c * dt).exp();
    st.lpf_state + a * (raw - st.lpf_state)
}

/// u_L1 = C(s)[−θ̂ᵀx̂]; updates the filter state and the stored output.
pub fn l1_control(cfg: &L1Config, st: &mut ControllerState, dt: f64) -> f64 {
    let raw = -st.theta_hat.dot(&st.x_hat);
    let y = lpf_step(cfg, st, raw, dt);
    st.lpf_state = y;
    st.u_l1 = y;
    y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    pub duty: f64,
    pub saturated: bool,
}

pub fn composite_control(baseline_u: f64, u_l1: f64, duty_op: f64) -> Actuation {
    let raw = duty_op + baseline_u + u_l1;
    let duty = raw.clamp(0.0, D_MAX);
    Actuation {
        duty,
        saturated: raw != duty,
    }
}
