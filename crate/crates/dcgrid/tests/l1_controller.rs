use std::sync::OnceLock;

use dcgrid::certification::{certify_local, L1Defaults};
use dcgrid::grid::coupling_matrix;
use dcgrid::l1::*;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn config(couplings: &[Matrix3<f64>]) -> L1Config {
    let defaults = L1Defaults::default();
    let design = certify_local(1, couplings, &defaults);
    assert!(design.cert.pass, "{:?}", design.cert.failures);
    design.l1_config(&defaults)
}

fn isolated() -> &'static L1Config {
    static CFG: OnceLock<L1Config> = OnceLock::new();
    CFG.get_or_init(|| config(&[]))
}

fn l1_norm(v: &Vector3<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[test]
fn predictor_rests_at_zero() {
    let cfg = config(&[]);
    let st = ControllerState::default();
    let x = predictor_step(&cfg, &st, &Vector3::zeros(), &[], 0.0, 40e-6);
    assert_eq!(x, Vector3::zeros());
}

#[test]
fn free_predictor_matches_matrix_exponential() {
    let cfg = config(&[]);
    let st = ControllerState {
        x_hat: Vector3::new(1.0, -2.0, 0.5),
        ..Default::default()
    };
    let dt = 1e-6;
    let x = predictor_step(&cfg, &st, &Vector3::zeros(), &[], 0.0, dt);
    let exact = (cfg.a_m * dt).exp() * st.x_hat;
    assert!((x - exact).norm() <= 1e-12 * st.x_hat.norm());
    assert!(x.norm() < st.x_hat.norm());
}

#[test]
fn symmetric_predictors_stay_equal() {
    let a12 = coupling_matrix(0.5, 40e-6);
    let cfg = config(&[a12]);
    let mut s1 = ControllerState {
        x_hat: Vector3::new(0.3, -0.1, 0.2),
        theta_hat: Vector3::new(10.0, -5.0, 3.0),
        ..Default::default()
    };
    let mut s2 = s1.clone();
    let z = Vector3::new(0.25, -0.05, 0.1);
    for _ in 0..100 {
        let x1 = predictor_step(&cfg, &s1, &z, &[(a12, s2.x_hat)], 0.0, 40e-6);
        let x2 = predictor_step(&cfg, &s2, &z, &[(a12, s1.x_hat)], 0.0, 40e-6);
        s1.x_hat = x1;
        s2.x_hat = x2;
        assert_eq!(s1.x_hat, s2.x_hat);
    }
}

#[test]
fn no_error_no_adaptation() {
    let cfg = config(&[]);
    let st = ControllerState {
        theta_hat: Vector3::new(100.0, -50.0, 20.0),
        ..Default::default()
    };
    let x = Vector3::new(0.3, 0.2, -0.1);
    assert_eq!(adaptive_step(&cfg, &st, &x, &x, 40e-6), st.theta_hat);
}

#[test]
fn interior_update_is_raw_law() {
    let cfg = config(&[]);
    let st = ControllerState {
        theta_hat: Vector3::new(100.0, -50.0, 20.0),
        ..Default::default()
    };
    let x = Vector3::new(0.3, 0.2, -0.1);
    let x_hat = Vector3::new(0.31, 0.19, -0.12);
    let dt = 1e-9;
    let next = adaptive_step(&cfg, &st, &x, &x_hat, dt);
    let raw = -x * (x_hat - x).dot(&(cfg.p * cfg.b)) * (cfg.gamma * dt);
    let got = next - st.theta_hat;
    assert!((got - raw).norm() <= 1e-12 * raw.norm().max(1e-300) + 1e-12);
}

#[test]
fn boundary_outward_update_does_not_grow() {
    let cfg = config(&[]);
    let radius = cfg.projection_radius();
    let dir = Vector3::new(1.0, 2.0, -2.0).normalize();
    let st = ControllerState {
        theta_hat: dir * radius,
        ..Default::default()
    };
    // Choose x, x̂ so the raw update points along +θ̂.
    let pb = (cfg.p * cfg.b)[2];
    let x = dir;
    let x_hat = x - Vector3::new(0.0, 0.0, 1.0 / pb);
    let raw = -x * (x_hat - x).dot(&(cfg.p * cfg.b));
    assert!(raw.dot(&st.theta_hat) > 0.0);
    let next = adaptive_step(&cfg, &st, &x, &x_hat, 1e-3);
    assert!(next.norm() <= st.theta_hat.norm() + 1e-9);
    assert!(l1_norm(&next) <= cfg.theta_max + 1e-9);
}

#[test]
fn projection_removes_outward_radial_component() {
    let theta = Vector3::new(3.0, 4.0, 0.0);
    let y = Vector3::new(1.0, 1.0, 1.0);
    let p = projection(&theta, &y, 5.0, 0.1);
    let radial = theta.normalize();
    assert!(p.dot(&radial).abs() < 1e-12);
    let tangential = y - radial * y.dot(&radial);
    assert!((p - tangential).norm() < 1e-12);
    // Inward updates pass unchanged.
    assert_eq!(projection(&theta, &-y, 5.0, 0.1), -y);
}

#[test]
fn filter_step_response() {
    let cfg = config(&[]);
    let n = 1000;
    let dt = 1.0 / (cfg.omega_c * n as f64);
    let mut st = ControllerState::default();
    for _ in 0..n {
        st.lpf_state = lpf_step(&cfg, &st, 1.0, dt);
    }
    assert!((st.lpf_state - (1.0 - (-1f64).exp())).abs() < 1e-9);
    assert!((st.lpf_state - 0.6321).abs() < 1e-4);
}

#[test]
fn filter_fixed_point() {
    let cfg = config(&[]);
    let st = ControllerState {
        lpf_state: 0.37,
        ..Default::default()
    };
    assert_eq!(lpf_step(&cfg, &st, 0.37, 40e-6), 0.37);
}

#[test]
fn filter_gain_at_bandwidth() {
    let cfg = config(&[]);
    let w = cfg.omega_c;
    let dt = 2.0 * std::f64::consts::PI / w / 2000.0;
    let mut st = ControllerState::default();
    let mut peak: f64 = 0.0;
    for k in 0..(2000 * 30) {
        // Sample at the middle of the hold interval to cancel the hold delay.
        let t = (k as f64 + 0.5) * dt;
        st.lpf_state = lpf_step(&cfg, &st, (w * t).sin(), dt);
        if k >= 2000 * 25 {
            peak = peak.max(st.lpf_state.abs());
        }
    }
    let want = 1.0 / 2f64.sqrt();
    assert!((peak - want).abs() <= 0.01 * want, "{peak}");
}

#[test]
fn control_law_filter_limits() {
    let cfg = config(&[]);
    let dt = 40e-6;
    let mut st = ControllerState {
        lpf_state: 0.5,
        u_l1: 0.5,
        ..Default::default()
    };
    let mut prev = st.u_l1;
    for _ in 0..500 {
        let u = l1_control(&cfg, &mut st, dt);
        assert!(u.abs() < prev.abs() || u == 0.0);
        prev = u;
    }
    assert!(prev.abs() < 1e-6);

    let mut st = ControllerState {
        x_hat: Vector3::new(1.0, 2.0, 3.0),
        theta_hat: Vector3::new(0.5, 0.25, -1.0),
        ..Default::default()
    };
    let c = st.theta_hat.dot(&st.x_hat);
    for _ in 0..2000 {
        l1_control(&cfg, &mut st, dt);
    }
    assert!((st.u_l1 + c).abs() < 1e-9);
}

#[test]
fn composite_examples() {
    let a = composite_control(0.0, 0.0, 0.6);
    assert_eq!((a.duty, a.saturated), (0.6, false));
    let a = composite_control(0.3, 0.2, 0.6);
    assert_eq!((a.duty, a.saturated), (D_MAX, true));
    let a = composite_control(-0.5, -0.5, 0.6);
    assert_eq!((a.duty, a.saturated), (0.0, true));
    let a = composite_control(0.01, -0.005, 0.7507);
    assert!((a.duty - 0.7557).abs() < 1e-12 && !a.saturated);
}

#[test]
fn companion_realization() {
    let a = companion(&[1.0, 2.0, 3.0]);
    assert_eq!(a.row(2).iter().copied().collect::<Vec<_>>(), vec![-6.0, -11.0, -6.0]);
    assert_eq!(desired_matrix(&[1.0, 2.0, 3.0], Realization::Modal)[(1, 1)], -2.0);
}

/// Matched-uncertainty plant in the controller frame, discretized with the
/// same hold as the predictor, and closed with the full L1 loop.
#[test]
fn prediction_error_converges_under_constant_mismatch() {
    let cfg = config(&[]);
    let dt = 1e-6;
    let zoh = PredictorZoh::new(&cfg.a_m, dt);
    let theta_true = Vector3::new(8e3, -5e3, 1.2e4);
    let mut z = Vector3::new(0.4, -0.2, 0.3);
    let mut st = ControllerState::default();
    let mut peak: f64 = 0.0;
    let mut last = f64::INFINITY;
    for k in 0..40_000 {
        let t = k as f64 * dt;
        let r = 1e4 * (2.0 * std::f64::consts::PI * 300.0 * t).sin();
        let x_pred = st.x_hat;
        let err = (x_pred - z).norm();
        peak = peak.max(err);
        last = err;
        let w_hat = predictor_input(&cfg, &st, &z, &[], r);
        let w = cfg.b * (st.u_l1 + theta_true.dot(&z)) + cfg.f * r;
        st.x_hat = zoh.step(&x_pred, &w_hat);
        st.theta_hat = adaptive_step(&cfg, &st, &z, &x_pred, dt);
        z = zoh.step(&z, &w);
        l1_control(&cfg, &mut st, dt);
        assert!(z.iter().all(|v| v.is_finite()));
    }
    assert!(peak > 0.0);
    assert!(last < 1e-3 * peak, "final {last:.3e}, peak {peak:.3e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn estimates_stay_in_the_adaptation_set(
        start in proptest::array::uniform3(-1.0f64..1.0),
        signals in proptest::collection::vec((proptest::array::uniform3(-1e3f64..1e3), proptest::array::uniform3(-1e3f64..1e3)), 1..20),
        dt in 1e-7f64..1e-3,
        gamma in 1.0f64..1e9,
    ) {
        let mut cfg = isolated().clone();
        cfg.gamma = gamma;
        let s = Vector3::from(start);
        let scale = cfg.projection_radius() * 0.999 / s.norm().max(1e-12);
        let mut st = ControllerState {
            theta_hat: if s.norm() > 1.0 { s * scale } else { s * cfg.projection_radius() * 0.999 },
            ..Default::default()
        };
        for (x, xh) in signals {
            st.theta_hat = adaptive_step(&cfg, &st, &Vector3::from(x), &Vector3::from(xh), dt);
            prop_assert!(l1_norm(&st.theta_hat) <= cfg.theta_max + 1e-9);
        }
    }
}

/// Continuous-time coupled error system of three predictors on a line graph,
/// integrated with RK4 at 1 µs.
struct Coupled {
    cfgs: Vec<L1Config>,
    a: Vec<Vec<(usize, Matrix3<f64>)>>,
    theta: Vec<Vector3<f64>>,
}

impl Coupled {
    fn rhs(&self, s: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        // Layout per node: z, x̂, θ̂.
        let n = self.cfgs.len();
        let mut d = vec![Vector3::zeros(); 3 * n];
        for i in 0..n {
            let c = &self.cfgs[i];
            let (z, xh, th) = (s[3 * i], s[3 * i + 1], s[3 * i + 2]);
            let mut dz = c.a_m * z + c.b * self.theta[i].dot(&z);
            let mut dxh = c.a_m * xh + c.b * th.dot(&z);
            for (j, aij) in &self.a[i] {
                dz += aij * s[3 * j];
                dxh += aij * s[3 * j + 1];
            }
            let y = -z * (xh - z).dot(&(c.p * c.b));
            d[3 * i] = dz;
            d[3 * i + 1] = dxh;
            d[3 * i + 2] = projection(&th, &y, c.projection_radius(), PROJECTION_EPS) * c.gamma;
        }
        d
    }

    fn lyapunov(&self, s: &[Vector3<f64>]) -> f64 {
        (0..self.cfgs.len())
            .map(|i| {
                let c = &self.cfgs[i];
                let xt = s[3 * i + 1] - s[3 * i];
                let tt = s[3 * i + 2] - self.theta[i];
                xt.dot(&(c.p * xt)) + tt.norm_squared() / c.gamma
            })
            .sum()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lyapunov_function_is_non_increasing(
        init in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 9),
        thetas in proptest::collection::vec(proptest::array::uniform3(-1e4f64..1e4), 3),
        r in proptest::array::uniform2(0.5f64..5.0),
    ) {
        let c = [37.6e-6, 51.7e-6, 40.7e-6];
        let a = |i: usize, r: f64| coupling_matrix(r, c[i]);
        let graph = vec![
            vec![(1, a(0, r[0]))],
            vec![(0, a(1, r[0])), (2, a(1, r[1]))],
            vec![(1, a(2, r[1]))],
        ];
        let cfgs: Vec<L1Config> = graph
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let worst: Vec<Matrix3<f64>> = nb
                    .iter()
                    .map(|(j, _)| coupling_matrix(if i + *j == 1 { r[0] } else { r[1] }, c[i].min(c[*j])))
                    .collect();
                config(&worst)
            })
            .collect();
        let sys = Coupled { cfgs, a: graph, theta: thetas.iter().map(|t| Vector3::from(*t)).collect() };
        let mut s: Vec<Vector3<f64>> = init.iter().map(|v| Vector3::from(*v)).collect();
        for i in 0..3 {
            // Estimates start inside the adaptation set.
            s[3 * i + 2] *= 1e4;
        }
        let dt = 1e-6;
        let v0 = sys.lyapunov(&s);
        let mut v_prev = v0;
        for _ in 0..3000 {
            let k1 = sys.rhs(&s);
            let add = |s: &[Vector3<f64>], k: &[Vector3<f64>], h: f64| -> Vec<Vector3<f64>> {
                s.iter().zip(k).map(|(a, b)| a + b * h).collect()
            };
            let k2 = sys.rhs(&add(&s, &k1, dt / 2.0));
            let k3 = sys.rhs(&add(&s, &k2, dt / 2.0));
            let k4 = sys.rhs(&add(&s, &k3, dt));
            for i in 0..s.len() {
                s[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
            let v = sys.lyapunov(&s);
            prop_assert!(v <= v_prev + 1e-9 * v0, "V rose from {} to {}", v_prev, v);
            v_prev = v;
        }
    }
}
