use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::qp::{solve, AdmmSettings, QpError, QpProblem, QpSolution, WarmStart};
use crate::raceline::Raceline;
use crate::vehicle::{Command, VehicleState};

pub const NX: usize = 4;
pub const NU: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal over (x, y, v, psi).
    pub q: [f64; NX],
    pub q_final: [f64; NX],
    /// Diagonal over (a, delta).
    pub r: [f64; NU],
    pub r_delta: [f64; NU],
    pub delta_max: f64,
    pub accel_max: f64,
    pub delta_rate_max: f64,
    pub v_floor: f64,
    pub wheelbase: f64,
    /// Interval between MPC solves; the command is passed on as `v + a * dt_control`.
    pub dt_control: f64,
    pub solver: AdmmSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            dt: 0.1,
            q: [13.5, 13.5, 5.5, 13.0],
            q_final: [13.5, 13.5, 5.5, 13.0],
            r: [0.01, 5.0],
            r_delta: [0.01, 5.0],
            delta_max: 0.4189,
            accel_max: 3.0,
            delta_rate_max: std::f64::consts::PI,
            v_floor: 0.5,
            wheelbase: 0.33,
            dt_control: 0.05,
            solver: AdmmSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0) || !(self.dt_control > 0.0) || !(self.wheelbase > 0.0) {
            return Err("dt, dt_control and wheelbase must be positive".into());
        }
        let weights = self.q.iter().chain(&self.q_final).chain(&self.r).chain(&self.r_delta);
        if weights.clone().any(|w| !(*w >= 0.0)) {
            return Err("weights must be non-negative".into());
        }
        if !(self.delta_max > 0.0) || !(self.accel_max > 0.0) || !(self.delta_rate_max > 0.0) {
            return Err("actuator bounds must be positive".into());
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        NX * (self.horizon + 1) + NU * self.horizon
    }

    fn x_idx(&self, t: usize) -> usize {
        NX * t
    }

    fn u_idx(&self, t: usize) -> usize {
        NX * (self.horizon + 1) + NU * t
    }
}

/// Reference states (x, y, v, psi) for steps 0..=horizon plus the path curvature at each.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReference {
    pub states: Vec<Vector4<f64>>,
    pub kappa: Vec<f64>,
    pub indices: Vec<usize>,
}

/// Waypoints advanced per horizon step at speed `v`.
pub fn reference_stride(v: f64, config: &MpcConfig, mean_spacing: f64) -> usize {
    ((v.max(config.v_floor) * config.dt / mean_spacing).round() as usize).max(1)
}

fn unwrap_near(angle: f64, reference: f64) -> f64 {
    reference + crate::vehicle::wrap_angle(angle - reference)
}

pub fn build_reference(raceline: &Raceline, state: &VehicleState, config: &MpcConfig) -> HorizonReference {
    let n = raceline.len();
    let start = raceline.nearest_index(state.position());
    let stride = reference_stride(state.v, config, raceline.mean_spacing());
    let mut states = Vec::with_capacity(config.horizon + 1);
    let mut kappa = Vec::with_capacity(config.horizon + 1);
    let mut indices = Vec::with_capacity(config.horizon + 1);
    let mut prev_psi = state.theta;
    for k in 0..=config.horizon {
        let i = (start + k * stride) % n;
        let p = raceline.position(i);
        let psi = unwrap_near(raceline.tangent_heading(i), prev_psi);
        prev_psi = psi;
        states.push(Vector4::new(p.x, p.y, raceline.v_max(i), psi));
        kappa.push(raceline.kappa(i));
        indices.push(i);
    }
    HorizonReference { states, kappa, indices }
}

/// Forward-Euler affine model `x' = A x + B u + c` linearized at the given point.
pub fn linearize(
    x_ref: &Vector4<f64>,
    u_ref: &Vector2<f64>,
    wheelbase: f64,
    dt: f64,
) -> (Matrix4<f64>, Matrix4x2<f64>, Vector4<f64>) {
    let (v, psi) = (x_ref[2], x_ref[3]);
    let delta = u_ref[1];
    let (s, c) = psi.sin_cos();
    let cos_d = delta.cos();
    let f = Vector4::new(v * c, v * s, u_ref[0], v * delta.tan() / wheelbase);
    let mut jx = Matrix4::zeros();
    jx[(0, 2)] = c;
    jx[(0, 3)] = -v * s;
    jx[(1, 2)] = s;
    jx[(1, 3)] = v * c;
    jx[(3, 2)] = delta.tan() / wheelbase;
    let mut ju = Matrix4x2::zeros();
    ju[(2, 0)] = 1.0;
    ju[(3, 1)] = v / (wheelbase * cos_d * cos_d);
    let a = Matrix4::identity() + jx * dt;
    let b = ju * dt;
    let cvec = (f - jx * x_ref - ju * u_ref) * dt;
    (a, b, cvec)
}

/// Stacks the tracking problem over states `x_0..x_T` and controls `u_0..u_{T-1}`.
/// Row order: initial state, dynamics, acceleration and steering boxes, steering-rate rows.
pub fn assemble_qp(
    reference: &HorizonReference,
    models: &[(Matrix4<f64>, Matrix4x2<f64>, Vector4<f64>)],
    x0: &Vector4<f64>,
    config: &MpcConfig,
) -> Result<QpProblem, QpError> {
    let t = config.horizon;
    if reference.states.len() != t + 1 || models.len() != t {
        return Err(QpError::Dimension(format!(
            "horizon {t} needs {} reference states and {t} models, got {} and {}",
            t + 1,
            reference.states.len(),
            models.len()
        )));
    }
    let n = config.num_vars();
    let m = NX * (t + 1) + NU * t + t.saturating_sub(1);
    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    for k in 0..=t {
        let w = if k == t { &config.q_final } else { &config.q };
        let base = config.x_idx(k);
        for j in 0..NX {
            p[(base + j, base + j)] += 2.0 * w[j];
            q[base + j] -= 2.0 * w[j] * reference.states[k][j];
        }
    }
    for k in 0..t {
        let base = config.u_idx(k);
        for j in 0..NU {
            p[(base + j, base + j)] += 2.0 * config.r[j];
        }
    }
    for k in 0..t.saturating_sub(1) {
        let (a, b) = (config.u_idx(k), config.u_idx(k + 1));
        for j in 0..NU {
            let w = 2.0 * config.r_delta[j];
            p[(a + j, a + j)] += w;
            p[(b + j, b + j)] += w;
            p[(a + j, b + j)] -= w;
            p[(b + j, a + j)] -= w;
        }
    }

    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut row = 0;
    for j in 0..NX {
        a[(row, j)] = 1.0;
        l[row] = x0[j];
        u[row] = x0[j];
        row += 1;
    }
    for (k, (ak, bk, ck)) in models.iter().enumerate() {
        let (xk, xn, uk) = (config.x_idx(k), config.x_idx(k + 1), config.u_idx(k));
        for i in 0..NX {
            a[(row, xn + i)] = 1.0;
            for j in 0..NX {
                a[(row, xk + j)] -= ak[(i, j)];
            }
            for j in 0..NU {
                a[(row, uk + j)] -= bk[(i, j)];
            }
            l[row] = ck[i];
            u[row] = ck[i];
            row += 1;
        }
    }
    for k in 0..t {
        let uk = config.u_idx(k);
        a[(row, uk)] = 1.0;
        l[row] = -config.accel_max;
        u[row] = config.accel_max;
        row += 1;
        a[(row, uk + 1)] = 1.0;
        l[row] = -config.delta_max;
        u[row] = config.delta_max;
        row += 1;
    }
    let rate = config.delta_rate_max * config.dt;
    for k in 0..t.saturating_sub(1) {
        a[(row, config.u_idx(k + 1) + 1)] = 1.0;
        a[(row, config.u_idx(k) + 1)] = -1.0;
        l[row] = -rate;
        u[row] = rate;
        row += 1;
    }
    debug_assert_eq!(row, m);
    let qp = QpProblem { p, q, a, l, u };
    qp.validate()?;
    Ok(qp)
}

/// Per-solve record for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcDiagnostics {
    pub reference_index: usize,
    pub reference: [f64; NX],
    pub accel: f64,
    pub delta: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MpcTracker {
    config: MpcConfig,
    prev: Option<Command>,
    warm: Option<WarmStart>,
    last: Option<MpcDiagnostics>,
}

impl MpcTracker {
    pub fn new(config: MpcConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(Self { config, prev: None, warm: None, last: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.warm = None;
        self.last = None;
    }

    pub fn last_diagnostics(&self) -> Option<&MpcDiagnostics> {
        self.last.as_ref()
    }

    /// Builds and solves the QP for `state`.
    pub fn solve(&self, raceline: &Raceline, state: &VehicleState) -> Result<(QpSolution, HorizonReference), QpError> {
        let cfg = &self.config;
        let reference = build_reference(raceline, state, cfg);
        let models: Vec<_> = (0..cfg.horizon)
            .map(|k| {
                let delta_ref = (cfg.wheelbase * reference.kappa[k]).atan().clamp(-cfg.delta_max, cfg.delta_max);
                linearize(&reference.states[k], &Vector2::new(0.0, delta_ref), cfg.wheelbase, cfg.dt)
            })
            .collect();
        let x0 = Vector4::new(state.x, state.y, state.v, unwrap_near(state.theta, reference.states[0][3]));
        let qp = assemble_qp(&reference, &models, &x0, cfg)?;
        let sol = solve(&qp, &cfg.solver, self.warm.as_ref())?;
        Ok((sol, reference))
    }

    /// One control step; holds the previous command when the solver does not converge.
    pub fn step(&mut self, raceline: &Raceline, state: &VehicleState) -> Command {
        let hold = self.prev.unwrap_or(Command { delta: 0.0, v_cmd: state.v });
        let (sol, reference) = match self.solve(raceline, state) {
            Ok(r) => r,
            Err(_) => {
                self.warm = None;
                return hold;
            }
        };
        let u0 = self.config.u_idx(0);
        let (accel, delta) = (sol.x[u0], sol.x[u0 + 1]);
        let r0 = reference.states[0];
        self.last = Some(MpcDiagnostics {
            reference_index: reference.indices[0],
            reference: [r0[0], r0[1], r0[2], r0[3]],
            accel,
            delta,
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            converged: sol.converged,
        });
        if !sol.converged {
            self.warm = None;
            return hold;
        }
        self.warm = Some(WarmStart::from(&sol));
        let cmd = Command {
            delta: delta.clamp(-self.config.delta_max, self.config.delta_max),
            v_cmd: (state.v + accel * self.config.dt_control).max(0.0),
        };
        self.prev = Some(cmd);
        cmd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raceline::{synthesize_track, TrackSpec};
    use crate::vehicle::{control_step, SimConfig};

    fn long_straight(v: f64) -> Raceline {
        // Two long straights joined by tight arcs; only the bottom straight is used.
        let spec = TrackSpec { v_cap: v, ..TrackSpec::oval(60.0, 3.0) };
        synthesize_track(&spec).unwrap()
    }

    #[test]
    fn stride_examples() {
        let cfg = MpcConfig::default();
        assert_eq!(reference_stride(5.0, &cfg, 0.25), 2);
        assert_eq!(reference_stride(0.0, &cfg, 0.25), 1);
        assert_eq!(reference_stride(0.0, &cfg, 0.025), 2);
    }

    #[test]
    fn straight_reference_has_constant_heading() {
        let track = long_straight(3.0);
        let state = VehicleState { x: -20.0, y: -3.0, theta: 0.0, v: 3.0 };
        let r = build_reference(&track, &state, &MpcConfig::default());
        assert_eq!(r.states.len(), 9);
        assert!(r.states.iter().all(|s| s[3].abs() < 1e-12));
        assert!(r.indices.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn heading_is_unwrapped_across_pi() {
        let track = synthesize_track(&TrackSpec::oval(10.0, 3.0)).unwrap();
        // Top straight runs in the -x direction, heading pi.
        let state = VehicleState { x: 0.0, y: 3.0, theta: -3.1, v: 3.0 };
        let r = build_reference(&track, &state, &MpcConfig::default());
        for w in r.states.windows(2) {
            assert!((w[1][3] - w[0][3]).abs() < 0.5);
        }
        assert!((r.states[0][3] - state.theta).abs() < 0.2);
    }

    #[test]
    fn jacobian_at_standstill() {
        let (a, b, _) = linearize(&Vector4::new(1.0, 2.0, 0.0, 0.4), &Vector2::new(0.0, 0.0), 0.33, 0.1);
        let mut expect = Matrix4::identity();
        expect[(0, 2)] = 0.4f64.cos() * 0.1;
        expect[(1, 2)] = 0.4f64.sin() * 0.1;
        assert!((a - expect).amax() < 1e-15);
        assert_eq!(b[(2, 0)], 0.1);
        assert_eq!(b[(3, 1)], 0.0);
    }

    #[test]
    fn jacobian_heading_entry() {
        let (a, _, _) = linearize(&Vector4::new(0.0, 0.0, 1.0, 0.0), &Vector2::new(0.0, 0.0), 0.33, 0.1);
        assert!((a[(1, 3)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn affine_model_exact_at_reference() {
        let x = Vector4::new(1.0, -2.0, 3.0, 0.7);
        let u = Vector2::new(0.5, 0.2);
        let (a, b, c) = linearize(&x, &u, 0.33, 0.1);
        let f = Vector4::new(3.0 * 0.7f64.cos(), 3.0 * 0.7f64.sin(), 0.5, 3.0 * 0.2f64.tan() / 0.33);
        assert!((a * x + b * u + c - (x + f * 0.1)).amax() < 1e-12);
    }

    #[test]
    fn qp_dimensions() {
        let cfg = MpcConfig { horizon: 1, ..Default::default() };
        assert_eq!(cfg.num_vars(), 10);
        let cfg = MpcConfig::default();
        let track = long_straight(3.0);
        let state = VehicleState { x: -20.0, y: -3.0, theta: 0.0, v: 3.0 };
        let reference = build_reference(&track, &state, &cfg);
        let models: Vec<_> = (0..8).map(|k| linearize(&reference.states[k], &Vector2::zeros(), 0.33, 0.1)).collect();
        let qp = assemble_qp(&reference, &models, &reference.states[0], &cfg).unwrap();
        assert_eq!(qp.num_constraints(), 4 * 9 + 2 * 8 + 7);
        let rate_rows = (qp.num_constraints() - 7)..qp.num_constraints();
        assert!(rate_rows.clone().all(|r| (qp.u[r] - std::f64::consts::PI * 0.1).abs() < 1e-15));
        assert!(assemble_qp(&reference, &models[..3], &reference.states[0], &cfg).is_err());
    }

    #[test]
    fn pure_control_penalty_gives_zero_controls() {
        let cfg = MpcConfig { q: [0.0; 4], q_final: [0.0; 4], ..Default::default() };
        let track = long_straight(3.0);
        let tracker = MpcTracker::new(cfg).unwrap();
        let state = VehicleState { x: -20.0, y: -2.5, theta: 0.2, v: 1.0 };
        let (sol, _) = tracker.solve(&track, &state).unwrap();
        assert!(sol.converged);
        for k in 0..8 {
            let u = cfg.u_idx(k);
            assert!(sol.x[u].abs() < 1e-6 && sol.x[u + 1].abs() < 1e-6);
        }
    }

    #[test]
    fn on_reference_commands_nothing() {
        // Pick the speed at which the reference advances exactly two waypoints per horizon step.
        let v = 2.0 * long_straight(5.0).mean_spacing() / 0.1;
        let track = long_straight(v);
        let mut tracker = MpcTracker::new(MpcConfig::default()).unwrap();
        let i = track.nearest_index(crate::raceline::Point::new(-20.0, -3.0));
        let p = track.position(i);
        let state = VehicleState { x: p.x, y: p.y, theta: 0.0, v };
        let cmd = tracker.step(&track, &state);
        let d = tracker.last_diagnostics().unwrap();
        assert!(d.converged);
        assert!(d.delta.abs() < 1e-3, "delta {}", d.delta);
        assert!(d.accel.abs() < 1e-3, "accel {}", d.accel);
        assert!((cmd.v_cmd - v).abs() < 1e-3);
    }

    #[test]
    fn offset_left_steers_right() {
        let track = long_straight(3.0);
        let mut tracker = MpcTracker::new(MpcConfig::default()).unwrap();
        let state = VehicleState { x: -20.0, y: -2.7, theta: 0.0, v: 3.0 };
        let cmd = tracker.step(&track, &state);
        assert!(cmd.delta < 0.0);
        let state = VehicleState { y: -3.3, ..state };
        assert!(tracker.step(&track, &state).delta > 0.0);
    }

    #[test]
    fn solutions_respect_bounds() {
        let track = synthesize_track(&TrackSpec::oval(10.0, 2.0)).unwrap();
        let cfg = MpcConfig::default();
        let tracker = MpcTracker::new(cfg).unwrap();
        for (k, y) in [-2.0, -1.0, 0.0, 1.5].iter().enumerate() {
            let state = VehicleState { x: 5.0, y: *y, theta: k as f64, v: 4.0 };
            let (sol, _) = tracker.solve(&track, &state).unwrap();
            for t in 0..cfg.horizon {
                let u = cfg.u_idx(t);
                assert!(sol.x[u].abs() <= cfg.accel_max + 1e-6);
                assert!(sol.x[u + 1].abs() <= cfg.delta_max + 1e-6);
                if t + 1 < cfg.horizon {
                    let rate = (sol.x[cfg.u_idx(t + 1) + 1] - sol.x[u + 1]).abs();
                    assert!(rate <= cfg.delta_rate_max * cfg.dt + 1e-6);
                }
            }
        }
    }

    #[test]
    fn non_convergence_holds_previous_command() {
        let track = long_straight(3.0);
        let mut tracker = MpcTracker::new(MpcConfig::default()).unwrap();
        let state = VehicleState { x: -20.0, y: -2.8, theta: 0.0, v: 3.0 };
        let first = tracker.step(&track, &state);
        tracker.config.solver.max_iter = 1;
        let state = VehicleState { y: -3.2, theta: 0.1, ..state };
        assert_eq!(tracker.step(&track, &state), first);
        assert!(!tracker.last_diagnostics().unwrap().converged);
    }

    #[test]
    fn closed_loop_straight_converges() {
        let track = long_straight(3.0);
        let sim = SimConfig::default();
        let mut tracker = MpcTracker::new(MpcConfig::default()).unwrap();
        let mut state = VehicleState { x: -28.0, y: -2.7, theta: 0.05, v: 3.0 };
        let mut delta = 0.0;
        let mut t = 0.0;
        while state.x < 25.0 {
            let cmd = tracker.step(&track, &state);
            let (s, d) = control_step(&state, &cmd, delta, &sim);
            state = s;
            delta = d;
            t += sim.dt_control;
            if t > 3.0 {
                let lat = track.lateral_error(state.position());
                assert!(lat.abs() < 0.05, "t={t:.2} lateral {lat}");
            }
        }
        assert!(t > 3.0);
    }

    #[test]
    fn reference_uses_scaled_speeds() {
        let track = long_straight(3.0).scale_speeds(0.5);
        let state = VehicleState { x: -20.0, y: -3.0, theta: 0.0, v: 1.0 };
        let r = build_reference(&track, &state, &MpcConfig::default());
        assert!(r.states.iter().all(|s| (s[2] - 1.5).abs() < 1e-12));
    }
}
