//! Lateral-axis linear inverted pendulum balance control.
//!
//! The chain is the classic preview-control stack: a footstep plan turns into
//! a sampled ZMP reference, discrete preview control computes the CoM jerk
//! that tracks it, DCM feedback corrects the commanded ZMP from the measured
//! divergent component, and damping control regulates the foot against
//! wrench error.
//!
//! Everything here is scalar (one horizontal axis). The cart-table model is
//!
//! ```text
//!   x = [c, c_dot, c_ddot],   x' = A x + B u,   z = c - c_ddot / omega^2
//! ```
//!
//! with the jerk `u` as input. Preview gains come from the
//! incremental (integral-action) LQ formulation: minimize
//! `sum(e[k]^2 + k_c * du[k]^2)` over the augmented state `[e, dx]`.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LipmError {
    #[error("footstep plan is empty")]
    PlanEmpty,
    #[error("invalid footstep plan: {0}")]
    InvalidPlan(String),
    #[error("horizon {horizon}s exceeds plan end {plan_end}s")]
    HorizonExceedsPlan { horizon: f64, plan_end: f64 },
    #[error("preview horizon must be at least 1")]
    InvalidHorizon,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("Riccati iteration did not converge")]
    NumericalFailure,
    #[error("reference window of {got} samples is shorter than the preview horizon {need}")]
    WindowTooShort { got: usize, need: usize },
}

/// Default preview window: 1.6 s at the 500 Hz control rate.
pub const DEFAULT_PREVIEW_SAMPLES: usize = 800;
/// Default jerk weight of the preview cost.
pub const DEFAULT_JERK_WEIGHT: f64 = 1e-6;

/// Pendulum constants. `omega` is derived from the other fields on
/// construction and kept consistent by never exposing it mutably.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipmParams {
    pub com_height: f64,
    pub gravity: f64,
    pub dt: f64,
    omega: f64,
}

impl LipmParams {
    pub fn new(com_height: f64, gravity: f64, dt: f64) -> Result<LipmParams, LipmError> {
        if !(com_height.is_finite() && com_height > 0.0) {
            return Err(LipmError::InvalidParams("com_height must be > 0".into()));
        }
        if !(gravity.is_finite() && gravity > 0.0) {
            return Err(LipmError::InvalidParams("gravity must be > 0".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(LipmError::InvalidParams("dt must be > 0".into()));
        }
        Ok(LipmParams {
            com_height,
            gravity,
            dt,
            omega: (gravity / com_height).sqrt(),
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
}

/// CoM state along one horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipmState {
    pub c: f64,
    pub c_dot: f64,
    pub c_ddot: f64,
}

impl LipmState {
    pub fn at_rest(c: f64) -> LipmState {
        LipmState {
            c,
            c_dot: 0.0,
            c_ddot: 0.0,
        }
    }

    /// ZMP output of the cart-table model: `z = c - c_ddot / omega^2`.
    pub fn zmp(&self, params: &LipmParams) -> f64 {
        self.c - self.c_ddot / (params.omega * params.omega)
    }

    /// Divergent component of motion: `xi = c + c_dot / omega`.
    pub fn dcm(&self, params: &LipmParams) -> f64 {
        self.c + self.c_dot / params.omega
    }

    /// Integrate the triple integrator under a constant jerk for `dt`.
    pub fn integrate(&self, jerk: f64, dt: f64) -> LipmState {
        LipmState {
            c: self.c + dt * self.c_dot + 0.5 * dt * dt * self.c_ddot
                + dt * dt * dt / 6.0 * jerk,
            c_dot: self.c_dot + dt * self.c_ddot + 0.5 * dt * dt * jerk,
            c_ddot: self.c_ddot + dt * jerk,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.c.is_finite() && self.c_dot.is_finite() && self.c_ddot.is_finite()
    }
}

/// One supporting stance: ZMP support center and its time interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footstep {
    pub center: f64,
    pub start: f64,
    pub end: f64,
}

/// An ordered, contiguous footstep sequence. `transition` is the
/// double-support duration centered on each step boundary, during which the
/// ZMP reference ramps linearly between support centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootstepPlan {
    pub steps: Vec<Footstep>,
    pub transition: f64,
    pub support_halfwidth: f64,
}

impl FootstepPlan {
    /// A single stance covering `[0, duration]`, used for standing tasks.
    pub fn stance(center: f64, duration: f64, support_halfwidth: f64) -> FootstepPlan {
        FootstepPlan {
            steps: vec![Footstep {
                center,
                start: 0.0,
                end: duration,
            }],
            transition: 0.0,
            support_halfwidth,
        }
    }

    pub fn validate(&self) -> Result<(), LipmError> {
        if self.steps.is_empty() {
            return Err(LipmError::PlanEmpty);
        }
        if !(self.transition.is_finite() && self.transition >= 0.0) {
            return Err(LipmError::InvalidPlan("negative transition".into()));
        }
        if !(self.support_halfwidth.is_finite() && self.support_halfwidth > 0.0) {
            return Err(LipmError::InvalidPlan("support halfwidth must be > 0".into()));
        }
        let mut prev_end = None;
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite() && s.center.is_finite()) {
                return Err(LipmError::InvalidPlan(format!("non-finite step {i}")));
            }
            if s.end <= s.start {
                return Err(LipmError::InvalidPlan(format!(
                    "step {i} times not increasing"
                )));
            }
            if self.transition >= s.end - s.start {
                return Err(LipmError::InvalidPlan(format!(
                    "transition longer than step {i}"
                )));
            }
            if let Some(pe) = prev_end {
                if (s.start - pe as f64).abs() > 1e-12 {
                    return Err(LipmError::InvalidPlan(format!(
                        "step {i} does not start where step {} ends",
                        i - 1
                    )));
                }
            }
            prev_end = Some(s.end);
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.steps.last().map(|s| s.end).unwrap_or(0.0)
    }

    /// Reference ZMP at time `t`: support centers with linear ramps of width
    /// `transition` centered on each step boundary.
    fn reference_at(&self, t: f64) -> f64 {
        let steps = &self.steps;
        // Ramp around each interior boundary.
        for w in steps.windows(2) {
            let b = w[0].end;
            let half = self.transition / 2.0;
            if t >= b - half && t <= b + half && self.transition > 0.0 {
                let alpha = (t - (b - half)) / self.transition;
                return w[0].center + alpha * (w[1].center - w[0].center);
            }
        }
        let idx = self.step_index_at(t);
        steps[idx].center
    }

    fn step_index_at(&self, t: f64) -> usize {
        for (i, s) in self.steps.iter().enumerate() {
            if t < s.end {
                return i;
            }
        }
        self.steps.len() - 1
    }

    /// Admissible ZMP interval at time `t`: the support region of the current
    /// stance, or the hull of both stances inside a double-support window.
    fn support_at(&self, t: f64) -> (f64, f64) {
        let hw = self.support_halfwidth;
        for w in self.steps.windows(2) {
            let b = w[0].end;
            let half = self.transition / 2.0;
            if t >= b - half && t <= b + half {
                let lo = w[0].center.min(w[1].center) - hw;
                let hi = w[0].center.max(w[1].center) + hw;
                return (lo, hi);
            }
        }
        let c = self.steps[self.step_index_at(t)].center;
        (c - hw, c + hw)
    }
}

/// Sampled ZMP reference with per-sample support intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ZmpReference {
    pub dt: f64,
    pub samples: Vec<f64>,
    pub support_lo: Vec<f64>,
    pub support_hi: Vec<f64>,
}

impl ZmpReference {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Current sample plus a future window of length `n`, clamped at the end
    /// of the trajectory (the reference is frozen beyond the plan).
    pub fn window(&self, tick: usize, n: usize) -> (f64, Vec<f64>) {
        let last = *self.samples.last().expect("non-empty reference");
        let now = self.samples.get(tick).copied().unwrap_or(last);
        let future = (1..=n)
            .map(|j| self.samples.get(tick + j).copied().unwrap_or(last))
            .collect();
        (now, future)
    }

    pub fn support(&self, tick: usize) -> (f64, f64) {
        let i = tick.min(self.samples.len() - 1);
        (self.support_lo[i], self.support_hi[i])
    }
}

/// Sample the plan's reference trajectory at the control period over
/// `horizon` seconds.
pub fn build_zmp_reference(
    plan: &FootstepPlan,
    params: &LipmParams,
    horizon: f64,
) -> Result<ZmpReference, LipmError> {
    plan.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(LipmError::InvalidPlan("horizon must be > 0".into()));
    }
    if horizon > plan.end_time() + params.dt / 2.0 {
        return Err(LipmError::HorizonExceedsPlan {
            horizon,
            plan_end: plan.end_time(),
        });
    }
    let n = (horizon / params.dt).round() as usize;
    let mut samples = Vec::with_capacity(n);
    let mut support_lo = Vec::with_capacity(n);
    let mut support_hi = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * params.dt;
        let z = plan.reference_at(t);
        let (lo, hi) = plan.support_at(t);
        debug_assert!(z >= lo && z <= hi);
        samples.push(z);
        support_lo.push(lo);
        support_hi.push(hi);
    }
    Ok(ZmpReference {
        dt: params.dt,
        samples,
        support_lo,
        support_hi,
    })
}

/// Gains of the preview controller.
///
/// `k_i` acts on the accumulated tracking error, `k_x` on the CoM state, and
/// `k_p[j]` on the reference sample `j + 1` ticks ahead. `k_tail` carries the
/// mass of the truncated infinite preview sum, applied to the last visible
/// sample; it equals `-(k_x[0] + sum(k_p))`, which makes the controller exact
/// on constant references despite truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewGains {
    pub k_i: f64,
    pub k_x: [f64; 3],
    pub k_p: Vec<f64>,
    pub k_tail: f64,
    pub jerk_weight: f64,
}

impl PreviewGains {
    pub fn n_preview(&self) -> usize {
        self.k_p.len()
    }
}

fn cart_table(params: &LipmParams) -> (nalgebra::Matrix3<f64>, Vector3<f64>) {
    let dt = params.dt;
    let a = nalgebra::Matrix3::new(
        1.0,
        dt,
        dt * dt / 2.0,
        0.0,
        1.0,
        dt,
        0.0,
        0.0,
        1.0,
    );
    let b = Vector3::new(dt * dt * dt / 6.0, dt * dt / 2.0, dt);
    (a, b)
}

/// Augmented incremental system `[e, dx]` used by the preview LQ problem.
fn augmented(params: &LipmParams) -> (Matrix4<f64>, Vector4<f64>) {
    let (a, b) = cart_table(params);
    let om2 = params.omega * params.omega;
    let c_row = nalgebra::RowVector3::new(1.0, 0.0, -1.0 / om2);
    let ca = c_row * a;
    let cb = (c_row * b)[0];
    let mut a_aug = Matrix4::zeros();
    a_aug[(0, 0)] = 1.0;
    for j in 0..3 {
        a_aug[(0, j + 1)] = ca[j];
        for i in 0..3 {
            a_aug[(i + 1, j + 1)] = a[(i, j)];
        }
    }
    let b_aug = Vector4::new(cb, b[0], b[1], b[2]);
    (a_aug, b_aug)
}

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 1_000_000;

/// Solve the preview LQ problem for the cart-table system with output cost 1
/// and input cost `jerk_weight`, returning the gain set of the controller.
pub fn compute_preview_gains(
    params: &LipmParams,
    n_preview: usize,
    jerk_weight: f64,
) -> Result<PreviewGains, LipmError> {
    if n_preview == 0 {
        return Err(LipmError::InvalidHorizon);
    }
    if !(jerk_weight.is_finite() && jerk_weight > 0.0) {
        return Err(LipmError::InvalidParams("jerk weight must be > 0".into()));
    }
    let (a, b) = augmented(params);
    let mut q = Matrix4::zeros();
    q[(0, 0)] = 1.0;
    let r = jerk_weight;

    // Fixed-point iteration of the discrete Riccati map.
    let mut p = q;
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let pb = p * b;
        let denom = r + (b.transpose() * pb)[0];
        let ka = (b.transpose() * p * a) / denom;
        let next = q + a.transpose() * p * a - a.transpose() * pb * ka;
        let next = (next + next.transpose()) * 0.5;
        let scale = next.amax().max(1.0);
        let delta = (next - p).amax();
        p = next;
        if delta / scale < RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LipmError::NumericalFailure);
    }

    let pb = p * b;
    let denom = r + (b.transpose() * pb)[0];
    let k_row = (b.transpose() * p * a) / denom; // [k_i, k_x]
    let k_i = k_row[0];
    let k_x = [k_row[1], k_row[2], k_row[3]];

    // Preview gains g[j] = B' (Ac')^(j-1) P E / denom with E = [-1,0,0,0]'.
    let k_vec = Vector4::new(k_row[0], k_row[1], k_row[2], k_row[3]);
    let a_closed = a - b * k_vec.transpose();
    let e_in = Vector4::new(-1.0, 0.0, 0.0, 0.0);
    let mut k_p = Vec::with_capacity(n_preview);
    let mut v = p * e_in;
    for _ in 0..n_preview {
        k_p.push((b.transpose() * v)[0] / denom);
        v = a_closed.transpose() * v;
    }
    let k_tail = -(k_x[0] + k_p.iter().sum::<f64>());

    Ok(PreviewGains {
        k_i,
        k_x,
        k_p,
        k_tail,
        jerk_weight,
    })
}

/// Running state of the preview controller: the accumulated ZMP tracking
/// error. One tracker per controlled axis.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreviewTracker {
    pub sigma: f64,
}

/// Output of one preview-control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewStep {
    pub jerk: f64,
    pub next_state: LipmState,
    pub z_cmd: f64,
}

impl PreviewTracker {
    pub fn new() -> PreviewTracker {
        PreviewTracker::default()
    }

    /// One 500 Hz control step: accumulate the tracking error, evaluate the
    /// preview law, integrate the CoM, and report the commanded ZMP of the
    /// next state.
    ///
    /// `z_ref_now` is the reference at the current tick and `preview` the
    /// next `n_preview` samples. The law is evaluated in deviations from
    /// `z_ref_now`, which keeps it exactly zero at equilibrium and invariant
    /// under lateral translation.
    pub fn step(
        &mut self,
        state: &LipmState,
        gains: &PreviewGains,
        z_ref_now: f64,
        preview: &[f64],
        params: &LipmParams,
    ) -> Result<PreviewStep, LipmError> {
        let n = gains.n_preview();
        if preview.len() < n {
            return Err(LipmError::WindowTooShort {
                got: preview.len(),
                need: n,
            });
        }
        let e = state.zmp(params) - z_ref_now;
        self.sigma += e;

        let mut u = -gains.k_i * self.sigma;
        u -= gains.k_x[0] * (state.c - z_ref_now);
        u -= gains.k_x[1] * state.c_dot;
        u -= gains.k_x[2] * state.c_ddot;
        let mut preview_sum = 0.0;
        for (kp, z) in gains.k_p.iter().zip(preview.iter()) {
            preview_sum += kp * (z - z_ref_now);
        }
        preview_sum += gains.k_tail * (preview[n - 1] - z_ref_now);
        u -= preview_sum;

        let next_state = state.integrate(u, params.dt);
        Ok(PreviewStep {
            jerk: u,
            next_state,
            z_cmd: next_state.zmp(params),
        })
    }
}

/// DCM feedback gain. Stable only for gains above 1, which the constructor
/// enforces: the closed-loop error obeys `xi_err' = omega (1 - k) xi_err`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcmFeedbackConfig {
    gain: f64,
}

impl DcmFeedbackConfig {
    pub fn new(gain: f64) -> Result<DcmFeedbackConfig, LipmError> {
        if !(gain.is_finite() && gain > 1.0) {
            return Err(LipmError::InvalidParams(
                "DCM feedback gain must be > 1".into(),
            ));
        }
        Ok(DcmFeedbackConfig { gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

/// ZMP command correction from the measured divergent component:
/// `z_fb = z_cmd + k * (dcm_msr - dcm_cmd)`.
pub fn dcm_feedback(z_cmd: f64, dcm_msr: f64, dcm_cmd: f64, cfg: &DcmFeedbackConfig) -> f64 {
    z_cmd + cfg.gain * (dcm_msr - dcm_cmd)
}

/// Damping-control gain (m per N·s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingConfig {
    gain: f64,
}

impl DampingConfig {
    pub fn new(gain: f64) -> Result<DampingConfig, LipmError> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(LipmError::InvalidParams(
                "damping gain must be > 0".into(),
            ));
        }
        Ok(DampingConfig { gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

/// Explicit-Euler step of the foot admittance law
/// `p_foot' = p_foot + dt * k_w * (w_msr - w_cmd)`.
pub fn damping_control(p_foot: f64, w_msr: f64, w_cmd: f64, cfg: &DampingConfig, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    p_foot + dt * cfg.gain * (w_msr - w_cmd)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_params() -> LipmParams {
        LipmParams::new(0.9, 9.81, 0.002).unwrap()
    }

    fn two_step_plan() -> FootstepPlan {
        FootstepPlan {
            steps: vec![
                Footstep {
                    center: 0.0,
                    start: 0.0,
                    end: 2.0,
                },
                Footstep {
                    center: 0.1,
                    start: 2.0,
                    end: 4.0,
                },
            ],
            transition: 0.2,
            support_halfwidth: 0.06,
        }
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(LipmParams::new(0.0, 9.81, 0.002).is_err());
        assert!(LipmParams::new(0.9, -1.0, 0.002).is_err());
        assert!(LipmParams::new(0.9, 9.81, 0.0).is_err());
        let p = test_params();
        assert!((p.omega() - (9.81f64 / 0.9).sqrt()).abs() == 0.0);
    }

    #[test]
    fn constant_stance_reference_is_flat() {
        let params = test_params();
        let plan = FootstepPlan::stance(0.0, 10.0, 0.06);
        let zr = build_zmp_reference(&plan, &params, 10.0).unwrap();
        assert_eq!(zr.len(), 5000);
        assert!(zr.samples.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn two_step_reference_ramp_geometry() {
        let params = test_params();
        let zr = build_zmp_reference(&two_step_plan(), &params, 4.0).unwrap();
        // Hand-evaluated shape: flat 0.0 before 1.9 s, linear to 0.1 over
        // [1.9, 2.1], flat 0.1 after.
        for k in 0..zr.len() {
            let t = k as f64 * params.dt;
            let expected = if t < 1.9 {
                0.0
            } else if t <= 2.1 {
                (t - 1.9) / 0.2 * 0.1
            } else {
                0.1
            };
            assert!(
                (zr.samples[k] - expected).abs() < 1e-9,
                "t={t} z={} expected={expected}",
                zr.samples[k]
            );
        }
    }

    #[test]
    fn reference_samples_stay_inside_support() {
        let params = test_params();
        let zr = build_zmp_reference(&two_step_plan(), &params, 4.0).unwrap();
        for k in 0..zr.len() {
            assert!(zr.samples[k] >= zr.support_lo[k] - 1e-12);
            assert!(zr.samples[k] <= zr.support_hi[k] + 1e-12);
        }
    }

    #[test]
    fn empty_plan_is_rejected() {
        let params = test_params();
        let plan = FootstepPlan {
            steps: vec![],
            transition: 0.0,
            support_halfwidth: 0.06,
        };
        assert_eq!(
            build_zmp_reference(&plan, &params, 1.0).unwrap_err(),
            LipmError::PlanEmpty
        );
    }

    #[test]
    fn horizon_beyond_plan_is_rejected() {
        let params = test_params();
        let plan = FootstepPlan::stance(0.0, 2.0, 0.06);
        assert!(matches!(
            build_zmp_reference(&plan, &params, 3.0),
            Err(LipmError::HorizonExceedsPlan { .. })
        ));
    }

    #[test]
    fn zero_preview_horizon_is_rejected() {
        let params = test_params();
        assert_eq!(
            compute_preview_gains(&params, 0, 1e-6).unwrap_err(),
            LipmError::InvalidHorizon
        );
    }

    #[test]
    fn equilibrium_step_is_exact_identity() {
        let params = test_params();
        let gains = compute_preview_gains(&params, 300, 1e-6).unwrap();
        let mut tracker = PreviewTracker::new();
        let state = LipmState::at_rest(0.07);
        let preview = vec![0.07; 300];
        let out = tracker.step(&state, &gains, 0.07, &preview, &params).unwrap();
        assert_eq!(out.jerk, 0.0);
        assert_eq!(out.next_state, state);
        assert_eq!(out.z_cmd, 0.07);
    }

    #[test]
    fn short_window_is_rejected() {
        let params = test_params();
        let gains = compute_preview_gains(&params, 50, 1e-6).unwrap();
        let mut tracker = PreviewTracker::new();
        let state = LipmState::at_rest(0.0);
        let preview = vec![0.0; 49];
        assert!(matches!(
            tracker.step(&state, &gains, 0.0, &preview, &params),
            Err(LipmError::WindowTooShort { got: 49, need: 50 })
        ));
    }

    #[test]
    fn preview_gains_decay() {
        let params = test_params();
        let gains = compute_preview_gains(&params, 300, 1e-6).unwrap();
        let head: f64 = gains.k_p[..30].iter().map(|g| g.abs()).sum();
        let tail: f64 = gains.k_p[270..].iter().map(|g| g.abs()).sum();
        assert!(tail < head * 0.5, "head {head} tail {tail}");
    }

    #[test]
    fn stiffer_jerk_weight_softens_response() {
        let params = test_params();
        let plan = two_step_plan();
        let peak_jerk = |k_c: f64| {
            let gains = compute_preview_gains(&params, DEFAULT_PREVIEW_SAMPLES, k_c).unwrap();
            let zr = build_zmp_reference(&plan, &params, 4.0).unwrap();
            let mut tracker = PreviewTracker::new();
            let mut state = LipmState::at_rest(0.0);
            let mut peak: f64 = 0.0;
            for k in 0..zr.len() {
                let (now, window) = zr.window(k, gains.n_preview());
                let out = tracker.step(&state, &gains, now, &window, &params).unwrap();
                peak = peak.max(out.jerk.abs());
                state = out.next_state;
            }
            peak
        };
        let soft = peak_jerk(1e-6);
        let stiff = peak_jerk(1e-4);
        assert!(stiff < soft, "k_c x100 should reduce peak jerk: {stiff} vs {soft}");
    }

    /// Roll the preview loop over a sampled reference, returning the max
    /// tracking error outside the given transition windows and asserting
    /// support admissibility throughout.
    fn rollout_tracking(
        params: &LipmParams,
        gains: &PreviewGains,
        zr: &ZmpReference,
        transition_times: &[f64],
        exempt_halfwidth: f64,
    ) -> f64 {
        let mut tracker = PreviewTracker::new();
        let mut state = LipmState::at_rest(zr.samples[0]);
        let mut max_err: f64 = 0.0;
        for k in 0..zr.len() {
            let (now, window) = zr.window(k, gains.n_preview());
            let out = tracker.step(&state, gains, now, &window, params).unwrap();
            state = out.next_state;
            let t = (k + 1) as f64 * params.dt;
            let near_transition = transition_times
                .iter()
                .any(|&bt| (t - bt).abs() <= exempt_halfwidth);
            if !near_transition {
                let last = *zr.samples.last().unwrap();
                let z_ref_next = zr.samples.get(k + 1).copied().unwrap_or(last);
                max_err = max_err.max((out.z_cmd - z_ref_next).abs());
            }
            let (lo, hi) = zr.support((k + 1).min(zr.len() - 1));
            assert!(
                out.z_cmd >= lo - 1e-9 && out.z_cmd <= hi + 1e-9,
                "z_cmd {} outside [{lo}, {hi}] at t={t}",
                out.z_cmd
            );
        }
        max_err
    }

    #[test]
    fn closed_loop_tracks_two_step_reference() {
        let params = test_params();
        let gains = compute_preview_gains(&params, DEFAULT_PREVIEW_SAMPLES, DEFAULT_JERK_WEIGHT).unwrap();
        let plan = FootstepPlan {
            steps: vec![
                Footstep {
                    center: 0.0,
                    start: 0.0,
                    end: 4.0,
                },
                Footstep {
                    center: 0.1,
                    start: 4.0,
                    end: 10.0,
                },
            ],
            transition: 0.2,
            support_halfwidth: 0.06,
        };
        let zr = build_zmp_reference(&plan, &params, 10.0).unwrap();
        let max_err = rollout_tracking(&params, &gains, &zr, &[4.0], 0.3);
        assert!(max_err < 0.005, "max ZMP error {max_err} >= 5 mm");
    }

    #[test]
    fn closed_loop_admissible_on_walking_sway() {
        // Alternating lateral sway of a slow walk. Support stays respected
        // at every sample of the rollout.
        let params = test_params();
        let gains = compute_preview_gains(&params, DEFAULT_PREVIEW_SAMPLES, DEFAULT_JERK_WEIGHT).unwrap();
        // Lead-in stance longer than the preview window, then alternating
        // sways.
        let mut steps = vec![Footstep {
            center: 0.0,
            start: 0.0,
            end: 2.0,
        }];
        let mut t = 2.0;
        for i in 0..6 {
            let center = if i % 2 == 0 { 0.04 } else { -0.04 };
            steps.push(Footstep {
                center,
                start: t,
                end: t + 1.0,
            });
            t += 1.0;
        }
        let plan = FootstepPlan {
            steps,
            transition: 0.2,
            support_halfwidth: 0.06,
        };
        let zr = build_zmp_reference(&plan, &params, 8.0).unwrap();
        let boundaries: Vec<f64> = (2..8).map(|i| i as f64).collect();
        let max_err = rollout_tracking(&params, &gains, &zr, &boundaries, 0.3);
        assert!(max_err < 0.005, "max ZMP error {max_err}");
    }

    #[test]
    fn dcm_formula_examples() {
        let params = test_params();
        let s = LipmState {
            c: 0.1,
            c_dot: 0.0,
            c_ddot: 0.0,
        };
        assert_eq!(s.dcm(&params), 0.1);

        let params2 = LipmParams::new(9.81 / 4.0, 9.81, 0.002).unwrap(); // omega = 2
        let s2 = LipmState {
            c: 0.1,
            c_dot: 0.2,
            c_ddot: 0.0,
        };
        assert!((s2.dcm(&params2) - 0.2).abs() < 1e-15);
        let s3 = LipmState {
            c: 0.0,
            c_dot: -0.1,
            c_ddot: 0.0,
        };
        assert!((s3.dcm(&params2) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn dcm_feedback_is_exact_affine() {
        let cfg = DcmFeedbackConfig::new(2.0).unwrap();
        assert_eq!(dcm_feedback(0.3, 0.2, 0.2, &cfg), 0.3);
        assert!((dcm_feedback(0.05, 0.12, 0.10, &cfg) - 0.09).abs() < 1e-15);
        // affine property: f(z, m, c) - f(z, c, c) = k (m - c) exactly
        let (z, m, c) = (0.031, 0.27, -0.04);
        let lhs = dcm_feedback(z, m, c, &cfg) - dcm_feedback(z, c, c, &cfg);
        assert_eq!(lhs, cfg.gain() * (m - c));
    }

    #[test]
    fn dcm_feedback_gain_must_exceed_one() {
        assert!(DcmFeedbackConfig::new(1.0).is_err());
        assert!(DcmFeedbackConfig::new(0.5).is_err());
        assert!(DcmFeedbackConfig::new(1.5).is_ok());
    }

    #[test]
    fn dcm_error_decays_at_analytic_rate() {
        // Closed loop: xi_dot = omega (xi - z_fb) with z_fb = z_cmd + k (xi - xi_cmd).
        // The error eps = xi - xi_cmd obeys eps_dot = -omega (k - 1) eps.
        let params = test_params();
        let cfg = DcmFeedbackConfig::new(2.0).unwrap();
        let omega = params.omega();
        let rate = omega * (cfg.gain() - 1.0);
        let dt = params.dt;
        let xi_cmd = 0.0;
        let z_cmd = 0.0;
        let mut eps: f64 = 0.05;
        let mut prev = eps.abs();
        let steps = (2.0 / dt) as usize;
        for _ in 0..steps {
            let z_fb = dcm_feedback(z_cmd, xi_cmd + eps, xi_cmd, &cfg);
            let xi_dot = omega * ((xi_cmd + eps) - z_fb);
            eps += dt * xi_dot;
            assert!(eps.abs() <= prev + 1e-15, "DCM error must decay monotonically");
            prev = eps.abs();
        }
        assert!(eps.abs() < 1e-3, "error after 2 s: {eps}");
        // within 5% of the analytic exponential
        let analytic = 0.05 * (-rate * 2.0).exp();
        let measured_rate = -(eps.abs() / 0.05).ln() / 2.0;
        assert!(
            (measured_rate - rate).abs() / rate < 0.05,
            "rate {measured_rate} vs analytic {rate} (analytic end {analytic:.2e})"
        );
    }

    #[test]
    fn damping_control_examples() {
        let cfg = DampingConfig::new(1e-3).unwrap();
        assert_eq!(damping_control(0.02, 5.0, 5.0, &cfg, 0.002), 0.02);
        let d = damping_control(0.0, 10.0, 0.0, &cfg, 0.002);
        assert!((d - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn damping_control_converges_on_spring_ground() {
        // w_msr = -k_s p; fixed point of p' = p + dt k_w (w_msr - w_cmd)
        // is p* = -w_cmd / k_s.
        let cfg = DampingConfig::new(5e-4).unwrap();
        let k_s = 4000.0;
        let w_cmd = -20.0;
        let mut p = 0.0;
        for _ in 0..40_000 {
            let w_msr = -k_s * p;
            p = damping_control(p, w_msr, w_cmd, &cfg, 0.002);
        }
        assert!((p - (-w_cmd / k_s)).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn damping_control_is_first_order_in_dt() {
        // Halving dt and doubling steps changes the trajectory by O(dt).
        let cfg = DampingConfig::new(5e-4).unwrap();
        let k_s = 4000.0;
        let w_cmd = -20.0;
        let run = |dt: f64, steps: usize| {
            let mut p = 0.0;
            for _ in 0..steps {
                p = damping_control(p, -k_s * p, w_cmd, &cfg, dt);
            }
            p
        };
        let coarse = run(0.004, 250);
        let fine = run(0.002, 500);
        let finest = run(0.001, 1000);
        let d1 = (coarse - fine).abs();
        let d2 = (fine - finest).abs();
        assert!(d2 < d1, "halving dt should shrink the difference: {d1} {d2}");
        assert!(d1 < 0.05 * (-w_cmd / k_s));
    }
}
