//! Validation simulators: time-domain integration of the reduced phase
//! dynamics, full-order simulation under a constraint-enforcing tracking
//! controller, and open-loop execution of planned footstep sequences.
//!
//! The reduced integrator is deliberately independent of the precomputed
//! affine solution — it integrates `α θ̈ + β θ̇² + γ = 0` in time — so the
//! pair forms a two-route check on the offline solver.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::library::PrimitiveLibrary;
use crate::mechanics::{JointState, ModelError, RobotModel};
use crate::planner::Plan;
use crate::terrain::TerrainMap;
use crate::vhc::{PhaseDynamics, ReducedDynamics, VirtualConstraint};

/// Default fixed integration step (s).
pub const DEFAULT_DT: f64 = 1e-4;

/// Bisection tolerance for impact event location (s).
pub const EVENT_TIME_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Model(ModelError),
    /// The tracking controller's decoupling matrix lost rank.
    ControllerSingular { theta: f64 },
    /// Commanded torques exceeded the sanity bound; the state has diverged.
    ControllerDiverged { t: f64 },
    /// A plan referenced a primitive id missing from the library.
    UnknownPrimitive { id: u32 },
    /// Step `index` of the plan did not complete.
    StepFailed { index: usize, outcome: ReducedOutcome },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Model(e) => write!(f, "{e}"),
            SimError::ControllerSingular { theta } => {
                write!(f, "decoupling matrix singular at theta = {theta}")
            }
            SimError::ControllerDiverged { t } => write!(f, "controller diverged at t = {t}"),
            SimError::UnknownPrimitive { id } => write!(f, "plan references unknown primitive {id}"),
            SimError::StepFailed { index, outcome } => {
                write!(f, "step {index} failed: {outcome:?}")
            }
        }
    }
}

impl core::error::Error for SimError {}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        SimError::Model(e)
    }
}

/// How a reduced-dynamics step attempt ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReducedOutcome {
    /// Reached `θ_f` at time `t` with the recorded phase rate.
    Completed { t: f64, thetadot: f64 },
    /// Phase rate hit zero at `theta`; the walker falls backwards.
    Stalled { t: f64, theta: f64 },
    /// Exceeded the time budget without finishing (near-heteroclinic).
    TimedOut { theta: f64, thetadot: f64 },
}

/// Sampled reduced trajectory.
#[derive(Debug, Clone, Default)]
pub struct ReducedTrajectory {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub thetadot: Vec<f64>,
}

/// Options for [`integrate_reduced`].
#[derive(Debug, Clone, Copy)]
pub struct ReducedOptions {
    pub dt: f64,
    /// Hard time budget; `TimedOut` past this.
    pub max_time: f64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, max_time: 60.0 }
    }
}

/// Integrate `α(θ)θ̈ + β(θ)θ̇² + γ(θ) = 0` in time from `(θ₀, θ̇₀)` until
/// `θ = θ_f`, a stall (`θ̇ ≤ 0`), or the time budget.
pub fn integrate_reduced(
    dynamics: &dyn PhaseDynamics,
    thetadot0: f64,
    opts: &ReducedOptions,
) -> (ReducedTrajectory, ReducedOutcome) {
    let (theta0, thetaf) = dynamics.interval();
    let accel = |theta: f64, thetadot: f64| -> f64 {
        let (a, b, g) = dynamics.coeffs(theta);
        -(b * thetadot * thetadot + g) / a
    };
    let rk4 = |theta: f64, thetadot: f64, h: f64| -> (f64, f64) {
        let k1 = (thetadot, accel(theta, thetadot));
        let k2 = (
            thetadot + 0.5 * h * k1.1,
            accel(theta + 0.5 * h * k1.0, thetadot + 0.5 * h * k1.1),
        );
        let k3 = (
            thetadot + 0.5 * h * k2.1,
            accel(theta + 0.5 * h * k2.0, thetadot + 0.5 * h * k2.1),
        );
        let k4 = (thetadot + h * k3.1, accel(theta + h * k3.0, thetadot + h * k3.1));
        (
            theta + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            thetadot + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        )
    };

    let mut traj = ReducedTrajectory::default();
    let mut t = 0.0;
    let mut theta = theta0;
    let mut thetadot = thetadot0;
    traj.t.push(t);
    traj.theta.push(theta);
    traj.thetadot.push(thetadot);

    loop {
        if t >= opts.max_time {
            return (traj, ReducedOutcome::TimedOut { theta, thetadot });
        }
        let (next_theta, next_thetadot) = rk4(theta, thetadot, opts.dt);
        if next_theta >= thetaf {
            // Bisect the crossing time within this step.
            let mut lo = 0.0;
            let mut hi = opts.dt;
            let mut end = (next_theta, next_thetadot);
            while hi - lo > EVENT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                let probe = rk4(theta, thetadot, mid);
                if probe.0 >= thetaf {
                    hi = mid;
                    end = probe;
                } else {
                    lo = mid;
                }
            }
            t += hi;
            traj.t.push(t);
            traj.theta.push(end.0);
            traj.thetadot.push(end.1);
            return (traj, ReducedOutcome::Completed { t, thetadot: end.1 });
        }
        if next_thetadot <= 0.0 {
            t += opts.dt;
            traj.t.push(t);
            traj.theta.push(next_theta);
            traj.thetadot.push(next_thetadot.max(0.0));
            return (traj, ReducedOutcome::Stalled { t, theta: next_theta });
        }
        theta = next_theta;
        thetadot = next_thetadot;
        t += opts.dt;
        traj.t.push(t);
        traj.theta.push(theta);
        traj.thetadot.push(thetadot);
    }
}

/// Convenience wrapper building the reduced dynamics from a model/constraint
/// pair.
pub fn integrate_reduced_vc(
    model: &RobotModel,
    vc: &VirtualConstraint,
    thetadot0: f64,
    opts: &ReducedOptions,
) -> (ReducedTrajectory, ReducedOutcome) {
    let dynamics = ReducedDynamics::new(model, vc);
    integrate_reduced(&dynamics, thetadot0, opts)
}

/// PD gains of the input-output linearizing tracking controller; the error
/// dynamics are `ÿ = −2ζω ẏ − ω² y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingGains {
    pub omega: f64,
    pub zeta: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self { omega: 40.0, zeta: 1.0 }
    }
}

/// Options for full-order simulation.
#[derive(Debug, Clone, Copy)]
pub struct FullSimOptions {
    pub dt: f64,
    pub gains: TrackingGains,
    pub max_time: f64,
    /// Torque magnitude treated as divergence.
    pub torque_limit: f64,
}

impl Default for FullSimOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            gains: TrackingGains::default(),
            max_time: 30.0,
            torque_limit: 1e5,
        }
    }
}

/// One sampled instant of a full-order or reconstructed trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub theta: f64,
    pub thetadot: f64,
    pub kinetic: f64,
    /// Potential energy in the world frame (stance height included).
    pub potential: f64,
    /// Stance-foot world x at this instant.
    pub stance_x: f64,
    pub step_index: usize,
}

/// Impact event marker.
#[derive(Debug, Clone)]
pub struct ImpactEvent {
    pub t: f64,
    pub step_index: usize,
    pub pre: JointState,
    pub post: JointState,
    pub thetadot_pre: f64,
    pub thetadot_post: f64,
    /// World position of the new stance foot.
    pub foot_x: f64,
    pub foot_h: f64,
}

/// Stitched multi-step trajectory with event markers.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub impacts: Vec<ImpactEvent>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }
}

/// Full-order closed-loop simulation of a single step.
///
/// The controller input-output linearizes `y = q_act − Φ_act(θ)` with
/// critically-dampable PD error dynamics; on the constraint manifold the
/// tracking is exact and the motion reduces to the phase dynamics. The step
/// ends when the swing foot descends through `target_height` (bisected to
/// [`EVENT_TIME_TOL`]) while the phase is past the interval midpoint.
pub struct FullStepResult {
    pub state_pre: JointState,
    pub t_impact: f64,
    pub thetadot_pre: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn integrate_full_step(
    model: &RobotModel,
    vc: &VirtualConstraint,
    state0: &JointState,
    target_height: impl Fn(f64) -> f64,
    opts: &FullSimOptions,
    t_offset: f64,
    stance_x: f64,
    stance_h: f64,
    step_index: usize,
    traj: &mut Trajectory,
) -> Result<FullStepResult, SimError> {
    let n = model.dof();
    let ti = model.theta_index();
    let theta_mid = 0.5 * (vc.theta0() + vc.thetaf());

    // Selection of the actuated rows (everything but the phase coordinate).
    let rows: Vec<usize> = (0..n).filter(|&i| i != ti).collect();

    let control = |q: &DVector<f64>, qdot: &DVector<f64>| -> Result<DVector<f64>, SimError> {
        let theta = q[ti];
        let thetadot = qdot[ti];
        let (phi, dphi, ddphi) = vc.eval_unchecked(theta);
        let m = model.mass_matrix(q);
        let lu = m.lu();
        let b = model.actuation(q);
        let bias = model.coriolis(q, qdot) * qdot + model.gravity(q);
        let minv_b = lu
            .solve(&b)
            .ok_or(SimError::ControllerSingular { theta })?;
        let minv_bias = lu
            .solve(&bias)
            .ok_or(SimError::ControllerSingular { theta })?;

        // J = S − Φ'_act e_θᵀ applied to the actuated rows.
        let mut y = DVector::zeros(n - 1);
        let mut ydot = DVector::zeros(n - 1);
        let mut j = DMatrix::zeros(n - 1, n);
        for (r, &i) in rows.iter().enumerate() {
            y[r] = q[i] - phi[i];
            ydot[r] = qdot[i] - dphi[i] * thetadot;
            j[(r, i)] = 1.0;
            j[(r, ti)] -= dphi[i];
        }
        let decoupling = &j * &minv_b;
        let v = -y.scale(opts.gains.omega * opts.gains.omega)
            - ydot.scale(2.0 * opts.gains.zeta * opts.gains.omega);
        let mut rhs = v + &j * &minv_bias;
        for (r, &i) in rows.iter().enumerate() {
            rhs[r] += ddphi[i] * thetadot * thetadot;
        }
        decoupling
            .lu()
            .solve(&rhs)
            .ok_or(SimError::ControllerSingular { theta })
    };

    let deriv = |q: &DVector<f64>, qdot: &DVector<f64>| -> Result<DVector<f64>, SimError> {
        let u = control(q, qdot)?;
        if u.amax() > opts.torque_limit {
            return Err(SimError::ControllerDiverged { t: 0.0 });
        }
        Ok(model.forward_dynamics(&JointState::new(q.clone(), qdot.clone()), &u)?)
    };

    // RK4 on the first-order system z = (q, q̇).
    let rk4 = |q: &DVector<f64>, qdot: &DVector<f64>, h: f64| -> Result<(DVector<f64>, DVector<f64>), SimError> {
        let k1q = qdot.clone();
        let k1v = deriv(q, qdot)?;
        let k2q = qdot + k1v.scale(0.5 * h);
        let k2v = deriv(&(q + k1q.scale(0.5 * h)), &k2q)?;
        let k3q = qdot + k2v.scale(0.5 * h);
        let k3v = deriv(&(q + k2q.scale(0.5 * h)), &k3q)?;
        let k4q = qdot + k3v.scale(h);
        let k4v = deriv(&(q + k3q.scale(h)), &k4q)?;
        let q_next = q + (k1q + k2q.scale(2.0) + k3q.scale(2.0) + k4q).scale(h / 6.0);
        let qdot_next = qdot + (k1v + k2v.scale(2.0) + k3v.scale(2.0) + k4v).scale(h / 6.0);
        Ok((q_next, qdot_next))
    };

    let swing_height = |q: &DVector<f64>| -> f64 {
        let p = model.swing_foot_position(q);
        stance_h + p.y - target_height(stance_x + p.x)
    };

    let mut q = state0.q.clone();
    let mut qdot = state0.qdot.clone();
    let mut t = 0.0;
    let mut armed = false;
    let push_sample = |traj: &mut Trajectory, t: f64, q: &DVector<f64>, qdot: &DVector<f64>| {
        let s = JointState::new(q.clone(), qdot.clone());
        traj.samples.push(TrajectorySample {
            t: t_offset + t,
            q: q.clone(),
            qdot: qdot.clone(),
            theta: q[ti],
            thetadot: qdot[ti],
            kinetic: model.kinetic_energy(&s),
            potential: model.potential(q) + model.total_mass() * model.gravity_accel() * stance_h,
            stance_x,
            step_index,
        });
    };
    push_sample(traj, t, &q, &qdot);

    loop {
        if t > opts.max_time {
            return Err(SimError::StepFailed {
                index: step_index,
                outcome: ReducedOutcome::TimedOut { theta: q[ti], thetadot: qdot[ti] },
            });
        }
        let h_pre = swing_height(&q);
        if !armed && h_pre > 1e-4 {
            armed = true;
        }
        let (q_next, qdot_next) = rk4(&q, &qdot, opts.dt).map_err(|e| match e {
            SimError::ControllerDiverged { .. } => SimError::ControllerDiverged { t: t_offset + t },
            other => other,
        })?;
        let h_post = swing_height(&q_next);
        let past_mid = q_next[ti] > theta_mid;
        if armed && past_mid && h_pre > 0.0 && h_post <= 0.0 {
            // Bisect the touchdown time.
            let mut lo = 0.0;
            let mut hi = opts.dt;
            let mut end = (q_next.clone(), qdot_next.clone());
            while hi - lo > EVENT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                let probe = rk4(&q, &qdot, mid)?;
                if swing_height(&probe.0) <= 0.0 {
                    hi = mid;
                    end = probe;
                } else {
                    lo = mid;
                }
            }
            t += hi;
            push_sample(traj, t, &end.0, &end.1);
            let thetadot_pre = end.1[ti];
            return Ok(FullStepResult {
                state_pre: JointState::new(end.0, end.1),
                t_impact: t_offset + t,
                thetadot_pre,
            });
        }
        q = q_next;
        qdot = qdot_next;
        t += opts.dt;
        push_sample(traj, t, &q, &qdot);
    }
}

/// Simulation fidelity for [`execute_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Phase dynamics only; configurations reconstructed through Φ.
    Reduced,
    /// Full-order dynamics under the tracking controller, impacts through
    /// the rigid impact map.
    Full,
}

impl SimMode {
    pub fn name(&self) -> &'static str {
        match self {
            SimMode::Reduced => "reduced",
            SimMode::Full => "full",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "reduced" => Some(SimMode::Reduced),
            "full" => Some(SimMode::Full),
            _ => None,
        }
    }
}

/// Per-step summary produced by [`execute_plan`].
#[derive(Debug, Clone)]
pub struct StepSummary {
    pub step_index: usize,
    pub primitive_id: u32,
    pub t_start: f64,
    pub t_impact: f64,
    /// Squared phase rate just before / after the impact.
    pub v_f: f64,
    pub v_post: f64,
    pub stance_x: f64,
    pub stance_h: f64,
}

/// Execute a plan open loop, chaining per-step simulations and impacts.
///
/// Reduced mode replays the phase dynamics and reconstructs full states
/// through the constraints; full mode runs the tracking controller and the
/// rigid impact map. Returns the stitched trajectory and per-step summaries.
pub fn execute_plan(
    model: &RobotModel,
    lib: &PrimitiveLibrary,
    plan: &Plan,
    terrain: &TerrainMap,
    mode: SimMode,
    opts: &FullSimOptions,
) -> Result<(Trajectory, Vec<StepSummary>), SimError> {
    let mut traj = Trajectory::default();
    let mut summaries = Vec::new();
    let ti = model.theta_index();

    let mut t = 0.0;
    let mut stance_x = plan.steps[0].world_x;
    let mut stance_h = plan.steps[0].world_h;
    let mut full_state: Option<JointState> = None;

    for (si, step) in plan.steps.iter().enumerate() {
        let prim = lib
            .primitive(step.primitive_id)
            .ok_or(SimError::UnknownPrimitive { id: step.primitive_id })?;
        let vc = &prim.vc;
        let t_start = t;
        match mode {
            SimMode::Reduced => {
                let thetadot0 = step.v0.max(0.0).sqrt();
                let dynamics = ReducedDynamics::new(model, vc);
                let opts_r = ReducedOptions { dt: opts.dt, max_time: opts.max_time };
                let (rt, outcome) = integrate_reduced(&dynamics, thetadot0, &opts_r);
                let ReducedOutcome::Completed { t: t_step, thetadot } = outcome else {
                    return Err(SimError::StepFailed { index: si, outcome });
                };
                // Reconstruct sampled full states through the constraint.
                for k in 0..rt.t.len() {
                    let (phi, dphi, _) = vc.eval_unchecked(rt.theta[k]);
                    let qdot = dphi.scale(rt.thetadot[k]);
                    let s = JointState::new(phi.clone(), qdot.clone());
                    traj.samples.push(TrajectorySample {
                        t: t + rt.t[k],
                        theta: rt.theta[k],
                        thetadot: rt.thetadot[k],
                        kinetic: model.kinetic_energy(&s),
                        potential: model.potential(&phi)
                            + model.total_mass() * model.gravity_accel() * stance_h,
                        q: phi,
                        qdot,
                        stance_x,
                        step_index: si,
                    });
                }
                t += t_step;
                let v_f = thetadot * thetadot;
                let v_post = prim.delta * prim.delta * v_f;
                let (phi_f, dphi_f, _) = vc.eval_unchecked(vc.thetaf());
                let pre = JointState::new(phi_f.clone(), dphi_f.scale(thetadot));
                let post = model.impact_map(&pre)?;
                let foot = model.swing_foot_position(&phi_f);
                let foot_x = stance_x + foot.x;
                let foot_h = stance_h + foot.y;
                traj.impacts.push(ImpactEvent {
                    t,
                    step_index: si,
                    pre,
                    post,
                    thetadot_pre: thetadot,
                    thetadot_post: v_post.sqrt(),
                    foot_x,
                    foot_h,
                });
                summaries.push(StepSummary {
                    step_index: si,
                    primitive_id: prim.id,
                    t_start,
                    t_impact: t,
                    v_f,
                    v_post,
                    stance_x,
                    stance_h,
                });
                stance_x = foot_x;
                stance_h = terrain.eval(foot_x).unwrap_or(foot_h);
            }
            SimMode::Full => {
                let state0 = match full_state.take() {
                    Some(s) => s,
                    None => {
                        let (phi, dphi, _) = vc.eval_unchecked(vc.theta0());
                        JointState::new(phi, dphi.scale(step.v0.max(0.0).sqrt()))
                    }
                };
                let res = integrate_full_step(
                    model,
                    vc,
                    &state0,
                    |x| terrain.eval(x).unwrap_or(0.0),
                    opts,
                    t,
                    stance_x,
                    stance_h,
                    si,
                    &mut traj,
                )?;
                t = res.t_impact;
                let pre = res.state_pre;
                let post = model.impact_map(&pre)?;
                let foot = model.swing_foot_position(&pre.q);
                let foot_x = stance_x + foot.x;
                let foot_h = stance_h + foot.y;
                let thetadot_post = post.qdot[ti];
                traj.impacts.push(ImpactEvent {
                    t,
                    step_index: si,
                    pre: pre.clone(),
                    post: post.clone(),
                    thetadot_pre: res.thetadot_pre,
                    thetadot_post,
                    foot_x,
                    foot_h,
                });
                summaries.push(StepSummary {
                    step_index: si,
                    primitive_id: prim.id,
                    t_start,
                    t_impact: t,
                    v_f: res.thetadot_pre * res.thetadot_pre,
                    v_post: thetadot_post * thetadot_post,
                    stance_x,
                    stance_h,
                });
                stance_x = foot_x;
                stance_h = terrain.eval(foot_x).unwrap_or(foot_h);
                full_state = Some(post);
            }
        }
    }
    Ok((traj, summaries))
}

/// Pretty label for step summaries in logs and exports.
pub fn summarize_steps(summaries: &[StepSummary]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for st in summaries {
        let _ = writeln!(
            s,
            "step {} prim {} t=[{:.3},{:.3}] v_f={:.6} v_post={:.6} x={:.3}",
            st.step_index, st.primitive_id, st.t_start, st.t_impact, st.v_f, st.v_post, st.stance_x
        );
    }
    s
}
