//! Virtual holonomic constraints and the offline closed-form solution of the
//! reduced phase dynamics.
//!
//! A constraint `Φ(θ)` synchronizes every joint to a single phase variable
//! over `[θ₀, θ_f]`. When the constraint is enforced exactly, the remaining
//! dynamics collapse to
//!
//! ```text
//! α(θ)·θ̈ + β(θ)·θ̇² + γ(θ) = 0
//! ```
//!
//! and, because `θ̇` only enters squared, `d(θ̇²)/dθ` is a *linear*
//! θ-varying ODE. [`solve_reduced`] integrates its homogeneous and forced
//! parts once, offline, producing `θ̇²(θ) = Γ(θ)·θ̇₀² + Ψ(θ)`; from then on a
//! step's entire velocity profile and mechanical energy follow from one
//! multiply and one add per query.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;

use crate::mechanics::{ModelError, RobotModel};

/// Default number of RK4 intervals used to tabulate `Γ`, `Ψ`.
pub const DEFAULT_GRID_INTERVALS: usize = 400;

/// Default lower bound on `|α|` for the controllability screen.
pub const DEFAULT_ALPHA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum VhcError {
    /// `θ_f` must exceed `θ₀`.
    EmptyInterval { theta0: f64, thetaf: f64 },
    /// Queried phase lies outside `[θ₀, θ_f]`.
    ThetaOutOfRange { theta: f64, theta0: f64, thetaf: f64 },
    /// The phase coordinate row does not reproduce `φ(θ) = θ`.
    ThetaRowNotIdentity,
    /// `α(θ)` vanishes or changes sign: no local instantaneous
    /// controllability along this path.
    ControllabilityFailure { min_abs_alpha: f64 },
    /// `γ` crosses zero more than once; the path is rejected.
    MultipleCriticalPoints { crossings: usize },
    /// `γ > 0` on the whole interval: the step ends mid-climb and is
    /// rejected rather than assigned a critical phase.
    NoCriticalPoint,
    /// Chained constraints whose endpoint configurations do not match.
    EndpointMismatch { residual: f64 },
    Model(ModelError),
}

impl fmt::Display for VhcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VhcError::EmptyInterval { theta0, thetaf } => {
                write!(f, "empty phase interval [{theta0}, {thetaf}]")
            }
            VhcError::ThetaOutOfRange { theta, theta0, thetaf } => {
                write!(f, "theta {theta} outside [{theta0}, {thetaf}]")
            }
            VhcError::ThetaRowNotIdentity => {
                write!(f, "phase coordinate row must satisfy phi(theta) = theta")
            }
            VhcError::ControllabilityFailure { min_abs_alpha } => {
                write!(f, "alpha vanishes along the path (min |alpha| = {min_abs_alpha:.3e})")
            }
            VhcError::MultipleCriticalPoints { crossings } => {
                write!(f, "gamma changes sign {crossings} times; expected at most one")
            }
            VhcError::NoCriticalPoint => write!(f, "gamma positive over the whole interval"),
            VhcError::EndpointMismatch { residual } => {
                write!(f, "relabeled end configuration mismatch (residual {residual:.3e})")
            }
            VhcError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for VhcError {}

impl From<ModelError> for VhcError {
    fn from(e: ModelError) -> Self {
        VhcError::Model(e)
    }
}

/// How the phase variable relates to the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    /// `φ_i(θ) = θ` for coordinate `i` (the usual choice: the unactuated
    /// stance-pivot angle).
    Coordinate(usize),
    /// θ is an abstract path parameter (arc length). Provided for
    /// completeness; the shipped libraries use `Coordinate`.
    ArcLength,
}

/// One footstep's configuration path: per-joint Bézier polynomials over
/// `[θ₀, θ_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualConstraint {
    theta0: f64,
    thetaf: f64,
    /// Control points, one row per joint, `degree + 1` columns.
    coeffs: Vec<DVector<f64>>,
    mode: PhaseMode,
}

impl VirtualConstraint {
    /// Build from explicit control-point rows (`coeffs[i]` is joint `i`'s
    /// Bézier control polygon). All rows must share one degree.
    pub fn from_control_points(
        theta0: f64,
        thetaf: f64,
        coeffs: Vec<DVector<f64>>,
        mode: PhaseMode,
    ) -> Result<Self, VhcError> {
        if !(thetaf > theta0) {
            return Err(VhcError::EmptyInterval { theta0, thetaf });
        }
        let vc = Self { theta0, thetaf, coeffs, mode };
        if let PhaseMode::Coordinate(idx) = vc.mode {
            // The phase row must be the linear polynomial θ₀ → θ_f.
            let row = &vc.coeffs[idx];
            let d = (row.len() - 1) as f64;
            for (k, &b) in row.iter().enumerate() {
                let expected = theta0 + (thetaf - theta0) * (k as f64) / d;
                if (b - expected).abs() > 1e-9 {
                    return Err(VhcError::ThetaRowNotIdentity);
                }
            }
        }
        Ok(vc)
    }

    /// Hermite-style construction: endpoint configurations and endpoint
    /// derivatives pinned, interior control points interpolated between the
    /// derivative-induced points plus per-joint offsets.
    ///
    /// `interior_offsets` has `degree − 3` entries (for the default degree 5:
    /// two), each a per-joint offset vector added to the corresponding
    /// interior control point. The phase coordinate's offsets must be zero.
    pub fn from_boundary(
        theta0: f64,
        thetaf: f64,
        q0: &DVector<f64>,
        qf: &DVector<f64>,
        dq0: &DVector<f64>,
        dqf: &DVector<f64>,
        degree: usize,
        interior_offsets: &[DVector<f64>],
        mode: PhaseMode,
    ) -> Result<Self, VhcError> {
        assert!(degree >= 3, "boundary construction needs degree >= 3");
        assert_eq!(interior_offsets.len(), degree - 3);
        if !(thetaf > theta0) {
            return Err(VhcError::EmptyInterval { theta0, thetaf });
        }
        let n = q0.len();
        let span = thetaf - theta0;
        let d = degree as f64;
        let mut coeffs = Vec::with_capacity(n);
        for i in 0..n {
            let b0 = q0[i];
            let b1 = q0[i] + span / d * dq0[i];
            let bd = qf[i];
            let bdm1 = qf[i] - span / d * dqf[i];
            let mut row = DVector::zeros(degree + 1);
            row[0] = b0;
            row[1] = b1;
            row[degree - 1] = bdm1;
            row[degree] = bd;
            for k in 2..degree - 1 {
                // Linear blend between the derivative-induced points.
                let t = (k - 1) as f64 / (degree - 2) as f64;
                row[k] = b1 * (1.0 - t) + bdm1 * t + interior_offsets[k - 2][i];
            }
            coeffs.push(row);
        }
        Self::from_control_points(theta0, thetaf, coeffs, mode)
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn thetaf(&self) -> f64 {
        self.thetaf
    }

    pub fn span(&self) -> f64 {
        self.thetaf - self.theta0
    }

    pub fn mode(&self) -> PhaseMode {
        self.mode
    }

    pub fn dof(&self) -> usize {
        self.coeffs.len()
    }

    pub fn degree(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn control_points(&self) -> &[DVector<f64>] {
        &self.coeffs
    }

    /// `(Φ, Φ′, Φ″)` at `theta`; errors outside `[θ₀, θ_f]` (with a small
    /// slack for roundoff).
    pub fn eval(&self, theta: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), VhcError> {
        let slack = 1e-9 * (1.0 + self.span());
        if theta < self.theta0 - slack || theta > self.thetaf + slack {
            return Err(VhcError::ThetaOutOfRange {
                theta,
                theta0: self.theta0,
                thetaf: self.thetaf,
            });
        }
        Ok(self.eval_unchecked(theta))
    }

    /// As [`eval`](Self::eval) but extrapolating polynomially outside the
    /// interval; used by the tracking controller near impact events.
    pub fn eval_unchecked(&self, theta: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.coeffs.len();
        let span = self.span();
        let s = (theta - self.theta0) / span;
        let mut phi = DVector::zeros(n);
        let mut dphi = DVector::zeros(n);
        let mut ddphi = DVector::zeros(n);
        for i in 0..n {
            let (v, dv, ddv) = bezier_eval(&self.coeffs[i], s);
            phi[i] = v;
            dphi[i] = dv / span;
            ddphi[i] = ddv / (span * span);
        }
        (phi, dphi, ddphi)
    }
}

/// de Casteljau evaluation of value and first/second derivatives with
/// respect to the normalized parameter `s` (valid for any real `s`).
fn bezier_eval(control: &DVector<f64>, s: f64) -> (f64, f64, f64) {
    let d = control.len() - 1;
    let value = de_casteljau(control.as_slice(), s);
    if d == 0 {
        return (value, 0.0, 0.0);
    }
    let diff1: Vec<f64> = (0..d).map(|k| control[k + 1] - control[k]).collect();
    let dv = d as f64 * de_casteljau(&diff1, s);
    if d == 1 {
        return (value, dv, 0.0);
    }
    let diff2: Vec<f64> = (0..d - 1).map(|k| diff1[k + 1] - diff1[k]).collect();
    let ddv = (d * (d - 1)) as f64 * de_casteljau(&diff2, s);
    (value, dv, ddv)
}

fn de_casteljau(points: &[f64], s: f64) -> f64 {
    let mut work: Vec<f64> = points.to_vec();
    for level in (1..work.len()).rev() {
        for k in 0..level {
            work[k] = (1.0 - s) * work[k] + s * work[k + 1];
        }
    }
    work[0]
}

/// Reduced-dynamics coefficients `α(θ)`, `β(θ)`, `γ(θ)` evaluated pointwise
/// from a model/constraint pair.
pub struct ReducedDynamics<'a> {
    pub model: &'a RobotModel,
    pub vc: &'a VirtualConstraint,
}

impl<'a> ReducedDynamics<'a> {
    pub fn new(model: &'a RobotModel, vc: &'a VirtualConstraint) -> Self {
        Self { model, vc }
    }
}

/// Scalar phase dynamics `α θ̈ + β θ̇² + γ = 0` over an interval. Implemented
/// by [`ReducedDynamics`] and by synthetic coefficient sets in tests.
pub trait PhaseDynamics {
    fn interval(&self) -> (f64, f64);
    /// `(α, β, γ)` at `theta`.
    fn coeffs(&self, theta: f64) -> (f64, f64, f64);
}

impl PhaseDynamics for ReducedDynamics<'_> {
    fn interval(&self) -> (f64, f64) {
        (self.vc.theta0(), self.vc.thetaf())
    }

    fn coeffs(&self, theta: f64) -> (f64, f64, f64) {
        let (phi, dphi, ddphi) = self.vc.eval_unchecked(theta);
        let m = self.model.mass_matrix(&phi);
        let bperp = self.model.actuation_perp(&phi);
        let c = self.model.coriolis(&phi, &dphi);
        let alpha = (&bperp * (&m * &dphi))[0];
        let beta = (&bperp * (&m * &ddphi + c * &dphi))[0];
        let gamma = (&bperp * self.model.gravity(&phi))[0];
        (alpha, beta, gamma)
    }
}

/// `(α, β, γ)` of the reduced dynamics at one phase value.
pub fn reduced_coeffs(model: &RobotModel, vc: &VirtualConstraint, theta: f64) -> (f64, f64, f64) {
    ReducedDynamics::new(model, vc).coeffs(theta)
}

/// Result of the instantaneous-controllability screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllabilityReport {
    pub pass: bool,
    pub min_abs_alpha: f64,
    pub sign_constant: bool,
}

/// Pass iff `|α| ≥ tol` at every grid point with constant sign.
pub fn check_controllability(
    dyn_: &dyn PhaseDynamics,
    grid_points: usize,
    tol: f64,
) -> ControllabilityReport {
    let (theta0, thetaf) = dyn_.interval();
    let mut min_abs = f64::INFINITY;
    let mut sign = 0.0;
    let mut sign_constant = true;
    for k in 0..grid_points {
        let theta = theta0 + (thetaf - theta0) * (k as f64) / ((grid_points - 1) as f64);
        let (alpha, _, _) = dyn_.coeffs(theta);
        min_abs = min_abs.min(alpha.abs());
        if alpha != 0.0 {
            if sign == 0.0 {
                sign = alpha.signum();
            } else if alpha.signum() != sign {
                sign_constant = false;
            }
        }
    }
    ControllabilityReport {
        pass: sign_constant && min_abs >= tol,
        min_abs_alpha: min_abs,
        sign_constant,
    }
}

/// Locate the critical phase `θ_c` where `γ` changes sign.
///
/// `γ` crossing exactly once (the typical walking step: decelerating toward
/// peak potential, accelerating after) yields the bisection root to 1e-10.
/// `γ < 0` throughout — an always-accelerating step — degenerates to
/// `θ_c = θ₀`. `γ > 0` throughout or multiple crossings reject the path.
pub fn find_critical_point(dyn_: &dyn PhaseDynamics, grid_points: usize) -> Result<f64, VhcError> {
    let (theta0, thetaf) = dyn_.interval();
    let at = |k: usize| theta0 + (thetaf - theta0) * (k as f64) / ((grid_points - 1) as f64);
    let mut crossings = Vec::new();
    let mut any_positive = false;
    // Track the last strictly-signed sample so samples landing exactly on
    // zero do not double-count a single crossing.
    let mut last_sign = 0.0;
    let mut last_sign_theta = theta0;
    for k in 0..grid_points {
        let theta = at(k);
        let g = dyn_.coeffs(theta).2;
        any_positive |= g > 0.0;
        if g != 0.0 {
            let sign = g.signum();
            if last_sign != 0.0 && sign != last_sign {
                crossings.push((last_sign_theta, theta));
            }
            last_sign = sign;
            last_sign_theta = theta;
        }
    }
    match crossings.len() {
        0 => {
            if any_positive {
                Err(VhcError::NoCriticalPoint)
            } else {
                Ok(theta0)
            }
        }
        1 => {
            let (mut lo, mut hi) = crossings[0];
            let g_lo = dyn_.coeffs(lo).2;
            for _ in 0..200 {
                if hi - lo <= 1e-10 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let g_mid = dyn_.coeffs(mid).2;
                if (g_mid > 0.0) == (g_lo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
        more => Err(VhcError::MultipleCriticalPoints { crossings: more }),
    }
}

/// Precomputed affine solution of the reduced dynamics on one interval:
/// `θ̇²(θ) = Γ(θ)·θ̇₀² + Ψ(θ)` and `H(θ) = Υ(θ)·θ̇² + Ξ(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSolution {
    /// Strictly increasing phase samples spanning `[θ₀, θ_f]`.
    pub grid: Vec<f64>,
    pub gamma: Vec<f64>,
    pub psi: Vec<f64>,
    /// Energy coefficients on the same grid: `Υ = ½ Φ′ᵀMΦ′`, `Ξ = V(Φ)`.
    pub upsilon: Vec<f64>,
    pub xi: Vec<f64>,
    pub theta_c: f64,
    /// `Γ`, `Ψ` integrated exactly (RK4 with a trimmed final step) to `θ_c`;
    /// the planner uses these rather than grid interpolation.
    pub gamma_c: f64,
    pub psi_c: f64,
    /// Post-impact chain data, filled once the successor constraint family
    /// is known: `θ⁺ = κ`, `θ̇⁺ = δ·θ̇⁻`.
    pub impact: Option<ReducedImpact>,
}

/// Reduced impact map parameters linking one constraint to its successor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedImpact {
    /// Post-impact phase `θ⁺` (the successor's `θ₀`).
    pub kappa: f64,
    /// Velocity ratio `θ̇⁺/θ̇⁻`.
    pub delta: f64,
    /// Relative misalignment of the mapped constraint derivative against the
    /// successor's start derivative; small when the hybrid zero dynamics are
    /// invariant.
    pub invariance_residual: f64,
}

impl AffineSolution {
    fn locate(&self, theta: f64) -> (usize, f64) {
        let n = self.grid.len();
        let t0 = self.grid[0];
        let tf = self.grid[n - 1];
        let clamped = theta.clamp(t0, tf);
        let step = (tf - t0) / ((n - 1) as f64);
        let mut idx = ((clamped - t0) / step) as usize;
        if idx >= n - 1 {
            idx = n - 2;
        }
        let frac = (clamped - self.grid[idx]) / (self.grid[idx + 1] - self.grid[idx]);
        (idx, frac)
    }

    /// Linearly interpolated `(Γ, Ψ)` at `theta`.
    pub fn gamma_psi_at(&self, theta: f64) -> (f64, f64) {
        let (i, t) = self.locate(theta);
        (
            self.gamma[i] * (1.0 - t) + self.gamma[i + 1] * t,
            self.psi[i] * (1.0 - t) + self.psi[i + 1] * t,
        )
    }

    /// `θ̇²` at `theta` given the entry value `v0 = θ̇₀²`. A negative result
    /// is meaningful: the step cannot reach this phase ("falling backwards").
    pub fn thetadot_sq_at(&self, theta: f64, v0: f64) -> f64 {
        let (g, p) = self.gamma_psi_at(theta);
        g * v0 + p
    }

    /// `(Γ, Ψ)` at the critical phase, stored exactly.
    pub fn at_critical(&self) -> (f64, f64) {
        (self.gamma_c, self.psi_c)
    }

    /// `(Γ, Ψ)` at `θ_f`.
    pub fn at_final(&self) -> (f64, f64) {
        (self.gamma[self.grid.len() - 1], self.psi[self.grid.len() - 1])
    }

    /// Total mechanical energy at `theta` as an affine function of `v0`.
    pub fn energy_at(&self, theta: f64, v0: f64) -> f64 {
        let (i, t) = self.locate(theta);
        let ups = self.upsilon[i] * (1.0 - t) + self.upsilon[i + 1] * t;
        let xi = self.xi[i] * (1.0 - t) + self.xi[i + 1] * t;
        ups * self.thetadot_sq_at(theta, v0) + xi
    }

    pub fn theta0(&self) -> f64 {
        self.grid[0]
    }

    pub fn thetaf(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }
}

/// RK4 step of the coupled linear system
/// `Γ′ = −2(β/α)Γ`, `Ψ′ = −2(β/α)Ψ − 2(γ/α)`.
fn rk4_step(dyn_: &dyn PhaseDynamics, theta: f64, h: f64, state: (f64, f64)) -> (f64, f64) {
    let f = |th: f64, s: (f64, f64)| -> (f64, f64) {
        let (a, b, g) = dyn_.coeffs(th);
        let k = -2.0 * b / a;
        (k * s.0, k * s.1 - 2.0 * g / a)
    };
    let k1 = f(theta, state);
    let k2 = f(theta + 0.5 * h, (state.0 + 0.5 * h * k1.0, state.1 + 0.5 * h * k1.1));
    let k3 = f(theta + 0.5 * h, (state.0 + 0.5 * h * k2.0, state.1 + 0.5 * h * k2.1));
    let k4 = f(theta + h, (state.0 + h * k3.0, state.1 + h * k3.1));
    (
        state.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        state.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Integrate `(Γ, Ψ)` from `θ₀` to an arbitrary phase with full steps of the
/// nominal width plus one trimmed final step.
fn integrate_to(dyn_: &dyn PhaseDynamics, theta0: f64, target: f64, h_nominal: f64) -> (f64, f64) {
    let mut state = (1.0, 0.0);
    let mut theta = theta0;
    while theta + h_nominal <= target {
        state = rk4_step(dyn_, theta, h_nominal, state);
        theta += h_nominal;
    }
    let rem = target - theta;
    if rem > 1e-15 {
        state = rk4_step(dyn_, theta, rem, state);
    }
    state
}

/// Settings for [`solve_reduced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub grid_intervals: usize,
    pub alpha_tol: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            grid_intervals: DEFAULT_GRID_INTERVALS,
            alpha_tol: DEFAULT_ALPHA_TOL,
        }
    }
}

/// Solve the reduced dynamics of a model/constraint pair offline.
pub fn solve_reduced(
    model: &RobotModel,
    vc: &VirtualConstraint,
    settings: &SolveSettings,
) -> Result<AffineSolution, VhcError> {
    let dynamics = ReducedDynamics::new(model, vc);
    solve_reduced_dynamics(&dynamics, settings, |theta| {
        let (phi, dphi, _) = vc.eval_unchecked(theta);
        let m = model.mass_matrix(&phi);
        let ups = 0.5 * dphi.dot(&(m * &dphi));
        let xi = model.potential(&phi);
        (ups, xi)
    })
}

/// Core solver over abstract phase dynamics; `energy_coeffs` supplies
/// `(Υ, Ξ)` per grid point.
pub fn solve_reduced_dynamics(
    dyn_: &dyn PhaseDynamics,
    settings: &SolveSettings,
    mut energy_coeffs: impl FnMut(f64) -> (f64, f64),
) -> Result<AffineSolution, VhcError> {
    let (theta0, thetaf) = dyn_.interval();
    let n = settings.grid_intervals;
    assert!(n >= 2, "grid must have at least two intervals");

    let report = check_controllability(dyn_, n + 1, settings.alpha_tol);
    if !report.pass {
        return Err(VhcError::ControllabilityFailure {
            min_abs_alpha: report.min_abs_alpha,
        });
    }
    let theta_c = find_critical_point(dyn_, n + 1)?;

    let h = (thetaf - theta0) / (n as f64);
    let mut grid = Vec::with_capacity(n + 1);
    let mut gamma = Vec::with_capacity(n + 1);
    let mut psi = Vec::with_capacity(n + 1);
    let mut upsilon = Vec::with_capacity(n + 1);
    let mut xi = Vec::with_capacity(n + 1);

    let mut state = (1.0, 0.0);
    for k in 0..=n {
        let theta = if k == n { thetaf } else { theta0 + h * (k as f64) };
        grid.push(theta);
        gamma.push(state.0);
        psi.push(state.1);
        let (u, x) = energy_coeffs(theta);
        upsilon.push(u);
        xi.push(x);
        if k < n {
            state = rk4_step(dyn_, theta, h, state);
        }
    }

    let (gamma_c, psi_c) = integrate_to(dyn_, theta0, theta_c, h);

    Ok(AffineSolution {
        grid,
        gamma,
        psi,
        upsilon,
        xi,
        theta_c,
        gamma_c,
        psi_c,
        impact: None,
    })
}

/// Reduced impact map between two chained constraints.
///
/// Requires the relabeled end configuration of `vc_prev` to coincide with
/// `vc_next`'s start configuration. `δ` is the least-squares scalar aligning
/// the impact-mapped end derivative with the successor's start derivative;
/// the reported residual quantifies hybrid-zero-dynamics invariance.
pub fn reduced_impact(
    model: &RobotModel,
    vc_prev: &VirtualConstraint,
    vc_next: &VirtualConstraint,
) -> Result<ReducedImpact, VhcError> {
    let (phi_f, dphi_f, _) = vc_prev.eval(vc_prev.thetaf())?;
    let (phi_0, dphi_0, _) = vc_next.eval(vc_next.theta0())?;
    let mapped_q = model.apply_relabel(&phi_f);
    let residual_q = (&mapped_q - &phi_0).amax();
    if residual_q > 1e-8 {
        return Err(VhcError::EndpointMismatch { residual: residual_q });
    }
    let delta_mat = model.impact_velocity_matrix(&phi_f)?;
    let mapped = model.relabel_matrix() * (delta_mat * dphi_f);
    let denom = dphi_0.dot(&dphi_0);
    let delta = mapped.dot(&dphi_0) / denom;
    let err = &mapped - dphi_0.scale(delta);
    let scale = mapped.norm().max(1e-300);
    Ok(ReducedImpact {
        kappa: vc_next.theta0(),
        delta,
        invariance_residual: err.norm() / scale,
    })
}

/// Human-readable classification of a step attempt given its velocity at the
/// critical phase (squared).
pub fn classify_critical_velocity(v_c: f64) -> &'static str {
    if v_c > 0.0 {
        "completes"
    } else if v_c == 0.0 {
        "heteroclinic"
    } else {
        "falls backwards"
    }
}

/// Convenience used by the library builder and tests: a descriptive name for
/// a constraint (start/end phases).
pub fn describe(vc: &VirtualConstraint) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = write!(
        s,
        "vc[{:.4}..{:.4}] degree {}",
        vc.theta0(),
        vc.thetaf(),
        vc.degree()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::{build_compass_gait, compass_gait_defaults, ModelParams};
    use crate::sim::{integrate_reduced, ReducedOptions, ReducedOutcome};
    use crate::test_util::Rng;
    use alloc::vec;

    fn compass() -> RobotModel {
        build_compass_gait(&compass_gait_defaults()).unwrap()
    }

    /// Symmetric mirror-law step: Φ(θ) = (θ, −θ) over [−σ, σ], the classic
    /// compass-gait virtual constraint for a step of length 2·L·sin σ.
    fn mirror_step(sigma: f64) -> VirtualConstraint {
        let q0 = DVector::from_vec(vec![-sigma, sigma]);
        let qf = DVector::from_vec(vec![sigma, -sigma]);
        let dq = DVector::from_vec(vec![1.0, -1.0]);
        VirtualConstraint::from_boundary(
            -sigma,
            sigma,
            &q0,
            &qf,
            &dq,
            &dq,
            5,
            &[DVector::zeros(2), DVector::zeros(2)],
            PhaseMode::Coordinate(0),
        )
        .unwrap()
    }

    #[test]
    fn constraint_reproduces_endpoints() {
        let vc = mirror_step(0.23);
        let (phi0, dphi0, _) = vc.eval(vc.theta0()).unwrap();
        let (phif, _, _) = vc.eval(vc.thetaf()).unwrap();
        assert!((phi0[0] + 0.23).abs() < 1e-12 && (phi0[1] - 0.23).abs() < 1e-12);
        assert!((phif[0] - 0.23).abs() < 1e-12 && (phif[1] + 0.23).abs() < 1e-12);
        assert!((dphi0[0] - 1.0).abs() < 1e-12 && (dphi0[1] + 1.0).abs() < 1e-12);
        // Phase row is the identity at interior points too.
        let (phi, dphi, ddphi) = vc.eval(0.11).unwrap();
        assert!((phi[0] - 0.11).abs() < 1e-12);
        assert!((dphi[0] - 1.0).abs() < 1e-12);
        assert!(ddphi[0].abs() < 1e-9);
    }

    #[test]
    fn linear_bezier_has_zero_second_derivative() {
        let coeffs = vec![
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![2.0, -1.0]),
        ];
        let vc =
            VirtualConstraint::from_control_points(0.0, 1.0, coeffs, PhaseMode::Coordinate(0))
                .unwrap();
        for k in 0..11 {
            let theta = k as f64 / 10.0;
            let (_, _, ddphi) = vc.eval(theta).unwrap();
            assert!(ddphi.amax() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let degree = 5;
            let n = 3;
            let coeffs: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(degree + 1, |_, _| rng.range(-1.0, 1.0)))
                .collect();
            let vc = VirtualConstraint::from_control_points(
                -0.4,
                0.7,
                coeffs,
                PhaseMode::ArcLength,
            )
            .unwrap();
            let h = 1e-5;
            for k in 1..10 {
                let theta = -0.4 + 1.1 * k as f64 / 10.0;
                let (_, dphi, ddphi) = vc.eval(theta).unwrap();
                let (pp, dp, _) = vc.eval(theta + h).unwrap();
                let (pm, dm, _) = vc.eval(theta - h).unwrap();
                let fd1 = (&pp - &pm) / (2.0 * h);
                let fd2 = (&dp - &dm) / (2.0 * h);
                assert!((dphi - fd1).amax() < 1e-6);
                assert!((ddphi - fd2).amax() < 1e-5);
            }
        }
    }

    #[test]
    fn eval_rejects_out_of_range_theta() {
        let vc = mirror_step(0.2);
        assert!(matches!(
            vc.eval(0.3),
            Err(VhcError::ThetaOutOfRange { .. })
        ));
        assert!(vc.eval(0.19).is_ok());
    }

    #[test]
    fn phase_row_must_be_identity() {
        let coeffs = vec![
            DVector::from_vec(vec![0.0, 0.4, 1.0]), // not linear in theta
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
        ];
        assert!(matches!(
            VirtualConstraint::from_control_points(0.0, 1.0, coeffs, PhaseMode::Coordinate(0)),
            Err(VhcError::ThetaRowNotIdentity)
        ));
    }

    #[test]
    fn reduced_coeffs_gamma_vanishes_without_gravity_and_at_peak_potential() {
        // Zero gravity (tiny epsilon: builders require positive values, and
        // gamma scales linearly with it).
        let mut params = compass_gait_defaults();
        params.set("gravity", 1e-12);
        let weightless = build_compass_gait(&params).unwrap();
        let vc = mirror_step(0.23);
        for k in 0..9 {
            let theta = -0.23 + 0.46 * k as f64 / 8.0;
            let (_, _, gamma) = reduced_coeffs(&weightless, &vc, theta);
            assert!(gamma.abs() < 1e-10);
        }

        // Symmetric step: gamma crosses zero exactly where the potential
        // energy along the path peaks.
        let model = compass();
        let dynamics = ReducedDynamics::new(&model, &vc);
        let theta_c = find_critical_point(&dynamics, 401).unwrap();
        assert!(theta_c.abs() < 1e-9, "symmetric step peaks at theta = 0");
        let mut best_theta = f64::NAN;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..=400 {
            let theta = -0.23 + 0.46 * k as f64 / 400.0;
            let (phi, _, _) = vc.eval(theta).unwrap();
            let v = model.potential(&phi);
            if v > best_v {
                best_v = v;
                best_theta = theta;
            }
        }
        assert!((best_theta - theta_c).abs() <= 0.46 / 400.0 + 1e-12);
    }

    #[test]
    fn reduced_coeffs_match_manual_products() {
        let model = compass();
        let vc = mirror_step(0.2);
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let theta = rng.range(-0.2, 0.2);
            let (alpha, beta, gamma) = reduced_coeffs(&model, &vc, theta);
            let (phi, dphi, ddphi) = vc.eval(theta).unwrap();
            let m = model.mass_matrix(&phi);
            let bperp = model.actuation_perp(&phi);
            let want_alpha = (&bperp * (&m * &dphi))[0];
            let want_beta =
                (&bperp * (&m * &ddphi + model.coriolis(&phi, &dphi) * &dphi))[0];
            let want_gamma = (&bperp * model.gravity(&phi))[0];
            assert!((alpha - want_alpha).abs() < 1e-12);
            assert!((beta - want_beta).abs() < 1e-12);
            assert!((gamma - want_gamma).abs() < 1e-12);
        }
    }

    #[test]
    fn controllability_screen_passes_and_fails() {
        let model = compass();
        let vc = mirror_step(0.23);
        let dynamics = ReducedDynamics::new(&model, &vc);
        let report = check_controllability(&dynamics, 401, DEFAULT_ALPHA_TOL);
        assert!(report.pass);
        assert!(report.min_abs_alpha > 1.0);

        // Construct a constraint whose start derivative lies in the null
        // direction of B⊥M: alpha(theta0) = 0.
        let q0 = DVector::from_vec(vec![-0.2, 0.2]);
        let qf = DVector::from_vec(vec![0.2, -0.2]);
        let m = model.mass_matrix(&q0);
        let w = -(m[(0, 0)] + m[(1, 0)]) / (m[(0, 1)] + m[(1, 1)]);
        let dq0 = DVector::from_vec(vec![1.0, w]);
        let dqf = DVector::from_vec(vec![1.0, -1.0]);
        let vc_bad = VirtualConstraint::from_boundary(
            -0.2,
            0.2,
            &q0,
            &qf,
            &dq0,
            &dqf,
            5,
            &[DVector::zeros(2), DVector::zeros(2)],
            PhaseMode::Coordinate(0),
        )
        .unwrap();
        let dyn_bad = ReducedDynamics::new(&model, &vc_bad);
        let report = check_controllability(&dyn_bad, 401, DEFAULT_ALPHA_TOL);
        assert!(!report.pass);
        assert!(report.min_abs_alpha < 1e-6);

        // An alpha sign flip fails even when |alpha| is large at both ends.
        let dq0 = DVector::from_vec(vec![1.0, 1.6 * w]);
        let vc_flip = VirtualConstraint::from_boundary(
            -0.2,
            0.2,
            &q0,
            &qf,
            &dq0,
            &dqf,
            5,
            &[DVector::zeros(2), DVector::zeros(2)],
            PhaseMode::Coordinate(0),
        )
        .unwrap();
        let dyn_flip = ReducedDynamics::new(&model, &vc_flip);
        let (a0, _, _) = dyn_flip.coeffs(-0.2);
        let (af, _, _) = dyn_flip.coeffs(0.2);
        assert!(a0 * af < 0.0, "constructed flip must change sign");
        let report = check_controllability(&dyn_flip, 401, DEFAULT_ALPHA_TOL);
        assert!(!report.pass && !report.sign_constant);

        // Bisection pins the zero crossing of alpha along the flipped path.
        let mut lo = -0.2;
        let mut hi = 0.2;
        let sign_lo = dyn_flip.coeffs(lo).0.signum();
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if dyn_flip.coeffs(mid).0.signum() == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(dyn_flip.coeffs(0.5 * (lo + hi)).0.abs() < 1e-8);
    }

    /// Synthetic phase dynamics with closed-form coefficients.
    struct Synthetic {
        interval: (f64, f64),
        f: fn(f64) -> (f64, f64, f64),
    }

    impl PhaseDynamics for Synthetic {
        fn interval(&self) -> (f64, f64) {
            self.interval
        }
        fn coeffs(&self, theta: f64) -> (f64, f64, f64) {
            (self.f)(theta)
        }
    }

    #[test]
    fn critical_point_of_linear_gamma() {
        let dynamics = Synthetic {
            interval: (0.0, 1.0),
            f: |theta| (1.0, 0.0, theta - 0.3),
        };
        // gamma rises through zero; still a single crossing.
        let theta_c = find_critical_point(&dynamics, 101).unwrap();
        assert!((theta_c - 0.3).abs() < 1e-10);

        let always_up = Synthetic {
            interval: (0.0, 1.0),
            f: |_| (1.0, 0.0, 1.0),
        };
        assert!(matches!(
            find_critical_point(&always_up, 101),
            Err(VhcError::NoCriticalPoint)
        ));

        let always_down = Synthetic {
            interval: (0.0, 1.0),
            f: |_| (1.0, 0.0, -1.0),
        };
        assert_eq!(find_critical_point(&always_down, 101).unwrap(), 0.0);

        let wiggly = Synthetic {
            interval: (0.0, 1.0),
            f: |theta| (1.0, 0.0, (13.0 * theta).sin()),
        };
        assert!(matches!(
            find_critical_point(&wiggly, 101),
            Err(VhcError::MultipleCriticalPoints { .. })
        ));
    }

    #[test]
    fn constant_coefficients_solve_in_closed_form() {
        let c = 0.37;
        let dynamics = Synthetic {
            interval: (0.1, 0.9),
            f: move |_| (1.0, 0.0, -0.37),
        };
        let _ = c;
        let settings = SolveSettings::default();
        let sol = solve_reduced_dynamics(&dynamics, &settings, |_| (1.0, 0.0)).unwrap();
        // Identity at theta0, exactly.
        assert_eq!(sol.gamma[0], 1.0);
        assert_eq!(sol.psi[0], 0.0);
        // Gamma ≡ 1 and Psi(θ) = 2c(θ − θ0) for gamma = −c.
        for (k, &theta) in sol.grid.iter().enumerate() {
            assert!((sol.gamma[k] - 1.0).abs() < 1e-13);
            assert!((sol.psi[k] - 2.0 * 0.37 * (theta - 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_queries_are_affine_and_interpolate() {
        let model = compass();
        let vc = mirror_step(0.23);
        let sol = solve_reduced(&model, &vc, &SolveSettings::default()).unwrap();
        // Collinearity of (v0, θ̇²) and (v0, H) triples.
        for &theta in &[vc.theta0(), -0.1, 0.04, vc.thetaf()] {
            let v = [0.5, 1.0, 2.0];
            let f: Vec<f64> = v.iter().map(|&v0| sol.thetadot_sq_at(theta, v0)).collect();
            let slope1 = (f[1] - f[0]) / (v[1] - v[0]);
            let slope2 = (f[2] - f[1]) / (v[2] - v[1]);
            assert!((slope1 - slope2).abs() <= 1e-12 * slope1.abs().max(1.0));
            let e: Vec<f64> = v.iter().map(|&v0| sol.energy_at(theta, v0)).collect();
            let es1 = (e[1] - e[0]) / (v[1] - v[0]);
            let es2 = (e[2] - e[1]) / (v[2] - v[1]);
            assert!((es1 - es2).abs() <= 1e-12 * es1.abs().max(1.0));
        }
    }

    #[test]
    fn energy_matches_full_model() {
        let model = compass();
        let vc = mirror_step(0.23);
        let sol = solve_reduced(&model, &vc, &SolveSettings::default()).unwrap();
        // At v0 = 0 and θ = θ0 the energy is pure potential.
        let (phi0, _, _) = vc.eval(vc.theta0()).unwrap();
        assert!((sol.energy_at(vc.theta0(), 0.0) - model.potential(&phi0)).abs() < 1e-12);
        // On-grid phases: affine energy equals the full-model energy of the
        // reconstructed state.
        for (k, &theta) in sol.grid.iter().enumerate().step_by(37) {
            let _ = k;
            for &v0 in &[0.3, 1.0, 1.9] {
                let vsq = sol.thetadot_sq_at(theta, v0);
                if vsq < 0.0 {
                    continue;
                }
                let (phi, dphi, _) = vc.eval(theta).unwrap();
                let s = crate::mechanics::JointState::new(phi, dphi.scale(vsq.sqrt()));
                let want = model.total_energy(&s);
                assert!(
                    (sol.energy_at(theta, v0) - want).abs() < 1e-10 * want.abs().max(1.0)
                );
            }
        }
    }

    #[test]
    fn closed_form_matches_time_domain_oracle() {
        let model = compass();
        let vc = mirror_step(0.23);
        let sol = solve_reduced(&model, &vc, &SolveSettings::default()).unwrap();
        let dynamics = ReducedDynamics::new(&model, &vc);
        let mut rng = Rng::new(8);
        // The documented spot value plus random entries.
        let mut v0s = vec![1.44];
        for _ in 0..9 {
            v0s.push(rng.range(0.6, 4.0));
        }
        let (gamma_f, psi_f) = sol.at_final();
        for v0 in v0s {
            let predicted = gamma_f * v0 + psi_f;
            if predicted <= 1e-3 {
                continue;
            }
            let (_, outcome) = integrate_reduced(
                &dynamics,
                v0.sqrt(),
                &ReducedOptions { dt: 1e-4, max_time: 30.0 },
            );
            let ReducedOutcome::Completed { thetadot, .. } = outcome else {
                panic!("step should complete for v0 = {v0}");
            };
            let measured = thetadot * thetadot;
            assert!(
                (predicted - measured).abs() <= 1e-6 * measured.max(1.0),
                "closed form {predicted} vs oracle {measured}"
            );
        }
    }

    #[test]
    fn monotone_phase_when_velocity_positive() {
        let model = compass();
        let vc = mirror_step(0.2);
        let sol = solve_reduced(&model, &vc, &SolveSettings::default()).unwrap();
        let v0 = 1.2;
        assert!(sol.grid.iter().all(|&t| sol.thetadot_sq_at(t, v0) > 0.0));
        let dynamics = ReducedDynamics::new(&model, &vc);
        let (traj, outcome) = integrate_reduced(
            &dynamics,
            v0.sqrt(),
            &ReducedOptions::default(),
        );
        assert!(matches!(outcome, ReducedOutcome::Completed { .. }));
        assert!(traj.theta.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn heteroclinic_boundary_diverges_in_time() {
        let model = compass();
        // Short shallow step: the saddle dominates the step duration.
        let vc = mirror_step(0.1);
        let sol = solve_reduced(&model, &vc, &SolveSettings::default()).unwrap();
        let (gamma_c, psi_c) = sol.at_critical();
        let v_star = -psi_c / gamma_c;
        assert!(v_star > 0.0);
        let dynamics = ReducedDynamics::new(&model, &vc);

        // Nominal duration at a healthy entry speed.
        let healthy = v_star + 1.0;
        let (_, outcome) = integrate_reduced(&dynamics, healthy.sqrt(), &ReducedOptions::default());
        let ReducedOutcome::Completed { t: t_nominal, .. } = outcome else {
            panic!("healthy step must complete");
        };

        // Just above the heteroclinic boundary: completes, but slowly.
        let slow = v_star + 1e-4;
        let opts = ReducedOptions { dt: 1e-4, max_time: 60.0 };
        let (_, outcome) = integrate_reduced(&dynamics, slow.sqrt(), &opts);
        match outcome {
            ReducedOutcome::Completed { t, .. } => {
                assert!(t > 10.0 * t_nominal, "slow {t} vs nominal {t_nominal}")
            }
            ReducedOutcome::TimedOut { .. } => {}
            ReducedOutcome::Stalled { .. } => panic!("must not stall above the boundary"),
        }

        // Just below: stalls before the critical phase.
        let below = v_star - 1e-4;
        let (traj, outcome) = integrate_reduced(&dynamics, below.sqrt(), &opts);
        match outcome {
            ReducedOutcome::Stalled { theta, .. } => assert!(theta < sol.theta_c),
            other => panic!("expected stall, got {other:?} (last theta {:?})", traj.theta.last()),
        }
    }

    #[test]
    fn grid_refinement_converges_at_fourth_order() {
        let model = compass();
        // Needs an asymmetric path: the mirror step's quadrature errors
        // cancel by symmetry and the final values come out exact.
        let q0 = DVector::from_vec(vec![-0.23, 0.23]);
        let qf = DVector::from_vec(vec![0.23, -0.23]);
        let dq = DVector::from_vec(vec![1.0, -1.0]);
        let lift = DVector::from_vec(vec![0.0, 0.3]);
        let vc = VirtualConstraint::from_boundary(
            -0.23,
            0.23,
            &q0,
            &qf,
            &dq,
            &dq,
            5,
            &[lift.clone(), lift.scale(-0.5)],
            PhaseMode::Coordinate(0),
        )
        .unwrap();
        let solve_n = |n: usize| {
            solve_reduced(
                &model,
                &vc,
                &SolveSettings { grid_intervals: n, alpha_tol: DEFAULT_ALPHA_TOL },
            )
            .unwrap()
        };
        let reference = solve_n(3200);
        let (g_ref, p_ref) = reference.at_final();
        let err = |n: usize| {
            let sol = solve_n(n);
            let (g, p) = sol.at_final();
            ((g - g_ref).abs() + (p - p_ref).abs()).max(1e-18)
        };
        let e100 = err(100);
        let e200 = err(200);
        let ratio = e100 / e200;
        assert!(
            (8.0..40.0).contains(&ratio),
            "expected ~16x error reduction per halving, got {ratio} ({e100} -> {e200})"
        );
    }

    #[test]
    fn reduced_impact_chains_symmetric_steps() {
        let model = compass();
        let vc = mirror_step(0.23);
        // The mirror step chains to itself: R Φ(θf) = Φ(θ0).
        let info = reduced_impact(&model, &vc, &vc).unwrap();
        assert_eq!(info.kappa, vc.theta0());
        assert!(info.delta > 0.0 && info.delta <= 1.0 + 1e-12, "delta = {}", info.delta);

        // Consistency with the full impact map on the constrained velocity.
        let thetadot = 1.3;
        let (phi_f, dphi_f, _) = vc.eval(vc.thetaf()).unwrap();
        let pre = crate::mechanics::JointState::new(phi_f, dphi_f.scale(thetadot));
        let post = model.impact_map(&pre).unwrap();
        let (_, dphi_0, _) = vc.eval(vc.theta0()).unwrap();
        let residual = (&post.qdot - dphi_0.scale(info.delta * thetadot)).norm()
            / post.qdot.norm();
        assert!(residual <= info.invariance_residual + 1e-9);

        // Endpoint mismatch is rejected.
        let other = mirror_step(0.2);
        assert!(matches!(
            reduced_impact(&model, &vc, &other),
            Err(VhcError::EndpointMismatch { .. })
        ));
    }

    #[test]
    fn zero_velocity_chains_to_zero() {
        let model = compass();
        let vc = mirror_step(0.23);
        let (phi_f, _, _) = vc.eval(vc.thetaf()).unwrap();
        let pre = crate::mechanics::JointState::new(phi_f, DVector::zeros(2));
        let post = model.impact_map(&pre).unwrap();
        assert!(post.qdot.amax() < 1e-14);
    }

    #[test]
    fn negative_critical_velocity_classified_as_falling() {
        assert_eq!(classify_critical_velocity(-0.2), "falls backwards");
        assert_eq!(classify_critical_velocity(0.0), "heteroclinic");
        assert_eq!(classify_critical_velocity(0.4), "completes");
    }

    #[test]
    fn arc_length_mode_skips_identity_check() {
        let coeffs = vec![
            DVector::from_vec(vec![0.0, 0.4, 1.0]),
            DVector::from_vec(vec![0.1, 0.2, 0.0]),
        ];
        let vc = VirtualConstraint::from_control_points(0.0, 1.0, coeffs, PhaseMode::ArcLength);
        assert!(vc.is_ok());
        let mut p = ModelParams::new();
        p.set("leg_length", 1.0);
        let _ = p;
    }
}
