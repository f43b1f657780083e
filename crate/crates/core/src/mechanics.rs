//! Rigid-body dynamics, energy, and impact mechanics for planar open-chain
//! walkers with one unactuated (stance pivot) coordinate.
//!
//! Both shipped models — the compass-gait biped and the five-link biped —
//! are planar chains of rigid links pinned at the stance foot, described in
//! *absolute* link angles measured from the upward vertical. With that
//! parameterization the mass matrix has the closed form
//! `M[a][b] = K[a][b]·cos(q_a − q_b) + I_a·δ_ab` for a constant coefficient
//! matrix `K`, the Coriolis matrix follows from the Christoffel symbols as
//! `C[k][j] = K[k][j]·sin(q_k − q_j)·q̇_j`, and the potential is
//! `V = g·Σ_a W_a·cos(q_a)`. A single [`RobotModel`] therefore covers every
//! walker in scope; the builders only differ in the coefficient tables.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use alloc::collections::BTreeMap;
use core::fmt;

use nalgebra::{DMatrix, DVector, RowDVector, Vector2};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Reciprocal condition number below which a mass matrix is treated as
/// numerically singular.
pub const RCOND_THRESHOLD: f64 = 1e-10;

/// Errors produced while building or evaluating a robot model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A physical parameter that must be positive was zero or negative.
    NonPositiveParam { name: String, value: f64 },
    /// A required parameter was missing from the parameter map.
    MissingParam { name: String },
    /// The mass matrix is too ill-conditioned to invert reliably.
    IllConditionedMass { rcond: f64 },
    /// The impulsive-contact system at an impact configuration is singular.
    DegenerateImpact,
    /// A state or input vector has the wrong length for this model.
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NonPositiveParam { name, value } => {
                write!(f, "parameter `{name}` must be positive, got {value}")
            }
            ModelError::MissingParam { name } => write!(f, "missing parameter `{name}`"),
            ModelError::IllConditionedMass { rcond } => {
                write!(f, "mass matrix ill-conditioned (rcond = {rcond:.3e})")
            }
            ModelError::DegenerateImpact => write!(f, "impact system is singular"),
            ModelError::DimensionMismatch { expected, got } => {
                write!(f, "expected a vector of length {expected}, got {got}")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// Named scalar parameters of a model (masses in kg, lengths in m,
/// inertias in kg·m², gravity in m/s²).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    entries: BTreeMap<String, f64>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: f64) -> &mut Self {
        self.entries.insert(String::from(name), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    /// Look up a parameter, falling back to `default` when absent.
    pub fn get_or(&self, name: &str, default: f64) -> f64 {
        self.get(name).unwrap_or(default)
    }

    fn require_positive(&self, name: &str, default: f64) -> Result<f64, ModelError> {
        let value = self.get_or(name, default);
        if value > 0.0 {
            Ok(value)
        } else {
            Err(ModelError::NonPositiveParam {
                name: String::from(name),
                value,
            })
        }
    }

    fn require_nonnegative(&self, name: &str, default: f64) -> Result<f64, ModelError> {
        let value = self.get_or(name, default);
        if value >= 0.0 {
            Ok(value)
        } else {
            Err(ModelError::NonPositiveParam {
                name: String::from(name),
                value,
            })
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// FNV-1a hash over the sorted key/value pairs; used to detect libraries
    /// built against different physical parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut absorb = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (k, v) in &self.entries {
            absorb(k.as_bytes());
            absorb(&v.to_bits().to_le_bytes());
        }
        hash
    }
}

/// Joint-space state `(q, q̇)` of a pinned walker.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }
}

/// Which of the shipped walker models a [`RobotModel`] instance describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CompassGait,
    FiveLink,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CompassGait => "compass_gait",
            ModelKind::FiveLink => "five_link",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "compass_gait" => Some(ModelKind::CompassGait),
            "five_link" => Some(ModelKind::FiveLink),
            _ => None,
        }
    }
}

/// One rigid body (or point mass) of the chain. `com_coeffs[a]` multiplies
/// the unit direction `d(q_a) = (sin q_a, cos q_a)` in the body's
/// center-of-mass position relative to the stance pivot.
#[derive(Debug, Clone)]
struct ChainBody {
    mass: f64,
    /// Rotational inertia about the center of mass.
    inertia: f64,
    /// Coordinate index whose angle is this body's orientation.
    frame: usize,
    com_coeffs: DVector<f64>,
}

/// Immutable planar walker model. All evaluation methods are pure functions
/// of their inputs, so a model can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct RobotModel {
    kind: ModelKind,
    n: usize,
    /// K[a][b] = Σ_i m_i c_ia c_ib — constant part of the mass matrix.
    coupling: DMatrix<f64>,
    /// Diagonal rotational-inertia contributions.
    inertia_diag: DVector<f64>,
    /// W_a = Σ_i m_i c_ia — mass-weighted coefficients (potential, impacts).
    weights: DVector<f64>,
    total_mass: f64,
    gravity_accel: f64,
    actuation: DMatrix<f64>,
    actuation_perp: RowDVector<f64>,
    relabel: DMatrix<f64>,
    /// Swing-foot position coefficients: p_sw = Σ_a swing_coeffs[a]·d(q_a).
    swing_coeffs: DVector<f64>,
    /// Points checked against terrain (swing foot, knees when present).
    tracked_points: Vec<(String, DVector<f64>)>,
    /// Straight segments of the body (index pairs into an implicit point set:
    /// each entry is a pair of coefficient vectors for the segment endpoints).
    segments: Vec<(DVector<f64>, DVector<f64>)>,
    /// Phase coordinate: the stance-pivot link angle.
    theta_index: usize,
    /// Natural pre-impact constraint velocity direction, normalized to unit
    /// phase rate. Every step ends with this derivative; pushing it through
    /// the impact map yields each configuration's start derivative, which
    /// makes the hybrid zero dynamics invariant by construction.
    nominal_constraint_dir: DVector<f64>,
    /// Directions applied to the two free interior Bézier control rows to
    /// raise swing clearance: (early-path offset, late-path offset).
    clearance_dirs: (DVector<f64>, DVector<f64>),
    /// Directions that shift mass fore/aft to trade kinetic for potential
    /// energy (swing-leg kick for the compass walker, torso lean for the
    /// five-link).
    lean_dirs: (DVector<f64>, DVector<f64>),
    params: ModelParams,
}

impl RobotModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Number of pinned generalized coordinates.
    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn gravity_accel(&self) -> f64 {
        self.gravity_accel
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Index of the phase coordinate (the stance link absolute angle).
    pub fn theta_index(&self) -> usize {
        self.theta_index
    }

    pub fn nominal_constraint_dir(&self) -> &DVector<f64> {
        &self.nominal_constraint_dir
    }

    pub fn clearance_dirs(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.clearance_dirs.0, &self.clearance_dirs.1)
    }

    pub fn lean_dirs(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lean_dirs.0, &self.lean_dirs.1)
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), ModelError> {
        if v.len() == self.n {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            })
        }
    }

    /// Mass/inertia matrix `M(q)`; symmetric positive-definite.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = self.coupling[(a, b)] * (q[a] - q[b]).cos();
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
            m[(a, a)] += self.inertia_diag[a];
        }
        m
    }

    /// Partial derivative `∂M/∂q_k`.
    pub fn mass_matrix_partial(&self, q: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut dm = DMatrix::zeros(n, n);
        for b in 0..n {
            if b == k {
                continue;
            }
            let v = -self.coupling[(k, b)] * (q[k] - q[b]).sin();
            dm[(k, b)] = v;
            dm[(b, k)] = v;
        }
        dm
    }

    /// Coriolis/centrifugal matrix from the Christoffel symbols of `M`.
    pub fn coriolis(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut c = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                if j != k {
                    c[(k, j)] = self.coupling[(k, j)] * (q[k] - q[j]).sin() * qdot[j];
                }
            }
        }
        c
    }

    /// Gravitational potential energy relative to the stance pivot.
    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        for a in 0..self.n {
            v += self.weights[a] * q[a].cos();
        }
        self.gravity_accel * v
    }

    /// Gradient of the potential, `G(q) = ∂V/∂q`.
    pub fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |a, _| {
            -self.gravity_accel * self.weights[a] * q[a].sin()
        })
    }

    /// Input map `B(q)`, shape n×(n−1).
    pub fn actuation(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        self.actuation.clone()
    }

    /// Left annihilator `B⊥(q)` of the input map, shape 1×n.
    pub fn actuation_perp(&self, _q: &DVector<f64>) -> RowDVector<f64> {
        self.actuation_perp.clone()
    }

    /// Coordinate relabeling matrix applied at impact; an involution.
    pub fn relabel_matrix(&self) -> &DMatrix<f64> {
        &self.relabel
    }

    pub fn apply_relabel(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.relabel * q
    }

    /// Swing-foot position relative to the stance pivot.
    pub fn swing_foot_position(&self, q: &DVector<f64>) -> Vector2<f64> {
        point_from_coeffs(&self.swing_coeffs, q)
    }

    /// Jacobian of the swing-foot position with respect to `q`, shape 2×n.
    pub fn swing_foot_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2, self.n);
        for a in 0..self.n {
            j[(0, a)] = self.swing_coeffs[a] * q[a].cos();
            j[(1, a)] = -self.swing_coeffs[a] * q[a].sin();
        }
        j
    }

    /// Named points checked against terrain, with their positions.
    pub fn tracked_points(&self, q: &DVector<f64>) -> Vec<(&str, Vector2<f64>)> {
        self.tracked_points
            .iter()
            .map(|(name, coeffs)| (name.as_str(), point_from_coeffs(coeffs, q)))
            .collect()
    }

    /// Straight body segments as endpoint pairs, for envelope sweeps.
    pub fn body_segments(&self, q: &DVector<f64>) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        self.segments
            .iter()
            .map(|(a, b)| (point_from_coeffs(a, q), point_from_coeffs(b, q)))
            .collect()
    }

    /// Total mechanical energy `½ q̇ᵀM(q)q̇ + V(q)`.
    pub fn total_energy(&self, s: &JointState) -> f64 {
        let m = self.mass_matrix(&s.q);
        0.5 * s.qdot.dot(&(&m * &s.qdot)) + self.potential(&s.q)
    }

    /// Kinetic energy `½ q̇ᵀM(q)q̇`.
    pub fn kinetic_energy(&self, s: &JointState) -> f64 {
        let m = self.mass_matrix(&s.q);
        0.5 * s.qdot.dot(&(&m * &s.qdot))
    }

    /// Joint accelerations solving `M q̈ + C q̇ + G = B u`.
    pub fn forward_dynamics(
        &self,
        s: &JointState,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, ModelError> {
        self.check_dim(&s.q)?;
        self.check_dim(&s.qdot)?;
        if u.len() != self.n - 1 {
            return Err(ModelError::DimensionMismatch {
                expected: self.n - 1,
                got: u.len(),
            });
        }
        let m = self.mass_matrix(&s.q);
        let rcond = reciprocal_condition(&m).ok_or(ModelError::IllConditionedMass { rcond: 0.0 })?;
        if rcond < RCOND_THRESHOLD {
            return Err(ModelError::IllConditionedMass { rcond });
        }
        let rhs = &self.actuation * u - self.coriolis(&s.q, &s.qdot) * &s.qdot - self.gravity(&s.q);
        m.lu()
            .solve(&rhs)
            .ok_or(ModelError::IllConditionedMass { rcond })
    }

    /// Mass matrix of the unpinned chain in the extended coordinates
    /// `(q, p_x, p_y)` where `p` is the stance-pivot position.
    pub fn extended_mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut me = DMatrix::zeros(n + 2, n + 2);
        let m = self.mass_matrix(q);
        me.view_mut((0, 0), (n, n)).copy_from(&m);
        for a in 0..n {
            let wx = self.weights[a] * q[a].cos();
            let wy = -self.weights[a] * q[a].sin();
            me[(a, n)] = wx;
            me[(n, a)] = wx;
            me[(a, n + 1)] = wy;
            me[(n + 1, a)] = wy;
        }
        me[(n, n)] = self.total_mass;
        me[(n + 1, n + 1)] = self.total_mass;
        me
    }

    /// Velocity projection `Δ(q⁻)` of the inelastic impact: the impulsive
    /// contact force acts at the touching swing foot, generalized momentum is
    /// conserved orthogonal to the impulse, and the new contact point has
    /// zero post-impact velocity. Columns map pre-impact joint rates to
    /// post-impact joint rates (before relabeling).
    pub fn impact_velocity_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        self.check_dim(q)?;
        let n = self.n;
        let me = self.extended_mass_matrix(q);
        let jsw = self.swing_foot_jacobian(q);
        // J_e = [J_sw | I2]: world swing-foot velocity in extended coordinates.
        let mut je = DMatrix::zeros(2, n + 2);
        je.view_mut((0, 0), (2, n)).copy_from(&jsw);
        je[(0, n)] = 1.0;
        je[(1, n + 1)] = 1.0;

        // Block system [M_e, -J_eᵀ; J_e, 0] · [q̇_e⁺; F] = [M_e q̇_e⁻; 0].
        let dim = n + 4;
        let mut block = DMatrix::zeros(dim, dim);
        block.view_mut((0, 0), (n + 2, n + 2)).copy_from(&me);
        block
            .view_mut((0, n + 2), (n + 2, 2))
            .copy_from(&(-je.transpose()));
        block.view_mut((n + 2, 0), (2, n + 2)).copy_from(&je);

        // Pre-impact extended velocity is (q̇⁻, 0, 0): the old pivot is at rest.
        let mut rhs = DMatrix::zeros(dim, n);
        rhs.view_mut((0, 0), (n + 2, n))
            .copy_from(&me.view((0, 0), (n + 2, n)));

        let solved = block.lu().solve(&rhs).ok_or(ModelError::DegenerateImpact)?;
        Ok(solved.view((0, 0), (n, n)).into_owned())
    }

    /// Coarse kinematic sanity screen used when generating constraint paths:
    /// joints within loose limits, no grossly self-colliding postures.
    pub fn configuration_reasonable(&self, q: &DVector<f64>) -> bool {
        match self.kind {
            ModelKind::CompassGait => {
                let half = core::f64::consts::FRAC_PI_2;
                q[0].abs() < half && q[1].abs() < half && (q[0] - q[1]).abs() < half * 1.6
            }
            ModelKind::FiveLink => {
                let limit = 1.2;
                if (0..self.n).any(|i| q[i].abs() > limit) {
                    return false;
                }
                // Knees must not hyperextend past a small margin (bend is
                // negative: knee points forward).
                let knee_st = q[1] - q[0];
                let knee_sw = q[4] - q[3];
                knee_st < 0.35 && knee_st > -1.4 && knee_sw < 0.35 && knee_sw > -1.4
            }
        }
    }

    /// Impact map: `q⁺ = R q⁻`, `q̇⁺ = R Δ(q⁻) q̇⁻`.
    pub fn impact_map(&self, s_minus: &JointState) -> Result<JointState, ModelError> {
        let delta = self.impact_velocity_matrix(&s_minus.q)?;
        Ok(JointState {
            q: &self.relabel * &s_minus.q,
            qdot: &self.relabel * (delta * &s_minus.qdot),
        })
    }
}

fn point_from_coeffs(coeffs: &DVector<f64>, q: &DVector<f64>) -> Vector2<f64> {
    let mut x = 0.0;
    let mut y = 0.0;
    for a in 0..coeffs.len() {
        x += coeffs[a] * q[a].sin();
        y += coeffs[a] * q[a].cos();
    }
    Vector2::new(x, y)
}

/// 1-norm reciprocal condition estimate; `None` when `M` is singular.
pub fn reciprocal_condition(m: &DMatrix<f64>) -> Option<f64> {
    let norm = matrix_norm_1(m);
    let inv = m.clone().try_inverse()?;
    let inv_norm = matrix_norm_1(&inv);
    if norm == 0.0 || inv_norm == 0.0 {
        return None;
    }
    Some(1.0 / (norm * inv_norm))
}

fn matrix_norm_1(m: &DMatrix<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        let mut col = 0.0;
        for i in 0..m.nrows() {
            col += m[(i, j)].abs();
        }
        best = best.max(col);
    }
    best
}

/// Default parameter set for [`build_compass_gait`]: unit legs, a 2:1
/// hip-to-leg mass ratio, and point-mass legs centered mid-leg.
pub fn compass_gait_defaults() -> ModelParams {
    let mut p = ModelParams::new();
    p.set("leg_length", 1.0)
        .set("leg_mass", 5.0)
        .set("hip_mass", 10.0)
        .set("leg_com", 0.5)
        .set("leg_inertia", 0.05)
        .set("gravity", 9.81);
    p
}

/// Compass-gait biped: two straight legs joined by an actuated hip,
/// coordinates `(q₁, q₂)` = absolute stance / swing leg angles from vertical.
pub fn build_compass_gait(params: &ModelParams) -> Result<RobotModel, ModelError> {
    let defaults = compass_gait_defaults();
    let leg_length = params.require_positive("leg_length", defaults.get("leg_length").unwrap())?;
    let leg_mass = params.require_positive("leg_mass", defaults.get("leg_mass").unwrap())?;
    let hip_mass = params.require_positive("hip_mass", defaults.get("hip_mass").unwrap())?;
    let leg_com = params.require_positive("leg_com", defaults.get("leg_com").unwrap())?;
    let leg_inertia =
        params.require_nonnegative("leg_inertia", defaults.get("leg_inertia").unwrap())?;
    let gravity = params.require_positive("gravity", defaults.get("gravity").unwrap())?;
    if leg_com >= leg_length {
        return Err(ModelError::NonPositiveParam {
            name: String::from("leg_length - leg_com"),
            value: leg_length - leg_com,
        });
    }

    let mut full = ModelParams::new();
    full.set("leg_length", leg_length)
        .set("leg_mass", leg_mass)
        .set("hip_mass", hip_mass)
        .set("leg_com", leg_com)
        .set("leg_inertia", leg_inertia)
        .set("gravity", gravity);

    let bodies = vec![
        // Stance leg: com at leg_com from the pivot.
        ChainBody {
            mass: leg_mass,
            inertia: leg_inertia,
            frame: 0,
            com_coeffs: DVector::from_vec(vec![leg_com, 0.0]),
        },
        // Hip point mass.
        ChainBody {
            mass: hip_mass,
            inertia: 0.0,
            frame: 0,
            com_coeffs: DVector::from_vec(vec![leg_length, 0.0]),
        },
        // Swing leg: com at (leg_length − leg_com) below the hip.
        ChainBody {
            mass: leg_mass,
            inertia: leg_inertia,
            frame: 1,
            com_coeffs: DVector::from_vec(vec![leg_length, -(leg_length - leg_com)]),
        },
    ];

    let swing_coeffs = DVector::from_vec(vec![leg_length, -leg_length]);
    let stance_foot = DVector::from_vec(vec![0.0, 0.0]);
    let hip = DVector::from_vec(vec![leg_length, 0.0]);

    Ok(assemble_model(AssembleSpec {
        kind: ModelKind::CompassGait,
        n: 2,
        bodies,
        gravity,
        actuation: DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
        actuation_perp: RowDVector::from_row_slice(&[1.0, 1.0]),
        relabel: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        swing_coeffs: swing_coeffs.clone(),
        tracked_points: vec![(String::from("swing_foot"), swing_coeffs.clone())],
        segments: vec![(stance_foot, hip.clone()), (hip, swing_coeffs)],
        theta_index: 0,
        nominal_constraint_dir: DVector::from_vec(vec![1.0, -1.0]),
        // Holding the swing leg back early and sweeping it past late lifts
        // the foot arc through midstance.
        clearance_dirs: (
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        ),
        // Kicking the swing leg forward moves the center of mass ahead of the
        // pivot and pumps energy in; negative values hold it back.
        lean_dirs: (
            DVector::from_vec(vec![0.0, -1.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        ),
        params: full,
    }))
}

/// Default parameter set for [`build_five_link`], loosely modeled on the
/// Rabbit testbed: 0.4 m segments, a heavy torso, knees and hips actuated.
pub fn five_link_defaults() -> ModelParams {
    let mut p = ModelParams::new();
    p.set("shank_length", 0.4)
        .set("shank_mass", 3.2)
        .set("shank_com", 0.25)
        .set("shank_inertia", 0.05)
        .set("thigh_length", 0.4)
        .set("thigh_mass", 6.8)
        .set("thigh_com", 0.15)
        .set("thigh_inertia", 0.1)
        .set("torso_length", 0.625)
        .set("torso_mass", 17.0)
        .set("torso_com", 0.2)
        .set("torso_inertia", 1.3)
        .set("gravity", 9.81);
    p
}

/// Five-link biped (two shanks, two thighs, torso) pinned at the stance
/// foot; the four hip/knee joints carry independent torques. Coordinates are
/// absolute angles: `(q₁..q₅)` = stance shank, stance thigh, torso, swing
/// thigh, swing shank.
pub fn build_five_link(params: &ModelParams) -> Result<RobotModel, ModelError> {
    let d = five_link_defaults();
    let req = |name: &str| params.require_positive(name, d.get(name).unwrap());
    let shank_length = req("shank_length")?;
    let shank_mass = req("shank_mass")?;
    let shank_com = req("shank_com")?;
    let shank_inertia = params.require_nonnegative("shank_inertia", d.get("shank_inertia").unwrap())?;
    let thigh_length = req("thigh_length")?;
    let thigh_mass = req("thigh_mass")?;
    let thigh_com = req("thigh_com")?;
    let thigh_inertia = params.require_nonnegative("thigh_inertia", d.get("thigh_inertia").unwrap())?;
    let torso_length = req("torso_length")?;
    let torso_mass = req("torso_mass")?;
    let torso_com = req("torso_com")?;
    let torso_inertia = params.require_nonnegative("torso_inertia", d.get("torso_inertia").unwrap())?;
    let gravity = req("gravity")?;
    if shank_com >= shank_length || thigh_com >= thigh_length || torso_com >= torso_length {
        return Err(ModelError::NonPositiveParam {
            name: String::from("segment com must lie inside the segment"),
            value: -1.0,
        });
    }

    let mut full = ModelParams::new();
    full.set("shank_length", shank_length)
        .set("shank_mass", shank_mass)
        .set("shank_com", shank_com)
        .set("shank_inertia", shank_inertia)
        .set("thigh_length", thigh_length)
        .set("thigh_mass", thigh_mass)
        .set("thigh_com", thigh_com)
        .set("thigh_inertia", thigh_inertia)
        .set("torso_length", torso_length)
        .set("torso_mass", torso_mass)
        .set("torso_com", torso_com)
        .set("torso_inertia", torso_inertia)
        .set("gravity", gravity);

    let ls = shank_length;
    let lt = thigh_length;
    let bodies = vec![
        // Stance shank: com measured from the foot.
        ChainBody {
            mass: shank_mass,
            inertia: shank_inertia,
            frame: 0,
            com_coeffs: DVector::from_vec(vec![shank_com, 0.0, 0.0, 0.0, 0.0]),
        },
        // Stance thigh: com measured from the knee.
        ChainBody {
            mass: thigh_mass,
            inertia: thigh_inertia,
            frame: 1,
            com_coeffs: DVector::from_vec(vec![ls, thigh_com, 0.0, 0.0, 0.0]),
        },
        // Torso: com above the hip.
        ChainBody {
            mass: torso_mass,
            inertia: torso_inertia,
            frame: 2,
            com_coeffs: DVector::from_vec(vec![ls, lt, torso_com, 0.0, 0.0]),
        },
        // Swing thigh: com at (thigh_length − thigh_com) below the hip.
        ChainBody {
            mass: thigh_mass,
            inertia: thigh_inertia,
            frame: 3,
            com_coeffs: DVector::from_vec(vec![ls, lt, 0.0, -(lt - thigh_com), 0.0]),
        },
        // Swing shank: com at (shank_length − shank_com) below the swing knee.
        ChainBody {
            mass: shank_mass,
            inertia: shank_inertia,
            frame: 4,
            com_coeffs: DVector::from_vec(vec![ls, lt, 0.0, -lt, -(ls - shank_com)]),
        },
    ];

    // Actuated relative joints: stance knee (q₂−q₁), stance hip (q₃−q₂),
    // swing hip (q₄−q₃), swing knee (q₅−q₄).
    #[rustfmt::skip]
    let actuation = DMatrix::from_row_slice(5, 4, &[
        -1.0,  0.0,  0.0,  0.0,
         1.0, -1.0,  0.0,  0.0,
         0.0,  1.0, -1.0,  0.0,
         0.0,  0.0,  1.0, -1.0,
         0.0,  0.0,  0.0,  1.0,
    ]);
    #[rustfmt::skip]
    let relabel = DMatrix::from_row_slice(5, 5, &[
        0.0, 0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 1.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0,
        1.0, 0.0, 0.0, 0.0, 0.0,
    ]);

    let swing_coeffs = DVector::from_vec(vec![ls, lt, 0.0, -lt, -ls]);
    let swing_knee = DVector::from_vec(vec![ls, lt, 0.0, -lt, 0.0]);
    let stance_foot = DVector::from_vec(vec![0.0; 5]);
    let stance_knee = DVector::from_vec(vec![ls, 0.0, 0.0, 0.0, 0.0]);
    let hip = DVector::from_vec(vec![ls, lt, 0.0, 0.0, 0.0]);
    let head = DVector::from_vec(vec![ls, lt, torso_length, 0.0, 0.0]);

    Ok(assemble_model(AssembleSpec {
        kind: ModelKind::FiveLink,
        n: 5,
        bodies,
        gravity,
        actuation,
        actuation_perp: RowDVector::from_row_slice(&[1.0, 1.0, 1.0, 1.0, 1.0]),
        relabel,
        swing_coeffs: swing_coeffs.clone(),
        tracked_points: vec![
            (String::from("swing_foot"), swing_coeffs.clone()),
            (String::from("swing_knee"), swing_knee.clone()),
        ],
        segments: vec![
            (stance_foot, stance_knee.clone()),
            (stance_knee, hip.clone()),
            (hip.clone(), head),
            (hip, swing_knee.clone()),
            (swing_knee, swing_coeffs),
        ],
        theta_index: 0,
        nominal_constraint_dir: DVector::from_vec(vec![1.0, 1.0, 0.0, -1.0, -1.0]),
        // Bend the swing knee through midstance; the late-path offset swings
        // the shank back under the thigh.
        clearance_dirs: (
            DVector::from_vec(vec![0.0, 0.0, 0.0, 0.3, 1.0]),
            DVector::from_vec(vec![0.0, 0.0, 0.0, -0.3, -1.0]),
        ),
        // Torso lean: positive pitches forward over the stance foot.
        lean_dirs: (
            DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]),
        ),
        params: full,
    }))
}

struct AssembleSpec {
    kind: ModelKind,
    n: usize,
    bodies: Vec<ChainBody>,
    gravity: f64,
    actuation: DMatrix<f64>,
    actuation_perp: RowDVector<f64>,
    relabel: DMatrix<f64>,
    swing_coeffs: DVector<f64>,
    tracked_points: Vec<(String, DVector<f64>)>,
    segments: Vec<(DVector<f64>, DVector<f64>)>,
    theta_index: usize,
    nominal_constraint_dir: DVector<f64>,
    clearance_dirs: (DVector<f64>, DVector<f64>),
    lean_dirs: (DVector<f64>, DVector<f64>),
    params: ModelParams,
}

fn assemble_model(spec: AssembleSpec) -> RobotModel {
    let n = spec.n;
    let mut coupling = DMatrix::zeros(n, n);
    let mut inertia_diag = DVector::zeros(n);
    let mut weights = DVector::zeros(n);
    let mut total_mass = 0.0;
    for body in &spec.bodies {
        total_mass += body.mass;
        inertia_diag[body.frame] += body.inertia;
        for a in 0..n {
            weights[a] += body.mass * body.com_coeffs[a];
            for b in 0..n {
                coupling[(a, b)] += body.mass * body.com_coeffs[a] * body.com_coeffs[b];
            }
        }
    }
    RobotModel {
        kind: spec.kind,
        n,
        coupling,
        inertia_diag,
        weights,
        total_mass,
        gravity_accel: spec.gravity,
        actuation: spec.actuation,
        actuation_perp: spec.actuation_perp,
        relabel: spec.relabel,
        swing_coeffs: spec.swing_coeffs,
        tracked_points: spec.tracked_points,
        segments: spec.segments,
        theta_index: spec.theta_index,
        nominal_constraint_dir: spec.nominal_constraint_dir,
        clearance_dirs: spec.clearance_dirs,
        lean_dirs: spec.lean_dirs,
        params: spec.params,
    }
}

/// Build a model by kind name with the given parameter overrides.
pub fn build_model(kind: ModelKind, params: &ModelParams) -> Result<RobotModel, ModelError> {
    match kind {
        ModelKind::CompassGait => build_compass_gait(params),
        ModelKind::FiveLink => build_five_link(params),
    }
}

/// Inverse kinematics: configurations placing the swing foot at `(x_f, y_f)`.
///
/// For the compass gait the configuration is fully determined by the step
/// geometry; for the five-link the torso angle and the two relative knee
/// bends must be supplied in `other` as `[torso, knee_stance, knee_swing]`.
/// Returns `None` when the target is out of reach or degenerate.
pub fn impact_configuration(
    model: &RobotModel,
    x_f: f64,
    y_f: f64,
    other: &[f64],
) -> Option<DVector<f64>> {
    match model.kind {
        ModelKind::CompassGait => {
            let l = model.params.get("leg_length")?;
            // d(q₁) − d(q₂) = (x_f, y_f)/L: two unit vectors with a fixed
            // difference u; their midpoint offset w is orthogonal to u.
            let ux = x_f / l;
            let uy = y_f / l;
            let norm_sq = ux * ux + uy * uy;
            if norm_sq < 1e-12 || norm_sq > 4.0 - 1e-9 {
                return None;
            }
            let norm = norm_sq.sqrt();
            let scale = (1.0 - norm_sq / 4.0).sqrt();
            // Perpendicular chosen so the hip sits above the feet.
            let (mut wx, mut wy) = (-uy / norm * scale, ux / norm * scale);
            if wy < 0.0 {
                wx = -wx;
                wy = -wy;
            }
            let d1 = (ux / 2.0 + wx, uy / 2.0 + wy);
            let d2 = (-ux / 2.0 + wx, -uy / 2.0 + wy);
            let q1 = d1.0.atan2(d1.1);
            let q2 = d2.0.atan2(d2.1);
            Some(DVector::from_vec(vec![q1, q2]))
        }
        ModelKind::FiveLink => {
            let [torso, knee_st, knee_sw] = *other else {
                return None;
            };
            let ls = model.params.get("shank_length")?;
            let lt = model.params.get("thigh_length")?;
            // Unknowns: stance shank and swing thigh absolute angles; knees
            // are fixed relative bends, the torso angle is given.
            let virt = ls + lt;
            let guess = {
                let mut p = ModelParams::new();
                p.set("leg_length", virt);
                let compass = build_compass_gait(&p).ok()?;
                impact_configuration(&compass, x_f, y_f, &[])?
            };
            let mut q1 = guess[0] - knee_st / 2.0;
            let mut q4 = guess[1] - knee_sw / 2.0;
            for _ in 0..60 {
                let q2 = q1 + knee_st;
                let q5 = q4 + knee_sw;
                let fx = ls * q1.sin() + lt * q2.sin() - lt * q4.sin() - ls * q5.sin() - x_f;
                let fy = ls * q1.cos() + lt * q2.cos() - lt * q4.cos() - ls * q5.cos() - y_f;
                if fx.abs() < 1e-14 && fy.abs() < 1e-14 {
                    break;
                }
                let j11 = ls * q1.cos() + lt * q2.cos();
                let j12 = -lt * q4.cos() - ls * q5.cos();
                let j21 = -ls * q1.sin() - lt * q2.sin();
                let j22 = lt * q4.sin() + ls * q5.sin();
                let det = j11 * j22 - j12 * j21;
                if det.abs() < 1e-12 {
                    return None;
                }
                q1 -= (fx * j22 - fy * j12) / det;
                q4 -= (fy * j11 - fx * j21) / det;
            }
            let q = DVector::from_vec(vec![q1, q1 + knee_st, torso, q4, q4 + knee_sw]);
            let reached = model.swing_foot_position(&q);
            if (reached.x - x_f).abs() < 1e-10 && (reached.y - y_f).abs() < 1e-10 {
                Some(q)
            } else {
                None
            }
        }
    }
}
