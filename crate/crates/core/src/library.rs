//! Offline construction of the motion-primitive library.
//!
//! A primitive is one footstep: a virtual constraint connecting two impact
//! configurations, together with the precomputed affine velocity/energy data
//! the planner needs (`Γ`, `Ψ` at the critical phase, at the final phase,
//! and post-impact), the impact constants `κ`, `δ`, and a swept lower
//! envelope for terrain collision checks.
//!
//! Primitives sharing a start configuration and step geometry are stored in
//! a balanced binary search tree ordered by the minimum entry velocity
//! needed to carry `θ̇²(θ_c)` above the build target `a²`. Searching the
//! tree for the best primitive at a given entry velocity is `O(log P)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::mechanics::{impact_configuration, ModelError, ModelKind, ModelParams, RobotModel};
use crate::vhc::{
    check_controllability, solve_reduced, PhaseMode, ReducedDynamics, ReducedImpact,
    SolveSettings, VhcError, VirtualConstraint,
};

#[derive(Debug, Clone, PartialEq)]
pub enum LibraryError {
    /// No impact configuration could be generated at all.
    NoConfigs,
    /// Degenerate inputs (empty X_f/Y_f/Q_o or variation family).
    EmptyInput(&'static str),
    Model(ModelError),
    Vhc(VhcError),
}

impl fmt::Display for LibraryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LibraryError::NoConfigs => write!(f, "no reachable impact configurations"),
            LibraryError::EmptyInput(what) => write!(f, "empty input: {what}"),
            LibraryError::Model(e) => write!(f, "{e}"),
            LibraryError::Vhc(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for LibraryError {}

impl From<ModelError> for LibraryError {
    fn from(e: ModelError) -> Self {
        LibraryError::Model(e)
    }
}

impl From<VhcError> for LibraryError {
    fn from(e: VhcError) -> Self {
        LibraryError::Vhc(e)
    }
}

/// A configuration on the switching surface: the swing foot touches ground
/// at `(x_f, y_f)` relative to the stance pivot.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactConfig {
    pub id: u32,
    /// Pre-impact configuration.
    pub q: DVector<f64>,
    /// Post-impact (relabeled) configuration: the start of the next step.
    pub q_start: DVector<f64>,
    pub x_f: f64,
    pub y_f: f64,
    pub xf_index: u32,
    pub yf_index: u32,
    /// Index into the other-joint set `Q_o` (always 0 for the compass gait).
    pub other_joint_id: u32,
    /// Phase at which departing steps start (`q_start[θ]`).
    pub theta0: f64,
    /// Phase at which arriving steps end (`q[θ]`).
    pub thetaf: f64,
    /// Canonical start derivative `Φ′(θ₀)` shared by departing primitives:
    /// the model's nominal end derivative pushed through the impact at this
    /// configuration, normalized to unit phase rate.
    pub start_deriv: DVector<f64>,
    /// Reduced impact velocity ratio `θ̇⁺/θ̇⁻` for steps arriving here.
    pub delta: f64,
    /// Energy coefficients at the start state: `Υ₀ = ½Φ′ᵀMΦ′`, `Ξ₀ = V`.
    pub upsilon0: f64,
    pub xi0: f64,
}

/// The planner-facing affine data of one primitive, stored exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineKeys {
    pub theta_c: f64,
    pub gamma_c: f64,
    pub psi_c: f64,
    pub gamma_f: f64,
    pub psi_f: f64,
    /// Post-impact composition `δ²·(Γ_f, Ψ_f)`.
    pub gamma_p: f64,
    pub psi_p: f64,
}

/// Swept lower envelope of the robot over one step: every physical point
/// `(x, y)` of the body satisfies `y ≥ q̄(x)` for `x` in `[x0, x1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub x0: f64,
    pub x1: f64,
    pub heights: Vec<f64>,
}

impl Envelope {
    pub fn samples(&self) -> usize {
        self.heights.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.x1 - self.x0) / ((self.heights.len() - 1) as f64)
    }

    /// Linear interpolation; clamped outside the domain.
    pub fn sample(&self, x: f64) -> f64 {
        let n = self.heights.len();
        let t = (x - self.x0) / (self.x1 - self.x0) * ((n - 1) as f64);
        let t = t.clamp(0.0, (n - 1) as f64);
        let i = (t as usize).min(n - 2);
        let frac = t - i as f64;
        self.heights[i] * (1.0 - frac) + self.heights[i + 1] * frac
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bin abscissa of sample `i`.
    pub fn x_at(&self, i: usize) -> f64 {
        self.x0 + self.bin_width() * i as f64
    }
}

/// One footstep primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub id: u32,
    pub start_config: u32,
    pub end_config: u32,
    /// Step geometry (the end configuration's).
    pub x_f: f64,
    pub y_f: f64,
    pub vc: VirtualConstraint,
    pub keys: AffineKeys,
    /// Post-impact phase (the successor family's `θ₀`).
    pub kappa: f64,
    /// Reduced impact velocity ratio.
    pub delta: f64,
    /// Hybrid-invariance residual of the impact chain.
    pub invariance_residual: f64,
    pub envelope: Envelope,
    /// `Φ′(θ₀)` used for velocity projection of off-manifold states.
    pub theta0_deriv: DVector<f64>,
    /// Controllability record: minimum `|α|` along the path.
    pub min_alpha: f64,
}

/// Minimum `θ̇₀²` for which this primitive reaches `θ̇²(θ_c) ≥ a²`.
pub fn order_key(p: &Primitive, a_squared: f64) -> f64 {
    (a_squared - p.keys.psi_c) / p.keys.gamma_c
}

#[derive(Debug, Clone, PartialEq)]
struct BstEntry {
    key: f64,
    prim: u32,
    gamma_c: f64,
    psi_c: f64,
}

/// Balanced search tree over the primitives of one `(start, x_f, y_f)`
/// group, ordered by [`order_key`].
///
/// Binary search returns the feasible primitive with the smallest
/// `θ̇²(θ_c)` exactly when larger keys imply smaller `Γ(θ_c)` along the
/// sorted order; entries violating that monotonicity at build time are split
/// into a short `overflow` list that searches linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveBst {
    pub a_squared: f64,
    entries: Vec<BstEntry>,
    left: Vec<Option<u32>>,
    right: Vec<Option<u32>>,
    root: Option<u32>,
    overflow: Vec<BstEntry>,
}

/// Result of one tree search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub prim: u32,
    pub v_c: f64,
    /// Tree nodes visited (≤ depth).
    pub visits: usize,
}

impl PrimitiveBst {
    /// Build from the primitives with the given ids; ties on the ordering
    /// key break by primitive id ascending.
    pub fn build(all: &[Primitive], members: &[u32], a_squared: f64) -> Self {
        let mut sorted: Vec<BstEntry> = members
            .iter()
            .map(|&id| {
                let p = &all[id as usize];
                BstEntry {
                    key: order_key(p, a_squared),
                    prim: id,
                    gamma_c: p.keys.gamma_c,
                    psi_c: p.keys.psi_c,
                }
            })
            .collect();
        sorted.sort_by(|a, b| {
            a.key
                .partial_cmp(&b.key)
                .unwrap()
                .then(a.prim.cmp(&b.prim))
        });

        // Keep the maximal prefix-monotone subsequence: keys ascending must
        // come with Γ_c nonincreasing for binary search to be exact.
        let mut entries = Vec::with_capacity(sorted.len());
        let mut overflow = Vec::new();
        let mut min_gamma = f64::INFINITY;
        for e in sorted {
            if e.gamma_c <= min_gamma * (1.0 + 1e-12) {
                min_gamma = min_gamma.min(e.gamma_c);
                entries.push(e);
            } else {
                overflow.push(e);
            }
        }

        let n = entries.len();
        let mut left = vec![None; n];
        let mut right = vec![None; n];
        let root = Self::build_balanced(0, n, &mut left, &mut right);
        Self {
            a_squared,
            entries,
            left,
            right,
            root,
            overflow,
        }
    }

    fn build_balanced(
        lo: usize,
        hi: usize,
        left: &mut [Option<u32>],
        right: &mut [Option<u32>],
    ) -> Option<u32> {
        if lo >= hi {
            return None;
        }
        let mid = (lo + hi) / 2;
        left[mid] = Self::build_balanced(lo, mid, left, right);
        right[mid] = Self::build_balanced(mid + 1, hi, left, right);
        Some(mid as u32)
    }

    pub fn len(&self) -> usize {
        self.entries.len() + self.overflow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tree_len(&self) -> usize {
        self.entries.len()
    }

    pub fn overflow_len(&self) -> usize {
        self.overflow.len()
    }

    /// Tree depth (0 for an empty tree).
    pub fn depth(&self) -> usize {
        fn walk(node: Option<u32>, left: &[Option<u32>], right: &[Option<u32>]) -> usize {
            match node {
                None => 0,
                Some(i) => {
                    1 + walk(left[i as usize], left, right).max(walk(right[i as usize], left, right))
                }
            }
        }
        walk(self.root, &self.left, &self.right)
    }

    /// All member primitive ids in key order (kept entries then overflow).
    pub fn member_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .map(|e| e.prim)
            .chain(self.overflow.iter().map(|e| e.prim))
    }

    /// In-order traversal of the kept entries (ids sorted by key).
    pub fn in_order(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.prim).collect()
    }

    fn v_c(entry: &BstEntry, v0: f64) -> f64 {
        entry.gamma_c * v0 + entry.psi_c
    }

    /// True when candidate `a` is preferred over `b` at entry velocity `v0`:
    /// smaller `v_c`, ties toward larger key, then larger id.
    fn better(a: &BstEntry, b: &BstEntry, v0: f64) -> bool {
        let va = Self::v_c(a, v0);
        let vb = Self::v_c(b, v0);
        if va != vb {
            return va < vb;
        }
        if a.key != b.key {
            return a.key > b.key;
        }
        a.prim > b.prim
    }

    /// The primitive with the smallest `θ̇²(θ_c)` subject to
    /// `θ̇²(θ_c) ≥ a²`, i.e. the largest order key ≤ `v0`; `None` when every
    /// key exceeds `v0`. Visits at most `depth` tree nodes plus the overflow
    /// list.
    pub fn search(&self, v0: f64) -> Option<SearchHit> {
        let mut visits = 0;
        let mut node = self.root;
        let mut best: Option<usize> = None;
        while let Some(i) = node {
            visits += 1;
            let i = i as usize;
            if self.entries[i].key <= v0 {
                best = Some(i);
                node = self.right[i];
            } else {
                node = self.left[i];
            }
        }
        let mut best = best.map(|i| &self.entries[i]);
        for e in &self.overflow {
            if e.key <= v0 && best.map_or(true, |b| Self::better(e, b, v0)) {
                best = Some(e);
            }
        }
        best.map(|e| SearchHit {
            prim: e.prim,
            v_c: Self::v_c(e, v0),
            visits,
        })
    }

    /// Candidates with key ≤ `v0` in worsening order (the successor chain of
    /// the search hit): nondecreasing `v_c`, resolved as in [`Self::search`].
    pub fn candidates(&self, v0: f64) -> Vec<SearchHit> {
        let mut list: Vec<&BstEntry> = self
            .entries
            .iter()
            .chain(self.overflow.iter())
            .filter(|e| e.key <= v0)
            .collect();
        list.sort_by(|a, b| {
            if Self::better(a, b, v0) {
                core::cmp::Ordering::Less
            } else if Self::better(b, a, v0) {
                core::cmp::Ordering::Greater
            } else {
                core::cmp::Ordering::Equal
            }
        });
        list.into_iter()
            .map(|e| SearchHit {
                prim: e.prim,
                v_c: Self::v_c(e, v0),
                visits: 0,
            })
            .collect()
    }
}

/// Search entry point mirroring the paper's TREE-SEARCH: smallest
/// `θ̇²(θ_c)` subject to the target bound, `None` when unreachable.
pub fn tree_search(bst: &PrimitiveBst, v0: f64) -> Option<SearchHit> {
    bst.search(v0)
}

/// Library build settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryConfig {
    pub x_f_values: Vec<f64>,
    pub y_f_values: Vec<f64>,
    /// Other-joint configurations `Q_o`; one empty entry for models whose
    /// impact configuration is fully determined by the step geometry.
    pub q_other: Vec<Vec<f64>>,
    /// Swing-clearance magnitudes of the path family.
    pub clearances: Vec<f64>,
    /// Fore/aft energy-shaping magnitudes of the path family.
    pub leans: Vec<f64>,
    pub bezier_degree: usize,
    pub grid_intervals: usize,
    pub alpha_tol: f64,
    /// Build-time ordering target `a²` baked into every tree.
    pub a_squared: f64,
    /// Minimum phase advance `θ_f − θ₀` for a usable step.
    pub min_phase_span: f64,
    pub envelope_samples: usize,
    pub envelope_theta_samples: usize,
}

impl LibraryConfig {
    pub fn paths_per_pair(&self) -> usize {
        self.clearances.len() * self.leans.len()
    }

    /// Default compass-gait library: 3 step lengths × 5 step heights, 24
    /// paths per start/step group.
    pub fn compass_defaults() -> Self {
        Self {
            x_f_values: vec![0.35, 0.45, 0.55],
            y_f_values: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
            q_other: vec![vec![]],
            clearances: vec![0.06, 0.12, 0.18, 0.24],
            leans: vec![-0.25, -0.15, -0.05, 0.05, 0.15, 0.25],
            bezier_degree: 5,
            grid_intervals: crate::vhc::DEFAULT_GRID_INTERVALS,
            alpha_tol: crate::vhc::DEFAULT_ALPHA_TOL,
            a_squared: 0.16,
            min_phase_span: 0.05,
            envelope_samples: 200,
            envelope_theta_samples: 1200,
        }
    }

    /// Default five-link library: two torso postures, 12 paths each.
    pub fn five_link_defaults() -> Self {
        Self {
            x_f_values: vec![0.35, 0.45, 0.55],
            y_f_values: vec![-0.15, 0.0, 0.15],
            q_other: vec![vec![0.1, -0.3, -0.3], vec![0.25, -0.3, -0.3]],
            clearances: vec![0.1, 0.2, 0.3],
            leans: vec![-0.2, -0.05, 0.1, 0.25],
            bezier_degree: 5,
            grid_intervals: crate::vhc::DEFAULT_GRID_INTERVALS,
            alpha_tol: crate::vhc::DEFAULT_ALPHA_TOL,
            a_squared: 0.16,
            min_phase_span: 0.05,
            envelope_samples: 200,
            envelope_theta_samples: 1200,
        }
    }

    pub fn defaults_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::CompassGait => Self::compass_defaults(),
            ModelKind::FiveLink => Self::five_link_defaults(),
        }
    }
}

/// Build metadata embedded in the library.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryMeta {
    pub model_kind: ModelKind,
    pub param_fingerprint: u64,
    pub a_squared: f64,
    pub grid_intervals: u32,
    pub bezier_degree: u32,
    pub alpha_tol: f64,
    pub envelope_samples: u32,
    pub warnings: Vec<String>,
}

/// The complete primitive library: impact configurations, primitives, and
/// per-`(start, x_f, y_f)` search trees. Immutable once built; safe to share
/// across planner threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveLibrary {
    pub meta: LibraryMeta,
    /// Model parameters the library was built against.
    pub params: ModelParams,
    pub x_f_values: Vec<f64>,
    pub y_f_values: Vec<f64>,
    pub q_other: Vec<Vec<f64>>,
    pub configs: Vec<ImpactConfig>,
    pub primitives: Vec<Primitive>,
    pub trees: BTreeMap<(u32, u32, u32), PrimitiveBst>,
}

impl PrimitiveLibrary {
    pub fn primitive(&self, id: u32) -> Option<&Primitive> {
        self.primitives.get(id as usize)
    }

    pub fn config(&self, id: u32) -> Option<&ImpactConfig> {
        self.configs.get(id as usize)
    }

    pub fn bst(&self, start: u32, xf_index: u32, yf_index: u32) -> Option<&PrimitiveBst> {
        self.trees.get(&(start, xf_index, yf_index))
    }

    /// Locate the impact configuration whose post-impact state matches `q`.
    pub fn find_start_config(&self, q: &DVector<f64>, tol: f64) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for c in &self.configs {
            let d = (&c.q_start - q).amax();
            if d <= tol && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((c.id, d));
            }
        }
        best.map(|(id, _)| id)
    }

    /// Rebuild the model this library was generated from.
    pub fn rebuild_model(&self) -> Result<RobotModel, ModelError> {
        crate::mechanics::build_model(self.meta.model_kind, &self.params)
    }

    pub fn mean_step_length(&self) -> f64 {
        self.x_f_values.iter().sum::<f64>() / self.x_f_values.len() as f64
    }
}

/// Generate the discretized impact-configuration set `Q̃` (cardinality
/// `n_x·n_y·n_q` minus unreachable geometries, which are skipped with a
/// warning).
pub fn generate_impact_configs(
    model: &RobotModel,
    x_f_values: &[f64],
    y_f_values: &[f64],
    q_other: &[Vec<f64>],
) -> (Vec<ImpactConfig>, Vec<String>) {
    let mut configs = Vec::new();
    let mut warnings = Vec::new();
    let ti = model.theta_index();
    let end_dir = model.nominal_constraint_dir();
    for (ix, &x_f) in x_f_values.iter().enumerate() {
        for (iy, &y_f) in y_f_values.iter().enumerate() {
            for (iq, other) in q_other.iter().enumerate() {
                let Some(q) = impact_configuration(model, x_f, y_f, other) else {
                    warnings.push(format!(
                        "impact config (x_f={x_f}, y_f={y_f}, q_o={iq}) unreachable; skipped"
                    ));
                    continue;
                };
                // Push the nominal end derivative through the impact: the
                // result (normalized to unit phase rate) is the start
                // derivative of every step departing this configuration, and
                // its phase component is the velocity ratio δ for arrivals.
                let Ok(delta_mat) = model.impact_velocity_matrix(&q) else {
                    warnings.push(format!(
                        "impact config (x_f={x_f}, y_f={y_f}, q_o={iq}) has a degenerate impact; skipped"
                    ));
                    continue;
                };
                let mapped = model.relabel_matrix() * (delta_mat * end_dir);
                let delta = mapped[ti];
                if delta <= 1e-9 {
                    warnings.push(format!(
                        "impact config (x_f={x_f}, y_f={y_f}, q_o={iq}) reverses phase across the impact; skipped"
                    ));
                    continue;
                }
                let start_deriv = mapped.scale(1.0 / delta);
                let q_start = model.apply_relabel(&q);
                let m = model.mass_matrix(&q_start);
                let upsilon0 = 0.5 * start_deriv.dot(&(m * &start_deriv));
                let xi0 = model.potential(&q_start);
                configs.push(ImpactConfig {
                    id: configs.len() as u32,
                    theta0: q_start[ti],
                    thetaf: q[ti],
                    q,
                    q_start,
                    x_f,
                    y_f,
                    xf_index: ix as u32,
                    yf_index: iy as u32,
                    other_joint_id: iq as u32,
                    start_deriv,
                    delta,
                    upsilon0,
                    xi0,
                });
            }
        }
    }
    (configs, warnings)
}

/// Generate the candidate constraint family for one start/end pair: a
/// clearance × lean grid of Bézier paths with pinned endpoint configurations
/// and derivatives. Paths that fail the kinematic screen are dropped;
/// dynamic screens happen later in [`build_library`].
#[allow(clippy::too_many_arguments)]
pub fn generate_primitives(
    model: &RobotModel,
    start: &ImpactConfig,
    end: &ImpactConfig,
    clearances: &[f64],
    leans: &[f64],
    degree: usize,
    min_phase_span: f64,
) -> Vec<VirtualConstraint> {
    let mut out = Vec::new();
    let theta0 = start.theta0;
    let thetaf = end.thetaf;
    if thetaf - theta0 < min_phase_span {
        return out;
    }
    let dqf = model.nominal_constraint_dir().clone();
    let ti = model.theta_index();
    let (c_early, c_late) = model.clearance_dirs();
    let (l_early, l_late) = model.lean_dirs();
    let interior = degree - 3;
    for &c in clearances {
        for &l in leans {
            let early = c_early.scale(c) + l_early.scale(l);
            let late = c_late.scale(c) + l_late.scale(l);
            let offsets: Vec<DVector<f64>> = (0..interior)
                .map(|k| {
                    let t = if interior == 1 {
                        0.5
                    } else {
                        k as f64 / (interior - 1) as f64
                    };
                    early.scale(1.0 - t) + late.scale(t)
                })
                .collect();
            let Ok(vc) = VirtualConstraint::from_boundary(
                theta0,
                thetaf,
                &start.q_start,
                &end.q,
                &start.start_deriv,
                &dqf,
                degree,
                &offsets,
                PhaseMode::Coordinate(ti),
            ) else {
                continue;
            };
            if kinematic_screen(model, &vc) {
                out.push(vc);
            }
        }
    }
    out
}

/// Coarse joint-limit / self-collision screen along a path.
fn kinematic_screen(model: &RobotModel, vc: &VirtualConstraint) -> bool {
    const SAMPLES: usize = 33;
    for k in 0..SAMPLES {
        let theta = vc.theta0() + vc.span() * (k as f64) / ((SAMPLES - 1) as f64);
        let (phi, _, _) = vc.eval_unchecked(theta);
        if !model.configuration_reasonable(&phi) {
            return false;
        }
    }
    true
}

/// Sweep the body over a step and rasterize its lower envelope.
///
/// Every body segment at every sampled phase contributes the minimum of its
/// height over each bin's support interval, so linear interpolation of the
/// stored samples is a true lower bound on the swept geometry (up to phase
/// sampling density).
pub fn compute_envelope(
    model: &RobotModel,
    vc: &VirtualConstraint,
    samples: usize,
    theta_samples: usize,
) -> Envelope {
    let (phi0, _, _) = vc.eval_unchecked(vc.theta0());
    let (phif, _, _) = vc.eval_unchecked(vc.thetaf());
    let x0 = model.swing_foot_position(&phi0).x;
    let x1 = model.swing_foot_position(&phif).x;
    let mut heights = vec![f64::INFINITY; samples];
    let bin = (x1 - x0) / ((samples - 1) as f64);

    for k in 0..theta_samples {
        let theta = vc.theta0() + vc.span() * (k as f64) / ((theta_samples - 1) as f64);
        let (phi, _, _) = vc.eval_unchecked(theta);
        for (p0, p1) in model.body_segments(&phi) {
            let (xa, ya, xb, yb) = if p0.x <= p1.x {
                (p0.x, p0.y, p1.x, p1.y)
            } else {
                (p1.x, p1.y, p0.x, p0.y)
            };
            if xb < x0 || xa > x1 {
                continue;
            }
            let span = xb - xa;
            let height_at = |x: f64| -> f64 {
                if span < 1e-12 {
                    ya.min(yb)
                } else {
                    ya + (yb - ya) * (x - xa) / span
                }
            };
            let lo_bin = (((xa - bin) - x0) / bin).floor().max(0.0) as usize;
            let hi_bin = ((((xb + bin) - x0) / bin).ceil() as usize).min(samples - 1);
            for b in lo_bin..=hi_bin {
                let x = x0 + bin * b as f64;
                // Support interval of bin b under linear interpolation.
                let lo = (x - bin).max(xa);
                let hi = (x + bin).min(xb);
                if lo > hi {
                    continue;
                }
                let h = height_at(lo).min(height_at(hi));
                if h < heights[b] {
                    heights[b] = h;
                }
            }
        }
    }
    Envelope { x0, x1, heights }
}

/// Build the full library for a model.
pub fn build_library(
    model: &RobotModel,
    config: &LibraryConfig,
) -> Result<PrimitiveLibrary, LibraryError> {
    if config.x_f_values.is_empty() {
        return Err(LibraryError::EmptyInput("x_f_values"));
    }
    if config.y_f_values.is_empty() {
        return Err(LibraryError::EmptyInput("y_f_values"));
    }
    if config.q_other.is_empty() {
        return Err(LibraryError::EmptyInput("q_other"));
    }
    if config.paths_per_pair() == 0 {
        return Err(LibraryError::EmptyInput("path family"));
    }

    let (configs, mut warnings) = generate_impact_configs(
        model,
        &config.x_f_values,
        &config.y_f_values,
        &config.q_other,
    );
    if configs.is_empty() {
        return Err(LibraryError::NoConfigs);
    }

    let settings = SolveSettings {
        grid_intervals: config.grid_intervals,
        alpha_tol: config.alpha_tol,
    };

    let mut primitives: Vec<Primitive> = Vec::new();
    let mut groups: BTreeMap<(u32, u32, u32), Vec<u32>> = BTreeMap::new();
    let mut rejected = 0usize;

    for start in &configs {
        for end in &configs {
            let delta = end.delta;
            let family = generate_primitives(
                model,
                start,
                end,
                &config.clearances,
                &config.leans,
                config.bezier_degree,
                config.min_phase_span,
            );
            for vc in family {
                let sol = match solve_reduced(model, &vc, &settings) {
                    Ok(s) => s,
                    Err(_) => {
                        rejected += 1;
                        continue;
                    }
                };
                if sol.gamma.iter().any(|&g| g <= 0.0) || sol.gamma_c <= 0.0 {
                    rejected += 1;
                    continue;
                }
                let report = check_controllability(
                    &ReducedDynamics::new(model, &vc),
                    config.grid_intervals + 1,
                    config.alpha_tol,
                );
                let (gamma_f, psi_f) = sol.at_final();
                // Invariance residual of the constructed chain.
                let residual = {
                    let (phi_f, dphi_f, _) = vc.eval_unchecked(vc.thetaf());
                    match model.impact_velocity_matrix(&phi_f) {
                        Ok(dm) => {
                            let mapped = model.relabel_matrix() * (dm * &dphi_f);
                            let target = end.start_deriv.scale(delta);
                            (&mapped - &target).norm() / mapped.norm().max(1e-300)
                        }
                        Err(_) => {
                            rejected += 1;
                            continue;
                        }
                    }
                };
                let envelope = compute_envelope(
                    model,
                    &vc,
                    config.envelope_samples,
                    config.envelope_theta_samples,
                );
                let id = primitives.len() as u32;
                primitives.push(Primitive {
                    id,
                    start_config: start.id,
                    end_config: end.id,
                    x_f: end.x_f,
                    y_f: end.y_f,
                    keys: AffineKeys {
                        theta_c: sol.theta_c,
                        gamma_c: sol.gamma_c,
                        psi_c: sol.psi_c,
                        gamma_f,
                        psi_f,
                        gamma_p: delta * delta * gamma_f,
                        psi_p: delta * delta * psi_f,
                    },
                    kappa: end.theta0,
                    delta,
                    invariance_residual: residual,
                    envelope,
                    theta0_deriv: start.start_deriv.clone(),
                    min_alpha: report.min_abs_alpha,
                    vc,
                });
                groups
                    .entry((start.id, end.xf_index, end.yf_index))
                    .or_default()
                    .push(id);
            }
        }
    }
    if rejected > 0 {
        warnings.push(format!("{rejected} candidate paths rejected by dynamic screens"));
    }

    let mut trees = BTreeMap::new();
    let mut overflow_total = 0usize;
    for (group_key, members) in groups {
        let bst = PrimitiveBst::build(&primitives, &members, config.a_squared);
        overflow_total += bst.overflow_len();
        trees.insert(group_key, bst);
    }
    if overflow_total > 0 {
        warnings.push(format!(
            "{overflow_total} primitives outside the key/Γ monotone order; searched linearly"
        ));
    }

    Ok(PrimitiveLibrary {
        meta: LibraryMeta {
            model_kind: model.kind(),
            param_fingerprint: model.params().fingerprint(),
            a_squared: config.a_squared,
            grid_intervals: config.grid_intervals as u32,
            bezier_degree: config.bezier_degree as u32,
            alpha_tol: config.alpha_tol,
            envelope_samples: config.envelope_samples as u32,
            warnings,
        },
        params: model.params().clone(),
        x_f_values: config.x_f_values.clone(),
        y_f_values: config.y_f_values.clone(),
        q_other: config.q_other.clone(),
        configs,
        primitives,
        trees,
    })
}

/// Reduced impact data of a stored primitive.
pub fn primitive_impact(p: &Primitive) -> ReducedImpact {
    ReducedImpact {
        kappa: p.kappa,
        delta: p.delta,
        invariance_residual: p.invariance_residual,
    }
}
