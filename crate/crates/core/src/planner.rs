//! Real-time receding-horizon footstep selection.
//!
//! The planner searches a decision tree whose nodes are impact states and
//! whose edges are primitives. Each node quantizes the terrain height at the
//! candidate footfalls, pulls the best primitive per step length from the
//! library trees, checks dynamic feasibility (`θ̇²(θ_c) ≥ a²`, impact
//! velocity bound, envelope clear of terrain), commits to the most promising
//! candidate, and recurses one footstep deeper. A failed subtree advances to
//! the candidate's successor; a node whose every step length is exhausted
//! fails upward.
//!
//! Best-first search ranks candidates by smallest `θ̇²(θ_c)`; the energy
//! variant ranks them by how closely the post-impact total-energy change
//! matches the altitude trend of the terrain ahead, which prunes the
//! backtracking that pure greediness incurs before climbs.
//!
//! Candidate evaluations are cached per node: the feasibility of a primitive
//! at a node depends only on the node state, so re-testing it on every
//! backtracking pass (as the paper's listing spells out) would repeat
//! identical work; one evaluation per candidate is behaviorally equivalent.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::library::{Primitive, PrimitiveLibrary, SearchHit};
use crate::terrain::TerrainMap;

/// Planner settings; velocities in rad/s, distances in m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    /// Target phase velocity at the critical point.
    pub a: f64,
    /// Impact velocity bound: `|θ̇(θ_f)| < b`.
    pub b: f64,
    /// Terrain heights farther than this from a library step height
    /// quantize to nothing.
    pub quantize_tol: f64,
    /// Envelope clearance slack absorbing quantization error.
    pub collision_tol: f64,
    /// Envelope span ignored at each end where the feet deliberately touch
    /// the ground.
    pub collision_end_margin: f64,
    /// Energy-heuristic altitude lookahead window.
    pub lookahead_dist: f64,
    /// Maximum node expansions before the search gives up.
    pub node_budget: usize,
    /// Tolerance for matching the query state to a library configuration.
    pub state_match_tol: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            a: 0.4,
            b: 3.0,
            quantize_tol: 0.02,
            collision_tol: 0.025,
            collision_end_margin: 0.045,
            lookahead_dist: 1.5,
            node_budget: 100_000,
            state_match_tol: 1e-6,
        }
    }
}

/// One committed footstep of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub primitive_id: u32,
    /// Squared phase velocity entering the step.
    pub v0: f64,
    /// Squared phase velocity at the critical point / before impact / after.
    pub v_c: f64,
    pub v_f: f64,
    pub v_post: f64,
    /// Stance-foot world position and height during the step.
    pub world_x: f64,
    pub world_h: f64,
    /// Total mechanical energy (world frame) at step start / after impact.
    pub energy_pre: f64,
    pub energy_post: f64,
}

/// Search statistics; deterministic for identical inputs (wall time is
/// reported by the caller, not measured here).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    /// ADD-NODE invocations.
    pub nodes_evaluated: usize,
    /// Library tree searches performed.
    pub tree_search_calls: usize,
    /// Primitive ids in evaluation order (feasibility checks).
    pub eval_trace: Vec<u32>,
    /// Filled by timing wrappers; zero from the core search.
    pub wall_time_s: f64,
}

/// An ordered footstep sequence with its search statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub stats: SearchStats,
}

/// Why a search failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    /// Every successor chain was exhausted without a feasible sequence.
    TreeExhausted,
    /// The node budget ran out first.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanError {
    Fail { reason: FailReason, stats: SearchStats },
    /// The query configuration matches no library impact configuration.
    NoMatchingConfig,
    /// The planner target `a²` differs from the library's build-time
    /// ordering target; the trees would be ordered for the wrong objective.
    OrderingMismatch { planner: f64, library: f64 },
    /// Plan with zero footsteps requested.
    ZeroSteps,
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::Fail { reason, stats } => write!(
                f,
                "no plan found ({:?}) after {} node evaluations",
                reason, stats.nodes_evaluated
            ),
            PlanError::NoMatchingConfig => {
                write!(f, "query state matches no library impact configuration")
            }
            PlanError::OrderingMismatch { planner, library } => write!(
                f,
                "planner a^2 = {planner} but library trees were ordered for a^2 = {library}"
            ),
            PlanError::ZeroSteps => write!(f, "requested a zero-step plan"),
        }
    }
}

impl core::error::Error for PlanError {}

/// Map a terrain height to the nearest library step height within `tol`;
/// ties resolve toward the smaller magnitude (then the smaller value).
/// Returns the index into `y_values`.
pub fn quantize(h_val: f64, y_values: &[f64], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (i, &y) in y_values.iter().enumerate() {
        let dist = (h_val - y).abs();
        if dist > tol {
            continue;
        }
        let cand = (i, dist, y.abs(), y);
        let better = match best {
            None => true,
            Some((_, bd, bm, bv)) => {
                dist < bd || (dist == bd && (y.abs() < bm || (y.abs() == bm && y < bv)))
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.map(|(i, _, _, _)| i)
}

/// Envelope-versus-terrain feasibility of a primitive placed at world
/// position `world_x`, stance height `stance_h`.
///
/// The stored envelope (a piecewise-linear lower bound on the swept body)
/// must clear the terrain over the step span, excluding a short margin at
/// each end where the feet touch down by design; the footfall itself must
/// land on terrain within the quantization slack. A fast interval pre-screen
/// against the terrain maximum short-circuits the common case.
pub fn collision_check(
    p: &Primitive,
    terrain: &TerrainMap,
    world_x: f64,
    stance_h: f64,
    cfg: &PlannerConfig,
) -> bool {
    let env = &p.envelope;
    let x_lo = world_x + env.x0 + cfg.collision_end_margin;
    let x_hi = world_x + env.x1 - cfg.collision_end_margin;
    if x_hi <= x_lo {
        return false;
    }
    let (d0, d1) = terrain.domain();
    if x_lo < d0 || x_hi > d1 {
        return false;
    }

    // Footfall must land on the terrain surface.
    let foot_x = world_x + env.x1;
    match terrain.eval(foot_x) {
        Ok(h) => {
            if (stance_h + p.y_f - h).abs() > cfg.quantize_tol + 1e-9 {
                return false;
            }
        }
        Err(_) => return false,
    }

    // Pre-screen: lowest envelope point against highest terrain point.
    if let Ok(tmax) = terrain.max_over(x_lo, x_hi) {
        if stance_h + env.min_height() >= tmax - cfg.collision_tol {
            return true;
        }
    }

    // Exact piecewise-linear comparison at the union of breakpoints.
    let check = |x: f64| -> bool {
        let h = match terrain.eval(x) {
            Ok(h) => h,
            Err(_) => return false,
        };
        stance_h + env.sample(x - world_x) >= h - cfg.collision_tol
    };
    if !check(x_lo) || !check(x_hi) {
        return false;
    }
    for i in 0..env.samples() {
        let x = world_x + env.x_at(i);
        if x > x_lo && x < x_hi && !check(x) {
            return false;
        }
    }
    for x in terrain.breakpoints_within(x_lo, x_hi) {
        if !check(x) {
            return false;
        }
    }
    true
}

/// Dynamic + geometric feasibility of one primitive at entry velocity `v0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFeasibility {
    pub feasible: bool,
    pub v_c: f64,
    pub v_f: f64,
}

pub fn step_feasible(
    p: &Primitive,
    v0: f64,
    terrain: &TerrainMap,
    world_x: f64,
    stance_h: f64,
    cfg: &PlannerConfig,
) -> StepFeasibility {
    let v_c = p.keys.gamma_c * v0 + p.keys.psi_c;
    let v_f = p.keys.gamma_f * v0 + p.keys.psi_f;
    let feasible = v_c >= cfg.a * cfg.a
        && v_f <= cfg.b * cfg.b
        && collision_check(p, terrain, world_x, stance_h, cfg);
    StepFeasibility { feasible, v_c, v_f }
}

/// Post-impact data of a committed step: the relabeled configuration, the
/// synchronized joint velocity `Φ′_next(κ)·√v_post`, and `v_post` itself.
pub fn post_impact_state(
    lib: &PrimitiveLibrary,
    p: &Primitive,
    v0: f64,
) -> (DVector<f64>, DVector<f64>, f64) {
    let end = lib.config(p.end_config).expect("primitive end config exists");
    let v_post = p.keys.gamma_p * v0 + p.keys.psi_p;
    debug_assert!(
        v_post >= -1e-12,
        "feasible steps cannot produce negative post-impact velocity"
    );
    let thetadot_post = v_post.max(0.0).sqrt();
    (
        end.q_start.clone(),
        end.start_deriv.scale(thetadot_post),
        v_post,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    BestFirst,
    Energy,
}

/// Greedy best-first search over the primitive tree (the paper's
/// BEST-FIRST-SEARCH): per step length, take the feasible primitive with the
/// smallest `θ̇²(θ_c)`, commit to the best across step lengths, recurse, and
/// advance successors on failure.
pub fn best_first_search(
    lib: &PrimitiveLibrary,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    terrain: &TerrainMap,
    k: usize,
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    search(lib, q, qdot, terrain, k, cfg, Strategy::BestFirst)
}

/// Energy-heuristic search: identical recursion and backtracking, but
/// candidates are ranked by closeness of their post-impact energy change to
/// the per-footstep altitude-driven energy target over the lookahead window.
pub fn energy_heuristic_search(
    lib: &PrimitiveLibrary,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    terrain: &TerrainMap,
    k: usize,
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    search(lib, q, qdot, terrain, k, cfg, Strategy::Energy)
}

fn search(
    lib: &PrimitiveLibrary,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    terrain: &TerrainMap,
    k: usize,
    cfg: &PlannerConfig,
    strategy: Strategy,
) -> Result<Plan, PlanError> {
    if k == 0 {
        return Err(PlanError::ZeroSteps);
    }
    let a_sq = cfg.a * cfg.a;
    if (a_sq - lib.meta.a_squared).abs() > 1e-12 {
        return Err(PlanError::OrderingMismatch {
            planner: a_sq,
            library: lib.meta.a_squared,
        });
    }
    let start = lib
        .find_start_config(q, cfg.state_match_tol)
        .ok_or(PlanError::NoMatchingConfig)?;

    // v₀ = (cᵀq̇)² with c along Φ′(θ₀), scaled so cᵀΦ′(θ₀) = 1. Exact for
    // states satisfying the constraint velocity relation.
    let deriv = &lib.config(start).unwrap().start_deriv;
    let c = deriv.scale(1.0 / deriv.dot(deriv));
    let proj = c.dot(qdot);
    let v0 = proj * proj;

    let world_x = 0.0;
    let stance_h = terrain.eval(world_x).unwrap_or(0.0);

    let weight = lib
        .rebuild_model()
        .map(|m| m.total_mass() * m.gravity_accel())
        .unwrap_or(0.0);
    let ctx = Ctx { lib, terrain, cfg, strategy, weight };
    let mut stats = SearchStats::default();
    match add_node(&ctx, &mut stats, start, v0, world_x, stance_h, k) {
        NodeOutcome::Found(steps) => Ok(Plan { steps, stats }),
        NodeOutcome::Exhausted => Err(PlanError::Fail {
            reason: FailReason::TreeExhausted,
            stats,
        }),
        NodeOutcome::Budget => Err(PlanError::Fail {
            reason: FailReason::BudgetExhausted,
            stats,
        }),
    }
}

struct Ctx<'a> {
    lib: &'a PrimitiveLibrary,
    terrain: &'a TerrainMap,
    cfg: &'a PlannerConfig,
    strategy: Strategy,
    /// `m_total·g`: converts heights to potential energy.
    weight: f64,
}

enum NodeOutcome {
    Found(Vec<PlanStep>),
    Exhausted,
    Budget,
}

/// Per-step-length candidate chain at one node.
struct Slot {
    /// Remaining candidates, best first.
    queue: Vec<SearchHit>,
    next: usize,
    /// Evaluated-feasible candidate waiting for selection.
    current: Option<(u32, f64, f64, f64)>, // (prim, score, v_c, v_f)
    x_f: f64,
}

impl Slot {
    fn dead(&self) -> bool {
        self.current.is_none() && self.next >= self.queue.len()
    }
}

fn add_node(
    ctx: &Ctx<'_>,
    stats: &mut SearchStats,
    start: u32,
    v0: f64,
    world_x: f64,
    stance_h: f64,
    k: usize,
) -> NodeOutcome {
    stats.nodes_evaluated += 1;
    if stats.nodes_evaluated > ctx.cfg.node_budget {
        return NodeOutcome::Budget;
    }
    let lib = ctx.lib;
    let cfg = ctx.cfg;
    let start_cfg = lib.config(start).unwrap();
    let energy_pre = start_cfg.upsilon0 * v0 + start_cfg.xi0 + ctx.weight * stance_h;

    // Energy target: altitude trend ahead divided by the footsteps that fit
    // in the window.
    let delta_e_star = if ctx.strategy == Strategy::Energy {
        let (_, d1) = ctx.terrain.domain();
        let ahead = (world_x + cfg.lookahead_dist).min(d1);
        let h_ahead = ctx.terrain.eval(ahead).unwrap_or(stance_h);
        let steps_est = (cfg.lookahead_dist / lib.mean_step_length()).max(1.0);
        ctx.weight * (h_ahead - stance_h) / steps_est
    } else {
        0.0
    };

    // Build one candidate chain per step length.
    let mut slots: Vec<Slot> = Vec::with_capacity(lib.x_f_values.len());
    for (xf_idx, &x_f) in lib.x_f_values.iter().enumerate() {
        let mut slot = Slot {
            queue: Vec::new(),
            next: 0,
            current: None,
            x_f,
        };
        let foot_x = world_x + x_f;
        if ctx.terrain.contains(foot_x) {
            let h = ctx.terrain.eval(foot_x).unwrap();
            if let Some(yf_idx) = quantize(h - stance_h, &lib.y_f_values, cfg.quantize_tol) {
                if let Some(bst) = lib.bst(start, xf_idx as u32, yf_idx as u32) {
                    stats.tree_search_calls += 1;
                    slot.queue = match ctx.strategy {
                        Strategy::BestFirst => bst.candidates(v0),
                        Strategy::Energy => {
                            let mut cands = bst.candidates(v0);
                            // Rank by |ΔE − ΔE*|; the post-impact energy is
                            // affine in v0 through the stored coefficients.
                            let score = |hit: &SearchHit| -> f64 {
                                let p = lib.primitive(hit.prim).unwrap();
                                let end = lib.config(p.end_config).unwrap();
                                let v_post = p.keys.gamma_p * v0 + p.keys.psi_p;
                                let foot_h = ctx.terrain.eval(foot_x).unwrap_or(stance_h);
                                let energy_post =
                                    end.upsilon0 * v_post + end.xi0 + ctx.weight * foot_h;
                                ((energy_post - energy_pre) - delta_e_star).abs()
                            };
                            cands.sort_by(|a, b| {
                                score(a)
                                    .partial_cmp(&score(b))
                                    .unwrap()
                                    .then(a.prim.cmp(&b.prim))
                            });
                            cands
                        }
                    };
                }
            }
        }
        slots.push(slot);
    }

    loop {
        // Evaluate at most one fresh candidate per step length, as the
        // listing's per-pass successor step does.
        let mut progressed = false;
        for slot in &mut slots {
            if slot.current.is_some() || slot.next >= slot.queue.len() {
                continue;
            }
            let hit = slot.queue[slot.next];
            slot.next += 1;
            progressed = true;
            let p = lib.primitive(hit.prim).unwrap();
            stats.eval_trace.push(p.id);
            let feas = step_feasible(p, v0, ctx.terrain, world_x, stance_h, cfg);
            if feas.feasible {
                let score = match ctx.strategy {
                    Strategy::BestFirst => feas.v_c,
                    Strategy::Energy => {
                        let end = lib.config(p.end_config).unwrap();
                        let v_post = p.keys.gamma_p * v0 + p.keys.psi_p;
                        let foot_x = world_x + slot.x_f;
                        let foot_h = ctx.terrain.eval(foot_x).unwrap_or(stance_h);
                        let energy_post =
                            end.upsilon0 * v_post + end.xi0 + ctx.weight * foot_h;
                        ((energy_post - energy_pre) - delta_e_star).abs()
                    }
                };
                slot.current = Some((p.id, score, feas.v_c, feas.v_f));
            }
        }

        // Commit to the best evaluated candidate: smallest score, ties to
        // the longer step, then the smaller primitive id.
        let mut chosen: Option<usize> = None;
        for (i, slot) in slots.iter().enumerate() {
            let Some((pid, score, _, _)) = slot.current else {
                continue;
            };
            let better = match chosen {
                None => true,
                Some(j) => {
                    let (qid, qscore, _, _) = slots[j].current.unwrap();
                    score < qscore
                        || (score == qscore
                            && (slot.x_f > slots[j].x_f
                                || (slot.x_f == slots[j].x_f && pid < qid)))
                }
            };
            if better {
                chosen = Some(i);
            }
        }

        if let Some(i) = chosen {
            let (pid, _, v_c, v_f) = slots[i].current.unwrap();
            let p = lib.primitive(pid).unwrap();
            let end = lib.config(p.end_config).unwrap();
            let v_post = p.keys.gamma_p * v0 + p.keys.psi_p;
            let foot_x = world_x + slots[i].x_f;
            let foot_h = ctx.terrain.eval(foot_x).unwrap_or(stance_h + p.y_f);
            let energy_post = end.upsilon0 * v_post + end.xi0 + ctx.weight * foot_h;
            let step = PlanStep {
                primitive_id: pid,
                v0,
                v_c,
                v_f,
                v_post,
                world_x,
                world_h: stance_h,
                energy_pre,
                energy_post,
            };
            if k == 1 {
                return NodeOutcome::Found(alloc::vec![step]);
            }
            match add_node(ctx, stats, p.end_config, v_post, foot_x, foot_h, k - 1) {
                NodeOutcome::Found(mut rest) => {
                    rest.insert(0, step);
                    return NodeOutcome::Found(rest);
                }
                NodeOutcome::Budget => return NodeOutcome::Budget,
                NodeOutcome::Exhausted => {
                    // The subtree below this candidate is dead; advance to
                    // its successor.
                    slots[i].current = None;
                }
            }
            continue;
        }

        if !progressed && slots.iter().all(Slot::dead) {
            return NodeOutcome::Exhausted;
        }
        if !progressed {
            // No candidate evaluated and nothing selectable: exhausted.
            return NodeOutcome::Exhausted;
        }
    }
}
