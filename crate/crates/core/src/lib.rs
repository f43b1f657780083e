//! Motion-primitive planning for planar underactuated walkers.
//!
//! The crate is organized around a pipeline that runs offline and a planner
//! that runs online:
//!
//! * [`mechanics`] — rigid-body dynamics, energy, and inelastic impact maps
//!   for planar open-chain walkers with one unactuated (stance pivot)
//!   coordinate, plus compass-gait and five-link model builders.
//! * [`vhc`] — virtual holonomic constraints (Bézier configuration paths
//!   parameterized by a phase variable), the reduced phase dynamics, and the
//!   precomputed affine maps that give squared phase velocity and mechanical
//!   energy as `Γ·v₀ + Ψ` for any point along a step.
//! * [`library`] — offline construction of a footstep primitive library:
//!   impact-configuration discretization, path generation, swept-envelope
//!   computation, and balanced search trees ordered by required entry
//!   velocity.
//! * [`terrain`] — one-dimensional height maps and interval queries.
//! * [`planner`] — receding-horizon footstep selection: greedy best-first
//!   depth-first search and an energy-heuristic variant.
//! * [`sim`] — reduced and full-order validation simulators and open-loop
//!   plan execution.
//!
//! Everything here is `no_std`-compatible (with `alloc`); file formats and
//! the command-line frontend live in the companion `strider-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod library;
pub mod mechanics;
pub mod planner;
pub mod sim;
pub mod terrain;
pub mod vhc;

pub use library::{ImpactConfig, Primitive, PrimitiveBst, PrimitiveLibrary};
pub use mechanics::{JointState, ModelParams, RobotModel};
pub use planner::{Plan, PlanStep, PlannerConfig};
pub use terrain::TerrainMap;
pub use vhc::{AffineSolution, VirtualConstraint};

#[cfg(test)]
pub(crate) mod test_util {
    /// SplitMix64: tiny deterministic generator for randomized test sweeps.
    pub struct Rng(u64);

    impl Rng {
        pub fn new(seed: u64) -> Self {
            Rng(seed)
        }

        pub fn next_u64(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        }

        /// Uniform in [0, 1).
        pub fn unit(&mut self) -> f64 {
            (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        }

        /// Uniform in [lo, hi).
        pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
            lo + (hi - lo) * self.unit()
        }
    }
}
