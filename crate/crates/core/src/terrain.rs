//! One-dimensional terrain height maps with linear interpolation, interval
//! queries used by collision pre-screens, and the benchmark terrain set.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Depth used to encode a gap: far below anything a walker can reach, so the
/// envelope/footfall checks forbid stepping inside.
pub const GAP_DEPTH: f64 = -10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum TerrainError {
    /// Fewer than two samples, or x not strictly increasing.
    InvalidSamples,
    /// Query outside `[x₁, x₂]`.
    OutOfRange { x: f64, x1: f64, x2: f64 },
}

impl fmt::Display for TerrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerrainError::InvalidSamples => {
                write!(f, "terrain needs >= 2 samples with strictly increasing x")
            }
            TerrainError::OutOfRange { x, x1, x2 } => {
                write!(f, "query x = {x} outside terrain domain [{x1}, {x2}]")
            }
        }
    }
}

impl core::error::Error for TerrainError {}

/// Piecewise-linear height map `h : [x₁, x₂] → ℝ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainMap {
    xs: Vec<f64>,
    hs: Vec<f64>,
}

impl TerrainMap {
    pub fn new(xs: Vec<f64>, hs: Vec<f64>) -> Result<Self, TerrainError> {
        if xs.len() < 2 || xs.len() != hs.len() {
            return Err(TerrainError::InvalidSamples);
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TerrainError::InvalidSamples);
        }
        Ok(Self { xs, hs })
    }

    /// Flat terrain at height 0 over `[x1, x2]`.
    pub fn flat(x1: f64, x2: f64) -> Self {
        Self::new(vec![x1, x2], vec![0.0, 0.0]).unwrap()
    }

    /// Step profile: heights between given breakpoints, with near-vertical
    /// risers (width `riser`) joining them.
    pub fn steps(x_start: f64, x_end: f64, risers_at: &[(f64, f64)], riser: f64) -> Self {
        let mut xs = vec![x_start];
        let mut hs = vec![0.0];
        let mut h = 0.0;
        for &(x, dh) in risers_at {
            xs.push(x);
            hs.push(h);
            h += dh;
            xs.push(x + riser);
            hs.push(h);
        }
        xs.push(x_end);
        hs.push(h);
        Self::new(xs, hs).unwrap()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.hs)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.xs[0] && x <= self.xs[self.xs.len() - 1]
    }

    fn segment_index(&self, x: f64) -> usize {
        // Rightmost sample <= x (binary search), clamped to a valid segment.
        match self.xs.binary_search_by(|probe| probe.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    /// Interpolated height at `x`.
    pub fn eval(&self, x: f64) -> Result<f64, TerrainError> {
        let (x1, x2) = self.domain();
        if x < x1 || x > x2 {
            return Err(TerrainError::OutOfRange { x, x1, x2 });
        }
        let i = self.segment_index(x);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        Ok(self.hs[i] * (1.0 - t) + self.hs[i + 1] * t)
    }

    /// Maximum of the interpolant over `[x_lo, x_hi]`. Exact: a piecewise
    /// linear function attains its maximum at a breakpoint or interval end.
    pub fn max_over(&self, x_lo: f64, x_hi: f64) -> Result<f64, TerrainError> {
        let lo = self.eval(x_lo)?;
        let hi = self.eval(x_hi)?;
        let mut best = lo.max(hi);
        let i0 = self.segment_index(x_lo);
        for i in i0..self.xs.len() {
            if self.xs[i] <= x_lo {
                continue;
            }
            if self.xs[i] >= x_hi {
                break;
            }
            best = best.max(self.hs[i]);
        }
        Ok(best)
    }

    /// Breakpoint x-positions strictly inside `(x_lo, x_hi)`.
    pub fn breakpoints_within(&self, x_lo: f64, x_hi: f64) -> impl Iterator<Item = f64> + '_ {
        self.xs
            .iter()
            .copied()
            .filter(move |&x| x > x_lo && x < x_hi)
    }
}

/// A named benchmark terrain.
#[derive(Debug, Clone)]
pub struct BenchmarkTerrain {
    pub name: String,
    pub map: TerrainMap,
    /// Suggested distance to walk before declaring the scenario done.
    pub goal_x: f64,
}

/// The benchmark set mirroring the paper's scenarios at desk scale: flat
/// ground, a single step-up, stairs up/down with a gap, and an aggressive
/// variant for the five-link walker. Gaps are encoded as deep notches so the
/// footfall and envelope checks rule them out.
pub fn benchmark_terrains() -> Vec<BenchmarkTerrain> {
    let mut out = Vec::new();

    out.push(BenchmarkTerrain {
        name: String::from("flat"),
        map: TerrainMap::flat(-2.0, 14.0),
        goal_x: 6.0,
    });

    // One 0.1 m rise mid-course.
    out.push(BenchmarkTerrain {
        name: String::from("step_up"),
        map: TerrainMap::steps(-2.0, 14.0, &[(2.5, 0.1)], 1e-3),
        goal_x: 6.0,
    });

    // Two rises, a gap, then two drops back to the start height.
    let mut xs = vec![-2.0];
    let mut hs = vec![0.0];
    let push = |xs: &mut Vec<f64>, hs: &mut Vec<f64>, x: f64, h: f64| {
        xs.push(x);
        hs.push(h);
    };
    for &(x, h) in &[
        (2.0, 0.0),
        (2.001, 0.1),
        (3.0, 0.1),
        (3.001, 0.2),
        // Gap: a 0.3 m notch in the upper platform.
        (4.2, 0.2),
        (4.201, GAP_DEPTH),
        (4.499, GAP_DEPTH),
        (4.5, 0.2),
        (5.6, 0.2),
        (5.601, 0.1),
        (6.5, 0.1),
        (6.501, 0.0),
        (14.0, 0.0),
    ] {
        push(&mut xs, &mut hs, x, h);
    }
    out.push(BenchmarkTerrain {
        name: String::from("stairs_gap"),
        map: TerrainMap::new(xs, hs).unwrap(),
        goal_x: 8.0,
    });

    // Five-link variant: larger steps and a wider gap.
    let mut xs = vec![-2.0];
    let mut hs = vec![0.0];
    for &(x, h) in &[
        (1.8, 0.0),
        (1.801, 0.15),
        (2.8, 0.15),
        (2.801, 0.3),
        (3.9, 0.3),
        (3.901, GAP_DEPTH),
        (4.249, GAP_DEPTH),
        (4.25, 0.3),
        (5.4, 0.3),
        (5.401, 0.15),
        (6.4, 0.15),
        (6.401, 0.0),
        (14.0, 0.0),
    ] {
        push(&mut xs, &mut hs, x, h);
    }
    out.push(BenchmarkTerrain {
        name: String::from("aggressive"),
        map: TerrainMap::new(xs, hs).unwrap(),
        goal_x: 8.0,
    });

    out
}

/// Look up a benchmark terrain by name.
pub fn benchmark_terrain(name: &str) -> Option<BenchmarkTerrain> {
    benchmark_terrains().into_iter().find(|b| b.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::Rng;

    #[test]
    fn eval_interpolates_linearly() {
        let t = TerrainMap::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.2, 0.2]).unwrap();
        assert_eq!(t.eval(1.0).unwrap(), 0.2);
        assert!((t.eval(0.5).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(t.eval(1.7).unwrap(), 0.2);
        assert!(matches!(t.eval(2.5), Err(TerrainError::OutOfRange { .. })));
        let flat = TerrainMap::flat(-1.0, 5.0);
        assert_eq!(flat.eval(3.3).unwrap(), 0.0);
    }

    #[test]
    fn invalid_samples_rejected() {
        assert!(TerrainMap::new(vec![0.0], vec![0.0]).is_err());
        assert!(TerrainMap::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(TerrainMap::new(vec![1.0, 0.5], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn max_over_matches_dense_scan() {
        let mut rng = Rng::new(50);
        let mut xs = vec![0.0];
        let mut hs = vec![rng.range(-0.5, 0.5)];
        for _ in 0..40 {
            xs.push(xs.last().unwrap() + rng.range(0.05, 0.3));
            hs.push(rng.range(-0.5, 0.5));
        }
        let t = TerrainMap::new(xs.clone(), hs).unwrap();
        let (x1, x2) = t.domain();
        for _ in 0..200 {
            let a = rng.range(x1, x2);
            let b = rng.range(x1, x2);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let got = t.max_over(lo, hi).unwrap();
            let mut want = f64::NEG_INFINITY;
            for k in 0..=10_000 {
                let x = lo + (hi - lo) * k as f64 / 10_000.0;
                want = want.max(t.eval(x).unwrap());
            }
            // The scan alone can miss a peak between samples; adding the
            // breakpoints makes it exact for a piecewise-linear map.
            for x in t.breakpoints_within(lo, hi) {
                want = want.max(t.eval(x).unwrap());
            }
            assert!((got - want).abs() <= 1e-12 + 1e-12 * want.abs());
        }
    }

    #[test]
    fn interpolant_is_lipschitz() {
        let t = TerrainMap::new(vec![0.0, 0.5, 1.0, 3.0], vec![0.0, 0.3, -0.1, 0.0]).unwrap();
        // Max slope is |0.3 - (-0.1)| / 0.5 = 0.8.
        let lipschitz = 0.8;
        let mut rng = Rng::new(9);
        for _ in 0..500 {
            let x = rng.range(0.0, 2.99);
            let eps = rng.range(0.0, 0.01);
            let dy = (t.eval(x + eps).unwrap() - t.eval(x).unwrap()).abs();
            assert!(dy <= lipschitz * eps + 1e-12);
        }
    }

    #[test]
    fn benchmark_set_shapes() {
        let set = benchmark_terrains();
        let names: Vec<&str> = set.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["flat", "step_up", "stairs_gap", "aggressive"]);

        let flat = benchmark_terrain("flat").unwrap();
        assert_eq!(flat.map.eval(1.0).unwrap(), 0.0);

        // Step-up is monotone nondecreasing.
        let step = benchmark_terrain("step_up").unwrap();
        let (x1, x2) = step.map.domain();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let h = step.map.eval(x1 + (x2 - x1) * k as f64 / 400.0).unwrap();
            assert!(h >= prev - 1e-12);
            prev = h;
        }

        // Stairs terrain returns to its initial height and the gap notch is
        // far below anything reachable.
        let stairs = benchmark_terrain("stairs_gap").unwrap();
        let (x1, x2) = stairs.map.domain();
        assert_eq!(stairs.map.eval(x1).unwrap(), stairs.map.eval(x2).unwrap());
        assert_eq!(stairs.map.eval(4.35).unwrap(), GAP_DEPTH);
        assert!(GAP_DEPTH < -2.0);

        let agg = benchmark_terrain("aggressive").unwrap();
        assert_eq!(agg.map.eval(4.0).unwrap(), GAP_DEPTH);
        assert!(benchmark_terrain("nope").is_none());
    }
}
