//! Deterministic synthetic-data generators with known ground truth.
//!
//! Three scenarios exercise the fitting pipeline end to end: A is a
//! linear quantile model, B a sine-shaped smooth effect, C a spatial
//! field on a rook-adjacency lattice. Normal noise keeps the true
//! conditional quantiles in closed form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::graph::RegionGraph;
use crate::ingest::Dataset;
use crate::{Error, Result};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Ground truth of scenario A: y = intercept + slope x + noise_sd eps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTruth {
    pub intercept: f64,
    pub slope: f64,
    pub noise_sd: f64,
}

impl LinearTruth {
    /// True tau-quantile line at x.
    pub fn quantile_at(&self, x: f64, tau: f64) -> f64 {
        self.intercept + self.slope * x + self.noise_sd * normal_quantile(tau)
    }
}

/// Ground truth of scenario B: y = sin(2 pi x) + noise_sd eps.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTruth {
    pub noise_sd: f64,
}

impl SmoothTruth {
    pub fn curve(&self, x: f64) -> f64 {
        (2.0 * std::f64::consts::PI * x).sin()
    }

    pub fn quantile_at(&self, x: f64, tau: f64) -> f64 {
        self.curve(x) + self.noise_sd * normal_quantile(tau)
    }
}

/// Ground truth of scenario C: a centered smooth field over the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTruth {
    /// Per-region field value, in graph label order; sums to zero.
    pub field: Vec<f64>,
    pub noise_sd: f64,
}

fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Linear scenario: x uniform on [-1, 1], y = 1 + 2x + standard-normal
/// noise.
pub fn scenario_a_linear(n: usize, seed: u64) -> Result<(Dataset, LinearTruth)> {
    if n < 50 {
        return Err(Error::InvalidArgument(format!(
            "scenario A requires n >= 50, got {n}"
        )));
    }
    let truth = LinearTruth {
        intercept: 1.0,
        slope: 2.0,
        noise_sd: 1.0,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = uniform(&mut rng, -1.0, 1.0);
        let eps: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(truth.intercept + truth.slope * x + truth.noise_sd * eps);
    }
    let d = Dataset::new(vec!["y".into(), "x".into()], vec![ys, xs])?;
    Ok((d, truth))
}

/// Smooth scenario: x uniform on [0, 1], y = sin(2 pi x) + N(0, 0.3^2).
pub fn scenario_b_smooth(n: usize, seed: u64) -> Result<(Dataset, SmoothTruth)> {
    if n < 200 {
        return Err(Error::InvalidArgument(format!(
            "scenario B requires n >= 200, got {n}"
        )));
    }
    let truth = SmoothTruth { noise_sd: 0.3 };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = uniform(&mut rng, 0.0, 1.0);
        let eps: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(truth.curve(x) + truth.noise_sd * eps);
    }
    let d = Dataset::new(vec!["y".into(), "x".into()], vec![ys, xs])?;
    Ok((d, truth))
}

/// Rook-adjacency lattice of regions labeled row-major 0..g*g-1.
pub fn lattice_graph(grid_side: usize) -> Result<RegionGraph> {
    let g = grid_side;
    let labels: Vec<String> = (0..g * g).map(|r| r.to_string()).collect();
    let mut adjacency = vec![Vec::new(); g * g];
    for row in 0..g {
        for col in 0..g {
            let r = row * g + col;
            if col + 1 < g {
                adjacency[r].push(r + 1);
                adjacency[r + 1].push(r);
            }
            if row + 1 < g {
                adjacency[r].push(r + g);
                adjacency[r + g].push(r);
            }
        }
    }
    RegionGraph::new(labels, adjacency)
}

/// Spatial scenario: a centered smooth field on a grid_side x grid_side
/// lattice, per_region observations per region, noise sd 0.5.
pub fn scenario_c_spatial(
    grid_side: usize,
    per_region: usize,
    seed: u64,
) -> Result<(Dataset, RegionGraph, SpatialTruth)> {
    if grid_side < 4 {
        return Err(Error::InvalidArgument(format!(
            "scenario C requires grid_side >= 4, got {grid_side}"
        )));
    }
    if per_region < 5 {
        return Err(Error::InvalidArgument(format!(
            "scenario C requires per_region >= 5, got {per_region}"
        )));
    }
    let g = grid_side;
    let graph = lattice_graph(g)?;
    let denom = (g - 1) as f64;
    let mut field: Vec<f64> = (0..g * g)
        .map(|r| {
            let row = (r / g) as f64 / denom;
            let col = (r % g) as f64 / denom;
            (std::f64::consts::PI * row).sin() + (std::f64::consts::PI * col).cos()
        })
        .collect();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    for v in field.iter_mut() {
        *v -= mean;
    }
    let truth = SpatialTruth {
        field,
        noise_sd: 0.5,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = g * g * per_region;
    let mut ys = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    for r in 0..g * g {
        for _ in 0..per_region {
            let eps: f64 = StandardNormal.sample(&mut rng);
            ys.push(truth.field[r] + truth.noise_sd * eps);
            regions.push(r as f64);
        }
    }
    let mut d = Dataset::new(vec!["y".into(), "region".into()], vec![ys, regions])?;
    d.set_region_column("region")?;
    Ok((d, graph, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::connected_components;
    use approx::assert_relative_eq;

    #[test]
    fn normal_quantiles() {
        assert_relative_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-9);
        assert_relative_eq!(normal_quantile(0.85), 1.0364333894937898, epsilon = 1e-6);
    }

    #[test]
    fn scenario_a_truth_lines() {
        let (_, truth) = scenario_a_linear(100, 1).unwrap();
        assert_relative_eq!(truth.quantile_at(0.0, 0.5), 1.0, epsilon = 1e-9);
        assert_relative_eq!(
            truth.quantile_at(0.0, 0.85),
            1.0 + 1.0364333894937898,
            epsilon = 1e-6
        );
    }

    #[test]
    fn scenario_b_truth_curve() {
        let (_, truth) = scenario_b_smooth(200, 1).unwrap();
        assert_relative_eq!(truth.quantile_at(0.25, 0.5), 1.0, epsilon = 1e-9);
        assert_relative_eq!(
            truth.quantile_at(0.75, 0.15),
            -1.0 + 0.3 * normal_quantile(0.15),
            epsilon = 1e-9
        );
        // spot value from an external normal-quantile table
        assert_relative_eq!(truth.quantile_at(0.75, 0.15), -1.3109, epsilon = 1e-4);
    }

    #[test]
    fn generators_are_deterministic() {
        let (d1, _) = scenario_a_linear(80, 7).unwrap();
        let (d2, _) = scenario_a_linear(80, 7).unwrap();
        assert_eq!(d1, d2);
        let (d1, _) = scenario_b_smooth(250, 7).unwrap();
        let (d2, _) = scenario_b_smooth(250, 7).unwrap();
        assert_eq!(d1, d2);
        let (d1, g1, t1) = scenario_c_spatial(4, 5, 7).unwrap();
        let (d2, g2, t2) = scenario_c_spatial(4, 5, 7).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(g1, g2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn lattice_structure() {
        let (d, graph, truth) = scenario_c_spatial(5, 5, 3).unwrap();
        let edges: usize = (0..graph.n_regions()).map(|i| graph.degree(i)).sum::<usize>() / 2;
        assert_eq!(edges, 2 * 5 * (5 - 1));
        assert_eq!(connected_components(&graph).len(), 1);
        assert!(truth.field.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(d.n_rows(), 5 * 5 * 5);
        assert_eq!(d.region_column(), Some("region"));
    }

    #[test]
    fn preconditions_enforced() {
        assert!(scenario_a_linear(49, 1).is_err());
        assert!(scenario_b_smooth(199, 1).is_err());
        assert!(scenario_c_spatial(3, 5, 1).is_err());
        assert!(scenario_c_spatial(4, 4, 1).is_err());
    }
}
