//! Confident point sampling and exact Euclidean distance maps.
//!
//! The refiner is conditioned on an adaptive distance map: the distance map of
//! whichever class was sampled more densely, normalized to [0, 1] and oriented
//! so that high values always point toward water.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::indices::IndexMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointClass {
    Water,
    NonWater,
}

impl std::fmt::Display for PointClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PointClass::Water => "water",
            PointClass::NonWater => "non-water",
        })
    }
}

/// High-confidence water / non-water pixel coordinates, disjoint by
/// construction (a pixel cannot be at or above the high threshold and at or
/// below the low one at the same time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSet {
    pub water: Vec<(u32, u32)>,
    pub nonwater: Vec<(u32, u32)>,
}

impl PointSet {
    pub fn points_of(&self, class: PointClass) -> &[(u32, u32)] {
        match class {
            PointClass::Water => &self.water,
            PointClass::NonWater => &self.nonwater,
        }
    }

    /// Class with the larger sample count; ties go to water so the choice is
    /// deterministic.
    pub fn dense_class(&self) -> PointClass {
        if self.nonwater.len() > self.water.len() {
            PointClass::NonWater
        } else {
            PointClass::Water
        }
    }
}

/// Confidence thresholds on an index plane: water at or above `phi_high`,
/// non-water at or below `phi_low`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub phi_high: f64,
    pub phi_low: f64,
}

impl Thresholds {
    pub fn new(phi_high: f64, phi_low: f64) -> Result<Self> {
        if phi_high <= phi_low {
            return Err(CoreError::InvalidConfig(format!(
                "phi_high ({phi_high}) must exceed phi_low ({phi_low})"
            )));
        }
        Ok(Thresholds { phi_high, phi_low })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            phi_high: 0.5,
            phi_low: -0.2,
        }
    }
}

/// Per-pixel minimum Euclidean distance to a point set, in pixel units on the
/// integer grid (pixel centers at integer coordinates).
#[derive(Debug, Clone)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub source_class: PointClass,
}

/// Distance map of the densely sampled class, normalized by its maximum and
/// oriented so that values near 1 indicate water evidence.
#[derive(Debug, Clone)]
pub struct AdaptiveDistanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub dense_class: PointClass,
}

/// Sample confident points from an index plane. Pixels at or above
/// `thresholds.phi_high` become water candidates, pixels at or below
/// `thresholds.phi_low` non-water candidates; undefined pixels are skipped.
/// A class exceeding `max_per_class` is reduced by a seeded uniform subsample
/// (without replacement), keeping the result deterministic for a fixed seed.
pub fn sample_confident_points(
    index: &IndexMap,
    thresholds: &Thresholds,
    max_per_class: usize,
    seed: u64,
) -> Result<PointSet> {
    let mut water = Vec::new();
    let mut nonwater = Vec::new();
    for y in 0..index.height {
        for x in 0..index.width {
            let i = y * index.width + x;
            if index.undefined[i] {
                continue;
            }
            let v = index.values[i];
            if v >= thresholds.phi_high {
                water.push((x as u32, y as u32));
            } else if v <= thresholds.phi_low {
                nonwater.push((x as u32, y as u32));
            }
        }
    }
    if water.is_empty() {
        return Err(CoreError::EmptyClass(PointClass::Water));
    }
    if nonwater.is_empty() {
        return Err(CoreError::EmptyClass(PointClass::NonWater));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subsample(&mut water, max_per_class, &mut rng);
    subsample(&mut nonwater, max_per_class, &mut rng);
    Ok(PointSet { water, nonwater })
}

fn subsample(points: &mut Vec<(u32, u32)>, max: usize, rng: &mut ChaCha8Rng) {
    if points.len() <= max {
        return;
    }
    // partial Fisher-Yates, then restore scan order for a canonical result
    for i in 0..max {
        let j = rng.gen_range(i..points.len());
        points.swap(i, j);
    }
    points.truncate(max);
    points.sort_unstable_by_key(|(x, y)| (*y, *x));
}

/// Exact squared-distance transform of one row/column via the lower-envelope
/// parabola method. `f` holds squared distances so far; empty cells carry
/// `BIG`.
const BIG: f64 = 1e20;

fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    // intersection of the parabolas rooted at q and p
    let intersect = |q: usize, p: usize| -> f64 {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut v = vec![0usize; n]; // parabola apexes in the lower envelope
    let mut z = vec![0.0f64; n + 1]; // envelope boundaries
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            // z[0] is -inf, so k never underflows
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        out[q] = d * d + f[v[k]];
    }
}

/// Exact per-pixel minimum Euclidean distance to any of `points`.
///
/// Linear-time separable transform (columns, then rows, on squared
/// distances). Because squared distances between integer grid points are
/// exact in f64, the result is bit-identical to the brute-force minimum.
pub fn distance_map(
    points: &[(u32, u32)],
    width: usize,
    height: usize,
    source_class: PointClass,
) -> Result<DistanceMap> {
    if points.is_empty() {
        return Err(CoreError::EmptyPointSet);
    }
    let mut grid = vec![BIG; width * height];
    for (x, y) in points {
        let (x, y) = (*x as usize, *y as usize);
        assert!(x < width && y < height, "point ({x},{y}) outside {width}x{height}");
        grid[y * width + x] = 0.0;
    }
    // pass 1: columns
    let mut col_in = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col_in[y] = grid[y * width + x];
        }
        dt_1d(&col_in, &mut col_out);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }
    // pass 2: rows
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        let row = &grid[y * width..(y + 1) * width];
        dt_1d(row, &mut row_out);
        grid[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    for v in grid.iter_mut() {
        *v = v.sqrt();
    }
    Ok(DistanceMap {
        width,
        height,
        values: grid,
        source_class,
    })
}

/// Build the adaptive distance map from a point set: take the distance map of
/// the denser class, divide by its maximum (an all-zero map stays all zero),
/// then orient so water evidence reads high. For a water-dense map this is
/// 1 - d/dmax; for a non-water-dense map it is d/dmax.
pub fn adaptive_distance_map(
    points: &PointSet,
    width: usize,
    height: usize,
) -> Result<AdaptiveDistanceMap> {
    if points.water.is_empty() && points.nonwater.is_empty() {
        return Err(CoreError::EmptyPointSet);
    }
    let dense = if points.water.is_empty() {
        PointClass::NonWater
    } else if points.nonwater.is_empty() {
        PointClass::Water
    } else {
        points.dense_class()
    };
    let dmap = distance_map(points.points_of(dense), width, height, dense)?;
    let max = dmap.values.iter().cloned().fold(0.0f64, f64::max);
    let values = dmap
        .values
        .iter()
        .map(|d| {
            let normalized = if max > 0.0 { d / max } else { 0.0 };
            match dense {
                PointClass::Water => 1.0 - normalized,
                PointClass::NonWater => normalized,
            }
        })
        .collect();
    Ok(AdaptiveDistanceMap {
        width,
        height,
        values,
        dense_class: dense,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexKind;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(points: &[(u32, u32)], width: usize, height: usize) -> Vec<f64> {
        let mut out = vec![0.0; width * height];
        for y in 0..height {
            for x in 0..width {
                let mut best = f64::INFINITY;
                for (px, py) in points {
                    let dx = x as f64 - *px as f64;
                    let dy = y as f64 - *py as f64;
                    best = best.min(dx * dx + dy * dy);
                }
                out[y * width + x] = best.sqrt();
            }
        }
        out
    }

    #[test]
    fn three_four_five_triangle() {
        let dm = distance_map(&[(0, 0)], 5, 5, PointClass::Water).unwrap();
        assert_eq!(dm.values[4 * 5 + 3], 5.0);
        assert_eq!(dm.values[0], 0.0);
    }

    #[test]
    fn point_at_every_pixel_gives_zero() {
        let mut points = Vec::new();
        for y in 0..4u32 {
            for x in 0..4u32 {
                points.push((x, y));
            }
        }
        let dm = distance_map(&points, 4, 4, PointClass::Water).unwrap();
        assert!(dm.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_point_list_is_an_error() {
        assert!(matches!(
            distance_map(&[], 4, 4, PointClass::Water),
            Err(CoreError::EmptyPointSet)
        ));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..25 {
            let width = rng.gen_range(1..=64);
            let height = rng.gen_range(1..=64);
            let count = rng.gen_range(1..=50);
            let points: Vec<(u32, u32)> = (0..count)
                .map(|_| (rng.gen_range(0..width) as u32, rng.gen_range(0..height) as u32))
                .collect();
            let fast = distance_map(&points, width, height, PointClass::Water).unwrap();
            let slow = brute_force(&points, width, height);
            for (a, b) in fast.values.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b} on {width}x{height}");
            }
        }
    }

    #[test]
    fn sampling_respects_thresholds_and_reports_empty_classes() {
        let th = Thresholds::default();
        let all_high = IndexMap::from_values(2, 2, vec![0.9; 4], IndexKind::Mndwi);
        match sample_confident_points(&all_high, &th, 16, 0) {
            Err(CoreError::EmptyClass(PointClass::NonWater)) => (),
            other => panic!("expected empty non-water class, got {other:?}"),
        }

        let plane = IndexMap::from_values(2, 2, vec![0.9, -0.5, 0.0, 0.7], IndexKind::Mndwi);
        let set = sample_confident_points(&plane, &th, 16, 0).unwrap();
        assert_eq!(set.water, vec![(0, 0), (1, 1)]);
        assert_eq!(set.nonwater, vec![(1, 0)]);
    }

    #[test]
    fn sampling_is_deterministic_and_capped() {
        let values: Vec<f64> = (0..256)
            .map(|i| if i % 2 == 0 { 0.8 } else { -0.8 })
            .collect();
        let plane = IndexMap::from_values(16, 16, values, IndexKind::Mndwi);
        let th = Thresholds::default();
        let a = sample_confident_points(&plane, &th, 20, 42).unwrap();
        let b = sample_confident_points(&plane, &th, 20, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.water.len(), 20);
        assert_eq!(a.nonwater.len(), 20);
        let c = sample_confident_points(&plane, &th, 20, 43).unwrap();
        assert_ne!(a, c);
        // every sampled point satisfies its threshold
        for (x, y) in &a.water {
            assert!(plane.values[*y as usize * 16 + *x as usize] >= th.phi_high);
        }
        for (x, y) in &a.nonwater {
            assert!(plane.values[*y as usize * 16 + *x as usize] <= th.phi_low);
        }
    }

    #[test]
    fn adaptive_map_single_water_point() {
        let set = PointSet {
            water: vec![(2, 2)],
            nonwater: vec![],
        };
        let da = adaptive_distance_map(&set, 5, 5, ).unwrap();
        assert_eq!(da.dense_class, PointClass::Water);
        assert_eq!(da.values[2 * 5 + 2], 1.0);
        // strictly decreasing away from the point along a row
        assert!(da.values[2 * 5 + 3] < 1.0);
        assert!(da.values[2 * 5 + 4] < da.values[2 * 5 + 3]);
        assert!(da.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adaptive_map_prefers_denser_class() {
        let mut nonwater = Vec::new();
        for y in 0..10u32 {
            for x in 0..10u32 {
                if (x + y) % 2 == 0 {
                    nonwater.push((x, y));
                }
            }
        }
        let set = PointSet {
            water: vec![(0, 0), (9, 9), (5, 5)],
            nonwater,
        };
        let da = adaptive_distance_map(&set, 10, 10, ).unwrap();
        assert_eq!(da.dense_class, PointClass::NonWater);
        // oriented as plain normalized distance from non-water points
        let dm = distance_map(&set.nonwater, 10, 10, PointClass::NonWater).unwrap();
        let max = dm.values.iter().cloned().fold(0.0f64, f64::max);
        for (a, d) in da.values.iter().zip(&dm.values) {
            assert!((a - d / max).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_map_tie_goes_to_water() {
        let set = PointSet {
            water: vec![(0, 0)],
            nonwater: vec![(3, 3)],
        };
        let da = adaptive_distance_map(&set, 4, 4).unwrap();
        assert_eq!(da.dense_class, PointClass::Water);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn distance_is_invariant_to_order_and_duplicates(
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (12usize, 9usize);
            let points: Vec<(u32, u32)> = (0..rng.gen_range(1..20))
                .map(|_| (rng.gen_range(0..w) as u32, rng.gen_range(0..h) as u32))
                .collect();
            let base = distance_map(&points, w, h, PointClass::Water).unwrap();
            let mut shuffled = points.clone();
            shuffled.reverse();
            shuffled.extend_from_slice(&points[..1]);
            let again = distance_map(&shuffled, w, h, PointClass::Water).unwrap();
            prop_assert_eq!(base.values, again.values);
        }
    }
}
