//! Level-set region growing from a seed toward a predicted region.
//!
//! `phi(i) = dist(i, seed) - beta * dist(i, outside(prediction))`, and the
//! grown region is `{ i : phi(i) <= 0 }`. Distances to an empty set are
//! infinite; `beta * inf` is `inf` for `beta > 0` and `0` for `beta == 0`.

use crate::error::{Error, Result};
use crate::geometry::edt::{distance_transform, DistanceField};
use crate::raster::InstanceMask;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LevelSetField {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// The nonpositive sublevel set.
    pub fn sublevel(&self) -> InstanceMask {
        InstanceMask::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| v <= 0.0).collect(),
        )
        .expect("level set dims are consistent")
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::config("beta", format!("must be >= 0, got {beta}")));
    }
    Ok(())
}

/// `beta * d` with `0 * inf = 0`.
pub fn scaled_distance(beta: f64, d: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else {
        beta * d
    }
}

pub fn level_set(seed: &InstanceMask, prediction: &InstanceMask, beta: f64) -> Result<LevelSetField> {
    seed.check_same_dims(prediction)?;
    check_beta(beta)?;
    if seed.is_empty() {
        return Err(Error::EmptySeed);
    }
    let to_seed = distance_transform(seed);
    let to_outside = distance_transform(&prediction.complement());
    Ok(combine(&to_seed, &to_outside, beta))
}

fn combine(to_seed: &DistanceField, to_outside: &DistanceField, beta: f64) -> LevelSetField {
    let values = to_seed
        .values()
        .iter()
        .zip(to_outside.values())
        .map(|(&a, &b)| a - scaled_distance(beta, b))
        .collect();
    LevelSetField {
        height: to_seed.height(),
        width: to_seed.width(),
        values,
    }
}

pub fn grow_region(seed: &InstanceMask, prediction: &InstanceMask, beta: f64) -> Result<InstanceMask> {
    Ok(level_set(seed, prediction, beta)?.sublevel())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, radius: f64) -> InstanceMask {
        let c = (n as f64 - 1.0) / 2.0;
        InstanceMask::from_fn(n, n, |r, col| {
            let (dy, dx) = (r as f64 - c, col as f64 - c);
            (dy * dy + dx * dx).sqrt() <= radius
        })
    }

    fn square(n: usize, half: usize) -> InstanceMask {
        let c = n / 2;
        InstanceMask::from_fn(n, n, |r, col| r.abs_diff(c) <= half && col.abs_diff(c) <= half)
    }

    /// Direct evaluation of the level-set rule, min over all pixel pairs.
    fn brute_phi(seed: &InstanceMask, pred: &InstanceMask, beta: f64) -> Vec<f64> {
        let (h, w) = seed.dims();
        let pts = |m: &InstanceMask, want: bool| -> Vec<(i64, i64)> {
            (0..h * w)
                .filter(|&i| m.bits()[i] == want)
                .map(|i| ((i / w) as i64, (i % w) as i64))
                .collect()
        };
        let s = pts(seed, true);
        let o = pts(pred, false);
        let dist = |set: &[(i64, i64)], r: i64, c: i64| {
            set.iter()
                .map(|&(y, x)| (((r - y).pow(2) + (c - x).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let mut out = Vec::new();
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                let d2 = dist(&o, r, c);
                let second = if beta == 0.0 { 0.0 } else { beta * d2 };
                out.push(dist(&s, r, c) - second);
            }
        }
        out
    }

    #[test]
    fn beta_zero_is_seed_distance() {
        let seed = square(7, 1);
        let pred = disk(7, 3.0);
        let phi = level_set(&seed, &pred, 0.0).unwrap();
        assert_eq!(phi.values(), distance_transform(&seed).values());
        assert_eq!(grow_region(&seed, &pred, 0.0).unwrap(), seed);
    }

    #[test]
    fn seed_pixels_are_nonpositive() {
        let seed = square(9, 1);
        let pred = disk(9, 2.0);
        let phi = level_set(&seed, &pred, 0.7).unwrap();
        for i in seed.support() {
            assert!(phi.values()[i] <= 0.0);
        }
    }

    #[test]
    fn five_by_five_matches_direct_evaluation() {
        let seed = InstanceMask::from_fn(5, 5, |r, c| r == 2 && (1..3).contains(&c));
        let pred = InstanceMask::from_fn(5, 5, |r, c| r >= 1 && c <= 3);
        for beta in [0.0, 0.5, 1.0, 3.0] {
            let phi = level_set(&seed, &pred, beta).unwrap();
            assert_eq!(phi.values(), brute_phi(&seed, &pred, beta).as_slice());
        }
    }

    #[test]
    fn huge_beta_snaps_to_prediction() {
        let seed = square(9, 1);
        let pred = disk(9, 3.5);
        assert!(seed.is_subset_of(&pred));
        assert_eq!(grow_region(&seed, &pred, 1e6).unwrap(), pred);
    }

    #[test]
    fn disk_with_central_seed_at_unit_beta() {
        let seed = square(9, 1);
        let pred = disk(9, 4.0);
        let grown = grow_region(&seed, &pred, 1.0).unwrap();
        let expected: Vec<bool> = brute_phi(&seed, &pred, 1.0).iter().map(|&v| v <= 0.0).collect();
        assert_eq!(grown.bits(), expected.as_slice());
        assert!(seed.is_subset_of(&grown) && grown.is_subset_of(&pred));
        assert!(grown.count() > seed.count() && grown.count() < pred.count());
    }

    #[test]
    fn full_prediction_grows_everything() {
        let seed = square(5, 0);
        let grown = grow_region(&seed, &InstanceMask::full(5, 5), 1.0).unwrap();
        assert_eq!(grown, InstanceMask::full(5, 5));
        let frozen = grow_region(&seed, &InstanceMask::full(5, 5), 0.0).unwrap();
        assert_eq!(frozen, seed);
    }

    #[test]
    fn errors() {
        let a = InstanceMask::empty(3, 3);
        let b = InstanceMask::empty(3, 4);
        assert!(matches!(level_set(&a, &b, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(level_set(&a, &a, 1.0), Err(Error::EmptySeed)));
        assert!(level_set(&square(3, 0), &a, -1.0).is_err());
    }
}
