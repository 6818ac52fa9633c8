//! Synthetic two-dimensional classification and one-dimensional regression
//! sets used for the uncertainty-landscape figures.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    TwoMoons,
    SineRegression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub n: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// The two x-intervals sampled by the sine regression toy. Nothing is drawn
/// between them.
pub const SINE_INTERVALS: [(f64, f64); 2] = [(-3.0, -1.0), (1.0, 3.0)];

pub fn sine_target(x: f64) -> f64 {
    (3.0 * x).sin() * x
}

pub fn make_toys(spec: &ToySpec) -> Result<Table> {
    if spec.n < 10 {
        return Err(Error::Config(format!("toy datasets need n >= 10, got {}", spec.n)));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("toy noise must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite sigma");
    let mut rows = match spec.kind {
        ToyKind::TwoMoons => {
            let outer = spec.n / 2;
            let inner = spec.n - outer;
            let arc = |k: usize, m: usize| if m > 1 { PI * k as f64 / (m - 1) as f64 } else { 0.0 };
            let mut rows = Vec::with_capacity(spec.n);
            for k in 0..outer {
                let t = arc(k, outer);
                rows.push(vec![t.cos(), t.sin(), 0.0]);
            }
            for k in 0..inner {
                let t = arc(k, inner);
                rows.push(vec![1.0 - t.cos(), 0.5 - t.sin(), 1.0]);
            }
            if spec.noise > 0.0 {
                for r in &mut rows {
                    r[0] += noise.sample(&mut rng);
                    r[1] += noise.sample(&mut rng);
                }
            }
            rows
        }
        ToyKind::SineRegression => (0..spec.n)
            .map(|k| {
                let (lo, hi) = SINE_INTERVALS[k % 2];
                let x = rng.random_range(lo..hi);
                let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                vec![x, sine_target(x) + eps]
            })
            .collect(),
    };
    rows.shuffle(&mut rng);
    let columns = match spec.kind {
        ToyKind::TwoMoons => vec!["x1", "x2", "label"],
        ToyKind::SineRegression => vec!["x", "y"],
    };
    Ok(Table {
        columns: columns.into_iter().map(String::from).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ToyKind, n: usize, noise: f64) -> ToySpec {
        ToySpec { kind, n, noise, seed: 3 }
    }

    #[test]
    fn noiseless_moons_are_nearest_neighbour_separable_but_not_linearly() {
        let t = make_toys(&spec(ToyKind::TwoMoons, 200, 0.0)).unwrap();
        for (i, a) in t.rows.iter().enumerate() {
            let nn = t
                .rows
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .min_by(|(_, b), (_, c)| {
                    let d = |p: &Vec<f64>| (p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2);
                    d(b).total_cmp(&d(c))
                })
                .unwrap()
                .1;
            assert_eq!(nn[2], a[2]);
        }
        // (0, 0.5) lies on the inner moon and inside the outer moon's convex
        // hull (the upper unit half-disc), so no line separates the classes.
        let on_inner = t.rows.iter().any(|r| r[2] == 1.0 && r[0].abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        assert!(on_inner);
        assert!(0.5f64.hypot(0.0) < 1.0);
    }

    #[test]
    fn sine_gap_is_empty() {
        let t = make_toys(&spec(ToyKind::SineRegression, 500, 0.1)).unwrap();
        assert!(t.rows.iter().all(|r| r[0] <= -1.0 || r[0] >= 1.0));
        assert!(t.rows.iter().any(|r| r[0] < 0.0) && t.rows.iter().any(|r| r[0] > 0.0));
    }

    #[test]
    fn generation_is_reproducible() {
        for kind in [ToyKind::TwoMoons, ToyKind::SineRegression] {
            let a = make_toys(&spec(kind, 100, 0.2)).unwrap();
            let b = make_toys(&spec(kind, 100, 0.2)).unwrap();
            let bits = |t: &Table| t.rows.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(make_toys(&spec(ToyKind::TwoMoons, 9, 0.1)).is_err());
    }
}
