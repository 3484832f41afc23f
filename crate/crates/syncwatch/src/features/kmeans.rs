//! Scalar k-means quantizer for distribution entries.

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, seeded_rng};
use rand::Rng;

const RESTARTS: usize = 50;
const MAX_ITERS: usize = 200;
const SEED_TAG: u64 = 0x6b6d; // "km"

/// Sorted scalar codebook. Centers are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Vec<f64>,
}

impl Codebook {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "codebook needs at least 2 centers, got {}",
                centers.len()
            )));
        }
        for w in centers.windows(2) {
            // NaN-safe: anything not strictly increasing (including NaN) fails.
            if w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less) {
                return Err(Error::InvalidConfig(format!(
                    "codebook centers must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { centers })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Index of the nearest center; exact ties go to the lower index.
    pub fn encode(&self, value: f64) -> usize {
        let mut best = 0usize;
        let mut best_dist = (value - self.centers[0]).abs();
        for (i, &c) in self.centers.iter().enumerate().skip(1) {
            let d = (value - c).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }
}

/// Lloyd's algorithm on scalars with k-means++ seeding and multiple restarts.
/// Returns the centers of the best-inertia run, sorted ascending.
/// Deterministic given the seed.
pub fn kmeans_fit(values: &[f64], k: usize, seed: u64) -> Result<Codebook> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::TooFewDistinct { needed: k, got: distinct.len() });
    }

    let mut best_centers: Option<Vec<f64>> = None;
    let mut best_inertia = f64::INFINITY;

    for restart in 0..RESTARTS {
        let mut rng = seeded_rng(derive_seed(seed, SEED_TAG, restart as u64));
        let mut centers = seed_plus_plus(values, k, &mut rng);
        let mut assignments = vec![usize::MAX; values.len()];

        for _ in 0..MAX_ITERS {
            let mut changed = false;
            for (i, &v) in values.iter().enumerate() {
                let a = nearest(&centers, v);
                if a != assignments[i] {
                    assignments[i] = a;
                    changed = true;
                }
            }
            if !changed {
                break;
            }

            let mut sums = vec![0.0f64; k];
            let mut counts = vec![0usize; k];
            for (i, &v) in values.iter().enumerate() {
                sums[assignments[i]] += v;
                counts[assignments[i]] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c] / counts[c] as f64;
                } else {
                    // Reseat an empty cluster at the worst-fit point.
                    let mut far_idx = 0usize;
                    let mut far_dist = -1.0f64;
                    for (i, &v) in values.iter().enumerate() {
                        let d = (v - centers[assignments[i]]).abs();
                        if d > far_dist {
                            far_dist = d;
                            far_idx = i;
                        }
                    }
                    centers[c] = values[far_idx];
                }
            }
        }

        let inertia: f64 = values
            .iter()
            .map(|&v| {
                let c = centers[nearest(&centers, v)];
                (v - c) * (v - c)
            })
            .sum();
        if inertia < best_inertia {
            best_inertia = inertia;
            best_centers = Some(centers);
        }
    }

    let mut centers = best_centers.expect("at least one restart ran");
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Codebook::new(centers)
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0usize;
    let mut best_dist = (v - centers[0]).abs();
    for (i, &c) in centers.iter().enumerate().skip(1) {
        let d = (v - c).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// k-means++ seeding: first center uniform, then each next center drawn with
/// probability proportional to squared distance from the nearest chosen one.
fn seed_plus_plus(values: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.gen_range(0..values.len())]);
    let mut d2: Vec<f64> = values.iter().map(|&v| (v - centers[0]) * (v - centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut dart = rng.gen::<f64>() * total;
            let mut chosen = values.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                dart -= w;
                if dart <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            values[chosen]
        } else {
            // All mass on existing centers; any distinct value works.
            *values
                .iter()
                .find(|&&v| centers.iter().all(|&c| c != v))
                .expect("distinct count exceeds chosen centers")
        };
        centers.push(next);
        for (i, &v) in values.iter().enumerate() {
            let d = (v - next) * (v - next);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}
