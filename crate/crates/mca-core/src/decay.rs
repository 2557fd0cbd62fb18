//! How content-matched attention scores fall off with position distance.
//!
//! For a unit vector `q`, the score `q . rotate(q, dist)` collapses to a
//! cosine mixture over the rotation planes, weighted by how much of `q`
//! lives in each plane. Averaged over random unit vectors this decays with
//! distance, which is the mechanism that starves far-away image tokens of
//! attention. The profile here measures that average empirically.

use crate::error::{Error, Result};
use crate::layout::{GridSpec, PositionLayout};
use crate::rope::{rotate, RotaryFrequencies};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Write as _;

/// Content-matched score of a vector against its own rotation.
pub fn self_similarity<T: Scalar>(q: &[T], dist: i64, freq: &RotaryFrequencies<T>) -> Result<T> {
    let rotated = rotate(q, dist, freq)?;
    Ok(q.iter().zip(&rotated).map(|(a, b)| *a * *b).sum())
}

/// Mean self-similarity per distance, averaged over random unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayProfile<T> {
    pub num_samples: usize,
    /// `mean_score[d]` is the average score at distance `d`.
    pub mean_score: Vec<T>,
}

impl<T: Scalar> DecayProfile<T> {
    pub fn max_dist(&self) -> usize {
        self.mean_score.len() - 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,mean_score\n");
        for (d, s) in self.mean_score.iter().enumerate() {
            let _ = writeln!(out, "{d},{s}");
        }
        out
    }
}

fn random_unit_vector<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| T::real(x / norm)).collect();
        }
    }
}

fn sample_scores<T: Scalar>(
    freq: &RotaryFrequencies<T>,
    max_dist: usize,
    seed: u64,
    stream: u64,
) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let q = random_unit_vector::<T>(&mut rng, freq.dim());
    (0..=max_dist)
        .map(|d| self_similarity(&q, d as i64, freq).expect("q has freq dim"))
        .collect()
}

/// Empirical decay profile over distances `0..=max_dist`.
///
/// Each sample draws its own RNG stream from `seed`, so the result is
/// byte-identical for any `workers` value; workers only split the sample
/// range. The reduction always runs in sample order.
pub fn decay_profile<T: Scalar>(
    freq: &RotaryFrequencies<T>,
    num_samples: usize,
    max_dist: usize,
    seed: u64,
    workers: usize,
) -> Result<DecayProfile<T>> {
    if num_samples == 0 {
        return Err(Error::Shape {
            context: "decay profile",
            expected: "at least one sample".into(),
            got: "0".into(),
        });
    }
    let mut per_sample: Vec<Vec<T>> = vec![Vec::new(); num_samples];
    let threads = workers.max(1).min(num_samples);
    let chunk = num_samples.div_ceil(threads);
    std::thread::scope(|scope| {
        for (w, slot) in per_sample.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (off, out) in slot.iter_mut().enumerate() {
                    *out = sample_scores(freq, max_dist, seed, (w * chunk + off) as u64);
                }
            });
        }
    });
    let mut mean = vec![T::zero(); max_dist + 1];
    for scores in &per_sample {
        for (m, s) in mean.iter_mut().zip(scores) {
            *m += *s;
        }
    }
    let inv = T::one() / T::count(num_samples);
    for m in mean.iter_mut() {
        *m = *m * inv;
    }
    Ok(DecayProfile {
        num_samples,
        mean_score: mean,
    })
}

/// Mean self-similarity seen from a query at `query_position` toward each
/// grid cell under the given layout, arranged as a `side x side` map.
pub fn grid_decay_map<T: Scalar>(
    grid: GridSpec,
    layout: &PositionLayout,
    query_position: usize,
    freq: &RotaryFrequencies<T>,
    num_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<Array2<T>> {
    layout.validate()?;
    if layout.side != grid.side() {
        return Err(Error::LayoutMismatch {
            layout_side: layout.side,
            grid_side: grid.side(),
        });
    }
    let max_index = layout.num_distinct - 1;
    if query_position < max_index {
        return Err(Error::QueryBehindImage {
            query: query_position as i64,
            max_index: max_index as i64,
        });
    }
    let profile = decay_profile(freq, num_samples, query_position, seed, workers)?;
    let side = grid.side();
    Ok(Array2::from_shape_fn((side, side), |(r, c)| {
        profile.mean_score[query_position - layout.index_at(r, c)]
    }))
}
