use super::data::{quadrant_of, SyntheticSample};
use super::ToyModel;
use crate::error::{Error, Result};
use crate::layout::Scheme;
use serde::{Deserialize, Serialize};

/// Per-quadrant statistics below this sample count are too noisy to compare.
pub const MIN_QUADRANT_EVAL: usize = 32;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Quadrant-resolved evaluation of one model on one dataset. Quadrants are
/// keyed by marker location (0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right) regardless of the label mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub version: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub samples_per_quadrant: [usize; 4],
    pub quadrant_accuracy: [f64; 4],
    /// Mean attention weight the final instruction token puts on the marker
    /// cell, averaged over layers, heads, and samples in the quadrant.
    pub quadrant_attention_mass: [f64; 4],
    pub overall_accuracy: f64,
    /// Highest minus lowest quadrant accuracy.
    pub accuracy_spread: f64,
    pub mass_spread: f64,
    pub init_fingerprint: String,
    pub param_fingerprint: String,
}

impl RegionReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn eval_by_region(model: &ToyModel, data: &[SyntheticSample]) -> Result<RegionReport> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let side = model.cfg().side;
    let mut counts = [0usize; 4];
    let mut correct = [0usize; 4];
    let mut mass = [0f64; 4];
    for sample in data {
        let fwd = model.forward(sample)?;
        let q = quadrant_of(sample.marker_cell, side);
        counts[q] += 1;
        if fwd.predicted() == sample.label {
            correct[q] += 1;
        }
        mass[q] += fwd.attention_to(sample.marker_cell);
    }
    for (q, &got) in counts.iter().enumerate() {
        if got < MIN_QUADRANT_EVAL {
            return Err(Error::SparseQuadrant {
                quadrant: q,
                got,
                need: MIN_QUADRANT_EVAL,
            });
        }
    }
    let mut accuracy = [0f64; 4];
    let mut mean_mass = [0f64; 4];
    for q in 0..4 {
        accuracy[q] = correct[q] as f64 / counts[q] as f64;
        mean_mass[q] = mass[q] / counts[q] as f64;
    }
    let overall = correct.iter().sum::<usize>() as f64 / data.len() as f64;
    let spread = |vals: &[f64; 4]| {
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    };
    Ok(RegionReport {
        version: REPORT_FORMAT_VERSION,
        scheme: model.cfg().scheme,
        seed: model.cfg().seed,
        samples_per_quadrant: counts,
        quadrant_accuracy: accuracy,
        quadrant_attention_mass: mean_mass,
        overall_accuracy: overall,
        accuracy_spread: spread(&accuracy),
        mass_spread: spread(&mean_mass),
        init_fingerprint: model.init_fingerprint().to_string(),
        param_fingerprint: model.params.fingerprint(),
    })
}
