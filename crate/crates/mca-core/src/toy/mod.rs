//! A small trainable multimodal transformer and a synthetic localization
//! task, sized so position-layout effects on learning are measurable on one
//! CPU in minutes.
//!
//! The task: an image grid of random distractor patches contains one cued
//! marker and several decoy markers. The instruction carries a cue token;
//! the model must report the kind of the marker whose cue matches, ignoring
//! the decoys. Averaging the image is useless here (decoys sit in the same
//! embedding band as the target), so the model has to attend to the one
//! matching cell, and whatever the position layout does to attention shows
//! up directly in accuracy grouped by where that cell sat.

mod data;
mod eval;
mod model;
mod saliency;
mod train;

pub use data::{gen_dataset, quadrant_of, SyntheticSample, EVAL_SEED_STRIDE};
pub use eval::{eval_by_region, RegionReport, MIN_QUADRANT_EVAL};
pub use model::{Backprop, Forward, Params, ToyModel, MODEL_FORMAT_VERSION};
pub use saliency::{aggregate_saliency, saliency_flow, SaliencyGrid};
pub use train::{train, TrainTrace};

use crate::error::{Error, Result};
use crate::layout::Scheme;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Name which of the `marker_kinds` identities the cued marker has.
    /// Solvable under every position scheme; the default.
    Marker,
    /// Name the cued marker's cell. Diagnostic mode: schemes that fold the
    /// grid make mirrored cells indistinguishable, capping accuracy.
    Cell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub side: usize,
    /// Patch vocabulary size. The top `cues * marker_kinds` ids encode the
    /// markers, one id per (cue, kind) pair; everything below is distractor.
    pub vocab: usize,
    /// Number of distinct marker identities (label classes in marker mode).
    pub marker_kinds: usize,
    /// Number of distinct cue values a marker can carry. The instruction
    /// names one; only the matching marker determines the label.
    pub cues: usize,
    /// Decoy markers per sample (cue differs from the instruction's).
    /// Decoys are what force attention to be selective: with none, the mean
    /// of the image already betrays the answer and position stops mattering.
    pub decoys: usize,
    /// Rotary frequency base. Smaller bases rotate every plane faster, so
    /// score decay over the image span is steeper and position presses
    /// harder on retrieval. 10000 is the customary transformer setting,
    /// sized for contexts of thousands of tokens; the default here is 30,
    /// which puts the slowest plane's wavelength (~123 tokens) at about
    /// twice this model's ~68-token sequences, the same proportion. At
    /// 10000 on a sequence this short the slow planes barely rotate and
    /// training reorganizes score energy into them, sidestepping decay.
    pub rope_base: f64,
    pub instruction_len: usize,
    pub scheme: Scheme,
    pub label_mode: LabelMode,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            side: 8,
            vocab: 48,
            marker_kinds: 4,
            cues: 8,
            decoys: 8,
            rope_base: 30.0,
            instruction_len: 1,
            scheme: Scheme::Raster,
            label_mode: LabelMode::Marker,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |expected: String, got: String| {
            Err(Error::Shape {
                context: "toy config",
                expected,
                got,
            })
        };
        if self.side == 0 || self.side % 2 != 0 {
            return Err(Error::InvalidGrid { side: self.side });
        }
        if self.layers == 0 {
            return bad("at least one layer".into(), "0".into());
        }
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return bad(
                "model_dim divisible by a positive head count".into(),
                format!("model_dim {} over {} heads", self.model_dim, self.heads),
            );
        }
        let head_dim = self.model_dim / self.heads;
        if head_dim % 2 != 0 {
            return Err(Error::InvalidDimension { dim: head_dim });
        }
        if self.marker_kinds < 2 {
            return bad("at least two marker kinds".into(), self.marker_kinds.to_string());
        }
        if self.cues < 2 {
            return bad("at least two cue values".into(), self.cues.to_string());
        }
        let marker_ids = self.cues * self.marker_kinds;
        if self.vocab <= marker_ids {
            return bad(
                format!("a vocabulary larger than the {marker_ids} marker ids"),
                self.vocab.to_string(),
            );
        }
        if self.decoys + 1 > self.grid_total() {
            return bad(
                format!("decoys + 1 markers fitting {} cells", self.grid_total()),
                self.decoys.to_string(),
            );
        }
        if !(self.rope_base > 1.0) || !self.rope_base.is_finite() {
            return bad("a finite rotary base above 1".into(), self.rope_base.to_string());
        }
        if self.instruction_len == 0 {
            return bad("at least one instruction token".into(), "0".into());
        }
        if self.batch_size == 0 {
            return bad("a positive batch size".into(), "0".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Hidden width of the feed-forward blocks.
    pub fn ff_dim(&self) -> usize {
        2 * self.model_dim
    }

    pub fn grid_total(&self) -> usize {
        self.side * self.side
    }

    /// First of the reserved marker ids; everything below it is distractor
    /// vocabulary.
    pub fn marker_base(&self) -> usize {
        self.vocab - self.cues * self.marker_kinds
    }

    /// Patch id encoding marker (cue, kind).
    pub fn marker_id(&self, cue: usize, kind: usize) -> usize {
        debug_assert!(cue < self.cues && kind < self.marker_kinds);
        self.marker_base() + cue * self.marker_kinds + kind
    }

    /// Inverse of [`marker_id`](Self::marker_id); `None` for distractors.
    pub fn decode_marker(&self, id: usize) -> Option<(usize, usize)> {
        let off = id.checked_sub(self.marker_base())?;
        (id < self.vocab).then(|| (off / self.marker_kinds, off % self.marker_kinds))
    }

    /// Rows in the shared embedding table: the patch vocabulary plus one cue
    /// token per cue value (cue tokens live above the patch ids).
    pub fn vocab_total(&self) -> usize {
        self.vocab + self.cues
    }

    /// Embedding row of the instruction's cue token.
    pub fn cue_id(&self, cue: usize) -> usize {
        debug_assert!(cue < self.cues);
        self.vocab + cue
    }

    pub fn num_classes(&self) -> usize {
        match self.label_mode {
            LabelMode::Marker => self.marker_kinds,
            LabelMode::Cell => self.grid_total(),
        }
    }
}
