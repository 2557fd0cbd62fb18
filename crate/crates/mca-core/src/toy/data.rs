use super::{LabelMode, ToyConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixed into eval-set seeds so train and eval draws never share a stream.
pub const EVAL_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSample {
    /// One patch id per grid cell, raster order.
    pub patch_ids: Vec<usize>,
    /// Raster index of the cell holding the cued marker.
    pub marker_cell: usize,
    /// Cue value the instruction announces; decoy markers carry others.
    pub cue: usize,
    pub label: usize,
}

/// Quadrant of a raster cell: 0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right.
pub fn quadrant_of(cell: usize, side: usize) -> usize {
    let r = cell / side;
    let c = cell % side;
    let half = side / 2;
    usize::from(r >= half) * 2 + usize::from(c >= half)
}

/// Draws `count` samples. Cue, marker cell, kind, decoy placement and
/// distractor ids are all uniform. Fully determined by `seed`.
///
/// Labels in marker mode are the cued marker's identity, never its
/// location: location must stay out of the label so that position schemes
/// which blur it (mirrored layouts make mirrored cells indistinguishable)
/// still leave the task solvable, and per-region accuracy then measures
/// retrieval balance.
pub fn gen_dataset(cfg: &ToyConfig, count: usize, seed: u64) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = cfg.grid_total();
    let base = cfg.marker_base();
    (0..count)
        .map(|_| {
            let cue = rng.gen_range(0..cfg.cues);
            let marker_cell = rng.gen_range(0..total);
            let kind = rng.gen_range(0..cfg.marker_kinds);
            let mut patch_ids: Vec<usize> =
                (0..total).map(|_| rng.gen_range(0..base)).collect();
            patch_ids[marker_cell] = cfg.marker_id(cue, kind);
            let mut taken = vec![marker_cell];
            while taken.len() < cfg.decoys + 1 {
                let cell = rng.gen_range(0..total);
                if taken.contains(&cell) {
                    continue;
                }
                // uniform over the cues other than the sample's
                let skewed = rng.gen_range(0..cfg.cues - 1);
                let decoy_cue = skewed + usize::from(skewed >= cue);
                let decoy_kind = rng.gen_range(0..cfg.marker_kinds);
                patch_ids[cell] = cfg.marker_id(decoy_cue, decoy_kind);
                taken.push(cell);
            }
            let label = match cfg.label_mode {
                LabelMode::Marker => kind,
                LabelMode::Cell => marker_cell,
            };
            SyntheticSample {
                patch_ids,
                marker_cell,
                cue,
                label,
            }
        })
        .collect()
}
