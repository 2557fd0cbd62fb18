use super::data::SyntheticSample;
use super::ToyModel;
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Per-cell influence of the image on the reader tokens: the absolute
/// weight-times-gradient of each image column, summed over attention maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyGrid {
    pub side: usize,
    pub values: Array2<f64>,
}

impl SaliencyGrid {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Sums by grid quadrant: 0 top-left, 1 top-right, 2 bottom-left,
    /// 3 bottom-right.
    pub fn quadrant_totals(&self) -> [f64; 4] {
        let half = self.side / 2;
        let mut out = [0f64; 4];
        for ((r, c), &v) in self.values.indexed_iter() {
            out[usize::from(r >= half) * 2 + usize::from(c >= half)] += v;
        }
        out
    }
}

/// Folds matched attention-weight and weight-gradient matrices into one
/// saliency grid. `reader_rows` selects which query rows count (typically
/// the instruction suffix); `image_cols` maps key columns onto raster cells.
pub fn aggregate_saliency(
    weights: &[&Array2<f64>],
    grads: &[&Array2<f64>],
    reader_rows: Range<usize>,
    image_cols: Range<usize>,
    side: usize,
) -> Result<SaliencyGrid> {
    if weights.is_empty() || weights.len() != grads.len() {
        return Err(Error::Shape {
            context: "saliency inputs",
            expected: "matching, nonempty weight and gradient lists".into(),
            got: format!("{} weights, {} gradients", weights.len(), grads.len()),
        });
    }
    let n = weights[0].nrows();
    for m in weights.iter().chain(grads.iter()) {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Shape {
                context: "saliency inputs",
                expected: format!("square {n}x{n} maps"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    if reader_rows.is_empty() || reader_rows.end > n || image_cols.end > n {
        return Err(Error::Shape {
            context: "saliency ranges",
            expected: format!("nonempty ranges within {n} rows"),
            got: format!("rows {reader_rows:?}, cols {image_cols:?}"),
        });
    }
    if image_cols.len() != side * side {
        return Err(Error::Shape {
            context: "saliency ranges",
            expected: format!("{} image columns for side {side}", side * side),
            got: image_cols.len().to_string(),
        });
    }
    let mut values = Array2::zeros((side, side));
    for (w, g) in weights.iter().zip(grads.iter()) {
        for row in reader_rows.clone() {
            for (offset, col) in image_cols.clone().enumerate() {
                values[(offset / side, offset % side)] += (w[[row, col]] * g[[row, col]]).abs();
            }
        }
    }
    Ok(SaliencyGrid { side, values })
}

/// Saliency of one sample under the current parameters: forward, backward,
/// then weight-times-gradient aggregation over the instruction rows.
pub fn saliency_flow(model: &ToyModel, sample: &SyntheticSample) -> Result<SaliencyGrid> {
    let fwd = model.forward(sample)?;
    let bwd = model.backward(sample, &fwd)?;
    let weights = fwd.attention_weights();
    let grads: Vec<&Array2<f64>> = bwd
        .attn_weight_grads
        .iter()
        .flat_map(|layer| layer.iter())
        .collect();
    aggregate_saliency(
        &weights,
        &grads,
        model.sequence().suffix_range(),
        model.sequence().image_range(),
        model.cfg().side,
    )
}
