//! Index-causal visibility over text + image + text sequences.
//!
//! Visibility is decided purely by assigned position index: a query sees a
//! key when the key's index does not exceed the query's. Tokens that share
//! an index (mirror-image cells under the Manhattan schemes) see each other
//! in both directions. With a raster layout the rule collapses to the plain
//! lower-triangular mask.

use crate::error::{Error, Result};
use crate::layout::{GridSpec, PositionLayout};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::ops::Range;

/// Token positions for a prefix of text, one image grid, and a suffix of
/// instruction text.
///
/// * prefix token `t` is at index `t`,
/// * image cell `t` (row-major) is at `prefix_len + layout.indices[t]`,
/// * suffix token `k` is at `prefix_len + layout.num_distinct + k`.
///
/// Suffix indices therefore sit strictly above every image index: image
/// tokens can never see instruction tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimodalSequence {
    prefix_len: usize,
    image_len: usize,
    suffix_len: usize,
    side: usize,
    assigned: Vec<usize>,
}

impl MultimodalSequence {
    /// A sequence with no image. Indices are 0..len, so the induced mask is
    /// exactly lower-triangular.
    pub fn text_only(len: usize) -> Self {
        Self {
            prefix_len: len,
            image_len: 0,
            suffix_len: 0,
            side: 0,
            assigned: (0..len).collect(),
        }
    }

    pub fn build(
        prefix_len: usize,
        grid: GridSpec,
        suffix_len: usize,
        layout: &PositionLayout,
    ) -> Result<Self> {
        layout.validate()?;
        if layout.side != grid.side() {
            return Err(Error::LayoutMismatch {
                layout_side: layout.side,
                grid_side: grid.side(),
            });
        }
        let mut assigned = Vec::with_capacity(prefix_len + grid.total() + suffix_len);
        assigned.extend(0..prefix_len);
        assigned.extend(layout.indices.iter().map(|&i| prefix_len + i));
        let suffix_base = prefix_len + layout.num_distinct;
        assigned.extend((0..suffix_len).map(|k| suffix_base + k));
        Ok(Self {
            prefix_len,
            image_len: grid.total(),
            suffix_len,
            side: grid.side(),
            assigned,
        })
    }

    pub fn len(&self) -> usize {
        self.assigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned.is_empty()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn image_len(&self) -> usize {
        self.image_len
    }

    pub fn suffix_len(&self) -> usize {
        self.suffix_len
    }

    /// Grid side, 0 for text-only sequences.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn image_range(&self) -> Range<usize> {
        self.prefix_len..self.prefix_len + self.image_len
    }

    pub fn suffix_range(&self) -> Range<usize> {
        self.prefix_len + self.image_len..self.len()
    }

    /// Assigned position index per token.
    pub fn assigned(&self) -> &[usize] {
        &self.assigned
    }

    /// Assigned indices widened for the attention path.
    pub fn positions(&self) -> Vec<i64> {
        self.assigned.iter().map(|&p| p as i64).collect()
    }
}

/// Boolean visibility matrix; `visible(i, j)` says query `i` may attend to
/// key `j`. Every query sees itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    visible: Array2<bool>,
}

impl MaskMatrix {
    pub fn from_array(visible: Array2<bool>) -> Result<Self> {
        if visible.nrows() != visible.ncols() {
            return Err(Error::Shape {
                context: "mask matrix",
                expected: "square matrix".into(),
                got: format!("{}x{}", visible.nrows(), visible.ncols()),
            });
        }
        Ok(Self { visible })
    }

    /// The classic causal mask: query i sees keys 0..=i.
    pub fn lower_triangular(n: usize) -> Self {
        Self {
            visible: Array2::from_shape_fn((n, n), |(i, j)| j <= i),
        }
    }

    pub fn n(&self) -> usize {
        self.visible.nrows()
    }

    pub fn visible(&self, query: usize, key: usize) -> bool {
        self.visible[(query, key)]
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.visible
    }

    pub fn row_visible_count(&self, query: usize) -> usize {
        self.visible.row(query).iter().filter(|&&v| v).count()
    }

    /// ASCII PGM rendering, 255 where visible, 0 where blocked.
    pub fn to_pgm(&self) -> String {
        let n = self.n();
        let mut out = format!("P2\n{n} {n}\n255\n");
        for row in self.visible.rows() {
            let line: Vec<&str> = row.iter().map(|&v| if v { "255" } else { "0" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MaskJson::from(self)).expect("mask serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: MaskJson = serde_json::from_str(json)?;
        let n = raw.n;
        if raw.visible.len() != n || raw.visible.iter().any(|row| row.len() != n) {
            return Err(Error::Shape {
                context: "mask json",
                expected: format!("{n} rows of {n}"),
                got: format!("{} rows", raw.visible.len()),
            });
        }
        let flat: Vec<bool> = raw.visible.into_iter().flatten().collect();
        Ok(Self {
            visible: Array2::from_shape_vec((n, n), flat).expect("checked shape"),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    n: usize,
    visible: Vec<Vec<bool>>,
}

impl From<&MaskMatrix> for MaskJson {
    fn from(m: &MaskMatrix) -> Self {
        MaskJson {
            n: m.n(),
            visible: m.visible.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

/// Visibility induced by assigned indices: key visible iff its index is not
/// above the query's.
pub fn index_causal_mask(seq: &MultimodalSequence) -> MaskMatrix {
    let assigned = seq.assigned();
    let n = assigned.len();
    MaskMatrix {
        visible: Array2::from_shape_fn((n, n), |(i, j)| assigned[j] <= assigned[i]),
    }
}

/// Row-level summary of a mask over a given sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    /// Visible keys per query row.
    pub row_counts: Vec<usize>,
    pub total_visible: usize,
    /// Image-block pairs (i < j) that share an assigned index and see each
    /// other in both directions.
    pub mutual_image_pairs: usize,
    /// Image-block pairs that share an assigned index but do not see each
    /// other symmetrically. Always 0 for index-causal masks.
    pub equal_index_asymmetries: usize,
}

pub fn mask_stats(mask: &MaskMatrix, seq: &MultimodalSequence) -> Result<MaskStats> {
    if mask.n() != seq.len() {
        return Err(Error::Shape {
            context: "mask stats",
            expected: format!("mask of size {}", seq.len()),
            got: mask.n().to_string(),
        });
    }
    let row_counts: Vec<usize> = (0..mask.n()).map(|i| mask.row_visible_count(i)).collect();
    let total_visible = row_counts.iter().sum();
    let assigned = seq.assigned();
    let image = seq.image_range();
    let mut mutual = 0;
    let mut asymmetric = 0;
    for i in image.clone() {
        for j in i + 1..image.end {
            if assigned[i] != assigned[j] {
                continue;
            }
            if mask.visible(i, j) && mask.visible(j, i) {
                mutual += 1;
            } else if mask.visible(i, j) != mask.visible(j, i) {
                asymmetric += 1;
            }
        }
    }
    Ok(MaskStats {
        row_counts,
        total_visible,
        mutual_image_pairs: mutual,
        equal_index_asymmetries: asymmetric,
    })
}
