//! Masked attention with rotary positions, forward and backward.
//!
//! The fast path rotates queries and keys plane by plane and never builds a
//! rotation matrix; because each rotation is orthogonal, the score between
//! query `i` and key `j` depends only on their contents and the position
//! difference `p_j - p_i`. Tests exploit that by comparing against a dense
//! matrix oracle built from [`crate::rope::rotation_matrix`].

use crate::error::{Error, Result};
use crate::layout::{GridSpec, PositionLayout};
use crate::mask::{index_causal_mask, MaskMatrix, MultimodalSequence};
use crate::rope::{rotate_in_place, RotaryFrequencies};
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig<T> {
    head_dim: usize,
    num_heads: usize,
    scale: T,
}

impl<T: Scalar> AttentionConfig<T> {
    /// `scale` is pinned to `1 / sqrt(head_dim)`.
    pub fn new(head_dim: usize, num_heads: usize) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::InvalidDimension { dim: head_dim });
        }
        if num_heads == 0 {
            return Err(Error::Shape {
                context: "attention config",
                expected: "at least one head".into(),
                got: "0 heads".into(),
            });
        }
        Ok(Self {
            head_dim,
            num_heads,
            scale: T::one() / T::count(head_dim).sqrt(),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn scale(&self) -> T {
        self.scale
    }
}

/// Per-head attention weights and outputs. Masked weight entries are exactly
/// zero; each visible row sums to one.
#[derive(Debug, Clone)]
pub struct AttentionResult<T> {
    pub weights: Vec<Array2<T>>,
    pub outputs: Vec<Array2<T>>,
}

/// Rotated queries and keys kept around for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    rot_q: Vec<Array2<T>>,
    rot_k: Vec<Array2<T>>,
}

/// Gradients produced by [`rope_attention_backward`]. `d_weights` is the
/// loss gradient with respect to the post-softmax weights, which is what
/// saliency maps consume.
#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub d_q: Vec<Array2<T>>,
    pub d_k: Vec<Array2<T>>,
    pub d_v: Vec<Array2<T>>,
    pub d_weights: Vec<Array2<T>>,
}

fn check_shapes<T: Scalar>(
    heads_q: &[ArrayView2<T>],
    heads_k: &[ArrayView2<T>],
    heads_v: &[ArrayView2<T>],
    positions: &[i64],
    mask: &MaskMatrix,
    freq: &RotaryFrequencies<T>,
    cfg: &AttentionConfig<T>,
) -> Result<usize> {
    let shape_err = |context: &'static str, expected: String, got: String| Error::Shape {
        context,
        expected,
        got,
    };
    if freq.dim() != cfg.head_dim() {
        return Err(shape_err(
            "attention",
            format!("frequencies for head_dim {}", cfg.head_dim()),
            freq.dim().to_string(),
        ));
    }
    if heads_q.len() != cfg.num_heads() || heads_k.len() != cfg.num_heads() || heads_v.len() != cfg.num_heads() {
        return Err(shape_err(
            "attention",
            format!("{} heads", cfg.num_heads()),
            format!("{}/{}/{}", heads_q.len(), heads_k.len(), heads_v.len()),
        ));
    }
    let n = positions.len();
    if mask.n() != n {
        return Err(shape_err(
            "attention",
            format!("mask of size {n}"),
            mask.n().to_string(),
        ));
    }
    fn check_head_dims<T: Scalar>(
        name: &'static str,
        heads: &[ArrayView2<T>],
        n: usize,
        head_dim: usize,
    ) -> Result<()> {
        for h in heads {
            if h.nrows() != n || h.ncols() != head_dim {
                return Err(Error::Shape {
                    context: "attention",
                    expected: format!("{name} of shape {n}x{head_dim}"),
                    got: format!("{}x{}", h.nrows(), h.ncols()),
                });
            }
        }
        Ok(())
    }
    check_head_dims("q", heads_q, n, cfg.head_dim())?;
    check_head_dims("k", heads_k, n, cfg.head_dim())?;
    check_head_dims("v", heads_v, n, cfg.head_dim())?;
    for i in 0..n {
        if (0..n).all(|j| !mask.visible(i, j)) {
            return Err(Error::DegenerateMask { row: i });
        }
    }
    Ok(n)
}

fn rotate_rows<T: Scalar>(
    mat: &ArrayView2<T>,
    positions: &[i64],
    freq: &RotaryFrequencies<T>,
) -> Array2<T> {
    let mut out = mat.to_owned();
    for (mut row, &p) in out.rows_mut().into_iter().zip(positions) {
        rotate_in_place(row.as_slice_mut().expect("row-major"), p, freq)
            .expect("row length matches freq dim");
    }
    out
}

/// Masked softmax over precomputed scaled scores; masked entries end up
/// exactly zero, visible rows are max-shifted before exponentiation.
fn masked_softmax_in_place<T: Scalar>(scores: &mut Array2<T>, mask: &MaskMatrix) {
    let n = scores.nrows();
    for i in 0..n {
        let mut row = scores.row_mut(i);
        let mut mx = T::neg_infinity();
        for j in 0..n {
            if mask.visible(i, j) {
                mx = mx.max(row[j]);
            }
        }
        let mut denom = T::zero();
        for j in 0..n {
            if mask.visible(i, j) {
                let e = (row[j] - mx).exp();
                row[j] = e;
                denom += e;
            } else {
                row[j] = T::zero();
            }
        }
        for j in 0..n {
            row[j] = row[j] / denom;
        }
    }
}

/// Forward pass keeping the rotated tensors for a later backward call.
pub fn rope_attention_cached<T: Scalar>(
    heads_q: &[ArrayView2<T>],
    heads_k: &[ArrayView2<T>],
    heads_v: &[ArrayView2<T>],
    positions: &[i64],
    mask: &MaskMatrix,
    freq: &RotaryFrequencies<T>,
    cfg: &AttentionConfig<T>,
) -> Result<(AttentionResult<T>, AttentionCache<T>)> {
    check_shapes(heads_q, heads_k, heads_v, positions, mask, freq, cfg)?;
    let mut weights = Vec::with_capacity(cfg.num_heads());
    let mut outputs = Vec::with_capacity(cfg.num_heads());
    let mut rot_qs = Vec::with_capacity(cfg.num_heads());
    let mut rot_ks = Vec::with_capacity(cfg.num_heads());
    for h in 0..cfg.num_heads() {
        let rot_q = rotate_rows(&heads_q[h], positions, freq);
        let rot_k = rotate_rows(&heads_k[h], positions, freq);
        let mut scores = rot_q.dot(&rot_k.t()) * cfg.scale();
        masked_softmax_in_place(&mut scores, mask);
        outputs.push(scores.dot(&heads_v[h]));
        weights.push(scores);
        rot_qs.push(rot_q);
        rot_ks.push(rot_k);
    }
    Ok((
        AttentionResult { weights, outputs },
        AttentionCache {
            rot_q: rot_qs,
            rot_k: rot_ks,
        },
    ))
}

/// Masked rotary attention over per-head inputs of shape `n x head_dim`.
pub fn rope_attention<T: Scalar>(
    heads_q: &[ArrayView2<T>],
    heads_k: &[ArrayView2<T>],
    heads_v: &[ArrayView2<T>],
    positions: &[i64],
    mask: &MaskMatrix,
    freq: &RotaryFrequencies<T>,
    cfg: &AttentionConfig<T>,
) -> Result<AttentionResult<T>> {
    rope_attention_cached(heads_q, heads_k, heads_v, positions, mask, freq, cfg)
        .map(|(result, _)| result)
}

/// Backward pass through softmax, scaling and both rotations. Takes the
/// forward result, its cache, the value inputs, and the loss gradient with
/// respect to each head's output.
pub fn rope_attention_backward<T: Scalar>(
    result: &AttentionResult<T>,
    cache: &AttentionCache<T>,
    heads_v: &[ArrayView2<T>],
    d_outputs: &[ArrayView2<T>],
    positions: &[i64],
    freq: &RotaryFrequencies<T>,
    cfg: &AttentionConfig<T>,
) -> Result<AttentionGrads<T>> {
    let heads = cfg.num_heads();
    if result.weights.len() != heads
        || cache.rot_q.len() != heads
        || heads_v.len() != heads
        || d_outputs.len() != heads
    {
        return Err(Error::Shape {
            context: "attention backward",
            expected: format!("{heads} heads"),
            got: format!(
                "{}/{}/{}/{}",
                result.weights.len(),
                cache.rot_q.len(),
                heads_v.len(),
                d_outputs.len()
            ),
        });
    }
    let n = positions.len();
    let mut grads = AttentionGrads {
        d_q: Vec::with_capacity(heads),
        d_k: Vec::with_capacity(heads),
        d_v: Vec::with_capacity(heads),
        d_weights: Vec::with_capacity(heads),
    };
    for h in 0..heads {
        let w = &result.weights[h];
        if w.nrows() != n || d_outputs[h].nrows() != n {
            return Err(Error::Shape {
                context: "attention backward",
                expected: format!("tensors over {n} tokens"),
                got: format!("{}x{}", w.nrows(), d_outputs[h].nrows()),
            });
        }
        let d_v = w.t().dot(&d_outputs[h]);
        let d_w = d_outputs[h].dot(&heads_v[h].t());

        // softmax jacobian, row by row; masked entries keep weight zero and
        // therefore contribute nothing
        let mut d_scores = Array2::<T>::zeros((n, n));
        for i in 0..n {
            let wr = w.row(i);
            let dr = d_w.row(i);
            let pinned: T = wr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
            for j in 0..n {
                d_scores[(i, j)] = wr[j] * (dr[j] - pinned);
            }
        }
        d_scores *= cfg.scale();

        let mut d_q = d_scores.dot(&cache.rot_k[h]);
        let mut d_k = d_scores.t().dot(&cache.rot_q[h]);
        for (mut row, &p) in d_q.rows_mut().into_iter().zip(positions) {
            rotate_in_place(row.as_slice_mut().expect("row-major"), -p, freq)
                .expect("row length matches freq dim");
        }
        for (mut row, &p) in d_k.rows_mut().into_iter().zip(positions) {
            rotate_in_place(row.as_slice_mut().expect("row-major"), -p, freq)
                .expect("row length matches freq dim");
        }
        grads.d_q.push(d_q);
        grads.d_k.push(d_k);
        grads.d_v.push(d_v);
        grads.d_weights.push(d_w);
    }
    Ok(grads)
}

/// Attention pattern of one instruction token over an image grid when every
/// token carries the same content vector.
///
/// With contents pinned, scores depend only on position differences, so the
/// returned `side x side` map isolates what the layout itself does to
/// attention. The query is the last suffix token.
pub fn uniform_content_attention_map<T: Scalar>(
    layout: &PositionLayout,
    prefix_len: usize,
    suffix_len: usize,
    freq: &RotaryFrequencies<T>,
    content: &[T],
) -> Result<Array2<T>> {
    if suffix_len == 0 {
        return Err(Error::Shape {
            context: "uniform content map",
            expected: "at least one suffix token to act as the query".into(),
            got: "suffix_len 0".into(),
        });
    }
    let grid = GridSpec::new(layout.side)?;
    let seq = MultimodalSequence::build(prefix_len, grid, suffix_len, layout)?;
    let n = seq.len();
    let d = freq.dim();
    if content.len() != d {
        return Err(Error::Shape {
            context: "uniform content map",
            expected: format!("content of length {d}"),
            got: content.len().to_string(),
        });
    }
    let mut stacked = Array2::<T>::zeros((n, d));
    for mut row in stacked.rows_mut() {
        for (slot, &c) in row.iter_mut().zip(content) {
            *slot = c;
        }
    }
    let cfg = AttentionConfig::<T>::new(d, 1)?;
    let mask = index_causal_mask(&seq);
    let view = stacked.view();
    let result = rope_attention(
        &[view],
        &[view],
        &[view],
        &seq.positions(),
        &mask,
        freq,
        &cfg,
    )?;
    let query_row = n - 1;
    let side = layout.side;
    let mut map = Array2::<T>::zeros((side, side));
    let image_start = seq.image_range().start;
    for r in 0..side {
        for c in 0..side {
            map[(r, c)] = result.weights[0][(query_row, image_start + r * side + c)];
        }
    }
    Ok(map)
}
