use super::{SyntheticSample, ToyConfig};
use crate::attention::{
    rope_attention_backward, rope_attention_cached, AttentionCache, AttentionConfig,
    AttentionResult,
};
use crate::error::{Error, Result};
use crate::layout::{GridSpec, PositionLayout};
use crate::mask::{index_causal_mask, MaskMatrix, MultimodalSequence};
use crate::rope::RotaryFrequencies;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Norm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl Norm {
    fn identity(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub norm1: Norm,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub norm2: Norm,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All learnable tensors. Field traversal order is fixed; the flat views,
/// the fingerprint, and the optimizer state all depend on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Params {
    /// Patch vocabulary rows, then one row per cue token.
    pub patch_embed: Array2<f64>,
    /// Per-slot instruction embeddings; slot 0 also receives the cue row.
    pub instr_embed: Array2<f64>,
    pub blocks: Vec<Block>,
    pub final_norm: Norm,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let draw: f64 = StandardNormal.sample(rng);
        std * draw
    })
}

impl Params {
    /// Initialization touches only dimensions and the seed, never the
    /// position scheme, so runs that differ only in scheme start from
    /// bit-identical parameters. The classifier head is random rather than
    /// zeroed so a fresh model already routes gradient to attention.
    fn init(cfg: &ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.model_dim;
        let f = cfg.ff_dim();
        let patch_embed = gauss(&mut rng, cfg.vocab_total(), d, INIT_STD);
        let instr_embed = gauss(&mut rng, cfg.instruction_len, d, INIT_STD);
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                norm1: Norm::identity(d),
                wq: gauss(&mut rng, d, d, INIT_STD),
                wk: gauss(&mut rng, d, d, INIT_STD),
                wv: gauss(&mut rng, d, d, INIT_STD),
                wo: gauss(&mut rng, d, d, INIT_STD),
                norm2: Norm::identity(d),
                w1: gauss(&mut rng, d, f, INIT_STD),
                b1: Array1::zeros(f),
                w2: gauss(&mut rng, f, d, INIT_STD),
                b2: Array1::zeros(d),
            })
            .collect();
        let final_norm = Norm::identity(d);
        let head_w = gauss(&mut rng, d, cfg.num_classes(), INIT_STD);
        let head_b = Array1::zeros(cfg.num_classes());
        Params {
            patch_embed,
            instr_embed,
            blocks,
            final_norm,
            head_w,
            head_b,
        }
    }

    fn visit(&self, f: &mut impl FnMut(&[f64])) {
        f(self.patch_embed.as_slice().expect("contiguous"));
        f(self.instr_embed.as_slice().expect("contiguous"));
        for b in &self.blocks {
            f(b.norm1.gain.as_slice().expect("contiguous"));
            f(b.norm1.bias.as_slice().expect("contiguous"));
            f(b.wq.as_slice().expect("contiguous"));
            f(b.wk.as_slice().expect("contiguous"));
            f(b.wv.as_slice().expect("contiguous"));
            f(b.wo.as_slice().expect("contiguous"));
            f(b.norm2.gain.as_slice().expect("contiguous"));
            f(b.norm2.bias.as_slice().expect("contiguous"));
            f(b.w1.as_slice().expect("contiguous"));
            f(b.b1.as_slice().expect("contiguous"));
            f(b.w2.as_slice().expect("contiguous"));
            f(b.b2.as_slice().expect("contiguous"));
        }
        f(self.final_norm.gain.as_slice().expect("contiguous"));
        f(self.final_norm.bias.as_slice().expect("contiguous"));
        f(self.head_w.as_slice().expect("contiguous"));
        f(self.head_b.as_slice().expect("contiguous"));
    }

    pub(super) fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        f(self.patch_embed.as_slice_mut().expect("contiguous"));
        f(self.instr_embed.as_slice_mut().expect("contiguous"));
        for b in &mut self.blocks {
            f(b.norm1.gain.as_slice_mut().expect("contiguous"));
            f(b.norm1.bias.as_slice_mut().expect("contiguous"));
            f(b.wq.as_slice_mut().expect("contiguous"));
            f(b.wk.as_slice_mut().expect("contiguous"));
            f(b.wv.as_slice_mut().expect("contiguous"));
            f(b.wo.as_slice_mut().expect("contiguous"));
            f(b.norm2.gain.as_slice_mut().expect("contiguous"));
            f(b.norm2.bias.as_slice_mut().expect("contiguous"));
            f(b.w1.as_slice_mut().expect("contiguous"));
            f(b.b1.as_slice_mut().expect("contiguous"));
            f(b.w2.as_slice_mut().expect("contiguous"));
            f(b.b2.as_slice_mut().expect("contiguous"));
        }
        f(self.final_norm.gain.as_slice_mut().expect("contiguous"));
        f(self.final_norm.bias.as_slice_mut().expect("contiguous"));
        f(self.head_w.as_slice_mut().expect("contiguous"));
        f(self.head_b.as_slice_mut().expect("contiguous"));
    }

    fn dims(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        out.push(self.patch_embed.shape().to_vec());
        out.push(self.instr_embed.shape().to_vec());
        for b in &self.blocks {
            for a in [&b.norm1.gain, &b.norm1.bias] {
                out.push(a.shape().to_vec());
            }
            for a in [&b.wq, &b.wk, &b.wv, &b.wo] {
                out.push(a.shape().to_vec());
            }
            for a in [&b.norm2.gain, &b.norm2.bias] {
                out.push(a.shape().to_vec());
            }
            out.push(b.w1.shape().to_vec());
            out.push(b.b1.shape().to_vec());
            out.push(b.w2.shape().to_vec());
            out.push(b.b2.shape().to_vec());
        }
        out.push(self.final_norm.gain.shape().to_vec());
        out.push(self.final_norm.bias.shape().to_vec());
        out.push(self.head_w.shape().to_vec());
        out.push(self.head_b.shape().to_vec());
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| flat.extend_from_slice(s));
        flat
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                context: "flat parameter vector",
                expected: self.num_params().to_string(),
                got: flat.len().to_string(),
            });
        }
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    pub(super) fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        z.visit_mut(&mut |s| s.fill(0.0));
        z
    }

    pub(super) fn accumulate(&mut self, other: &Params) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            for v in s.iter_mut() {
                *v += flat[offset];
                offset += 1;
            }
        });
    }

    pub(super) fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |s| {
            for v in s.iter_mut() {
                *v *= factor;
            }
        });
    }

    /// FNV-1a over the little-endian bit patterns of every parameter, in
    /// traversal order. Equal fingerprints mean bit-identical tensors.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit(&mut |s| {
            for v in s {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        });
        format!("{h:016x}")
    }
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, norm: &Norm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for (j, &v) in row.iter().enumerate() {
            xhat[(i, j)] = (v - mean) * is;
        }
    }
    let y = &xhat * &norm.gain + &norm.bias;
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    norm: &Norm,
    cache: &NormCache,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let d_gain = (dy * &cache.xhat).sum_axis(Axis(0));
    let d_bias = dy.sum_axis(Axis(0));
    let dxhat = dy * &norm.gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let xh = cache.xhat.row(i);
        let dxh = dxhat.row(i);
        let mean_dxh = dxh.sum() / d;
        let mean_dxh_xh = dxh
            .iter()
            .zip(xh.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        for j in 0..dy.ncols() {
            dx[(i, j)] = cache.inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    (dx, d_gain, d_bias)
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn split_heads(m: &Array2<f64>, heads: usize) -> Vec<ArrayView2<'_, f64>> {
    let hd = m.ncols() / heads;
    (0..heads)
        .map(|h| m.slice(s![.., h * hd..(h + 1) * hd]))
        .collect()
}

fn concat_heads(parts: &[Array2<f64>]) -> Array2<f64> {
    let n = parts[0].nrows();
    let hd = parts[0].ncols();
    let mut out = Array2::zeros((n, parts.len() * hd));
    for (h, p) in parts.iter().enumerate() {
        out.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(p);
    }
    out
}

struct LayerCache {
    a1: Array2<f64>,
    n1: NormCache,
    v: Array2<f64>,
    attn: AttentionResult<f64>,
    attn_cache: AttentionCache<f64>,
    concat: Array2<f64>,
    a2: Array2<f64>,
    n2: NormCache,
    h_pre: Array2<f64>,
    h: Array2<f64>,
}

/// Everything one forward pass produced, with enough retained state to run
/// the exact backward pass.
pub struct Forward {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    pub loss: f64,
    label: usize,
    layers: Vec<LayerCache>,
    final_cache: NormCache,
    final_out: Array1<f64>,
}

impl Forward {
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = i;
            }
        }
        best
    }

    /// Mean attention weight, over every layer and head, that the final
    /// sequence row puts on `column`.
    pub fn attention_to(&self, column: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for lc in &self.layers {
            for w in &lc.attn.weights {
                let n = w.nrows();
                total += w[[n - 1, column]];
                count += 1;
            }
        }
        total / count as f64
    }

    pub(super) fn attention_weights(&self) -> Vec<&Array2<f64>> {
        self.layers
            .iter()
            .flat_map(|lc| lc.attn.weights.iter())
            .collect()
    }
}

/// Parameter gradients plus the attention-weight gradients that saliency
/// aggregation consumes, one matrix per layer and head.
pub struct Backprop {
    pub grads: Params,
    pub attn_weight_grads: Vec<Vec<Array2<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    config: ToyConfig,
    init_fingerprint: String,
    params: Params,
}

pub struct ToyModel {
    cfg: ToyConfig,
    pub params: Params,
    layout: PositionLayout,
    seq: MultimodalSequence,
    mask: MaskMatrix,
    positions: Vec<i64>,
    freq: RotaryFrequencies<f64>,
    attn_cfg: AttentionConfig<f64>,
    init_fingerprint: String,
}

impl ToyModel {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = GridSpec::new(cfg.side)?;
        let layout = PositionLayout::for_scheme(cfg.scheme, grid);
        let seq = MultimodalSequence::build(0, grid, cfg.instruction_len, &layout)?;
        let mask = index_causal_mask(&seq);
        let positions = seq.positions();
        let freq = RotaryFrequencies::new(cfg.head_dim(), cfg.rope_base)?;
        let attn_cfg = AttentionConfig::new(cfg.head_dim(), cfg.heads)?;
        let params = Params::init(&cfg);
        let init_fingerprint = params.fingerprint();
        Ok(Self {
            cfg,
            params,
            layout,
            seq,
            mask,
            positions,
            freq,
            attn_cfg,
            init_fingerprint,
        })
    }

    pub fn cfg(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn sequence(&self) -> &MultimodalSequence {
        &self.seq
    }

    pub fn layout(&self) -> &PositionLayout {
        &self.layout
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    /// Fingerprint of the parameters as they were at initialization.
    pub fn init_fingerprint(&self) -> &str {
        &self.init_fingerprint
    }

    fn check_sample(&self, sample: &SyntheticSample) -> Result<()> {
        let total = self.cfg.grid_total();
        if sample.patch_ids.len() != total
            || sample.marker_cell >= total
            || sample.cue >= self.cfg.cues
            || sample.label >= self.cfg.num_classes()
            || sample.patch_ids.iter().any(|&id| id >= self.cfg.vocab)
        {
            return Err(Error::Shape {
                context: "sample",
                expected: format!(
                    "{} patch ids below {}, marker below {}, cue below {}, label below {}",
                    total,
                    self.cfg.vocab,
                    total,
                    self.cfg.cues,
                    self.cfg.num_classes()
                ),
                got: format!(
                    "{} ids, marker {}, cue {}, label {}",
                    sample.patch_ids.len(),
                    sample.marker_cell,
                    sample.cue,
                    sample.label
                ),
            });
        }
        Ok(())
    }

    fn embed(&self, sample: &SyntheticSample) -> Array2<f64> {
        let n = self.seq.len();
        let mut x = Array2::zeros((n, self.cfg.model_dim));
        for (t, &id) in sample.patch_ids.iter().enumerate() {
            x.row_mut(t).assign(&self.params.patch_embed.row(id));
        }
        let image_len = self.cfg.grid_total();
        for k in 0..self.cfg.instruction_len {
            x.row_mut(image_len + k)
                .assign(&self.params.instr_embed.row(k));
        }
        // slot 0 carries the cue on top of its slot embedding
        let cue_row = self.params.patch_embed.row(self.cfg.cue_id(sample.cue));
        let mut slot0 = x.row_mut(image_len);
        slot0 += &cue_row;
        x
    }

    pub fn forward(&self, sample: &SyntheticSample) -> Result<Forward> {
        self.check_sample(sample)?;
        let heads = self.cfg.heads;
        let mut x = self.embed(sample);
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for block in &self.params.blocks {
            let x_in = x;
            let (a1, n1) = layer_norm(&x_in, &block.norm1);
            let q = a1.dot(&block.wq);
            let k = a1.dot(&block.wk);
            let v = a1.dot(&block.wv);
            let (attn, attn_cache) = rope_attention_cached(
                &split_heads(&q, heads),
                &split_heads(&k, heads),
                &split_heads(&v, heads),
                &self.positions,
                &self.mask,
                &self.freq,
                &self.attn_cfg,
            )?;
            let concat = concat_heads(&attn.outputs);
            let x_mid = &x_in + &concat.dot(&block.wo);
            let (a2, n2) = layer_norm(&x_mid, &block.norm2);
            let h_pre = a2.dot(&block.w1) + &block.b1;
            let h = h_pre.mapv(silu);
            let x_out = &x_mid + &(h.dot(&block.w2) + &block.b2);
            layers.push(LayerCache {
                a1,
                n1,
                v,
                attn,
                attn_cache,
                concat,
                a2,
                n2,
                h_pre,
                h,
            });
            x = x_out;
        }
        let n = self.seq.len();
        let final_in = x.row(n - 1).insert_axis(Axis(0)).to_owned();
        let (final_row, final_cache) = layer_norm(&final_in, &self.params.final_norm);
        let final_out = final_row.row(0).to_owned();
        let logits = final_out.dot(&self.params.head_w) + &self.params.head_b;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.mapv(|v| (v - max).exp());
        let denom = exps.sum();
        let probs = exps / denom;
        let loss = -probs[sample.label].ln();
        Ok(Forward {
            logits,
            probs,
            loss,
            label: sample.label,
            layers,
            final_cache,
            final_out,
        })
    }

    /// Exact gradients of `fwd.loss` with respect to every parameter.
    pub fn backward(&self, sample: &SyntheticSample, fwd: &Forward) -> Result<Backprop> {
        self.check_sample(sample)?;
        let n = self.seq.len();
        let heads = self.cfg.heads;
        let mut grads = self.params.zeros_like();

        // classifier and final norm
        let mut dlogits = fwd.probs.clone();
        dlogits[fwd.label] -= 1.0;
        grads.head_w = Array2::from_shape_fn(self.params.head_w.raw_dim(), |(i, j)| {
            fwd.final_out[i] * dlogits[j]
        });
        grads.head_b = dlogits.clone();
        let dy_final = self.params.head_w.dot(&dlogits).insert_axis(Axis(0));
        let (dx_last, dg, db) =
            layer_norm_backward(&dy_final, &self.params.final_norm, &fwd.final_cache);
        grads.final_norm.gain = dg;
        grads.final_norm.bias = db;

        let mut dx = Array2::zeros((n, self.cfg.model_dim));
        dx.row_mut(n - 1).assign(&dx_last.row(0));

        let mut attn_weight_grads = vec![Vec::new(); self.cfg.layers];
        for (layer_idx, (block, lc)) in self
            .params
            .blocks
            .iter()
            .zip(fwd.layers.iter())
            .enumerate()
            .rev()
        {
            let g = &mut grads.blocks[layer_idx];

            // feed-forward half: x_out = x_mid + silu(a2 w1 + b1) w2 + b2
            g.b2 = dx.sum_axis(Axis(0));
            g.w2 = lc.h.t().dot(&dx);
            let dh = dx.dot(&block.w2.t());
            let dh_pre = &dh * &lc.h_pre.mapv(silu_deriv);
            g.b1 = dh_pre.sum_axis(Axis(0));
            g.w1 = lc.a2.t().dot(&dh_pre);
            let da2 = dh_pre.dot(&block.w1.t());
            let (dx_n2, dg2, db2) = layer_norm_backward(&da2, &block.norm2, &lc.n2);
            g.norm2.gain = dg2;
            g.norm2.bias = db2;
            let dx_mid = &dx + &dx_n2;

            // attention half: x_mid = x_in + concat(heads) wo
            g.wo = lc.concat.t().dot(&dx_mid);
            let d_concat = dx_mid.dot(&block.wo.t());
            let attn_grads = rope_attention_backward(
                &lc.attn,
                &lc.attn_cache,
                &split_heads(&lc.v, heads),
                &split_heads(&d_concat, heads),
                &self.positions,
                &self.freq,
                &self.attn_cfg,
            )?;
            let d_q = concat_heads(&attn_grads.d_q);
            let d_k = concat_heads(&attn_grads.d_k);
            let d_v = concat_heads(&attn_grads.d_v);
            attn_weight_grads[layer_idx] = attn_grads.d_weights;
            g.wq = lc.a1.t().dot(&d_q);
            g.wk = lc.a1.t().dot(&d_k);
            g.wv = lc.a1.t().dot(&d_v);
            let da1 = d_q.dot(&block.wq.t()) + d_k.dot(&block.wk.t()) + d_v.dot(&block.wv.t());
            let (dx_n1, dg1, db1) = layer_norm_backward(&da1, &block.norm1, &lc.n1);
            g.norm1.gain = dg1;
            g.norm1.bias = db1;
            dx = &dx_mid + &dx_n1;
        }

        // embeddings
        for (t, &id) in sample.patch_ids.iter().enumerate() {
            let mut row = grads.patch_embed.row_mut(id);
            row += &dx.row(t);
        }
        let image_len = self.cfg.grid_total();
        for k in 0..self.cfg.instruction_len {
            let mut row = grads.instr_embed.row_mut(k);
            row += &dx.row(image_len + k);
        }
        let mut cue_row = grads.patch_embed.row_mut(self.cfg.cue_id(sample.cue));
        cue_row += &dx.row(image_len);

        Ok(Backprop {
            grads,
            attn_weight_grads,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            version: MODEL_FORMAT_VERSION,
            config: self.cfg,
            init_fingerprint: self.init_fingerprint.clone(),
            params: self.params.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<ToyModel> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Shape {
                context: "model file",
                expected: format!("format version {MODEL_FORMAT_VERSION}"),
                got: file.version.to_string(),
            });
        }
        let mut model = ToyModel::new(file.config)?;
        if model.params.dims() != file.params.dims() {
            return Err(Error::Shape {
                context: "model file",
                expected: "tensor shapes matching the embedded config".into(),
                got: "mismatched tensor shapes".into(),
            });
        }
        model.params = file.params;
        model.init_fingerprint = file.init_fingerprint;
        Ok(model)
    }
}
