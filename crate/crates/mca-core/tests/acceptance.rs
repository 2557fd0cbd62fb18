//! Acceptance gate: twelve checks, one test each, so the harness prints a
//! pass/fail line per criterion. Tolerances and runtime budgets are pinned
//! here, not in helper code; run with --nocapture to see measured values.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mca_core::attention::{
    rope_attention, rope_attention_backward, rope_attention_cached, uniform_content_attention_map,
    AttentionConfig,
};
use mca_core::chair::{chair_caption_ratio, chair_object_ratio, CaptionAnnotation};
use mca_core::decay::decay_profile;
use mca_core::gradcheck::grad_check;
use mca_core::layout::{manhattan_coords, signed_manhattan_delta, GridSpec, PositionLayout, Scheme};
use mca_core::mask::{index_causal_mask, MaskMatrix, MultimodalSequence};
use mca_core::rope::{rotation_matrix, slowest_plane_unit, RotaryFrequencies};
use mca_core::toy::{
    eval_by_region, gen_dataset, train, LabelMode, ToyConfig, ToyModel, EVAL_SEED_STRIDE,
};

fn budget(start: Instant, limit_secs: f64, which: &str) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_secs,
        "criterion {which}: exceeded the {limit_secs} s budget ({elapsed:.1} s)"
    );
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn criterion_01_rotation_relative_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for dim in [4usize, 64, 128] {
        let freq = RotaryFrequencies::<f64>::new(dim, 10_000.0).unwrap();
        for _ in 0..100 {
            let i = rng.gen_range(-4096i64..=4096);
            let j = rng.gen_range(-4096i64..=4096);
            let product = rotation_matrix(i, &freq)
                .transposed()
                .matmul(&rotation_matrix(j, &freq))
                .unwrap();
            let relative = rotation_matrix(j - i, &freq);
            worst = worst.max(product.max_abs_diff(&relative));
        }
    }
    assert!(worst < 1e-9, "max |R(i)^T R(j) - R(j-i)| = {worst:.3e}, need < 1e-9");
    budget(start, 5.0, "01");
    println!("criterion 01: PASS  relative-position identity, max err {worst:.3e}");
}

#[test]
fn criterion_02_distinct_index_counts() {
    let start = Instant::now();
    let grid24 = GridSpec::new(24).unwrap();
    let mca = PositionLayout::for_scheme(Scheme::Mca, grid24);
    let cca = PositionLayout::for_scheme(Scheme::Cca, grid24);
    assert_eq!(mca.num_distinct, 23, "mca 24x24 distinct count");
    assert_eq!(cca.num_distinct, 12, "cca 24x24 distinct count");
    for side in (2..=32).step_by(2) {
        let layout = PositionLayout::manhattan(GridSpec::new(side).unwrap());
        assert_eq!(layout.num_distinct, side - 1, "mca side {side}");
    }
    budget(start, 1.0, "02");
    println!("criterion 02: PASS  mca/cca distinct counts 23/12; mca = side-1 for sides 2..=32");
}

#[test]
fn criterion_03_signed_delta_matches_index_difference() {
    let start = Instant::now();
    let grid = GridSpec::new(24).unwrap();
    let layout = PositionLayout::manhattan(grid);
    let coords = manhattan_coords(grid);
    let side = 24usize;
    for i in 0..side * side {
        for j in 0..side * side {
            let delta = signed_manhattan_delta(coords[i], coords[j]);
            let index_diff = layout.index_at(j / side, j % side) as i64
                - layout.index_at(i / side, i % side) as i64;
            assert_eq!(index_diff, delta, "cells {i} -> {j}");
        }
    }
    budget(start, 5.0, "03");
    println!("criterion 03: PASS  signed Manhattan delta == index difference on all 576^2 pairs");
}

#[test]
fn criterion_04_raster_mask_reduces_to_lower_triangular() {
    let grid = GridSpec::new(24).unwrap();
    let layout = PositionLayout::raster(grid);
    // 576 image tokens plus text splits up to the 700-token total
    for (prefix, suffix) in [(0, 0), (1, 1), (62, 62), (60, 64), (124, 0), (0, 124)] {
        let seq = MultimodalSequence::build(prefix, grid, suffix, &layout).unwrap();
        let mask = index_causal_mask(&seq);
        let tri = MaskMatrix::lower_triangular(seq.len());
        assert_eq!(
            mask.as_array(),
            tri.as_array(),
            "prefix {prefix}, suffix {suffix}, n {}",
            seq.len()
        );
    }
    println!("criterion 04: PASS  raster index-causal mask == lower triangular up to n=700");
}

/// Dense-rotation reference: rotate every row by its position with the full
/// d x d matrix, form all pairwise scores, mask, softmax, and mix values.
fn brute_force_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    positions: &[i64],
    mask: &MaskMatrix,
    freq: &RotaryFrequencies<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (n, d) = q.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let rot = |m: &Array2<f64>| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let row: Vec<f64> = m.row(i).to_vec();
                rotation_matrix(positions[i], freq).apply(&row).unwrap()
            })
            .collect()
    };
    let rq = rot(q);
    let rk = rot(k);
    let mut weights = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let scores: Vec<(usize, f64)> = (0..n)
            .filter(|&j| mask.visible(i, j))
            .map(|j| (j, scale * rq[i].iter().zip(&rk[j]).map(|(a, b)| a * b).sum::<f64>()))
            .collect();
        let max = scores.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|&(_, s)| (s - max).exp()).sum();
        for &(j, s) in &scores {
            weights[(i, j)] = (s - max).exp() / denom;
        }
    }
    let mut outputs = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            let w = weights[(i, j)];
            if w != 0.0 {
                for f in 0..d {
                    outputs[(i, f)] += w * v[(j, f)];
                }
            }
        }
    }
    (weights, outputs)
}

/// One random attention instance: sizes, contents, positions, and a mask
/// that always keeps the diagonal visible.
fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Vec<i64>, MaskMatrix, RotaryFrequencies<f64>) {
    let n = rng.gen_range(2..=8);
    let d = 2 * rng.gen_range(1..=8);
    let q = random_matrix(rng, n, d);
    let k = random_matrix(rng, n, d);
    let v = random_matrix(rng, n, d);
    let positions: Vec<i64> = (0..n).map(|_| rng.gen_range(-64..=64)).collect();
    let visible = Array2::from_shape_fn((n, n), |(i, j)| i == j || rng.gen_bool(0.6));
    let mask = MaskMatrix::from_array(visible).unwrap();
    let freq = RotaryFrequencies::<f64>::new(d, 10_000.0).unwrap();
    (q, k, v, positions, mask, freq)
}

#[test]
fn criterion_05_attention_matches_dense_rotation_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (q, k, v, positions, mask, freq) = random_instance(&mut rng);
        let cfg = AttentionConfig::new(q.ncols(), 1).unwrap();
        let fast = rope_attention(
            &[q.view()],
            &[k.view()],
            &[v.view()],
            &positions,
            &mask,
            &freq,
            &cfg,
        )
        .unwrap();
        let (ref_w, ref_out) = brute_force_attention(&q, &k, &v, &positions, &mask, &freq);
        for (a, b) in fast.weights[0].iter().zip(ref_w.iter()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in fast.outputs[0].iter().zip(ref_out.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "fast vs dense-rotation oracle max err {worst:.3e}, need < 1e-9");
    budget(start, 10.0, "05");
    println!("criterion 05: PASS  pairwise-rotation attention == dense oracle, max err {worst:.3e}");
}

#[test]
fn criterion_06_normalization_masking_and_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..20 {
        let (q, k, v, positions, mask, freq) = random_instance(&mut rng);
        let cfg = AttentionConfig::new(q.ncols(), 1).unwrap();
        let run = |pos: &[i64]| {
            rope_attention(&[q.view()], &[k.view()], &[v.view()], pos, &mask, &freq, &cfg).unwrap()
        };
        let base = run(&positions);
        let w = &base.weights[0];
        for i in 0..w.nrows() {
            let mut sum = 0.0;
            for j in 0..w.ncols() {
                if mask.visible(i, j) {
                    sum += w[(i, j)];
                } else {
                    assert_eq!(w[(i, j)], 0.0, "masked entry ({i},{j}) must be exactly zero");
                }
            }
            worst_sum = worst_sum.max((sum - 1.0).abs());
        }
        for shift in [-1000i64, 137] {
            let shifted: Vec<i64> = positions.iter().map(|p| p + shift).collect();
            let moved = run(&shifted);
            for (a, b) in moved.outputs[0].iter().zip(base.outputs[0].iter()) {
                worst_shift = worst_shift.max((a - b).abs());
            }
            for (a, b) in moved.weights[0].iter().zip(base.weights[0].iter()) {
                worst_shift = worst_shift.max((a - b).abs());
            }
        }
    }
    assert!(worst_sum < 1e-9, "visible row sums deviate from 1 by {worst_sum:.3e}");
    assert!(worst_shift < 1e-9, "position shift changes attention by {worst_shift:.3e}");
    println!(
        "criterion 06: PASS  row sums within {worst_sum:.3e}, masked exactly 0, shift moves {worst_shift:.3e}"
    );
}

/// Spearman rank correlation with average ranks on ties.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let mean = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                out[idx] = mean;
            }
            i = j + 1;
        }
        out
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn criterion_07_decay_spearman_over_full_range() {
    let start = Instant::now();
    let freq = RotaryFrequencies::<f64>::new(64, 10_000.0).unwrap();
    let profile = decay_profile(&freq, 2048, 256, 0, 1).unwrap();
    let distances: Vec<f64> = (0..=256).map(|d| d as f64).collect();
    let rho = spearman(&distances, &profile.mean_score);
    budget(start, 30.0, "07");
    assert!(
        rho < -0.8,
        "Spearman(distance, mean score) over 0..=256 = {rho:.4}, need < -0.8"
    );
    println!("criterion 07: PASS  decay Spearman {rho:.4} < -0.8");
}

#[test]
fn criterion_08_mca_mirror_symmetry() {
    let start = Instant::now();
    let side = 24usize;
    let layout = PositionLayout::manhattan(GridSpec::new(side).unwrap());
    let freq = RotaryFrequencies::<f64>::new(64, 10_000.0).unwrap();
    let content = slowest_plane_unit::<f64>(64).unwrap();
    let map = uniform_content_attention_map(&layout, 0, 1, &freq, &content).unwrap();
    let mut worst = 0.0f64;
    for r in 0..side {
        for c in 0..side {
            let here = map[(r, c)];
            for mirrored in [
                map[(r, side - 1 - c)],
                map[(side - 1 - r, c)],
                map[(side - 1 - r, side - 1 - c)],
            ] {
                worst = worst.max((here - mirrored).abs());
            }
        }
    }
    assert!(worst < 1e-9, "4-way mirrored cells differ by {worst:.3e}, need < 1e-9");

    let half = side / 2;
    let mut masses = [0.0f64; 4];
    for r in 0..side {
        for c in 0..side {
            masses[usize::from(r >= half) * 2 + usize::from(c >= half)] += map[(r, c)];
        }
    }
    let lo = masses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = masses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 1e-6, "quadrant masses spread {:.3e}, need < 1e-6", hi - lo);
    budget(start, 5.0, "08");
    println!(
        "criterion 08: PASS  mirror cells within {worst:.3e}, quadrant masses within {:.3e}",
        hi - lo
    );
}

#[test]
fn criterion_09_raster_bias_points_bottom_right() {
    let start = Instant::now();
    let side = 24usize;
    let layout = PositionLayout::raster(GridSpec::new(side).unwrap());
    let freq = RotaryFrequencies::<f64>::new(64, 10_000.0).unwrap();
    let content = slowest_plane_unit::<f64>(64).unwrap();
    let map = uniform_content_attention_map(&layout, 0, 1, &freq, &content).unwrap();

    // walking raster order backwards from the query, per-cell attention
    // must never increase
    let flat: Vec<f64> = map.iter().cloned().collect();
    for i in 1..flat.len() {
        assert!(
            flat[i - 1] <= flat[i],
            "cell {} ({:.6e}) > cell {} ({:.6e}) breaks the raster ordering",
            i - 1,
            flat[i - 1],
            i,
            flat[i]
        );
    }

    let half = side / 2;
    let mut masses = [0.0f64; 4];
    for r in 0..side {
        for c in 0..side {
            masses[usize::from(r >= half) * 2 + usize::from(c >= half)] += map[(r, c)];
        }
    }
    for q in 0..3 {
        assert!(
            masses[3] > masses[q],
            "bottom-right mass {:.6} not strictly above quadrant {q} ({:.6})",
            masses[3],
            masses[q]
        );
    }
    budget(start, 5.0, "09");
    println!(
        "criterion 09: PASS  per-cell nondecreasing along raster order; BR mass {:.4} strictly largest",
        masses[3]
    );
}

#[test]
fn criterion_10_gradients_match_finite_differences() {
    let start = Instant::now();

    // attention: d = 8, n = 6, scalar loss = fixed weighted sum of outputs
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, d) = (6usize, 8usize);
    let freq = RotaryFrequencies::<f64>::new(d, 10_000.0).unwrap();
    let cfg = AttentionConfig::new(d, 1).unwrap();
    let q = random_matrix(&mut rng, n, d);
    let k = random_matrix(&mut rng, n, d);
    let v = random_matrix(&mut rng, n, d);
    let loss_weights = random_matrix(&mut rng, n, d);
    let positions: Vec<i64> = (0..n).map(|_| rng.gen_range(-8..=8)).collect();
    let mask = MaskMatrix::lower_triangular(n);

    let unpack = |flat: &[f64]| {
        let q = Array2::from_shape_vec((n, d), flat[..n * d].to_vec()).unwrap();
        let k = Array2::from_shape_vec((n, d), flat[n * d..2 * n * d].to_vec()).unwrap();
        let v = Array2::from_shape_vec((n, d), flat[2 * n * d..].to_vec()).unwrap();
        (q, k, v)
    };
    let loss_of = |flat: &[f64]| {
        let (q, k, v) = unpack(flat);
        let result = rope_attention(
            &[q.view()],
            &[k.view()],
            &[v.view()],
            &positions,
            &mask,
            &freq,
            &cfg,
        )
        .unwrap();
        (&result.outputs[0] * &loss_weights).sum()
    };

    let mut point = Vec::with_capacity(3 * n * d);
    point.extend(q.iter());
    point.extend(k.iter());
    point.extend(v.iter());
    let (result, cache) = rope_attention_cached(
        &[q.view()],
        &[k.view()],
        &[v.view()],
        &positions,
        &mask,
        &freq,
        &cfg,
    )
    .unwrap();
    let grads = rope_attention_backward(
        &result,
        &cache,
        &[v.view()],
        &[loss_weights.view()],
        &positions,
        &freq,
        &cfg,
    )
    .unwrap();
    let mut analytic = Vec::with_capacity(3 * n * d);
    analytic.extend(grads.d_q[0].iter());
    analytic.extend(grads.d_k[0].iter());
    analytic.extend(grads.d_v[0].iter());
    let attn_err = grad_check(loss_of, &point, &analytic, 1e-5).unwrap();
    assert!(attn_err < 1e-4, "attention gradient relative error {attn_err:.3e}, need < 1e-4");

    // full model on a 4x4 grid
    let cfg = ToyConfig {
        layers: 2,
        heads: 2,
        model_dim: 8,
        side: 4,
        vocab: 12,
        marker_kinds: 4,
        cues: 2,
        decoys: 2,
        rope_base: 30.0,
        instruction_len: 1,
        scheme: Scheme::Mca,
        label_mode: LabelMode::Marker,
        batch_size: 2,
        seed: 10,
    };
    let mut model = ToyModel::new(cfg).unwrap();
    let sample = gen_dataset(&cfg, 1, 77)[0].clone();
    let point = model.params.to_flat();
    let fwd = model.forward(&sample).unwrap();
    let analytic = model.backward(&sample, &fwd).unwrap().grads.to_flat();
    let model_err = grad_check(
        |flat| {
            model.params.assign_from_flat(flat).unwrap();
            model.forward(&sample).unwrap().loss
        },
        &point,
        &analytic,
        1e-5,
    )
    .unwrap();
    assert!(model_err < 1e-3, "toy-model gradient relative error {model_err:.3e}, need < 1e-3");
    budget(start, 60.0, "10");
    println!(
        "criterion 10: PASS  gradcheck rel err: attention {attn_err:.3e} (< 1e-4), model {model_err:.3e} (< 1e-3)"
    );
}

#[test]
fn criterion_11_paired_bias_experiment() {
    let start = Instant::now();
    const STEPS: usize = 2000;
    const LR: f64 = 5e-4;
    const TRAIN_SAMPLES: usize = 8192;
    const EVAL_SAMPLES: usize = 2048;
    const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

    let flagship = |scheme: Scheme, seed: u64| ToyConfig {
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
        scheme,
        label_mode: LabelMode::Marker,
        batch_size: 8,
        seed,
    };
    let run = |scheme: Scheme, seed: u64| {
        let cfg = flagship(scheme, seed);
        let mut model = ToyModel::new(cfg).expect("valid config");
        let data = gen_dataset(&cfg, TRAIN_SAMPLES, seed);
        train(&mut model, &data, STEPS, LR).expect("training converges");
        let eval = gen_dataset(&cfg, EVAL_SAMPLES, seed.wrapping_add(EVAL_SEED_STRIDE));
        eval_by_region(&model, &eval).expect("quadrants populated")
    };

    // the ten runs are independent; run them on their own threads
    let reports: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                scope.spawn(move || (run(Scheme::Raster, seed), run(Scheme::Mca, seed)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    });

    let mut a_hits = 0;
    let mut b_hits = 0;
    for (seed, (raster, mca)) in SEEDS.iter().zip(&reports) {
        assert_eq!(
            raster.init_fingerprint, mca.init_fingerprint,
            "seed {seed}: paired runs must start from identical parameters"
        );
        let a = raster.quadrant_accuracy[3] >= raster.quadrant_accuracy[0];
        let b = mca.accuracy_spread < raster.accuracy_spread;
        a_hits += usize::from(a);
        b_hits += usize::from(b);
        println!(
            "criterion 11: seed {seed}  raster quads [{:.3} {:.3} {:.3} {:.3}] spread {:.3}  \
             mca overall {:.3} spread {:.3}  a={a} b={b}",
            raster.quadrant_accuracy[0],
            raster.quadrant_accuracy[1],
            raster.quadrant_accuracy[2],
            raster.quadrant_accuracy[3],
            raster.accuracy_spread,
            mca.overall_accuracy,
            mca.accuracy_spread,
        );
    }
    assert!(a_hits >= 4, "raster bottom-right >= top-left in only {a_hits}/5 seeds, need 4");
    assert!(b_hits >= 4, "mca spread smaller in only {b_hits}/5 seeds, need 4");
    budget(start, 1800.0, "11");
    println!(
        "criterion 11: PASS  a {a_hits}/5, b {b_hits}/5 in {:.0} s",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_12_chair_ratio_exactness() {
    // one hallucinated mention out of three
    let offending = CaptionAnnotation::new(["dog", "cat", "car"], ["dog", "car"]);
    let clean = CaptionAnnotation::new(["dog"], ["dog", "cat"]);
    let batch = [offending.clone()];
    assert_eq!(chair_object_ratio(&batch).unwrap(), 1.0 / 3.0);
    assert_eq!(chair_caption_ratio(&batch).unwrap(), 1.0);

    let batch = [clean.clone(), offending.clone()];
    assert_eq!(chair_caption_ratio(&batch).unwrap(), 0.5);

    // appending clean captions must never raise either ratio
    let mut batch = vec![offending];
    let mut last_object = chair_object_ratio(&batch).unwrap();
    let mut last_caption = chair_caption_ratio(&batch).unwrap();
    for _ in 0..5 {
        batch.push(clean.clone());
        let object = chair_object_ratio(&batch).unwrap();
        let caption = chair_caption_ratio(&batch).unwrap();
        assert!(object <= last_object, "object ratio rose: {last_object} -> {object}");
        assert!(caption <= last_caption, "caption ratio rose: {last_caption} -> {caption}");
        last_object = object;
        last_caption = caption;
    }
    println!("criterion 12: PASS  object 1/3 and caption 0.5 exact; clean captions never raise ratios");
}
