use super::ToyModel;
use super::data::SyntheticSample;
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

// Adam as published: bias-corrected first and second moments.
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// Mixed into the model seed so batch sampling never replays the init stream.
const BATCH_SEED_SALT: u64 = 0xB7E1_5162_8AED_2A6A;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Mean batch loss per optimization step.
    pub losses: Vec<f64>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, loss) in self.losses.iter().enumerate() {
            writeln!(out, "{i},{loss}").expect("string write");
        }
        out
    }
}

/// Runs `steps` Adam updates of the batch-mean cross entropy. Batches are
/// drawn with replacement from `data`, with the draw order fixed by the
/// model seed, so a given (config, data, steps, lr) tuple always produces
/// the same trace and the same final parameters.
pub fn train(
    model: &mut ToyModel,
    data: &[SyntheticSample],
    steps: usize,
    learning_rate: f64,
) -> Result<TrainTrace> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_params = model.params.num_params();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg().seed ^ BATCH_SEED_SALT);
    let batch = model.cfg().batch_size;
    let mut losses = Vec::with_capacity(steps);

    for step in 0..steps {
        let mut grads = model.params.zeros_like();
        let mut loss_sum = 0.0;
        for _ in 0..batch {
            let sample = &data[rng.gen_range(0..data.len())];
            let fwd = model.forward(sample)?;
            loss_sum += fwd.loss;
            grads.accumulate(&model.backward(sample, &fwd)?.grads);
        }
        let mean_loss = loss_sum / batch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        grads.scale(1.0 / batch as f64);

        let flat = grads.to_flat();
        let t = (step + 1) as i32;
        let correct1 = 1.0 - BETA1.powi(t);
        let correct2 = 1.0 - BETA2.powi(t);
        let mut idx = 0usize;
        model.params.visit_mut(&mut |slice| {
            for p in slice.iter_mut() {
                let g = flat[idx];
                m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * g;
                v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * g * g;
                *p -= learning_rate * (m[idx] / correct1) / ((v[idx] / correct2).sqrt() + ADAM_EPS);
                idx += 1;
            }
        });
        losses.push(mean_loss);
    }
    Ok(TrainTrace { losses })
}
