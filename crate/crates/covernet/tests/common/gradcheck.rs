//! Finite-difference gradient checks.
//!
//! Analytic gradients come from the implementation's backward passes;
//! derivative estimates come from central differences through the f64
//! reference forwards in [`super`]. Probes that cross a non-smooth boundary
//! (ReLU kink, mining switch, hinge activation) are detected via the
//! reference fingerprint and redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use covernet::encoder::{
    batch_from_inputs, encoder_backward, encoder_forward_train, EncoderConfig, EncoderParams,
};
use covernet::nncore::{self, Mode, Tensor};
use covernet::preprocess::{PreprocessedInput, INPUT_FREQ, INPUT_TIME};
use covernet::training::batch_triplet_loss;

use super::*;

pub struct CheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
}

/// Relative error with a scale-aware floor: entries far below the gradient
/// scale are compared absolutely.
fn rel_against(a: f64, b: f64, scale: f64) -> f64 {
    let floor = (1e-3 * scale).max(1e-9);
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn grad_scale(grads: &[&[f32]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&g| f64::from(g).abs())
        .fold(0.0, f64::max)
}

/// Check one op: `analytic[t]` are the implementation's gradients for each
/// probed tensor; `loss_ref(tensors)` evaluates the projected reference
/// loss on f64 copies of those tensors.
fn run_probes(
    name: &str,
    tensors: &[Vec<f32>],
    analytic: &[&[f32]],
    mut loss_ref: impl FnMut(&[Vec<f64>]) -> f64,
    probes: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CheckReport, String> {
    assert_eq!(tensors.len(), analytic.len());
    let base: Vec<Vec<f64>> = tensors
        .iter()
        .map(|t| t.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let scale = grad_scale(analytic);
    let mut max_rel = 0.0f64;
    for probe in 0..probes {
        let ti = rng.gen_range(0..tensors.len());
        let ei = rng.gen_range(0..tensors[ti].len());
        let mut work = base.clone();
        let x0 = work[ti][ei];
        work[ti][ei] = x0 + FD_STEP;
        let lp = loss_ref(&work);
        work[ti][ei] = x0 - FD_STEP;
        let lm = loss_ref(&work);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = f64::from(analytic[ti][ei]);
        let rel = rel_against(an, fd, scale);
        if rel > tol {
            return Err(format!(
                "{name}: probe {probe} tensor {ti} elem {ei}: analytic {an:.6e} vs fd {fd:.6e} \
                 (rel {rel:.3e} > {tol:.0e})"
            ));
        }
        max_rel = max_rel.max(rel);
    }
    Ok(CheckReport { probes, max_rel_err: max_rel })
}

pub fn check_conv2d(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, f, cin, cout) = (5, 4, 3, 4);
    let input = Tensor::from_vec(&[t, f, cin], rand_vec(&mut rng, t * f * cin, -1.0, 1.0));
    let kernels = Tensor::from_vec(&[3, 3, cin, cout], rand_vec(&mut rng, 9 * cin * cout, -0.7, 0.7));
    let bias = Tensor::from_vec(&[cout], rand_vec(&mut rng, cout, -0.3, 0.3));
    let proj = rand_vec(&mut rng, t * f * cout, -1.0, 1.0);

    let grad_out = Tensor::from_vec(&[t, f, cout], proj.clone());
    let grads = nncore::conv2d_backward(&input, &kernels, &bias, &grad_out).unwrap();

    let tensors = vec![input.values().to_vec(), kernels.values().to_vec(), bias.values().to_vec()];
    let analytic: Vec<&[f32]> =
        vec![grads.input.values(), grads.kernels.values(), grads.bias.values()];
    run_probes(
        "conv2d",
        &tensors,
        &analytic,
        |work| {
            let out = conv2d_ref(&work[0], &work[1], &work[2], t, f, cin, cout);
            out.iter().zip(&proj).map(|(&o, &w)| o * f64::from(w)).sum()
        },
        probes,
        tol,
        &mut rng,
    )
}

pub fn check_batchnorm(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, f, c) = (2, 3, 3, 2);
    let n = b * t * f * c;
    let input = Tensor::from_vec(&[b, t, f, c], rand_vec(&mut rng, n, -2.0, 2.0));
    let gamma = Tensor::from_vec(&[c], rand_vec(&mut rng, c, 0.5, 1.5));
    let beta = Tensor::from_vec(&[c], rand_vec(&mut rng, c, -0.5, 0.5));
    let proj = rand_vec(&mut rng, n, -1.0, 1.0);

    let mut state = nncore::BatchNormState::new(c);
    let (_, cache) = nncore::batchnorm_train(&input, &gamma, &beta, &mut state).unwrap();
    let grad_out = Tensor::from_vec(&[b, t, f, c], proj.clone());
    let (dx, dgamma, dbeta) = nncore::batchnorm_backward(&cache, &gamma, &grad_out).unwrap();

    let tensors = vec![input.values().to_vec(), gamma.values().to_vec(), beta.values().to_vec()];
    let analytic: Vec<&[f32]> = vec![dx.values(), dgamma.values(), dbeta.values()];
    run_probes(
        "batchnorm",
        &tensors,
        &analytic,
        |work| {
            let out = batchnorm_ref(&work[0], &work[1], &work[2], b, t, f, c);
            out.iter().zip(&proj).map(|(&o, &w)| o * f64::from(w)).sum()
        },
        probes,
        tol,
        &mut rng,
    )
}

pub fn check_meanpool(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, f, c) = (7, 5, 3);
    let input = Tensor::from_vec(&[t, f, c], rand_vec(&mut rng, t * f * c, -1.0, 1.0));
    let pooled = nncore::meanpool(&input).unwrap();
    let proj = rand_vec(&mut rng, pooled.len(), -1.0, 1.0);
    let grad_out = Tensor::from_vec(pooled.shape(), proj.clone());
    let grad_in = nncore::meanpool_backward(&grad_out, t, f).unwrap();

    let tensors = vec![input.values().to_vec()];
    let analytic: Vec<&[f32]> = vec![grad_in.values()];
    run_probes(
        "meanpool",
        &tensors,
        &analytic,
        |work| {
            let (out, _, _) = meanpool_ref(&work[0], t, f, c);
            out.iter().zip(&proj).map(|(&o, &w)| o * f64::from(w)).sum()
        },
        probes,
        tol,
        &mut rng,
    )
}

pub fn check_dense(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, e) = (3, 6, 4);
    let input = Tensor::from_vec(&[b, d], rand_vec(&mut rng, b * d, -1.0, 1.0));
    let weights = Tensor::from_vec(&[d, e], rand_vec(&mut rng, d * e, -1.0, 1.0));
    let bias = Tensor::from_vec(&[e], rand_vec(&mut rng, e, -0.5, 0.5));
    let proj = rand_vec(&mut rng, b * e, -1.0, 1.0);
    let grad_out = Tensor::from_vec(&[b, e], proj.clone());
    let (dx, dw, db) = nncore::dense_backward(&input, &weights, &grad_out).unwrap();

    let tensors = vec![input.values().to_vec(), weights.values().to_vec(), bias.values().to_vec()];
    let analytic: Vec<&[f32]> = vec![dx.values(), dw.values(), db.values()];
    run_probes(
        "dense",
        &tensors,
        &analytic,
        |work| {
            let out = dense_ref(&work[0], &work[1], &work[2], b, d, e);
            out.iter().zip(&proj).map(|(&o, &w)| o * f64::from(w)).sum()
        },
        probes,
        tol,
        &mut rng,
    )
}

pub fn check_relu(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    // Inputs bounded away from the kink by much more than the step.
    let input_vals: Vec<f32> = (0..n)
        .map(|_| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.05..1.0f32)
        })
        .collect();
    let input = Tensor::from_vec(&[n], input_vals);
    let proj = rand_vec(&mut rng, n, -1.0, 1.0);
    let grad = nncore::relu_backward(&input, &Tensor::from_vec(&[n], proj.clone())).unwrap();

    let tensors = vec![input.values().to_vec()];
    let analytic: Vec<&[f32]> = vec![grad.values()];
    run_probes(
        "relu",
        &tensors,
        &analytic,
        |work| relu_ref(&work[0]).iter().zip(&proj).map(|(&o, &w)| o * f64::from(w)).sum(),
        probes,
        tol,
        &mut rng,
    )
}

pub fn check_dropout(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 50;
    let input = Tensor::from_vec(&[n], rand_vec(&mut rng, n, -1.0, 1.0));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
    let (_, mask) = nncore::dropout(&input, 0.3, Mode::Train, &mut mask_rng).unwrap();
    let mask = mask.unwrap();
    let proj = rand_vec(&mut rng, n, -1.0, 1.0);
    let grad = nncore::dropout_backward(&mask, &Tensor::from_vec(&[n], proj.clone())).unwrap();

    let mask_f64: Vec<f64> = mask.iter().map(|&m| f64::from(m)).collect();
    let tensors = vec![input.values().to_vec()];
    let analytic: Vec<&[f32]> = vec![grad.values()];
    run_probes(
        "dropout",
        &tensors,
        &analytic,
        |work| {
            work[0]
                .iter()
                .zip(&mask_f64)
                .zip(&proj)
                .map(|((&x, &m), &w)| x * m * f64::from(w))
                .sum()
        },
        probes,
        tol,
        &mut rng,
    )
}

pub fn check_l2_normalize(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let input = Tensor::from_vec(&[n], rand_vec(&mut rng, n, 0.2, 1.0));
    let proj = rand_vec(&mut rng, n, -1.0, 1.0);
    let grad = nncore::l2_normalize_backward_from_input(
        &input,
        &Tensor::from_vec(&[n], proj.clone()),
    )
    .unwrap();

    let tensors = vec![input.values().to_vec()];
    let analytic: Vec<&[f32]> = vec![grad.values()];
    run_probes(
        "l2_normalize",
        &tensors,
        &analytic,
        |work| {
            l2_normalize_ref(&work[0])
                .iter()
                .zip(&proj)
                .map(|(&o, &w)| o * f64::from(w))
                .sum()
        },
        probes,
        tol,
        &mut rng,
    )
}

/// Gradient of the batch triplet loss w.r.t. the embeddings, with boundary
/// probes (mining switches, hinge flips) redrawn.
pub fn check_triplet_loss_grad(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, e) = (8, 6);
    let labels: Vec<usize> = (0..b).map(|i| i / 2).collect();
    let mut vals = rand_vec(&mut rng, b * e, -1.0, 1.0);
    for row in vals.chunks_mut(e) {
        let norm = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt() as f32;
        row.iter_mut().for_each(|x| *x /= norm);
    }
    let embeddings = Tensor::from_vec(&[b, e], vals.clone());
    let outcome = batch_triplet_loss(&embeddings, &labels, 1.0).unwrap();

    let base: Vec<f64> = vals.iter().map(|&x| f64::from(x)).collect();
    let to_rows = |flat: &[f64]| -> Vec<Vec<f64>> {
        flat.chunks(e).map(|r| r.to_vec()).collect()
    };
    let fingerprint = |flat: &[f64]| -> u64 {
        let (_, triplets) = triplet_loss_ref(&to_rows(flat), &labels, 1.0);
        triplets.iter().fold(0u64, |h, &(a, p, n, act)| {
            h.wrapping_mul(31).wrapping_add((a * 7919 + p * 104729 + n * 1299709 + act as usize) as u64)
        })
    };
    let base_fp = fingerprint(&base);
    let scale = grad_scale(&[outcome.grad.values()]);

    let mut max_rel = 0.0f64;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < probes {
        attempts += 1;
        if attempts > probes * 20 {
            return Err("triplet grad check: too many boundary probes".into());
        }
        let ei = rng.gen_range(0..b * e);
        let mut work = base.clone();
        work[ei] += FD_STEP;
        let fp_p = fingerprint(&work);
        let (lp, _) = triplet_loss_ref(&to_rows(&work), &labels, 1.0);
        work[ei] = base[ei] - FD_STEP;
        let fp_m = fingerprint(&work);
        let (lm, _) = triplet_loss_ref(&to_rows(&work), &labels, 1.0);
        if fp_p != base_fp || fp_m != base_fp {
            continue; // crossed a mining/hinge boundary
        }
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = f64::from(outcome.grad.values()[ei]);
        let rel = rel_against(an, fd, scale);
        if rel > tol {
            return Err(format!(
                "triplet loss grad: elem {ei}: analytic {an:.6e} vs fd {fd:.6e} (rel {rel:.3e})"
            ));
        }
        max_rel = max_rel.max(rel);
        done += 1;
    }
    Ok(CheckReport { probes: done, max_rel_err: max_rel })
}

/// Full-encoder check on the tiny config: triplet loss through the whole
/// network, parameters probed against the f64 reference encoder.
pub fn check_encoder_gradients(probes: usize, tol: f64, seed: u64) -> Result<CheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = EncoderConfig {
        k: 2,
        e: 8,
        dropout_rates: [0.0; 5], // stochastic layers off; dropout has its own check
    };
    let mut params = EncoderParams::init(&config, seed).unwrap();
    let b = 8usize;
    let labels: Vec<usize> = (0..b).map(|i| i / 2).collect();

    // Sparse salience-like inputs.
    let inputs: Vec<PreprocessedInput> = (0..b)
        .map(|i| {
            let mut m = covernet::mat::Matrix::zeros(INPUT_TIME, INPUT_FREQ);
            for t in 0..INPUT_TIME {
                let bin = ((t / 37 + i * 3) % INPUT_FREQ + rng.gen_range(0..3)) % INPUT_FREQ;
                *m.at_mut(t, bin) = rng.gen_range(0.3..1.0);
            }
            PreprocessedInput { values: m, track_id: format!("t{i}") }
        })
        .collect();
    let batch = batch_from_inputs(&inputs);

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(0);
    let (embeddings, cache) = encoder_forward_train(&batch, &mut params, &mut dropout_rng)
        .map_err(|e| e.to_string())?;
    let outcome = batch_triplet_loss(&embeddings, &labels, 1.0).map_err(|e| e.to_string())?;
    let grads = encoder_backward(&params, &cache, &outcome.grad).map_err(|e| e.to_string())?;

    let oracle = OracleEncoder::from_params(&params);
    let batch_f64: Vec<f64> = batch.values().iter().map(|&x| f64::from(x)).collect();
    let (_, base_fp) = oracle.loss(&batch_f64, b, &labels, 1.0);

    let analytic: Vec<&[f32]> = grads.tensors.iter().map(|t| t.values()).collect();
    let scale = grad_scale(&analytic);
    let n_tensors = grads.tensors.len();

    let mut max_rel = 0.0f64;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < probes {
        attempts += 1;
        if attempts > probes * 20 {
            return Err("encoder grad check: too many boundary probes".into());
        }
        let ti = rng.gen_range(0..n_tensors);
        let ei = rng.gen_range(0..analytic[ti].len());

        let mut oracle_work = OracleEncoder::from_params(&params);
        let x0 = oracle_work.trainable_mut(ti)[ei];
        oracle_work.trainable_mut(ti)[ei] = x0 + FD_STEP;
        let (lp, fp_p) = oracle_work.loss(&batch_f64, b, &labels, 1.0);
        oracle_work.trainable_mut(ti)[ei] = x0 - FD_STEP;
        let (lm, fp_m) = oracle_work.loss(&batch_f64, b, &labels, 1.0);

        if fp_p != base_fp || fp_m != base_fp {
            continue; // probe crossed a ReLU kink or mining boundary
        }
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = f64::from(analytic[ti][ei]);
        let rel = rel_against(an, fd, scale);
        if rel > tol {
            return Err(format!(
                "encoder: tensor {ti} elem {ei}: analytic {an:.6e} vs fd {fd:.6e} (rel {rel:.3e})"
            ));
        }
        max_rel = max_rel.max(rel);
        done += 1;
    }
    Ok(CheckReport { probes: done, max_rel_err: max_rel })
}
