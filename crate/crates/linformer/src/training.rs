//! Dataset construction, SNR augmentation, losses, optimizer, schedule and
//! the training / fine-tuning loops.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape};
use crate::channel_sim::{add_awgn, ls_estimate, mmse_estimate, ChannelSequence, SimConfig};
use crate::error::{LabError, Result};
use crate::model::{forward, ModelParams};

/// One training sample: estimated past channels and the always-clean target.
#[derive(Debug, Clone)]
pub struct Sample {
    /// [N_P x R x T] complex, frame-major.
    pub past: Vec<Complex64>,
    /// [N_L x R x T] complex, noise-free.
    pub future: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct WindowDataset {
    pub n_past: usize,
    pub n_future: usize,
    pub r: usize,
    pub t: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Wmse,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Wmse => "wmse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "wmse" => Ok(LossKind::Wmse),
            other => Err(LabError::Config(format!("unknown loss '{}'", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub loss: LossKind,
    /// SNR augmentation range in dB; None trains on clean inputs.
    pub aug_snr_range_db: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 0.0004,
            batch_size: 64,
            weight_decay: 0.01,
            epochs: 100,
            loss: LossKind::Wmse,
            aug_snr_range_db: Some((0.0, 20.0)),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0) || self.batch_size < 1 {
            return Err(LabError::Config("max_lr > 0 and batch_size >= 1 required".into()));
        }
        if let Some((lo, hi)) = self.aug_snr_range_db {
            if lo > hi {
                return Err(LabError::Config("augmentation SNR range low > high".into()));
            }
        }
        Ok(())
    }
}

/// Stride-1 sliding windows: F frames yield F - (N_P + N_L) + 1 samples.
pub fn build_windows(
    frames: &[Complex64],
    num_frames: usize,
    r: usize,
    t: usize,
    n_past: usize,
    n_future: usize,
) -> Result<Vec<Sample>> {
    let span = n_past + n_future;
    if num_frames < span {
        return Err(LabError::Data(format!(
            "{} frames cannot fit a {}+{} window",
            num_frames, n_past, n_future
        )));
    }
    let sz = r * t;
    let mut samples = Vec::with_capacity(num_frames - span + 1);
    for start in 0..=num_frames - span {
        samples.push(Sample {
            past: frames[start * sz..(start + n_past) * sz].to_vec(),
            future: frames[(start + n_past) * sz..(start + span) * sz].to_vec(),
        });
    }
    Ok(samples)
}

pub fn windows_from_sequences(
    sequences: &[(&[Complex64], usize)],
    r: usize,
    t: usize,
    n_past: usize,
    n_future: usize,
) -> Result<WindowDataset> {
    let mut samples = Vec::new();
    for (frames, n) in sequences {
        samples.extend(build_windows(frames, *n, r, t, n_past, n_future)?);
    }
    Ok(WindowDataset { n_past, n_future, r, t, samples })
}

/// Complex -> real feature packing: per frame
/// [Re h_11, Im h_11, Re h_12, ..., Im h_RT], row-major over [R x T].
pub fn pack_features(frames: &[Complex64], n_frames: usize, rt: usize) -> Matrix {
    let mut m = Matrix::zeros(n_frames, 2 * rt);
    for n in 0..n_frames {
        for e in 0..rt {
            let h = frames[n * rt + e];
            m.set(n, 2 * e, h.re);
            m.set(n, 2 * e + 1, h.im);
        }
    }
    m
}

pub fn unpack_features(m: &Matrix) -> Vec<Complex64> {
    let rt = m.cols / 2;
    let mut out = Vec::with_capacity(m.rows * rt);
    for n in 0..m.rows {
        for e in 0..rt {
            out.push(Complex64::new(m.get(n, 2 * e), m.get(n, 2 * e + 1)));
        }
    }
    out
}

/// Estimation context for SNR augmentation: covariance for the MMSE filter.
#[derive(Debug, Clone)]
pub struct AugmentContext {
    pub cov: DMatrix<Complex64>,
}

fn past_as_sequence(sample: &Sample, ds: &WindowDataset) -> ChannelSequence {
    ChannelSequence {
        data: sample.past.clone(),
        frames: ds.n_past,
        r: ds.r,
        t: ds.t,
        meta: SimConfig { r: ds.r, t: ds.t, num_frames: ds.n_past, ..SimConfig::default() },
    }
}

/// Draw snr ~ U[low, high] dB, corrupt the past, re-estimate it with
/// LS then MMSE. The future target is untouched.
pub fn augment<R: Rng>(
    sample: &Sample,
    ds: &WindowDataset,
    range_db: (f64, f64),
    ctx: &AugmentContext,
    rng: &mut R,
) -> Result<Sample> {
    let snr_db = if range_db.0 == range_db.1 {
        range_db.0
    } else {
        rng.gen_range(range_db.0..range_db.1)
    };
    let seq = past_as_sequence(sample, ds);
    let noisy = add_awgn(&seq, snr_db, rng)?;
    let ls = ls_estimate(&noisy);
    let mmse = mmse_estimate(&ls, snr_db, &ctx.cov)?;
    Ok(Sample { past: mmse.data, future: sample.future.clone() })
}

/// MSE of Eq-style normalization: (1 / (R T N_L)) * sum_n ||H - H_hat||^2.
pub fn mse_loss(pred: &[Complex64], target: &[Complex64], rt: usize, n_future: usize) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != rt * n_future {
        return Err(LabError::Shape("loss operands disagree".into()));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).norm_sqr()).sum();
    Ok(sum / (rt * n_future) as f64)
}

/// Per-future-frame weight n^(-1/2), n = 1..N_L.
pub fn wmse_weight(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Weighted MSE: (1 / (R T N_L)) * sum_n n^(-1/2) ||H^(n) - H_hat^(n)||^2.
pub fn wmse_loss(pred: &[Complex64], target: &[Complex64], rt: usize, n_future: usize) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != rt * n_future {
        return Err(LabError::Shape("loss operands disagree".into()));
    }
    let mut sum = 0.0;
    for n in 0..n_future {
        let w = wmse_weight(n + 1);
        for e in 0..rt {
            sum += w * (pred[n * rt + e] - target[n * rt + e]).norm_sqr();
        }
    }
    Ok(sum / (rt * n_future) as f64)
}

/// Build the in-graph loss on packed real features.
fn graph_loss(
    tape: &mut Tape,
    pred: crate::autodiff::NodeId,
    target: &Matrix,
    kind: LossKind,
    rt: usize,
    n_future: usize,
) -> Result<crate::autodiff::NodeId> {
    let tgt = tape.leaf(target);
    let diff = tape.sub(pred, tgt)?;
    let sq = tape.mul(diff, diff)?;
    let weighted = match kind {
        LossKind::Mse => sq,
        LossKind::Wmse => {
            let w = Matrix::from_fn(n_future, 2 * rt, |n, _| wmse_weight(n + 1));
            let wid = tape.leaf(&w);
            tape.mul(sq, wid)?
        }
    };
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / (rt * n_future) as f64))
}

/// AdamW with decoupled weight decay:
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(shapes: &[usize]) -> Self {
        OptimizerState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        let mut shapes = Vec::new();
        let mut clone = params.clone();
        clone.visit_mut(|_, m| shapes.push(m.len()));
        OptimizerState::new(&shapes)
    }
}

/// One decoupled-weight-decay update over a flat parameter list. Gradients
/// must be in the same order as `OptimizerState::for_params` visited them.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    let mut idx = 0usize;
    let mut err = None;
    params.visit_mut(|name, mat| {
        if err.is_some() {
            return;
        }
        let Some(grad) = grads.get(idx) else {
            err = Some(LabError::Shape(format!("missing gradient for '{}'", name)));
            return;
        };
        if grad.len() != mat.len() {
            err = Some(LabError::Shape(format!("gradient size mismatch for '{}'", name)));
            return;
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..grad.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            mat.data[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * mat.data[i]);
        }
        idx += 1;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// 1cycle schedule: cosine warmup from max_lr/25 to max_lr over the first
/// 30% of steps, cosine anneal down to max_lr/1e4 over the rest.
pub fn onecycle_lr(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(LabError::Config(format!("step {} out of {} total", step, total_steps)));
    }
    let start = max_lr / 25.0;
    let floor = max_lr / 1e4;
    let warm = ((total_steps as f64) * 0.3).round() as usize;
    if warm > 0 && step <= warm {
        let p = step as f64 / warm as f64;
        Ok(start + (max_lr - start) * 0.5 * (1.0 - (std::f64::consts::PI * p).cos()))
    } else {
        let last = total_steps.saturating_sub(1).max(warm + 1);
        let p = (step - warm) as f64 / (last - warm) as f64;
        Ok(floor + (max_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters at the best observed test loss.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_test_loss: f64,
}

/// Per-feature mean/std from the clean training split (inputs only).
pub fn input_statistics(ds: &WindowDataset) -> (Matrix, Matrix) {
    let feat = 2 * ds.r * ds.t;
    let mut mean = vec![0.0; feat];
    let mut sq = vec![0.0; feat];
    let mut count = 0u64;
    let rt = ds.r * ds.t;
    for s in &ds.samples {
        for n in 0..ds.n_past {
            for e in 0..rt {
                let h = s.past[n * rt + e];
                mean[2 * e] += h.re;
                mean[2 * e + 1] += h.im;
                sq[2 * e] += h.re * h.re;
                sq[2 * e + 1] += h.im * h.im;
            }
        }
        count += ds.n_past as u64;
    }
    let c = count as f64;
    let mut std = vec![0.0; feat];
    for j in 0..feat {
        mean[j] /= c;
        let var = (sq[j] / c - mean[j] * mean[j]).max(1e-12);
        std[j] = var.sqrt();
    }
    (Matrix::from_vec(1, feat, mean), Matrix::from_vec(1, feat, std))
}

fn sample_loss(
    params: &ModelParams,
    sample: &Sample,
    ds: &WindowDataset,
    kind: LossKind,
    with_grads: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let rt = ds.r * ds.t;
    let input = pack_features(&sample.past, ds.n_past, rt);
    let target = pack_features(&sample.future, ds.n_future, rt);
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, params, &input)?;
    let loss = graph_loss(&mut tape, fwd.output, &target, kind, rt, ds.n_future)?;
    let value = tape.value_scalar(loss)?;
    if !with_grads {
        return Ok((value, None));
    }
    tape.backward(loss)?;
    // Re-order from graph binding order to the optimizer's visit order.
    let by_name: std::collections::HashMap<&str, &crate::autodiff::NodeId> =
        fwd.params.iter().map(|(n, id)| (n.as_str(), id)).collect();
    let mut grads = Vec::new();
    let mut missing = None;
    let mut clone = params.clone();
    clone.visit_mut(|name, _| match by_name.get(name.as_str()) {
        Some(&&id) => grads.push(tape.grad(id).data),
        None => missing = Some(name),
    });
    if let Some(name) = missing {
        return Err(LabError::Shape(format!("forward pass did not bind '{}'", name)));
    }
    Ok((value, Some(grads)))
}

/// Mean loss over a dataset without gradients.
pub fn evaluate_loss(params: &ModelParams, ds: &WindowDataset, kind: LossKind) -> Result<f64> {
    if ds.samples.is_empty() {
        return Err(LabError::Data("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for s in &ds.samples {
        total += sample_loss(params, s, ds, kind, false)?.0;
    }
    Ok(total / ds.samples.len() as f64)
}

fn check_dims(params: &ModelParams, ds: &WindowDataset) -> Result<()> {
    let cfg = &params.cfg;
    if cfg.n_past != ds.n_past || cfg.n_future != ds.n_future || cfg.r != ds.r || cfg.t != ds.t {
        return Err(LabError::Shape(format!(
            "model expects N_P={} N_L={} R={} T={}, dataset has {}/{}/{}/{}",
            cfg.n_past, cfg.n_future, cfg.r, cfg.t, ds.n_past, ds.n_future, ds.r, ds.t
        )));
    }
    Ok(())
}

/// Training loop: shuffled minibatches, per-sample tapes, averaged gradients,
/// AdamW with the 1cycle schedule. Deterministic under `cfg.seed`; keeps the
/// parameters with the best test loss. Augmentation noise is redrawn for
/// every sample visit.
pub fn train(
    mut params: ModelParams,
    train_ds: &WindowDataset,
    test_ds: &WindowDataset,
    cfg: &TrainConfig,
    aug: Option<&AugmentContext>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(&params, train_ds)?;
    check_dims(&params, test_ds)?;
    if train_ds.samples.is_empty() {
        return Err(LabError::Data("empty training set".into()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546); // "SHUF"
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4155_474d); // "AUGM"

    let n = train_ds.samples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);

    let mut state = OptimizerState::for_params(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut last_lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            let scale = 1.0 / chunk.len() as f64;
            for &si in chunk {
                let sample = match (aug, cfg.aug_snr_range_db) {
                    (Some(ctx), Some(range)) => {
                        augment(&train_ds.samples[si], train_ds, range, ctx, &mut aug_rng)?
                    }
                    _ => train_ds.samples[si].clone(),
                };
                let (loss, g) = sample_loss(&params, &sample, train_ds, cfg.loss, true)?;
                if !loss.is_finite() {
                    return Err(LabError::Numeric(format!(
                        "training diverged at epoch {} (loss {})",
                        epoch, loss
                    )));
                }
                batch_loss += loss * scale;
                let g = g.expect("gradients requested");
                match &mut grads {
                    None => {
                        let mut g = g;
                        for v in &mut g {
                            for x in v.iter_mut() {
                                *x *= scale;
                            }
                        }
                        grads = Some(g);
                    }
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.iter_mut().zip(b) {
                                *x += y * scale;
                            }
                        }
                    }
                }
            }
            let lr = onecycle_lr(step, total_steps, cfg.max_lr)?;
            last_lr = lr;
            adamw_step(&mut params, &grads.expect("non-empty batch"), &mut state, lr, cfg.weight_decay)?;
            epoch_loss += batch_loss * chunk.len() as f64;
            step += 1;
        }
        epoch_loss /= n as f64;

        let test_loss = evaluate_loss(&params, test_ds, cfg.loss)?;
        if best.as_ref().map_or(true, |(b, _)| test_loss < *b) {
            best = Some((test_loss, params.clone()));
        }
        history.push(EpochStats { epoch, train_loss: epoch_loss, test_loss, lr: last_lr });
    }

    let (best_test_loss, best_params) = match best {
        Some((loss, p)) => (loss, p),
        None => (f64::INFINITY, params),
    };
    Ok(TrainOutcome { params: best_params, history, best_test_loss })
}

/// Continue training from a checkpoint at max_lr/10; the standardization
/// statistics stored with the checkpoint are kept.
pub fn fine_tune(
    params: ModelParams,
    train_ds: &WindowDataset,
    test_ds: &WindowDataset,
    cfg: &TrainConfig,
    aug: Option<&AugmentContext>,
) -> Result<TrainOutcome> {
    check_dims(&params, train_ds)?;
    let reduced = TrainConfig { max_lr: cfg.max_lr / 10.0, ..cfg.clone() };
    if reduced.epochs == 0 {
        let best = evaluate_loss(&params, test_ds, cfg.loss)?;
        return Ok(TrainOutcome { params, history: Vec::new(), best_test_loss: best });
    }
    train(params, train_ds, test_ds, &reduced, aug)
}

/// Apply one shared time permutation (drawn from `seed`) to the past frames
/// of every sample; targets untouched. Returns the permutation used.
pub fn shuffle_ablation(ds: &WindowDataset, seed: u64) -> (WindowDataset, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..ds.n_past).collect();
    perm.shuffle(&mut rng);
    (apply_time_permutation(ds, &perm), perm)
}

/// Apply a given shared permutation to every sample's past frames.
pub fn apply_time_permutation(ds: &WindowDataset, perm: &[usize]) -> WindowDataset {
    let rt = ds.r * ds.t;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut past = Vec::with_capacity(s.past.len());
            for &src in perm {
                past.extend_from_slice(&s.past[src * rt..(src + 1) * rt]);
            }
            Sample { past, future: s.future.clone() }
        })
        .collect();
    WindowDataset { samples, ..ds.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{generate_sequence, sample_path_set, sample_covariance};
    use crate::model::{MixerKind, ModelConfig};

    fn toy_dataset(n_samples: usize, n_past: usize, n_future: usize) -> WindowDataset {
        let cfg = SimConfig {
            r: 1,
            t: 2,
            num_frames: n_samples + n_past + n_future - 1,
            speed_kmh: 80.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = sample_path_set(&cfg, &mut rng).unwrap();
        let seq = generate_sequence(&cfg, &ps).unwrap();
        WindowDataset {
            n_past,
            n_future,
            r: 1,
            t: 2,
            samples: build_windows(&seq.data, cfg.num_frames, 1, 2, n_past, n_future).unwrap(),
        }
    }

    #[test]
    fn window_counts() {
        let frames = vec![Complex64::new(1.0, 0.0); 10_000];
        let w = build_windows(&frames, 10_000, 1, 1, 90, 10).unwrap();
        // 10,000 frames with a 90+10 window yield 10,001 - (N_P + N_L) samples.
        assert_eq!(w.len(), 10_001 - (90 + 10));

        let exact = vec![Complex64::new(0.0, 0.0); 12];
        assert_eq!(build_windows(&exact, 12, 1, 1, 8, 4).unwrap().len(), 1);
        let short = vec![Complex64::new(0.0, 0.0); 11];
        assert!(build_windows(&short, 11, 1, 1, 8, 4).is_err());
    }

    #[test]
    fn augment_leaves_future_untouched_and_respects_range() {
        let ds = toy_dataset(50, 8, 3);
        let cov = {
            let cfg = SimConfig { r: 1, t: 2, num_frames: 500, ..SimConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let ps = sample_path_set(&cfg, &mut rng).unwrap();
            sample_covariance(&[generate_sequence(&cfg, &ps).unwrap()]).unwrap()
        };
        let ctx = AugmentContext { cov };
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        let s = &ds.samples[0];
        let out = augment(s, &ds, (300.0, 300.0), &ctx, &mut rng).unwrap();
        assert_eq!(out.future, s.future);
        let num: f64 = out.past.iter().zip(&s.past).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = s.past.iter().map(|h| h.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn augment_snr_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut total = 0.0;
        let n = 10_000;
        for _ in 0..n {
            total += rng.gen_range(0.0..20.0);
        }
        let mean: f64 = total / n as f64;
        assert!((mean - 10.0).abs() < 0.2, "mean {}", mean);
    }

    #[test]
    fn mse_loss_cases() {
        let one = [Complex64::new(1.0, 0.0)];
        let zero = [Complex64::new(0.0, 0.0)];
        assert_eq!(mse_loss(&one, &one, 1, 1).unwrap(), 0.0);
        assert_eq!(mse_loss(&zero, &one, 1, 1).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Complex64> =
            (0..12).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let b: Vec<Complex64> =
            (0..12).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        // loop oracle
        let mut expect = 0.0;
        for i in 0..12 {
            let d = a[i] - b[i];
            expect += d.re * d.re + d.im * d.im;
        }
        expect /= 12.0;
        assert!((mse_loss(&a, &b, 3, 4).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn wmse_weights_and_ratio() {
        assert_eq!(wmse_weight(1), 1.0);
        assert_eq!(wmse_weight(4), 0.5);

        // Error only in frame 9 vs same error only in frame 1: ratio 1/3.
        let zeros = vec![Complex64::new(0.0, 0.0); 9];
        let mut late = zeros.clone();
        late[8] = Complex64::new(1.0, 0.0);
        let mut early = zeros.clone();
        early[0] = Complex64::new(1.0, 0.0);
        let l_late = wmse_loss(&late, &zeros, 1, 9).unwrap();
        let l_early = wmse_loss(&early, &zeros, 1, 9).unwrap();
        assert!((l_late / l_early - 1.0 / 3.0).abs() < 1e-12);

        // Equal per-frame errors: wmse = mse * mean(n^-1/2).
        let n_l = 6;
        let pred = vec![Complex64::new(0.3, -0.2); n_l];
        let target = vec![Complex64::new(0.0, 0.0); n_l];
        let factor: f64 = (1..=n_l).map(wmse_weight).sum::<f64>() / n_l as f64;
        let m = mse_loss(&pred, &target, 1, n_l).unwrap();
        let w = wmse_loss(&pred, &target, 1, n_l).unwrap();
        assert!((w - m * factor).abs() < 1e-12);
    }

    #[test]
    fn adamw_zero_grad_behavior() {
        let cfg = ModelConfig {
            n_past: 4, n_future: 2, d_model: 4, n_layers: 1, r: 1, t: 1,
            mixer: MixerKind::Tmlp, heads: 1, use_pos_enc: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
        let before = params.named_trainable();
        let mut state = OptimizerState::for_params(&params);
        let zero_grads: Vec<Vec<f64>> = before.iter().map(|(_, m)| vec![0.0; m.len()]).collect();

        adamw_step(&mut params, &zero_grads, &mut state, 0.1, 0.0).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(params.named_trainable()) {
            assert_eq!(a.data, b.data);
        }

        // wd > 0, zero grad: pure shrinkage theta * (1 - lr*wd)
        let mut state = OptimizerState::for_params(&params);
        let snapshot = params.named_trainable();
        adamw_step(&mut params, &zero_grads, &mut state, 0.1, 0.5).unwrap();
        for ((_, a), (_, b)) in snapshot.iter().zip(params.named_trainable()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((y - x * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adamw_quadratic_bowl_converges() {
        // f(theta) = theta^2, the scalar recursion directly.
        let mut theta = 1.0f64;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=200 {
            let g = 2.0 * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat: f64 = v / (1.0 - b2.powi(t));
            theta -= 0.1 * (m_hat / (v_hat.sqrt() + eps));
        }
        assert!(theta.abs() < 1e-2, "theta {}", theta);
    }

    #[test]
    fn onecycle_boundaries() {
        let total = 1000;
        let max_lr = 0.0004;
        assert!((onecycle_lr(0, total, max_lr).unwrap() - max_lr / 25.0).abs() < 1e-15);
        assert!((onecycle_lr(300, total, max_lr).unwrap() - max_lr).abs() < 1e-12);
        assert!((onecycle_lr(total - 1, total, max_lr).unwrap() - max_lr / 1e4).abs() < 1e-9);
        assert!(onecycle_lr(total, total, max_lr).is_err());
    }

    #[test]
    fn shuffle_ablation_shared_permutation() {
        let ds = toy_dataset(20, 6, 2);
        let (shuffled, perm) = shuffle_ablation(&ds, 11);
        assert_eq!(perm.len(), 6);
        let rt = 2;
        for (orig, shuf) in ds.samples.iter().zip(&shuffled.samples) {
            assert_eq!(orig.future, shuf.future);
            for (i, &src) in perm.iter().enumerate() {
                assert_eq!(&shuf.past[i * rt..(i + 1) * rt], &orig.past[src * rt..(src + 1) * rt]);
            }
        }

        // Forcing the identity leaves the dataset unchanged.
        let ident: Vec<usize> = (0..6).collect();
        let same = apply_time_permutation(&ds, &ident);
        for (a, b) in ds.samples.iter().zip(&same.samples) {
            assert_eq!(a.past, b.past);
        }
    }

    #[test]
    fn train_zero_epochs_returns_initialization() {
        let ds = toy_dataset(12, 6, 2);
        let cfg = ModelConfig {
            n_past: 6, n_future: 2, d_model: 8, n_layers: 1, r: 1, t: 2,
            mixer: MixerKind::Tmlp, heads: 1, use_pos_enc: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let before = params.named_trainable();
        let tc = TrainConfig { epochs: 0, aug_snr_range_db: None, ..TrainConfig::default() };
        let out = train(params, &ds, &ds, &tc, None).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(out.params.named_trainable()) {
            assert_eq!(a.data, b.data);
        }
        assert!(out.history.is_empty());
    }

    #[test]
    fn train_deterministic_under_seed() {
        let ds = toy_dataset(24, 6, 2);
        let cfg = ModelConfig {
            n_past: 6, n_future: 2, d_model: 8, n_layers: 1, r: 1, t: 2,
            mixer: MixerKind::Tmlp, heads: 1, use_pos_enc: false,
        };
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            max_lr: 0.01,
            aug_snr_range_db: None,
            loss: LossKind::Mse,
            ..TrainConfig::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let params = ModelParams::init(&cfg, &mut rng).unwrap();
            train(params, &ds, &ds, &tc, None).unwrap()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.test_loss, y.test_loss);
        }
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity_and_dims_checked() {
        let ds = toy_dataset(12, 6, 2);
        let cfg = ModelConfig {
            n_past: 6, n_future: 2, d_model: 8, n_layers: 1, r: 1, t: 2,
            mixer: MixerKind::Tmlp, heads: 1, use_pos_enc: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let before = params.named_trainable();
        let tc = TrainConfig { epochs: 0, aug_snr_range_db: None, loss: LossKind::Mse, ..TrainConfig::default() };
        let out = fine_tune(params.clone(), &ds, &ds, &tc, None).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(out.params.named_trainable()) {
            assert_eq!(a.data, b.data);
        }

        let wrong = toy_dataset(12, 5, 2);
        assert!(fine_tune(params, &wrong, &wrong, &tc, None).is_err());
    }
}
