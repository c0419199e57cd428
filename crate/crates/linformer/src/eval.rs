//! Prediction metrics, naive baselines, MRT capacity and the complexity /
//! latency reporting used by the CLI.

use std::time::Instant;

use num_complex::Complex64;

use crate::autodiff::{Matrix, Tape};
use crate::error::{LabError, Result};
use crate::model::{count_mults, forward, ModelParams, MultCounts};
use crate::training::{pack_features, unpack_features, Sample, WindowDataset};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Run the model on one sample's past frames; returns N_L predicted frames.
pub fn predict(params: &ModelParams, sample: &Sample, ds: &WindowDataset) -> Result<Vec<Complex64>> {
    let rt = ds.r * ds.t;
    let input = pack_features(&sample.past, ds.n_past, rt);
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, params, &input)?;
    Ok(unpack_features(&tape.value(fwd.output)))
}

/// Mean squared error per future frame index, averaged over samples and
/// antenna entries: out[n] = mean over samples of ||H^(n) - H_hat^(n)||^2 / RT.
pub fn per_frame_mse(
    predictions: &[Vec<Complex64>],
    ds: &WindowDataset,
) -> Result<Vec<f64>> {
    if predictions.len() != ds.samples.len() || ds.samples.is_empty() {
        return Err(LabError::Data(format!(
            "{} predictions for {} samples",
            predictions.len(),
            ds.samples.len()
        )));
    }
    let rt = ds.r * ds.t;
    let mut acc = vec![0.0; ds.n_future];
    for (pred, sample) in predictions.iter().zip(&ds.samples) {
        if pred.len() != rt * ds.n_future {
            return Err(LabError::Shape("prediction length mismatch".into()));
        }
        for n in 0..ds.n_future {
            let mut e = 0.0;
            for k in 0..rt {
                e += (pred[n * rt + k] - sample.future[n * rt + k]).norm_sqr();
            }
            acc[n] += e / rt as f64;
        }
    }
    let c = ds.samples.len() as f64;
    Ok(acc.iter().map(|x| x / c).collect())
}

pub fn model_predictions(params: &ModelParams, ds: &WindowDataset) -> Result<Vec<Vec<Complex64>>> {
    ds.samples.iter().map(|s| predict(params, s, ds)).collect()
}

/// Persistence: every future frame is the last observed past frame.
pub fn persistence_baseline(ds: &WindowDataset) -> Vec<Vec<Complex64>> {
    let rt = ds.r * ds.t;
    ds.samples
        .iter()
        .map(|s| {
            let last = &s.past[(ds.n_past - 1) * rt..ds.n_past * rt];
            let mut out = Vec::with_capacity(rt * ds.n_future);
            for _ in 0..ds.n_future {
                out.extend_from_slice(last);
            }
            out
        })
        .collect()
}

/// Linear extrapolation from the last two past frames:
/// H_hat^(n+k) = H^(n) + k (H^(n) - H^(n-1)).
pub fn linear_extrap_baseline(ds: &WindowDataset) -> Result<Vec<Vec<Complex64>>> {
    if ds.n_past < 2 {
        return Err(LabError::Config("linear extrapolation needs at least 2 past frames".into()));
    }
    let rt = ds.r * ds.t;
    Ok(ds
        .samples
        .iter()
        .map(|s| {
            let last = &s.past[(ds.n_past - 1) * rt..ds.n_past * rt];
            let prev = &s.past[(ds.n_past - 2) * rt..(ds.n_past - 1) * rt];
            let mut out = Vec::with_capacity(rt * ds.n_future);
            for k in 1..=ds.n_future {
                for e in 0..rt {
                    out.push(last[e] + (last[e] - prev[e]) * (k as f64));
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct CapacityReport {
    /// Mean achievable rate (bits/s/Hz) per future frame index.
    pub per_frame: Vec<f64>,
    pub mean: f64,
    /// Samples skipped because the predicted channel was exactly zero.
    pub skipped: usize,
}

/// Maximum ratio transmission with the predicted channel steering the
/// transmitter: w fixed at (1/sqrt(R), ..), v = (w H_hat)^H normalized,
/// a = w H_true v, C = log2(1 + |a|^2 gamma_0).
pub fn mrt_capacity(
    predictions: &[Vec<Complex64>],
    ds: &WindowDataset,
    snr_db: f64,
) -> Result<CapacityReport> {
    if predictions.len() != ds.samples.len() || ds.samples.is_empty() {
        return Err(LabError::Data("capacity needs one prediction per sample".into()));
    }
    let (r, t) = (ds.r, ds.t);
    let rt = r * t;
    let gamma0 = db_to_linear(snr_db);
    let w = 1.0 / (r as f64).sqrt();

    let mut acc = vec![0.0; ds.n_future];
    let mut counts = vec![0usize; ds.n_future];
    let mut skipped = 0usize;
    for (pred, sample) in predictions.iter().zip(&ds.samples) {
        for n in 0..ds.n_future {
            // row vector g = w * H, combining the receive antennas
            let frame_hat = &pred[n * rt..(n + 1) * rt];
            let mut g = vec![Complex64::new(0.0, 0.0); t];
            for i in 0..r {
                for j in 0..t {
                    g[j] += frame_hat[i * t + j] * w;
                }
            }
            let norm: f64 = g.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                skipped += 1;
                continue;
            }
            // v = g^H / ||g||
            let v: Vec<Complex64> = g.iter().map(|x| x.conj() / norm).collect();
            let frame_true = &sample.future[n * rt..(n + 1) * rt];
            let mut a = Complex64::new(0.0, 0.0);
            for i in 0..r {
                for j in 0..t {
                    a += frame_true[i * t + j] * w * v[j];
                }
            }
            acc[n] += (1.0 + a.norm_sqr() * gamma0).log2();
            counts[n] += 1;
        }
    }
    let per_frame: Vec<f64> = acc
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(CapacityReport { per_frame, mean, skipped })
}

#[derive(Debug, Clone)]
pub struct ComplexityReport {
    pub closed_form: MultCounts,
    pub instrumented_core: u64,
    pub instrumented_embedding: u64,
    pub matches: bool,
}

/// Run one forward pass with the multiplication counter on and compare the
/// tally against the closed-form accounting.
pub fn verify_complexity(params: &ModelParams) -> Result<ComplexityReport> {
    let cfg = &params.cfg;
    let closed_form = count_mults(cfg);
    let input = Matrix::zeros(cfg.n_past, cfg.feat_dim());
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, params, &input)?;
    let matches = fwd.mults_core == closed_form.total
        && fwd.mults_embedding == closed_form.embedding;
    Ok(ComplexityReport {
        closed_form,
        instrumented_core: fwd.mults_core,
        instrumented_embedding: fwd.mults_embedding,
        matches,
    })
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub reps: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mults_per_forward: u64,
    pub mults_per_ms: f64,
}

/// Wall-clock a single-sample forward pass: 10 warmups, then `reps`
/// (minimum 100) timed runs; reports median and 95th percentile.
pub fn bench_inference(params: &ModelParams, reps: usize) -> Result<BenchReport> {
    let reps = reps.max(100);
    let cfg = &params.cfg;
    let input = Matrix::from_fn(cfg.n_past, cfg.feat_dim(), |i, j| {
        ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.5
    });
    let mults = count_mults(cfg).total + count_mults(cfg).embedding;
    let run = || -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, params, &input)?;
        // touch the output so the pass cannot be optimized away
        Ok(tape.value(fwd.output).data.iter().sum())
    };
    let mut sink = 0.0;
    for _ in 0..10 {
        sink += run()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        sink += run()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    if !sink.is_finite() {
        return Err(LabError::Numeric("non-finite benchmark output".into()));
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ms = times[reps / 2];
    let p95_ms = times[((reps as f64 * 0.95) as usize).min(reps - 1)];
    Ok(BenchReport {
        reps,
        median_ms,
        p95_ms,
        mults_per_forward: mults,
        mults_per_ms: mults as f64 / median_ms,
    })
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// (label, per-frame MSE) rows, e.g. model vs baselines.
    pub rows: Vec<(String, Vec<f64>)>,
    pub n_future: usize,
}

impl MetricsReport {
    /// CSV with a header row: predictor,frame_1,...,frame_N,mean.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor");
        for n in 1..=self.n_future {
            out.push_str(&format!(",frame_{}", n));
        }
        out.push_str(",mean\n");
        for (label, vals) in &self.rows {
            out.push_str(label);
            for v in vals {
                out.push_str(&format!(",{:.6e}", v));
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            out.push_str(&format!(",{:.6e}\n", mean));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset_with(samples: Vec<Sample>, n_past: usize, n_future: usize, r: usize, t: usize) -> WindowDataset {
        WindowDataset { n_past, n_future, r, t, samples }
    }

    #[test]
    fn db_round_trip() {
        for &db in &[-10.0, 0.0, 3.0, 20.0] {
            assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-12);
        }
        assert!((db_to_linear(0.0) - 1.0).abs() < 1e-15);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn per_frame_mse_hand_case() {
        // one sample, 1x1, two future frames with errors 1 and 4
        let s = Sample {
            past: vec![Complex64::new(0.0, 0.0); 2],
            future: vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)],
        };
        let ds = dataset_with(vec![s], 2, 2, 1, 1);
        let preds = vec![vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]];
        let m = per_frame_mse(&preds, &ds).unwrap();
        assert_eq!(m, vec![1.0, 4.0]);
    }

    #[test]
    fn persistence_repeats_last_frame() {
        let s = Sample {
            past: vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 3.0)],
            future: vec![Complex64::new(0.0, 0.0); 3],
        };
        let ds = dataset_with(vec![s], 2, 3, 1, 1);
        let p = persistence_baseline(&ds);
        assert_eq!(p[0], vec![Complex64::new(2.0, 3.0); 3]);
    }

    #[test]
    fn linear_extrapolation_hand_case() {
        // h(n-1)=1, h(n)=3 -> slope 2 -> predictions 5, 7, 9
        let s = Sample {
            past: vec![Complex64::new(1.0, 0.0), Complex64::new(3.0, 0.0)],
            future: vec![Complex64::new(0.0, 0.0); 3],
        };
        let ds = dataset_with(vec![s], 2, 3, 1, 1);
        let p = linear_extrap_baseline(&ds).unwrap();
        assert_eq!(
            p[0],
            vec![Complex64::new(5.0, 0.0), Complex64::new(7.0, 0.0), Complex64::new(9.0, 0.0)]
        );

        let short = dataset_with(vec![], 1, 3, 1, 1);
        assert!(linear_extrap_baseline(&short).is_err());
    }

    #[test]
    fn capacity_scalar_closed_form() {
        // R = T = 1: perfect prediction gives log2(1 + |h|^2 gamma0).
        let h = Complex64::new(0.6, -0.8); // |h| = 1
        let s = Sample { past: vec![h], future: vec![h] };
        let ds = dataset_with(vec![s], 1, 1, 1, 1);
        let rep = mrt_capacity(&[vec![h]], &ds, 10.0).unwrap();
        assert!((rep.mean - (1.0 + 10.0f64).log2()).abs() < 1e-12);
        assert_eq!(rep.skipped, 0);
    }

    #[test]
    fn capacity_perfect_csi_beats_random_beam() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rt = 4; // 2x2
        let mut samples = Vec::new();
        for _ in 0..50 {
            let future: Vec<Complex64> = (0..rt)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            samples.push(Sample { past: vec![Complex64::new(0.0, 0.0); rt], future });
        }
        let ds = dataset_with(samples, 1, 1, 2, 2);
        let perfect: Vec<Vec<Complex64>> = ds.samples.iter().map(|s| s.future.clone()).collect();
        let random: Vec<Vec<Complex64>> = (0..ds.samples.len())
            .map(|_| {
                (0..rt)
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let c_perfect = mrt_capacity(&perfect, &ds, 10.0).unwrap().mean;
        let c_random = mrt_capacity(&random, &ds, 10.0).unwrap().mean;
        assert!(c_perfect > c_random, "{} vs {}", c_perfect, c_random);
    }

    #[test]
    fn capacity_skips_zero_predictions() {
        let h = Complex64::new(1.0, 0.0);
        let s = Sample { past: vec![h], future: vec![h] };
        let ds = dataset_with(vec![s.clone(), s], 1, 1, 1, 1);
        let preds = vec![vec![Complex64::new(0.0, 0.0)], vec![h]];
        let rep = mrt_capacity(&preds, &ds, 0.0).unwrap();
        assert_eq!(rep.skipped, 1);
        assert!((rep.mean - (2.0f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn capacity_increases_with_snr() {
        let h = Complex64::new(0.9, 0.1);
        let s = Sample { past: vec![h], future: vec![h] };
        let ds = dataset_with(vec![s], 1, 1, 1, 1);
        let lo = mrt_capacity(&[vec![h]], &ds, 0.0).unwrap().mean;
        let hi = mrt_capacity(&[vec![h]], &ds, 20.0).unwrap().mean;
        assert!(hi > lo);
    }

    #[test]
    fn csv_shape() {
        let rep = MetricsReport {
            rows: vec![("model".into(), vec![0.1, 0.2]), ("persistence".into(), vec![0.3, 0.4])],
            n_future: 2,
        };
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "predictor,frame_1,frame_2,mean");
        assert!(lines[1].starts_with("model,"));
        assert_eq!(lines[1].split(',').count(), 4);
    }
}
