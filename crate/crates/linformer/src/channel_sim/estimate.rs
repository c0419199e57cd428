//! Pilot-based channel recovery: LS passthrough (identity pilot) and MMSE
//! shrinkage through the channel autocorrelation matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{LabError, Result};

use super::ChannelSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovSource {
    Identity,
    Sample,
}

#[derive(Debug, Clone, Copy)]
pub struct EstimationConfig {
    /// Pilot SNR gamma_0 in dB.
    pub snr_db: f64,
    pub cov_source: CovSource,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig { snr_db: 10.0, cov_source: CovSource::Sample }
    }
}

/// With the pilot modeled as identity scaling, the LS estimate is the
/// observation itself.
pub fn ls_estimate(noisy: &ChannelSequence) -> ChannelSequence {
    noisy.clone()
}

/// Per frame: vec(H_mmse) = R_HH (R_HH + I/gamma_0)^-1 vec(H_ls),
/// solving the RT x RT system directly.
pub fn mmse_estimate(
    ls: &ChannelSequence,
    snr_db: f64,
    r_hh: &DMatrix<Complex64>,
) -> Result<ChannelSequence> {
    let dim = ls.r * ls.t;
    if r_hh.nrows() != dim || r_hh.ncols() != dim {
        return Err(LabError::Shape(format!(
            "covariance is {}x{}, expected {}x{}",
            r_hh.nrows(),
            r_hh.ncols(),
            dim,
            dim
        )));
    }
    let gamma0 = 10f64.powf(snr_db / 10.0);
    let reg = r_hh + DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(1.0 / gamma0, 0.0);
    let lu = reg.lu();

    let mut out = ls.clone();
    for n in 0..ls.frames {
        let y = DVector::from_column_slice(ls.frame(n));
        let z = lu
            .solve(&y)
            .ok_or_else(|| LabError::Numeric("singular MMSE system".into()))?;
        let est = r_hh * z;
        out.data[n * dim..(n + 1) * dim].copy_from_slice(est.as_slice());
    }
    Ok(out)
}

/// Sample autocorrelation R_HH = mean over frames of vec(H) vec(H)^H,
/// symmetrized so hermiticity holds to machine precision.
pub fn sample_covariance(train: &[ChannelSequence]) -> Result<DMatrix<Complex64>> {
    let (r, t) = match train.first() {
        Some(s) => (s.r, s.t),
        None => return Err(LabError::Data("covariance of empty ensemble".into())),
    };
    let dim = r * t;
    let total_frames: usize = train.iter().map(|s| s.frames).sum();
    if total_frames < dim {
        return Err(LabError::Data(format!(
            "need at least {} frames for an {0}x{0} covariance, got {}",
            dim, total_frames
        )));
    }
    let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
    for seq in train {
        if seq.r != r || seq.t != t {
            return Err(LabError::Shape("mixed antenna dimensions in ensemble".into()));
        }
        for n in 0..seq.frames {
            let v = seq.frame(n);
            for i in 0..dim {
                for j in 0..dim {
                    acc[(i, j)] += v[i] * v[j].conj();
                }
            }
        }
    }
    acc /= Complex64::new(total_frames as f64, 0.0);
    let herm = (&acc + acc.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(herm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{add_awgn, generate_sequence, sample_path_set, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn jakes_seq(seed: u64, frames: usize) -> ChannelSequence {
        let cfg = SimConfig { r: 2, t: 2, num_frames: frames, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = sample_path_set(&cfg, &mut rng).unwrap();
        generate_sequence(&cfg, &ps).unwrap()
    }

    fn mse(a: &ChannelSequence, b: &ChannelSequence) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>()
            / a.data.len() as f64
    }

    #[test]
    fn ls_is_identity_on_observation() {
        let seq = jakes_seq(1, 16);
        let est = ls_estimate(&seq);
        assert_eq!(est.data, seq.data);
        assert_eq!((est.frames, est.r, est.t), (seq.frames, seq.r, seq.t));
    }

    #[test]
    fn mmse_identity_cov_high_snr_reduces_to_ls() {
        let seq = jakes_seq(2, 32);
        let dim = seq.r * seq.t;
        let eye = DMatrix::<Complex64>::identity(dim, dim);
        let est = mmse_estimate(&seq, 60.0, &eye).unwrap(); // gamma_0 = 1e6
        let num: f64 = est.data.iter().zip(&seq.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = seq.data.iter().map(|h| h.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn mmse_identity_cov_unit_snr_halves() {
        let seq = jakes_seq(3, 8);
        let dim = seq.r * seq.t;
        let eye = DMatrix::<Complex64>::identity(dim, dim);
        let est = mmse_estimate(&seq, 0.0, &eye).unwrap(); // gamma_0 = 1
        for (e, h) in est.data.iter().zip(&seq.data) {
            assert!((e - h * 0.5).norm() < 1e-12);
        }
    }

    #[test]
    fn covariance_static_unit_channel() {
        let mut seq = jakes_seq(4, 20);
        seq.r = 1;
        seq.t = 1;
        seq.frames = 20;
        seq.data = vec![Complex64::new(1.0, 0.0); 20];
        let cov = sample_covariance(&[seq]).unwrap();
        assert_eq!(cov.nrows(), 1);
        assert!((cov[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn covariance_hermitian_and_unit_trace_scale() {
        let seqs: Vec<ChannelSequence> = (0..40).map(|s| jakes_seq(100 + s, 50)).collect();
        let cov = sample_covariance(&seqs).unwrap();
        let diff = (&cov - cov.adjoint()).norm();
        assert!(diff < 1e-12);
        // Normalized path power implies unit per-entry power: trace ~ RT.
        let trace: Complex64 = cov.diagonal().iter().sum();
        let rt = 4.0;
        assert!((trace.re - rt).abs() / rt < 0.05, "trace {}", trace.re);
    }

    #[test]
    fn covariance_needs_enough_frames() {
        let mut seq = jakes_seq(5, 2);
        seq.frames = 2;
        seq.data.truncate(2 * 4);
        assert!(matches!(sample_covariance(&[seq]), Err(LabError::Data(_))));
    }

    #[test]
    fn mmse_beats_ls_with_sample_covariance() {
        let train: Vec<ChannelSequence> = (0..20).map(|s| jakes_seq(200 + s, 500)).collect();
        let cov = sample_covariance(&train).unwrap();
        let clean = jakes_seq(999, 400);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noisy = add_awgn(&clean, 10.0, &mut rng).unwrap();
        let ls = ls_estimate(&noisy);
        let mmse = mmse_estimate(&ls, 10.0, &cov).unwrap();
        assert!(mse(&mmse, &clean) < mse(&ls, &clean));
    }
}
