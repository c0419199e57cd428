//! Time-varying MIMO channel generation with clustered paths and Jakes
//! Doppler, plus pilot-noise injection and LS/MMSE recovery.

mod bessel;
mod estimate;

pub use bessel::bessel_j0;
pub use estimate::{
    ls_estimate, mmse_estimate, sample_covariance, CovSource, EstimationConfig,
};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LabError, Result};

/// Propagation constant used for Doppler: f_d = (v/3.6) * fc / C.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Receive antennas.
    pub r: usize,
    /// Transmit antennas.
    pub t: usize,
    /// Propagation paths.
    pub l: usize,
    /// Frame period in seconds (one SRS period).
    pub ts: f64,
    /// Carrier frequency in Hz.
    pub fc: f64,
    pub speed_kmh: f64,
    pub num_frames: usize,
    pub seed: u64,
    /// Recorded metadata only; the flat single-carrier channel has no delay axis.
    pub delay_spread_ns: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            r: 2,
            t: 4,
            l: 23,
            ts: 0.625e-3,
            fc: 3.5e9,
            speed_kmh: 60.0,
            num_frames: 11_000,
            seed: 0,
            delay_spread_ns: 100.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r < 1 || self.t < 1 || self.l < 1 || self.num_frames < 1 {
            return Err(LabError::Config("R, T, L, num_frames must all be >= 1".into()));
        }
        if !(self.ts > 0.0) || !(self.fc > 0.0) || self.speed_kmh < 0.0 {
            return Err(LabError::Config("Ts > 0, fc > 0, speed >= 0 required".into()));
        }
        Ok(())
    }

    /// Maximum Doppler shift in Hz.
    pub fn max_doppler(&self) -> f64 {
        (self.speed_kmh / 3.6) * self.fc / SPEED_OF_LIGHT
    }
}

#[derive(Debug, Clone)]
pub struct Path {
    pub gain: Complex64,
    pub doppler_hz: f64,
    /// Angle of arrival, radians.
    pub aoa: f64,
    /// Angle of departure, radians.
    pub aod: f64,
}

/// Per-path gains, Doppler shifts and angles parameterizing one channel draw.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

/// Complex channel tensor `[num_frames x R x T]`, row-major over the antenna
/// matrix, frame-major overall.
#[derive(Debug, Clone)]
pub struct ChannelSequence {
    pub data: Vec<Complex64>,
    pub frames: usize,
    pub r: usize,
    pub t: usize,
    pub meta: SimConfig,
}

impl ChannelSequence {
    pub fn frame(&self, n: usize) -> &[Complex64] {
        let sz = self.r * self.t;
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn entry(&self, n: usize, i: usize, j: usize) -> Complex64 {
        self.data[(n * self.r + i) * self.t + j]
    }

    /// Empirical mean power per entry.
    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|h| h.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Draw L paths: Jakes Doppler f_l = f_d cos(psi), psi ~ U[0, 2pi), uniform
/// angles, complex Gaussian gains power-normalized so that sum |alpha_l|^2 = 1.
pub fn sample_path_set<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<PathSet> {
    cfg.validate()?;
    let fd = cfg.max_doppler();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut paths = Vec::with_capacity(cfg.l);
    for _ in 0..cfg.l {
        let psi: f64 = rng.gen_range(0.0..two_pi);
        let aoa = rng.gen_range(0.0..two_pi);
        let aod = rng.gen_range(0.0..two_pi);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        paths.push(Path {
            gain: Complex64::new(re, im),
            doppler_hz: fd * psi.cos(),
            aoa,
            aod,
        });
    }
    let total: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
    let norm = total.sqrt();
    for p in &mut paths {
        p.gain /= norm;
    }
    Ok(PathSet { paths })
}

/// Uniform linear array response at half-wavelength spacing:
/// a_k = exp(-j pi k sin(angle)).
pub fn steering_vector(angle: f64, n_elems: usize) -> Vec<Complex64> {
    (0..n_elems)
        .map(|k| {
            let phase = -std::f64::consts::PI * k as f64 * angle.sin();
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// H^(n) = sum_l alpha_l e^{-j 2 pi f_l n Ts} A(theta_l) A^H(phi_l).
pub fn generate_sequence(cfg: &SimConfig, paths: &PathSet) -> Result<ChannelSequence> {
    cfg.validate()?;
    let (r, t) = (cfg.r, cfg.t);
    let mut data = vec![Complex64::new(0.0, 0.0); cfg.num_frames * r * t];

    // Time-invariant outer products, scaled per frame by the Doppler phasor.
    let outers: Vec<Vec<Complex64>> = paths
        .paths
        .iter()
        .map(|p| {
            let ar = steering_vector(p.aoa, r);
            let at = steering_vector(p.aod, t);
            let mut o = Vec::with_capacity(r * t);
            for i in 0..r {
                for j in 0..t {
                    o.push(ar[i] * at[j].conj());
                }
            }
            o
        })
        .collect();

    for n in 0..cfg.num_frames {
        let frame = &mut data[n * r * t..(n + 1) * r * t];
        for (p, outer) in paths.paths.iter().zip(&outers) {
            let phase = -2.0 * std::f64::consts::PI * p.doppler_hz * n as f64 * cfg.ts;
            let coeff = p.gain * Complex64::from_polar(1.0, phase);
            for (dst, &o) in frame.iter_mut().zip(outer) {
                *dst += coeff * o;
            }
        }
    }
    Ok(ChannelSequence { data, frames: cfg.num_frames, r, t, meta: cfg.clone() })
}

/// Ensemble-and-entry-averaged normalized autocorrelation; real part.
/// rho(0) = 1 by construction.
pub fn autocorrelation_estimate(
    sequences: &[ChannelSequence],
    max_lag: usize,
) -> Result<Vec<f64>> {
    if sequences.is_empty() {
        return Err(LabError::Data("autocorrelation of empty ensemble".into()));
    }
    let mut num = vec![0.0f64; max_lag + 1];
    let mut cnt = vec![0u64; max_lag + 1];
    for seq in sequences {
        if seq.frames <= max_lag {
            return Err(LabError::Data(format!(
                "sequence of {} frames too short for lag {}",
                seq.frames, max_lag
            )));
        }
        let sz = seq.r * seq.t;
        for tau in 0..=max_lag {
            let mut acc = 0.0;
            for n in 0..seq.frames - tau {
                let a = &seq.data[n * sz..(n + 1) * sz];
                let b = &seq.data[(n + tau) * sz..(n + tau + 1) * sz];
                for (x, y) in a.iter().zip(b) {
                    acc += (x * y.conj()).re;
                }
            }
            num[tau] += acc;
            cnt[tau] += ((seq.frames - tau) * sz) as u64;
        }
    }
    let power = num[0] / cnt[0] as f64;
    Ok(num
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| (s / c as f64) / power)
        .collect())
}

/// Add complex AWGN with per-entry variance sigma_h^2 / 10^(snr_db/10),
/// where sigma_h^2 is the empirical mean power of the sequence.
pub fn add_awgn<R: Rng>(seq: &ChannelSequence, snr_db: f64, rng: &mut R) -> Result<ChannelSequence> {
    if !snr_db.is_finite() {
        return Err(LabError::Config("snr_db must be finite".into()));
    }
    let sigma_n2 = seq.mean_power() / 10f64.powf(snr_db / 10.0);
    let std = (sigma_n2 / 2.0).sqrt();
    let mut out = seq.clone();
    for h in &mut out.data {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *h += Complex64::new(re * std, im * std);
    }
    Ok(out)
}
