//! BPSK over AWGN with equal power per coded bit, its BSC abstraction, and the
//! Gaussian tail functions both rely on.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// `ln Q(x)`, finite far beyond the point where `Q(x)` underflows.
pub fn ln_q_function(x: f64) -> f64 {
    if x < 30.0 {
        return q_function(x).ln();
    }
    // Laplace continued fraction: Q(x) = phi(x) / (x + 1/(x + 2/(x + 3/(x + ...)))).
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + k as f64 / tail;
    }
    -0.5 * x * x - 0.5 * (2.0 * PI).ln() - tail.ln()
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`q_function`] on (0, 1).
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-upper_q_inverse(1.0 - p));
    }
    Ok(upper_q_inverse(p))
}

/// Root of `Q(x) = p` for `p < 0.5`: Newton on `ln Q` kept inside a shrinking bracket.
fn upper_q_inverse(p: f64) -> f64 {
    let target = p.ln();
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    // Rational starting point, absolute error below 5e-4.
    let t = (-2.0 * target).sqrt();
    let mut x = (t
        - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
            / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t))
        .clamp(lo, hi);
    for _ in 0..200 {
        let lq = ln_q_function(x);
        let g = lq - target;
        if g == 0.0 {
            break;
        }
        // Q decreasing: Q(x) > p means the root lies to the right.
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // d/dx ln Q(x) = -phi(x)/Q(x), evaluated in log space.
        let slope = -(std_normal_pdf(x).ln() - lq).exp();
        let mut next = x - g / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Hard-decision binary symmetric channel with the coded-bit flip probability.
    Bsc,
    /// Full BPSK modulation over AWGN with hard decisions.
    Awgn,
    /// Error-free transmission.
    Genie,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bsc" => Ok(Self::Bsc),
            "awgn" => Ok(Self::Awgn),
            "genie" | "none" => Ok(Self::Genie),
            other => Err(Error::Config(format!("unknown channel mode `{other}`"))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bsc => "bsc",
            Self::Awgn => "awgn",
            Self::Genie => "genie",
        })
    }
}

/// Transmit power and noise variance of the AWGN link; one coded bit per BPSK symbol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    snr_db: f64,
    p_trans_dbw: f64,
    noise_var: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            snr_db: 0.0,
            p_trans_dbw: 0.0,
            noise_var: 1.0,
        }
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ChannelSpec {
    /// Noise variance follows from the requested SNR and power.
    pub fn from_snr_db(snr_db: f64, p_trans_dbw: f64) -> Result<Self> {
        if !p_trans_dbw.is_finite() || snr_db.is_nan() {
            return Err(Error::InvalidChannel(format!(
                "snr {snr_db} dB / power {p_trans_dbw} dBW"
            )));
        }
        let noise_var = db_to_linear(p_trans_dbw) / db_to_linear(snr_db);
        Self::from_noise_var(p_trans_dbw, noise_var)
    }

    pub fn from_noise_var(p_trans_dbw: f64, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) || !noise_var.is_finite() || !p_trans_dbw.is_finite() {
            return Err(Error::InvalidChannel(format!(
                "noise variance {noise_var} and power {p_trans_dbw} dBW"
            )));
        }
        let snr = db_to_linear(p_trans_dbw) / noise_var;
        if !(snr > 0.0) {
            return Err(Error::InvalidChannel("linear SNR must be positive".into()));
        }
        Ok(Self {
            snr_db: 10.0 * snr.log10(),
            p_trans_dbw,
            noise_var,
        })
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn p_trans_dbw(&self) -> f64 {
        self.p_trans_dbw
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn p_trans(&self) -> f64 {
        db_to_linear(self.p_trans_dbw)
    }

    pub fn snr_linear(&self) -> f64 {
        self.p_trans() / self.noise_var
    }
}

/// `eps = Q(sqrt(2 P / sigma^2))`.
pub fn coded_bit_flip_prob(ch: &ChannelSpec) -> f64 {
    q_function((2.0 * ch.snr_linear()).sqrt())
}

/// Shannon capacity `log2(1 + SNR)` and dispersion `1 - (1 + SNR)^-2`.
pub fn capacity_and_dispersion(ch: &ChannelSpec) -> (f64, f64) {
    let snr = ch.snr_linear();
    let c = snr.ln_1p() / std::f64::consts::LN_2;
    let v = 1.0 - (1.0 + snr).powi(-2);
    (c, v)
}

pub fn flip_bsc_in_place<R: Rng + ?Sized>(bits: &mut [bool], eps: f64, rng: &mut R) {
    if eps <= 0.0 {
        return;
    }
    for b in bits {
        if rng.random::<f64>() < eps {
            *b = !*b;
        }
    }
}

/// Flips each bit independently with probability `eps`.
pub fn transmit_bsc<R: Rng + ?Sized>(bits: &[bool], eps: f64, rng: &mut R) -> Vec<bool> {
    let mut out = bits.to_vec();
    flip_bsc_in_place(&mut out, eps, rng);
    out
}

pub fn awgn_bpsk_in_place<R: Rng + ?Sized>(bits: &mut [bool], ch: &ChannelSpec, rng: &mut R) {
    let amplitude = ch.p_trans().sqrt();
    // Complex noise of variance sigma^2 puts sigma^2/2 on the in-phase component;
    // only that component enters the hard decision.
    let sigma = (ch.noise_var / 2.0).sqrt();
    for b in bits {
        let symbol = if *b { -amplitude } else { amplitude };
        let noise: f64 = StandardNormal.sample(rng);
        *b = symbol + sigma * noise < 0.0;
    }
}

/// BPSK (`0 -> +sqrt(P)`, `1 -> -sqrt(P)`) over complex AWGN, hard decision on the real part.
pub fn transmit_awgn_bpsk<R: Rng + ?Sized>(
    bits: &[bool],
    ch: &ChannelSpec,
    rng: &mut R,
) -> Vec<bool> {
    let mut out = bits.to_vec();
    awgn_bpsk_in_place(&mut out, ch, rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_reference_points() {
        assert_eq!(q_function(0.0), 0.5);
        // mpmath, 50 digits
        assert!((q_function(SQRT_2) - 0.078_649_603_525_142_57).abs() < 1e-15);
        assert!((q_function(6.4033) / 7.602_699_950_408_714e-11 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_inverse_reference_points() {
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
        assert!((q_inverse(1e-5).unwrap() - 4.264_890_793_922_825).abs() < 1e-12);
        assert!((q_inverse(1e-9).unwrap() - 5.997_807_015_007_687).abs() < 1e-12);
        assert!((q_inverse(0.3).unwrap() - 0.524_400_512_708_040_8).abs() < 1e-13);
        assert!((q_inverse(0.7).unwrap() + 0.524_400_512_708_040_8).abs() < 1e-13);
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(q_inverse(bad).is_err());
        }
    }

    #[test]
    fn q_inverse_round_trip_log_grid() {
        let mut e = -12.0;
        while e < -0.31 {
            let p = 10f64.powf(e);
            let x = q_inverse(p).unwrap();
            assert!((q_function(x) / p - 1.0).abs() < 1e-12, "p={p}");
            e += 0.05;
        }
        for p in [0.6, 0.9, 0.999, 1.0 - 1e-9] {
            let x = q_inverse(p).unwrap();
            assert!((q_function(x) / p - 1.0).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn q_inverse_tiny_tails() {
        for p in [1e-30, 1e-100, 1e-250] {
            let x = q_inverse(p).unwrap();
            assert!(
                (ln_q_function(x) - p.ln()).abs() < 1e-10 * p.ln().abs(),
                "p={p}"
            );
        }
    }

    #[test]
    fn ln_q_is_continuous_at_switch() {
        let below = ln_q_function(30.0 - 1e-9);
        let above = ln_q_function(30.0);
        assert!((below - above).abs() < 1e-6);
        assert!(ln_q_function(100.0).is_finite());
    }

    #[test]
    fn q_monotone_on_grid() {
        let xs: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.02).collect();
        assert!(xs.windows(2).all(|w| q_function(w[0]) > q_function(w[1])));
        let ps: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        assert!(ps
            .windows(2)
            .all(|w| q_inverse(w[0]).unwrap() > q_inverse(w[1]).unwrap()));
    }

    #[test]
    fn flip_prob_at_zero_db() {
        let ch = ChannelSpec::from_snr_db(0.0, 0.0).unwrap();
        assert!((ch.noise_var() - 1.0).abs() < 1e-15);
        assert!((coded_bit_flip_prob(&ch) - 0.078_649_603_525_142_57).abs() < 1e-15);
    }

    #[test]
    fn flip_prob_limits() {
        let grid: Vec<f64> = (-60..=20).map(|d| d as f64).collect();
        let eps: Vec<f64> = grid
            .iter()
            .map(|&d| coded_bit_flip_prob(&ChannelSpec::from_snr_db(d, 0.0).unwrap()))
            .collect();
        assert!(eps.windows(2).all(|w| w[0] > w[1]));
        assert!(eps.iter().all(|&e| e > 0.0 && e < 0.5));
        assert!(0.5 - eps[0] < 1e-3);
        assert!(*eps.last().unwrap() < 1e-40);
    }

    #[test]
    fn capacity_and_dispersion_points() {
        let (c, v) = capacity_and_dispersion(&ChannelSpec::from_snr_db(0.0, 0.0).unwrap());
        assert!((c - 1.0).abs() < 1e-15 && (v - 0.75).abs() < 1e-15);
        let ch3 = ChannelSpec::from_noise_var(0.0, 1.0 / 3.0).unwrap();
        let (c, v) = capacity_and_dispersion(&ch3);
        assert!((c - 2.0).abs() < 1e-14 && (v - 0.9375).abs() < 1e-14);
        let (c, v) = capacity_and_dispersion(&ChannelSpec::from_snr_db(-80.0, 0.0).unwrap());
        assert!(c < 1e-7 && v < 1e-7 && c > 0.0 && v > 0.0);
        for d in -30..=30 {
            let (_, v) = capacity_and_dispersion(&ChannelSpec::from_snr_db(d as f64, 0.0).unwrap());
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn invalid_channels() {
        assert!(ChannelSpec::from_noise_var(0.0, 0.0).is_err());
        assert!(ChannelSpec::from_noise_var(0.0, -1.0).is_err());
        assert!(ChannelSpec::from_noise_var(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn bsc_zero_eps_and_determinism() {
        let bits: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(transmit_bsc(&bits, 0.0, &mut rng), bits);
        let a = transmit_bsc(&bits, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = transmit_bsc(&bits, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn bsc_empirical_rate() {
        let n = 1_000_000;
        let bits = vec![false; n];
        let out = transmit_bsc(&bits, 0.1, &mut ChaCha8Rng::seed_from_u64(11));
        let flips = out.iter().filter(|&&b| b).count() as f64;
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((flips - 0.1 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn awgn_noiseless_limit() {
        let ch = ChannelSpec::from_noise_var(0.0, 1e-30).unwrap();
        let bits: Vec<bool> = (0..5000).map(|i| (i * 7) % 5 < 2).collect();
        assert_eq!(
            transmit_awgn_bpsk(&bits, &ch, &mut ChaCha8Rng::seed_from_u64(3)),
            bits
        );
    }

    #[test]
    fn awgn_matches_bsc_rate_and_positions_exchangeable() {
        let ch = ChannelSpec::from_snr_db(0.0, 0.0).unwrap();
        let eps = coded_bit_flip_prob(&ch);
        let n = 1_000_000;
        let bits: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let out = transmit_awgn_bpsk(&bits, &ch, &mut ChaCha8Rng::seed_from_u64(9));
        let errs: Vec<bool> = bits.iter().zip(&out).map(|(a, b)| a != b).collect();
        let total = errs.iter().filter(|&&e| e).count() as f64;
        let sd = (n as f64 * eps * (1.0 - eps)).sqrt();
        assert!((total - eps * n as f64).abs() < 3.0 * sd);

        let even = errs.iter().step_by(2).filter(|&&e| e).count() as f64;
        let odd = errs.iter().skip(1).step_by(2).filter(|&&e| e).count() as f64;
        let half = n as f64 / 2.0;
        let sd_diff = (2.0 * half * eps * (1.0 - eps)).sqrt();
        assert!((even - odd).abs() < 3.0 * sd_diff);
    }
}
