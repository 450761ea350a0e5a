//! Finite-blocklength analysis under the normal approximation.
//!
//! An `(n, k)` code over a channel with capacity `C` and dispersion `V` is
//! modelled as failing with probability `Q(f(n, k))`, where
//! `f(n, k) = ln 2 * sqrt(n / V) * (C - k / n)`. Writing
//! `Y = sqrt(n) C - k / sqrt(n)` gives `f = (ln 2 / sqrt(V)) Y`, and for a fixed
//! `Y` the blocklength solves a quadratic in `sqrt(n)`:
//! `sqrt(n) = (Y + sqrt(Y^2 + 4 k C)) / (2 C)`.
//!
//! Merging two groups into one code at the stronger group's BLER costs more
//! blocklength than coding them apart exactly when the ratio of their
//! `Q^-1(BLER)` values reaches the threshold returned by [`BlerModel::gamma_th`].

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{capacity_and_dispersion, ln_q_function, q_function, q_inverse, ChannelSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlerModel {
    capacity: f64,
    dispersion: f64,
}

impl BlerModel {
    pub fn new(capacity: f64, dispersion: f64) -> Result<Self> {
        if !(capacity > 0.0 && capacity.is_finite()) || !(dispersion > 0.0 && dispersion < 1.0) {
            return Err(Error::InvalidChannel(format!(
                "normal approximation needs C > 0 and 0 < V < 1 (C={capacity}, V={dispersion})"
            )));
        }
        Ok(Self {
            capacity,
            dispersion,
        })
    }

    pub fn from_channel(ch: &ChannelSpec) -> Result<Self> {
        let (c, v) = capacity_and_dispersion(ch);
        Self::new(c, v)
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// `sqrt(V) / ln 2`, the factor between `Q^-1(BLER)` and `Y`.
    fn y_scale(&self) -> f64 {
        self.dispersion.sqrt() / LN_2
    }

    /// `f(n, k)`, the argument of `Q` in the BLER model.
    pub fn f_arg(&self, n: f64, k: f64) -> f64 {
        LN_2 * (n / self.dispersion).sqrt() * (self.capacity - k / n)
    }

    /// `Y = sqrt(n) C - k / sqrt(n)`.
    pub fn y_of(&self, n: f64, k: f64) -> f64 {
        let s = n.sqrt();
        s * self.capacity - k / s
    }

    pub fn bler(&self, n: u64, k: u64) -> f64 {
        q_function(self.f_arg(n as f64, k as f64))
    }

    /// `ln BLER(n, k)`, usable where the BLER itself underflows.
    pub fn ln_bler(&self, n: u64, k: u64) -> f64 {
        ln_q_function(self.f_arg(n as f64, k as f64))
    }

    /// `Y` implied by a BLER value: `(sqrt(V) / ln 2) Q^-1(bler)`.
    pub fn y_estimate(&self, bler: f64) -> Result<f64> {
        Ok(self.y_scale() * q_inverse(bler)?)
    }

    /// `Y` from an already inverted `Q^-1(BLER)`.
    pub fn y_from_q_inv(&self, z: f64) -> f64 {
        self.y_scale() * z
    }

    /// Real-valued blocklength carrying `k` bits at the BLER that corresponds to `y`.
    pub fn real_blocklength(&self, y: f64, k: f64) -> f64 {
        let c = self.capacity;
        let disc = (y * y + 4.0 * k * c).sqrt();
        // Both branches equal (Y + disc) / 2C; the second avoids cancellation for Y < 0.
        let root = if y >= 0.0 {
            (y + disc) / (2.0 * c)
        } else {
            2.0 * k / (disc - y)
        };
        root * root
    }

    /// Smallest integer `n` with `BLER(n, k) <= target_bler`.
    pub fn min_blocklength(&self, k: u64, target_bler: f64) -> Result<u64> {
        if !(target_bler > 0.0 && target_bler < 1.0) {
            return Err(Error::InvalidProbability(target_bler));
        }
        if k == 0 {
            return Err(Error::InvalidParams("k must be positive".into()));
        }
        let y = self.y_estimate(target_bler)?;
        let guess = self.real_blocklength(y, k as f64).ceil().max(1.0);
        let mut n = guess as u64;
        let ln_target = target_bler.ln();
        while self.ln_bler(n, k) > ln_target {
            n += 1;
        }
        while n > 1 && self.ln_bler(n - 1, k) <= ln_target {
            n -= 1;
        }
        Ok(n)
    }

    /// Threshold on `Q^-1(BLER_1) / Q^-1(BLER_2)` above which splitting beats merging,
    /// for a first code `(n1, k1)` and a second group of `k2` bits.
    pub fn gamma_th(&self, n1: u64, k1: u64, k2: u64) -> Result<f64> {
        let y = self.y_of(n1 as f64, k1 as f64);
        self.gamma_th_from_y(y, k1 as f64, k2 as f64)
    }

    pub fn gamma_th_from_y(&self, y: f64, k1: f64, k2: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::Degenerate(format!(
                "Y = {y} <= 0: the first code is at or beyond BLER 0.5"
            )));
        }
        let c = self.capacity;
        let wide = (y * y + 4.0 * (k1 + k2) * c).sqrt();
        let narrow = (y * y + 4.0 * k1 * c).sqrt();
        // A = wide - narrow, rationalised.
        let a = 4.0 * k2 * c / (wide + narrow);
        Ok((2.0 * y * a + 4.0 * k2 * c).sqrt() / a)
    }

    /// Whether coding group B together with the better-protected group A, at A's BLER,
    /// needs less blocklength than coding them separately.
    pub fn merge_beneficial(
        &self,
        bler_a: f64,
        size_a: u64,
        bler_b: f64,
        size_b: u64,
    ) -> Result<bool> {
        for p in [bler_a, bler_b] {
            if !(p > 0.0 && p < 0.5) {
                return Err(Error::InvalidProbability(p));
            }
        }
        if bler_a > bler_b {
            return Err(Error::InvalidParams(format!(
                "group A must be the better-protected one ({bler_a} > {bler_b})"
            )));
        }
        let z_a = q_inverse(bler_a)?;
        let z_b = q_inverse(bler_b)?;
        let y = self.y_from_q_inv(z_a);
        let threshold = self.gamma_th_from_y(y, size_a as f64, size_b as f64)?;
        Ok(z_a / z_b < threshold)
    }

    /// `n1 + n2 - n3` from the closed-form real blocklengths, where group A is coded
    /// at `Q^-1 = z_a`, group B at `z_b`, and the merged code at `z_a`. Positive means
    /// merging saves blocklength. Valid for any sign of `z`.
    pub fn merge_saving(&self, z_a: f64, size_a: f64, z_b: f64, size_b: f64) -> f64 {
        let y_a = self.y_from_q_inv(z_a);
        let y_b = self.y_from_q_inv(z_b);
        self.real_blocklength(y_a, size_a) + self.real_blocklength(y_b, size_b)
            - self.real_blocklength(y_a, size_a + size_b)
    }
}

/// Probability that at least one bit of a group errs when each errs with the group's
/// smallest target: `1 - (1 - min mu)^|group|`.
pub fn group_bler_estimate(mus: &[f64]) -> Result<f64> {
    let (min, n) = group_min(mus)?;
    Ok(-(n * (-min).ln_1p()).exp_m1())
}

/// `Q^-1` of [`group_bler_estimate`], computed from the complement when the estimate
/// exceeds one half so that estimates near one keep their precision.
pub fn group_q_inverse(mus: &[f64]) -> Result<f64> {
    let (min, n) = group_min(mus)?;
    let ln_success = n * (-min).ln_1p();
    let bler = -ln_success.exp_m1();
    if bler <= 0.5 {
        q_inverse(bler.max(f64::MIN_POSITIVE))
    } else {
        let success = ln_success.exp().max(f64::MIN_POSITIVE);
        Ok(-q_inverse(success)?)
    }
}

fn group_min(mus: &[f64]) -> Result<(f64, f64)> {
    if mus.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let min = mus.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0 && min <= 0.5) {
        return Err(Error::InvalidProbability(min));
    }
    Ok((min, mus.len() as f64))
}
