//! Bit-level UEP with odd repetition codes and majority decoding.
//!
//! The required repetition count for a target `mu` is the smallest odd `R`
//! whose majority-vote error probability does not exceed `mu`. Over a sorted
//! profile the counts are non-increasing, so one bisection on the most
//! demanding bit followed by a walk over the transition thresholds
//! `BER_rep(R - 2)` covers the whole profile.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::ProtectionProfile;

/// One odd repetition count per bit of a sorted profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan")]
pub struct RepetitionPlan {
    eps: f64,
    reps: Vec<u32>,
}

#[derive(Deserialize)]
struct RawPlan {
    eps: f64,
    reps: Vec<u32>,
}

impl TryFrom<RawPlan> for RepetitionPlan {
    type Error = Error;

    fn try_from(raw: RawPlan) -> Result<Self> {
        Self::new(raw.eps, raw.reps)
    }
}

impl RepetitionPlan {
    /// Every count must be odd and the sequence non-increasing.
    pub fn new(eps: f64, reps: Vec<u32>) -> Result<Self> {
        if let Some(&r) = reps.iter().find(|&&r| r % 2 == 0) {
            return Err(Error::EvenRepetition(r));
        }
        if let Some(i) = reps.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::InvalidParams(format!(
                "repetition counts increase at index {}",
                i + 1
            )));
        }
        Ok(Self { eps, reps })
    }

    pub fn uniform(eps: f64, k: usize, r: u32) -> Result<Self> {
        Self::new(eps, vec![r; k])
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn reps(&self) -> &[u32] {
        &self.reps
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn max_rep(&self) -> u32 {
        self.reps.first().copied().unwrap_or(1)
    }

    pub fn total_blocklength(&self) -> u64 {
        self.reps.iter().map(|&r| u64::from(r)).sum()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if (0.0..=0.5).contains(&eps) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(eps))
    }
}

/// `ln BER_rep(R)`; `-inf` when `eps == 0`.
pub fn ln_ber_rep(r: u32, eps: f64) -> Result<f64> {
    if r.is_multiple_of(2) {
        return Err(Error::EvenRepetition(r));
    }
    check_eps(eps)?;
    if eps == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if r == 1 {
        return Ok(eps.ln());
    }
    let m = r.div_ceil(2);
    let ln_first = ln_binomial(r, m) + f64::from(m) * eps.ln() + f64::from(r - m) * (-eps).ln_1p();
    // Terms of the tail shrink geometrically past the midpoint; sum them
    // relative to the first one with Neumaier compensation.
    let odds = eps / (1.0 - eps);
    let (mut sum, mut comp, mut term) = (1.0_f64, 0.0_f64, 1.0_f64);
    for j in m..r {
        term *= f64::from(r - j) / f64::from(j + 1) * odds;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        if term < sum * 1e-20 {
            break;
        }
    }
    Ok(ln_first + (sum + comp).ln())
}

/// Majority-decoding error probability of an `R`-fold repetition code over BSC(`eps`).
pub fn ber_rep(r: u32, eps: f64) -> Result<f64> {
    if r == 1 {
        check_eps(eps)?;
        return Ok(eps);
    }
    Ok(ln_ber_rep(r, eps)?.exp())
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    let lg = |x: u32| libm::lgamma(f64::from(x) + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

/// Chernoff-based upper starting point of the bisection, in units of `r = (R - 1) / 2`.
pub fn chernoff_r_ub(mu: f64, eps: f64) -> u32 {
    let base = (2.0 * (eps * (1.0 - eps)).sqrt()).ln();
    let x = 0.5 * (mu.ln() / base - 1.0);
    if x.is_nan() || x <= 0.0 {
        0
    } else if x >= f64::from(u32::MAX / 4) {
        u32::MAX / 4
    } else {
        x.floor() as u32
    }
}

/// Memoised `BER_rep` evaluator for one coded-bit flip probability, counting
/// how many distinct tail sums it had to compute.
#[derive(Debug)]
pub struct RepetitionSolver {
    eps: f64,
    cache: BTreeMap<u32, f64>,
    evaluations: usize,
}

impl RepetitionSolver {
    pub fn new(eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self {
            eps,
            cache: BTreeMap::new(),
            evaluations: 0,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of `BER_rep` evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// `BER_rep(R)` for odd `R`.
    pub fn ber(&mut self, r: u32) -> f64 {
        debug_assert!(r % 2 == 1);
        if let Some(&v) = self.cache.get(&r) {
            return v;
        }
        self.evaluations += 1;
        let v = ber_rep(r, self.eps).expect("odd count and validated eps");
        self.cache.insert(r, v);
        v
    }

    fn ber_r(&mut self, r: u32) -> f64 {
        self.ber(2 * r + 1)
    }

    /// Smallest odd `R` with `BER_rep(R) <= mu`, by bisection over `r = (R - 1) / 2`
    /// tracking both the floor and the ceiling of the midpoint.
    pub fn min_repetition(&mut self, mu: f64) -> u32 {
        if self.eps <= mu {
            return 1;
        }
        if self.eps >= 0.5 {
            // No finite repetition count helps.
            return u32::MAX;
        }
        // Invariants: BER(lb) > mu, BER(ub) <= mu once `ub` is confirmed.
        let mut lb = 0_u32;
        let mut ub = chernoff_r_ub(mu, self.eps);
        let mut ub_confirmed = false;
        loop {
            if ub <= lb + 1 {
                if ub_confirmed || ub > lb && self.ber_r(ub) <= mu {
                    return 2 * ub + 1;
                }
                // The Chernoff start can fall short when eps is small; widen.
                lb = ub;
                ub = 2 * ub + 1;
                continue;
            }
            let c_lo = (lb + ub) / 2;
            let c_hi = (lb + ub).div_ceil(2);
            if self.ber_r(c_hi) > mu {
                lb = c_hi;
            } else if c_lo == c_hi || self.ber_r(c_lo) <= mu {
                ub = c_lo;
                ub_confirmed = true;
            } else {
                return 2 * c_hi + 1;
            }
        }
    }

    /// Repetition counts for a sorted profile with a single bisection on the first bit.
    pub fn assign(&mut self, mu: &[f64]) -> Vec<u32> {
        let Some(&first) = mu.first() else {
            return Vec::new();
        };
        let mut r = self.min_repetition(first);
        let mut threshold = if r > 1 { self.ber(r - 2) } else { 0.0 };
        let mut reps = Vec::with_capacity(mu.len());
        for &m in mu {
            if r == 1 {
                break;
            }
            // `m >= BER(R-2)` means R-2 already meets the target; a wide gap
            // between neighbours can skip several levels.
            while r > 1 && m >= threshold {
                r -= 2;
                if r > 1 {
                    threshold = self.ber(r - 2);
                }
            }
            reps.push(r);
        }
        reps.resize(mu.len(), 1);
        reps
    }
}

/// Smallest odd `R` with `BER_rep(R, eps) <= mu`.
pub fn min_repetition_bisect(mu: f64, eps: f64) -> Result<u32> {
    if !(mu > 0.0 && mu <= 0.5) {
        return Err(Error::InvalidProbability(mu));
    }
    Ok(RepetitionSolver::new(eps)?.min_repetition(mu))
}

/// Repetition plan for a profile sorted ascending.
pub fn assign_repetitions(sorted_profile: &ProtectionProfile, eps: f64) -> Result<RepetitionPlan> {
    sorted_profile.require_sorted()?;
    let mut solver = RepetitionSolver::new(eps)?;
    let reps = solver.assign(sorted_profile.mu());
    RepetitionPlan::new(eps, reps)
}

/// Bit `i` repeated `R_i` times in place.
pub fn encode_repetition(bits: &[bool], plan: &RepetitionPlan) -> Result<Vec<bool>> {
    if bits.len() != plan.len() {
        return Err(Error::LengthMismatch {
            expected: plan.len(),
            actual: bits.len(),
        });
    }
    let mut out = Vec::with_capacity(plan.total_blocklength() as usize);
    for (&b, &r) in bits.iter().zip(plan.reps()) {
        out.extend(std::iter::repeat_n(b, r as usize));
    }
    Ok(out)
}

/// Majority vote over each run of copies.
pub fn decode_repetition(stream: &[bool], plan: &RepetitionPlan) -> Result<Vec<bool>> {
    let expected = plan.total_blocklength() as usize;
    if stream.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: stream.len(),
        });
    }
    let mut out = Vec::with_capacity(plan.len());
    let mut pos = 0;
    for &r in plan.reps() {
        let r = r as usize;
        let ones = stream[pos..pos + r].iter().filter(|&&b| b).count();
        out.push(2 * ones > r);
        pos += r;
    }
    Ok(out)
}
