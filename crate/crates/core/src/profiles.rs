//! Per-bit protection profiles and the sorted/original bit correspondence.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target bit-flip probabilities, one per semantic bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectionProfile {
    mu: Vec<f64>,
    sorted: bool,
    label: String,
}

fn check_mu(index: usize, value: f64) -> Result<()> {
    if value > 0.0 && value <= 0.5 {
        Ok(())
    } else {
        Err(Error::OutOfRange { index, value })
    }
}

impl ProtectionProfile {
    /// Validates every value against (0, 0.5]; the sorted flag is computed by inspection.
    pub fn new(mu: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::EmptyProfile);
        }
        for (i, &m) in mu.iter().enumerate() {
            check_mu(i, m)?;
        }
        let sorted = mu.windows(2).all(|w| w[0] <= w[1]);
        Ok(Self {
            mu,
            sorted,
            label: label.into(),
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Fails with [`Error::Unsorted`] unless the profile is ascending.
    pub fn require_sorted(&self) -> Result<()> {
        if self.sorted {
            return Ok(());
        }
        let at = self
            .mu
            .windows(2)
            .position(|w| w[0] > w[1])
            .map_or(0, |i| i + 1);
        Err(Error::Unsorted(at))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileFormat {
    Csv,
    Json,
}

impl FromStr for ProfileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidParams(format!(
                "unknown profile format `{other}`"
            ))),
        }
    }
}

impl ProfileFormat {
    /// Guess from a file extension; defaults to CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

/// Reads a profile: CSV with one value per line (optional `mu` header) or a flat JSON array.
pub fn load_profile<R: Read>(source: R, format: ProfileFormat) -> Result<ProtectionProfile> {
    let mu = match format {
        ProfileFormat::Json => {
            let values: Vec<serde_json::Value> = serde_json::from_reader(source)?;
            values
                .iter()
                .enumerate()
                .map(|(index, v)| {
                    v.as_f64().ok_or_else(|| Error::Parse {
                        index,
                        message: format!("expected a number, found {v}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        ProfileFormat::Csv => {
            let mut out = Vec::new();
            let mut seen_header = false;
            for line in BufReader::new(source).lines() {
                let line = line?;
                let field = line.trim();
                if field.is_empty() {
                    continue;
                }
                if !seen_header && out.is_empty() && field.eq_ignore_ascii_case("mu") {
                    seen_header = true;
                    continue;
                }
                let value = field.parse::<f64>().map_err(|e| Error::Parse {
                    index: out.len(),
                    message: format!("`{field}`: {e}"),
                })?;
                out.push(value);
            }
            out
        }
    };
    ProtectionProfile::new(mu, "loaded")
}

/// Writes a profile in a form [`load_profile`] reads back bit-exactly.
pub fn write_profile<W: Write>(
    profile: &ProtectionProfile,
    format: ProfileFormat,
    mut sink: W,
) -> Result<()> {
    match format {
        ProfileFormat::Json => {
            serde_json::to_writer(&mut sink, profile.mu())?;
            writeln!(sink)?;
        }
        ProfileFormat::Csv => {
            writeln!(sink, "mu")?;
            for m in profile.mu() {
                // `{}` on f64 prints the shortest string that parses back to the same value.
                writeln!(sink, "{m}")?;
            }
        }
    }
    Ok(())
}

/// Maps sorted position to original bit index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    #[serde(default)]
    label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Original order to sorted order.
    Forward,
    /// Sorted order back to original order.
    Inverse,
}

impl Permutation {
    pub fn new(forward: Vec<usize>, label: impl Into<String>) -> Result<Self> {
        let n = forward.len();
        let mut seen = vec![false; n];
        for &f in &forward {
            if f >= n {
                return Err(Error::InvalidPermutation(format!(
                    "index {f} out of [0, {n})"
                )));
            }
            if std::mem::replace(&mut seen[f], true) {
                return Err(Error::InvalidPermutation(format!("index {f} repeated")));
            }
        }
        Ok(Self {
            forward,
            label: label.into(),
        })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            forward: (0..k).collect(),
            label: "identity".into(),
        }
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &f)| i == f)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.forward.len()];
        for (s, &o) in self.forward.iter().enumerate() {
            inv[o] = s;
        }
        Self {
            forward: inv,
            label: format!("inverse({})", self.label),
        }
    }

    /// Original index of the bit at sorted position `s`.
    pub fn original_of(&self, s: usize) -> usize {
        self.forward[s]
    }
}

/// Stable ascending sort; ties keep their original order.
pub fn sort_profile(p: &ProtectionProfile) -> (ProtectionProfile, Permutation) {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.mu[a].total_cmp(&p.mu[b]));
    let mu = order.iter().map(|&i| p.mu[i]).collect();
    let sorted = ProtectionProfile {
        mu,
        sorted: true,
        label: p.label.clone(),
    };
    let perm = Permutation {
        forward: order,
        label: format!("sort({})", p.label),
    };
    (sorted, perm)
}

pub fn permute_bits<T: Copy>(
    bits: &[T],
    perm: &Permutation,
    direction: Direction,
) -> Result<Vec<T>> {
    if bits.len() != perm.len() {
        return Err(Error::LengthMismatch {
            expected: perm.len(),
            actual: bits.len(),
        });
    }
    Ok(match direction {
        Direction::Forward => perm.forward.iter().map(|&o| bits[o]).collect(),
        Direction::Inverse => {
            let mut out = bits.to_vec();
            for (s, &o) in perm.forward.iter().enumerate() {
                out[o] = bits[s];
            }
            out
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub fraction: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SynthGenerator {
    /// Piecewise-constant profile; fractions must sum to one.
    Segments(Vec<Segment>),
    /// `mu = exp(U(ln lo, ln hi))`, i.i.d. per bit.
    LogUniform { lo: f64, hi: f64 },
}

/// Recipe for a synthetic profile.
///
/// Text form: `segments:<K>:<frac>@<mu>,...` or `log-uniform:<K>:<lo>:<hi>`,
/// each optionally followed by `:seed=<u64>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub generator: SynthGenerator,
    pub seed: u64,
}

impl SynthSpec {
    pub fn segments(k: usize, segments: &[(f64, f64)]) -> Self {
        Self {
            k,
            generator: SynthGenerator::Segments(
                segments
                    .iter()
                    .map(|&(fraction, mu)| Segment { fraction, mu })
                    .collect(),
            ),
            seed: 0,
        }
    }

    pub fn log_uniform(k: usize, lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            k,
            generator: SynthGenerator::LogUniform { lo, hi },
            seed,
        }
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.generator {
            SynthGenerator::Segments(segs) => {
                write!(f, "segments:{}:", self.k)?;
                for (i, s) in segs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}@{}", s.fraction, s.mu)?;
                }
            }
            SynthGenerator::LogUniform { lo, hi } => write!(f, "log-uniform:{}:{lo}:{hi}", self.k)?,
        }
        write!(f, ":seed={}", self.seed)
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidParams(format!("synth spec `{s}`: {m}"));
        let mut parts: Vec<&str> = s.split(':').collect();
        let mut seed = 0;
        if let Some(last) = parts.last() {
            if let Some(v) = last.strip_prefix("seed=") {
                seed = v.parse().map_err(|_| bad("seed is not an integer"))?;
                parts.pop();
            }
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("`{t}` is not a number")))
        };
        let (kind, k) = match parts.as_slice() {
            [kind, k, ..] => (
                *kind,
                k.parse::<usize>().map_err(|_| bad("K is not an integer"))?,
            ),
            _ => return Err(bad("expected <generator>:<K>:...")),
        };
        let generator = match (kind, &parts[2..]) {
            ("segments", [segs]) => SynthGenerator::Segments(
                segs.split(',')
                    .map(|seg| {
                        let (frac, mu) = seg
                            .split_once('@')
                            .ok_or_else(|| bad("segment must be <frac>@<mu>"))?;
                        Ok(Segment {
                            fraction: num(frac)?,
                            mu: num(mu)?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            ("log-uniform" | "log_uniform", [lo, hi]) => SynthGenerator::LogUniform {
                lo: num(lo)?,
                hi: num(hi)?,
            },
            _ => return Err(bad("unknown generator or wrong arity")),
        };
        Ok(Self { k, generator, seed })
    }
}

/// Builds a profile from a [`SynthSpec`]; the same spec always yields the same profile.
pub fn synth_profile(spec: &SynthSpec) -> Result<ProtectionProfile> {
    if spec.k == 0 {
        return Err(Error::EmptyProfile);
    }
    let in_range = |m: f64| m > 0.0 && m <= 0.5;
    let mu = match &spec.generator {
        SynthGenerator::Segments(segs) => {
            if segs.is_empty() {
                return Err(Error::InvalidParams("no segments".into()));
            }
            let total: f64 = segs.iter().map(|s| s.fraction).sum();
            if segs.iter().any(|s| !(s.fraction >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParams(format!(
                    "segment fractions must be non-negative and sum to 1 (got {total})"
                )));
            }
            if let Some(s) = segs.iter().find(|s| !in_range(s.mu)) {
                return Err(Error::InvalidParams(format!(
                    "segment mu {} outside (0, 0.5]",
                    s.mu
                )));
            }
            let mut mu = Vec::with_capacity(spec.k);
            let mut cum = 0.0;
            for (i, s) in segs.iter().enumerate() {
                cum += s.fraction;
                let end = if i + 1 == segs.len() {
                    spec.k
                } else {
                    ((cum * spec.k as f64).round() as usize).min(spec.k)
                };
                while mu.len() < end {
                    mu.push(s.mu);
                }
            }
            mu
        }
        SynthGenerator::LogUniform { lo, hi } => {
            if !(in_range(*lo) && in_range(*hi) && lo <= hi) {
                return Err(Error::InvalidParams(format!(
                    "log-uniform range [{lo}, {hi}] invalid"
                )));
            }
            let (a, b) = (lo.ln(), hi.ln());
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..spec.k)
                .map(|_| {
                    let u: f64 = rng.random();
                    (a + (b - a) * u).exp().clamp(*lo, *hi)
                })
                .collect()
        }
    };
    ProtectionProfile::new(mu, spec.to_string())
}
