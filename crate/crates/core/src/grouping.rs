//! Block-level UEP planning.
//!
//! The pipeline over a sorted profile is:
//!
//! 1. [`group_by_repetition`]: bits sharing a repetition count form a level;
//!    bits that need no coding at all become singletons.
//! 2. [`merge_levels`]: adjacent levels are merged while the finite-blocklength
//!    model predicts a blocklength saving.
//! 3. [`fit_group_sizes`]: group sizes are snapped to the codebook's allowed
//!    information lengths by shedding or absorbing neighbouring bits.
//! 4. [`select_rates`]: each group gets the highest allowed rate whose rate-table
//!    entry stays strictly below the group's most demanding target.
//!
//! Every group is a contiguous range of the sorted index space.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbl::{group_q_inverse, BlerModel};
use crate::profiles::ProtectionProfile;
use crate::repetition::{assign_repetitions, ber_rep, RepetitionPlan, RepetitionSolver};

/// A code rate `num / den`, kept as an exact fraction so that `n = ceil(k / r)` is exact.
///
/// The written form is preserved (`15/24` stays `15/24`); equality and ordering are by value.
#[derive(Clone, Copy, Debug)]
pub struct CodeRate {
    num: u32,
    den: u32,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl CodeRate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::InvalidParams(format!(
                "rate {num}/{den} outside (0, 1]"
            )));
        }
        Ok(Self { num, den })
    }

    fn reduced(&self) -> (u32, u32) {
        let g = gcd(self.num, self.den);
        (self.num / g, self.den / g)
    }

    pub fn value(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Coded length `ceil(k / r)`.
    pub fn blocklength(&self, k: usize) -> u64 {
        (k as u64 * u64::from(self.den)).div_ceil(u64::from(self.num))
    }
}

impl PartialEq for CodeRate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CodeRate {}

impl std::hash::Hash for CodeRate {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.reduced().hash(state);
    }
}

impl Ord for CodeRate {
    fn cmp(&self, other: &Self) -> Ordering {
        (u64::from(self.num) * u64::from(other.den))
            .cmp(&(u64::from(other.num) * u64::from(self.den)))
    }
}

impl PartialOrd for CodeRate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    /// Accepts `a/b` or a terminating decimal such as `0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParams(format!("cannot parse rate `{s}`"));
        if let Some((a, b)) = s.split_once('/') {
            return Self::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u32.pow(frac.len() as u32);
        let int: u32 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_val: u32 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        Self::new(int.checked_mul(den).ok_or_else(bad)? + frac_val, den)
    }
}

impl Serialize for CodeRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodeRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Allowed information lengths (ascending) and code rates (descending).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookConstraints {
    allowed_sizes: Vec<usize>,
    allowed_rates: Vec<CodeRate>,
    label: String,
}

impl CodebookConstraints {
    pub fn new(
        mut sizes: Vec<usize>,
        mut rates: Vec<CodeRate>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidConstraints("no allowed group sizes".into()));
        }
        if rates.is_empty() {
            return Err(Error::InvalidConstraints("no allowed code rates".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidConstraints(
                "group sizes must be positive".into(),
            ));
        }
        sizes.sort_unstable();
        rates.sort_unstable_by(|a, b| b.cmp(a));
        if sizes.windows(2).any(|w| w[0] == w[1]) || rates.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConstraints("duplicate size or rate".into()));
        }
        Ok(Self {
            allowed_sizes: sizes,
            allowed_rates: rates,
            label: label.into(),
        })
    }

    /// Sizes {128, 256, 512, 1024} and rates {3/4, 2/3, 15/24, 14/24, 13/24, 1/2, 1/3}.
    pub fn standard() -> Self {
        let rates = [(3, 4), (2, 3), (15, 24), (14, 24), (13, 24), (1, 2), (1, 3)]
            .iter()
            .map(|&(n, d)| CodeRate::new(n, d).expect("valid"))
            .collect();
        Self::new(vec![128, 256, 512, 1024], rates, "polar/ldpc").expect("valid")
    }

    pub fn allowed_sizes(&self) -> &[usize] {
        &self.allowed_sizes
    }

    pub fn allowed_rates(&self) -> &[CodeRate] {
        &self.allowed_rates
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Allowed size closest to `len`; ties go to the larger size.
    pub fn nearest_size(&self, len: usize) -> usize {
        let mut best = self.allowed_sizes[0];
        for &s in &self.allowed_sizes[1..] {
            if s.abs_diff(len) <= best.abs_diff(len) {
                best = s;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableProvenance {
    Model,
    Measured,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub k: usize,
    pub r: CodeRate,
    pub flip_prob: f64,
}

/// Achievable per-bit flip probability `T(k, r)` for each group size and code rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    entries: BTreeMap<(usize, CodeRate), f64>,
    provenance: TableProvenance,
}

impl RateTable {
    pub fn from_entries(
        entries: impl IntoIterator<Item = RateEntry>,
        provenance: TableProvenance,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            if !(e.flip_prob > 0.0 && e.flip_prob < 1.0) {
                return Err(Error::Parse {
                    index: i,
                    message: format!("flip probability {} outside (0, 1)", e.flip_prob),
                });
            }
            map.insert((e.k, e.r), e.flip_prob);
        }
        Ok(Self {
            entries: map,
            provenance,
        })
    }

    pub fn provenance(&self) -> TableProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = RateEntry> + '_ {
        self.entries
            .iter()
            .map(|(&(k, r), &flip_prob)| RateEntry { k, r, flip_prob })
    }

    pub fn get(&self, k: usize, r: CodeRate) -> Result<f64> {
        self.entries
            .get(&(k, r))
            .copied()
            .ok_or_else(|| Error::TableGap {
                k,
                rate: r.to_string(),
            })
    }

    /// Fails on the first `(size, rate)` combination the table does not cover.
    pub fn check_covers(&self, constraints: &CodebookConstraints) -> Result<()> {
        for &k in constraints.allowed_sizes() {
            for &r in constraints.allowed_rates() {
                self.get(k, r)?;
            }
        }
        Ok(())
    }

    /// Reads CSV with header `k,r,flip_prob`; rates may be written `a/b` or as decimals.
    pub fn load_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["k", "r", "flip_prob"] {
            return Err(Error::Parse {
                index: 0,
                message: format!("expected header k,r,flip_prob, found {:?}", headers),
            });
        }
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let field = |j: usize| record.get(j).unwrap_or("");
            let parse_err = |m: String| Error::Parse {
                index: i + 1,
                message: m,
            };
            let k = field(0).parse().map_err(|e| parse_err(format!("k: {e}")))?;
            let r = field(1)
                .parse()
                .map_err(|e: Error| parse_err(e.to_string()))?;
            let flip_prob = field(2)
                .parse()
                .map_err(|e| parse_err(format!("flip_prob: {e}")))?;
            entries.push(RateEntry { k, r, flip_prob });
        }
        Self::from_entries(entries, TableProvenance::File)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["k", "r", "flip_prob"])?;
        for e in self.entries() {
            w.write_record([
                e.k.to_string(),
                e.r.to_string(),
                format!("{:e}", e.flip_prob),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Model table: `T(k, r) = BLER(ceil(k / r), k)`, an upper bound on any single bit's
/// flip probability inside the block.
pub fn default_rate_table(constraints: &CodebookConstraints, model: &BlerModel) -> RateTable {
    let mut entries = BTreeMap::new();
    for &k in constraints.allowed_sizes() {
        for &r in constraints.allowed_rates() {
            let n = r.blocklength(k);
            let t = model
                .bler(n, k as u64)
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            entries.insert((k, r), t);
        }
    }
    RateTable {
        entries,
        provenance: TableProvenance::Model,
    }
}

/// Bits of a sorted profile bucketed by repetition count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepetitionLevels {
    /// `(R, members)` from `R_max` down to 3 in steps of 2; empty levels included.
    pub levels: Vec<(u32, Range<usize>)>,
    /// Bits with `R = 1`.
    pub singles: Range<usize>,
}

impl RepetitionLevels {
    pub fn non_empty(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.levels
            .iter()
            .map(|(_, r)| r.clone())
            .filter(|r| !r.is_empty())
    }
}

pub fn group_by_repetition(plan: &RepetitionPlan) -> RepetitionLevels {
    let reps = plan.reps();
    let r_max = plan.max_rep();
    let mut levels = Vec::new();
    let mut pos = 0;
    let mut r = r_max;
    while r >= 3 {
        let start = pos;
        while pos < reps.len() && reps[pos] == r {
            pos += 1;
        }
        levels.push((r, start..pos));
        r -= 2;
    }
    RepetitionLevels {
        levels,
        singles: pos..reps.len(),
    }
}

/// Decides whether the accumulated group `a` and the next level `b` should share one code.
fn should_merge(mu: &[f64], a: &Range<usize>, b: &Range<usize>, model: &BlerModel) -> Result<bool> {
    let z_a = group_q_inverse(&mu[a.clone()])?;
    let z_b = group_q_inverse(&mu[b.clone()])?;
    let (k_a, k_b) = (a.len() as f64, b.len() as f64);
    if z_a > 0.0 && z_b > 0.0 {
        let y = model.y_from_q_inv(z_a);
        let threshold = model.gamma_th_from_y(y, k_a, k_b)?;
        Ok(z_a / z_b < threshold)
    } else {
        // An estimated group BLER at or above one half leaves the threshold test
        // undefined; compare the closed-form blocklengths directly instead.
        Ok(model.merge_saving(z_a, k_a, z_b, k_b) > 0.0)
    }
}

/// Merges adjacent non-empty levels while the model predicts a saving.
pub fn merge_levels(
    levels: &RepetitionLevels,
    profile: &ProtectionProfile,
    model: &BlerModel,
) -> Result<Vec<Range<usize>>> {
    profile.require_sorted()?;
    let mu = profile.mu();
    let mut groups = Vec::new();
    let mut iter = levels.non_empty();
    let Some(mut acc) = iter.next() else {
        return Ok(groups);
    };
    for next in iter {
        if should_merge(mu, &acc, &next, model)? {
            acc = acc.start..next.end;
        } else {
            groups.push(std::mem::replace(&mut acc, next));
        }
    }
    groups.push(acc);
    Ok(groups)
}

/// A group whose information length matches an allowed codebook size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FittedGroup {
    pub members: Range<usize>,
    /// Code dimension: member count plus zero padding.
    pub k: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FittedGroups {
    pub groups: Vec<FittedGroup>,
    pub singles: Range<usize>,
}

/// Snaps consecutive groups onto allowed sizes.
///
/// `groups` must be consecutive ranges starting at 0; `total` is the profile length.
/// A group shorter than its nearest allowed size absorbs the following groups; a longer
/// one sheds its weakest tail into the next group. When the remaining grouped bits
/// cannot fill the last size, the last group takes the following singleton bits, and
/// is zero-padded if the profile runs out.
pub fn fit_group_sizes(
    groups: &[Range<usize>],
    total: usize,
    constraints: &CodebookConstraints,
) -> Result<FittedGroups> {
    if constraints.allowed_sizes().is_empty() {
        return Err(Error::InvalidConstraints("no allowed group sizes".into()));
    }
    let mut expected_start = 0;
    for g in groups {
        if g.start != expected_start || g.end < g.start {
            return Err(Error::InvalidParams(format!(
                "groups must be consecutive from 0; found {g:?} after {expected_start}"
            )));
        }
        expected_start = g.end;
    }
    let grouped = expected_start;
    if grouped > total {
        return Err(Error::LengthMismatch {
            expected: total,
            actual: grouped,
        });
    }

    let mut pending: VecDeque<usize> = groups.iter().map(|g| g.len()).filter(|&n| n > 0).collect();
    let mut fitted = Vec::new();
    let mut acc = 0;
    let mut singles = grouped..total;
    while acc < grouped {
        let mut cur = pending
            .pop_front()
            .expect("bits remain while acc < grouped");
        let target = constraints.nearest_size(cur);
        if cur < target && acc + target <= grouped {
            while cur < target {
                cur += pending.pop_front().expect("enough grouped bits remain");
            }
        }
        if cur >= target {
            let surplus = cur - target;
            if surplus > 0 {
                match pending.front_mut() {
                    Some(next) => *next += surplus,
                    None => pending.push_back(surplus),
                }
            }
            fitted.push(FittedGroup {
                members: acc..acc + target,
                k: target,
                padding: 0,
            });
        } else {
            let end = acc + target;
            if end > total {
                fitted.push(FittedGroup {
                    members: acc..total,
                    k: target,
                    padding: end - total,
                });
                singles = total..total;
            } else {
                fitted.push(FittedGroup {
                    members: acc..end,
                    k: target,
                    padding: 0,
                });
                singles = end..total;
            }
        }
        acc += target;
    }
    Ok(FittedGroups {
        groups: fitted,
        singles,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coding", rename_all = "snake_case")]
pub enum GroupCoding {
    Block {
        rate: CodeRate,
        n: u64,
        achieved_flip_prob: f64,
    },
    /// No allowed rate reaches the group's target; members are repetition coded.
    RepetitionFallback { reps: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedGroup {
    /// Member indices into the sorted profile.
    pub members: Range<usize>,
    pub k: usize,
    pub padding: usize,
    #[serde(flatten)]
    pub coding: GroupCoding,
}

impl PlannedGroup {
    pub fn blocklength(&self) -> u64 {
        match &self.coding {
            GroupCoding::Block { n, .. } => *n,
            GroupCoding::RepetitionFallback { reps } => reps.iter().map(|&r| u64::from(r)).sum(),
        }
    }
}

/// Disjoint coded groups plus uncoded singletons over a sorted profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub k: usize,
    pub eps: f64,
    pub groups: Vec<PlannedGroup>,
    pub singletons: Range<usize>,
    pub zero_padding: usize,
    pub total_blocklength: u64,
}

impl BlockPlan {
    fn assemble(k: usize, eps: f64, groups: Vec<PlannedGroup>, singletons: Range<usize>) -> Self {
        let zero_padding = groups.iter().map(|g| g.padding).sum();
        let total_blocklength =
            groups.iter().map(PlannedGroup::blocklength).sum::<u64>() + singletons.len() as u64;
        Self {
            k,
            eps,
            groups,
            singletons,
            zero_padding,
            total_blocklength,
        }
    }

    pub fn total_blocklength(&self) -> u64 {
        self.total_blocklength
    }

    pub fn coded_groups(&self) -> usize {
        self.groups
            .iter()
            .filter(|g| matches!(g.coding, GroupCoding::Block { .. }))
            .count()
    }

    /// Checks partition, contiguity, padding bookkeeping, blocklength accounting and
    /// protection against `profile`; with a table, block groups must satisfy
    /// `T(k, r) < min mu` and carry that entry.
    pub fn validate(&self, profile: &ProtectionProfile, table: Option<&RateTable>) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        if profile.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                actual: profile.len(),
            });
        }
        let mu = profile.mu();
        let mut cursor = 0;
        for (i, g) in self.groups.iter().enumerate() {
            if g.members.start != cursor || g.members.is_empty() {
                return fail(format!(
                    "group {i} ({:?}) is not contiguous from {cursor}",
                    g.members
                ));
            }
            if g.members.len() + g.padding != g.k {
                return fail(format!("group {i}: members + padding != k"));
            }
            cursor = g.members.end;
            let min_mu = mu[g.members.clone()]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            match &g.coding {
                GroupCoding::Block {
                    rate,
                    n,
                    achieved_flip_prob,
                } => {
                    if *n != rate.blocklength(g.k) {
                        return fail(format!("group {i}: n != ceil(k / r)"));
                    }
                    if *achieved_flip_prob > min_mu {
                        return fail(format!(
                            "group {i}: achieved {achieved_flip_prob} exceeds min mu {min_mu}"
                        ));
                    }
                    if let Some(t) = table {
                        let entry = t.get(g.k, *rate)?;
                        if !(entry < min_mu) || entry != *achieved_flip_prob {
                            return fail(format!(
                                "group {i}: table entry {entry} vs min mu {min_mu}"
                            ));
                        }
                    }
                }
                GroupCoding::RepetitionFallback { reps } => {
                    if reps.len() != g.members.len() {
                        return fail(format!("group {i}: fallback covers wrong number of bits"));
                    }
                    for (j, &r) in g.members.clone().zip(reps) {
                        if ber_rep(r, self.eps)? > mu[j] {
                            return fail(format!("bit {j}: fallback repetition {r} too weak"));
                        }
                    }
                }
            }
        }
        if self.singletons.start != cursor || self.singletons.end != self.k {
            return fail(format!(
                "singletons {:?} do not complete the partition at {cursor}..{}",
                self.singletons, self.k
            ));
        }
        if let Some(j) = self.singletons.clone().find(|&j| self.eps > mu[j]) {
            return fail(format!(
                "singleton {j}: eps {} exceeds mu {}",
                self.eps, mu[j]
            ));
        }
        let expected_total = self
            .groups
            .iter()
            .map(PlannedGroup::blocklength)
            .sum::<u64>()
            + self.singletons.len() as u64;
        if expected_total != self.total_blocklength {
            return fail("total blocklength does not match the groups".into());
        }
        if self.zero_padding != self.groups.iter().map(|g| g.padding).sum::<usize>() {
            return fail("padding count mismatch".into());
        }
        Ok(())
    }
}

/// Picks, per group, the highest allowed rate with `T(k, r) < min mu`; groups with no
/// such rate fall back to per-bit repetition at `eps`.
pub fn select_rates(
    fitted: &FittedGroups,
    profile: &ProtectionProfile,
    table: &RateTable,
    constraints: &CodebookConstraints,
    eps: f64,
) -> Result<BlockPlan> {
    profile.require_sorted()?;
    let mu = profile.mu();
    let mut solver = RepetitionSolver::new(eps)?;
    let mut groups = Vec::with_capacity(fitted.groups.len());
    for g in &fitted.groups {
        let min_mu = mu[g.members.clone()]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mut chosen = None;
        for &r in constraints.allowed_rates() {
            let t = table.get(g.k, r)?;
            if t < min_mu {
                chosen = Some((r, t));
                break;
            }
        }
        let coding = match chosen {
            Some((rate, t)) => GroupCoding::Block {
                rate,
                n: rate.blocklength(g.k),
                achieved_flip_prob: t,
            },
            None => GroupCoding::RepetitionFallback {
                reps: solver.assign(&mu[g.members.clone()]),
            },
        };
        groups.push(PlannedGroup {
            members: g.members.clone(),
            k: g.k,
            padding: g.padding,
            coding,
        });
    }
    Ok(BlockPlan::assemble(
        profile.len(),
        eps,
        groups,
        fitted.singles.clone(),
    ))
}

/// Stages up to size fitting, shared by the block-UEP planner and the equal-rate baseline.
pub fn plan_groups(
    profile: &ProtectionProfile,
    eps: f64,
    model: &BlerModel,
    constraints: &CodebookConstraints,
) -> Result<FittedGroups> {
    let reps = assign_repetitions(profile, eps)?;
    let levels = group_by_repetition(&reps);
    let merged = merge_levels(&levels, profile, model)?;
    fit_group_sizes(&merged, profile.len(), constraints)
}

/// Block-level UEP plan for a sorted profile.
pub fn plan_block_uep(
    profile: &ProtectionProfile,
    eps: f64,
    model: &BlerModel,
    constraints: &CodebookConstraints,
    table: &RateTable,
) -> Result<BlockPlan> {
    table.check_covers(constraints)?;
    let fitted = plan_groups(profile, eps, model, constraints)?;
    select_rates(&fitted, profile, table, constraints, eps)
}

/// Equal-error-protection baseline: the block-UEP grouping, every group at one rate.
/// The achieved flip probability is the model BLER and is not checked against targets.
pub fn plan_equal_rate(
    profile: &ProtectionProfile,
    eps: f64,
    model: &BlerModel,
    constraints: &CodebookConstraints,
    rate: CodeRate,
) -> Result<BlockPlan> {
    let fitted = plan_groups(profile, eps, model, constraints)?;
    let groups = fitted
        .groups
        .iter()
        .map(|g| {
            let n = rate.blocklength(g.k);
            PlannedGroup {
                members: g.members.clone(),
                k: g.k,
                padding: g.padding,
                coding: GroupCoding::Block {
                    rate,
                    n,
                    achieved_flip_prob: model.bler(n, g.k as u64),
                },
            }
        })
        .collect();
    Ok(BlockPlan::assemble(
        profile.len(),
        eps,
        groups,
        fitted.singles,
    ))
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::channel::ChannelSpec;

    fn zero_db() -> BlerModel {
        BlerModel::from_channel(&ChannelSpec::from_snr_db(0.0, 0.0).unwrap()).unwrap()
    }

    fn rate(s: &str) -> CodeRate {
        s.parse().unwrap()
    }

    #[test]
    fn code_rate_parsing_and_order() {
        assert_eq!(rate("2/4"), rate("1/2"));
        assert_eq!(rate("15/24").to_string(), "15/24");
        assert_eq!(rate("0.5"), rate("1/2"));
        assert_eq!(rate("1"), rate("1/1"));
        assert!(rate("15/24") > rate("14/24"));
        assert_eq!(rate("1/3").blocklength(128), 384);
        assert_eq!(rate("15/24").blocklength(128), 205);
        assert!("3/2".parse::<CodeRate>().is_err());
        assert!("0".parse::<CodeRate>().is_err());
        assert!("x".parse::<CodeRate>().is_err());
        assert_eq!(serde_json::to_string(&rate("13/24")).unwrap(), "\"13/24\"");
    }

    #[test]
    fn constraints_normalise_and_nearest() {
        let c = CodebookConstraints::new(vec![512, 128, 256], vec![rate("1/2"), rate("3/4")], "t")
            .unwrap();
        assert_eq!(c.allowed_sizes(), &[128, 256, 512]);
        assert_eq!(c.allowed_rates(), &[rate("3/4"), rate("1/2")]);
        assert_eq!(c.nearest_size(300), 256);
        assert_eq!(c.nearest_size(192), 256);
        assert_eq!(c.nearest_size(1), 128);
        assert_eq!(c.nearest_size(5000), 512);
        assert!(CodebookConstraints::new(vec![], vec![rate("1/2")], "").is_err());
        assert!(CodebookConstraints::new(vec![8, 8], vec![rate("1/2")], "").is_err());
    }

    #[test]
    fn group_by_repetition_examples() {
        let plan = RepetitionPlan::new(0.1, vec![9, 7, 3, 1]).unwrap();
        let lv = group_by_repetition(&plan);
        assert_eq!(lv.levels, vec![(9, 0..1), (7, 1..2), (5, 2..2), (3, 2..3)]);
        assert_eq!(lv.singles, 3..4);

        let ones = RepetitionPlan::uniform(0.1, 3, 1).unwrap();
        let lv = group_by_repetition(&ones);
        assert!(lv.levels.is_empty());
        assert_eq!(lv.singles, 0..3);

        let fives = RepetitionPlan::uniform(0.1, 3, 5).unwrap();
        let lv = group_by_repetition(&fives);
        assert_eq!(lv.levels, vec![(5, 0..3), (3, 3..3)]);
        assert_eq!(lv.singles, 3..3);
    }

    #[test]
    fn merge_identical_levels() {
        let p = ProtectionProfile::new(vec![1e-3; 6], "").unwrap();
        let lv = RepetitionLevels {
            levels: vec![(9, 0..3), (7, 3..6)],
            singles: 6..6,
        };
        assert_eq!(merge_levels(&lv, &p, &zero_db()).unwrap(), vec![0..6]);
    }

    #[test]
    fn merge_keeps_distant_levels_apart() {
        let mut mu = vec![1e-6; 128];
        mu.extend(vec![0.3; 128]);
        let p = ProtectionProfile::new(mu, "").unwrap();
        let lv = RepetitionLevels {
            levels: vec![(11, 0..128), (3, 128..256)],
            singles: 256..256,
        };
        assert_eq!(
            merge_levels(&lv, &p, &zero_db()).unwrap(),
            vec![0..128, 128..256]
        );
    }

    #[test]
    fn fit_identity_when_sizes_allowed() {
        let c = CodebookConstraints::standard();
        let f = fit_group_sizes(&[0..128, 128..384], 400, &c).unwrap();
        let sizes: Vec<_> = f
            .groups
            .iter()
            .map(|g| (g.members.clone(), g.k, g.padding))
            .collect();
        assert_eq!(sizes, vec![(0..128, 128, 0), (128..384, 256, 0)]);
        assert_eq!(f.singles, 384..400);
    }

    #[test]
    fn fit_oversize_group_sheds_tail() {
        let c = CodebookConstraints::new(vec![128, 256, 512], vec![rate("1/2")], "").unwrap();
        // 256 kept, 44 pushed on, topped up to 128 from the singletons.
        let f = fit_group_sizes(&[0..300], 400, &c).unwrap();
        assert_eq!(f.groups[0].members, 0..256);
        assert_eq!(f.groups[1].members, 256..384);
        assert_eq!(f.singles, 384..400);
        // Without enough singletons the last group is zero-padded.
        let f = fit_group_sizes(&[0..300], 300, &c).unwrap();
        assert_eq!(f.groups[1].members, 256..300);
        assert_eq!((f.groups[1].k, f.groups[1].padding), (128, 84));
        assert_eq!(f.singles, 300..300);
    }

    #[test]
    fn fit_short_last_group_is_padded() {
        let c = CodebookConstraints::new(vec![128], vec![rate("1/2")], "").unwrap();
        let f = fit_group_sizes(&[0..100], 100, &c).unwrap();
        assert_eq!(f.groups.len(), 1);
        assert_eq!((f.groups[0].k, f.groups[0].padding), (128, 28));
    }

    #[test]
    fn fit_undersize_absorbs_following_groups() {
        let c = CodebookConstraints::new(vec![128, 256], vec![rate("1/2")], "").unwrap();
        let f = fit_group_sizes(&[0..50, 50..100, 100..300], 300, &c).unwrap();
        let ks: Vec<_> = f
            .groups
            .iter()
            .map(|g| (g.members.clone(), g.k, g.padding))
            .collect();
        // 50 -> target 128: absorbs 50 and 200 (=300), sheds 172 -> 172 -> target 128
        // sheds 44 -> 44 -> target 128, beyond the profile: padded by 84.
        assert_eq!(
            ks,
            vec![(0..128, 128, 0), (128..256, 128, 0), (256..300, 128, 84)]
        );
    }

    #[test]
    fn fit_rejects_gaps() {
        let c = CodebookConstraints::standard();
        assert!(fit_group_sizes(&[0..10, 20..30], 40, &c).is_err());
        assert!(fit_group_sizes(&[0..50], 40, &c).is_err());
    }

    #[test]
    fn model_table_points() {
        let c = CodebookConstraints::standard();
        let t = default_rate_table(&c, &zero_db());
        assert_eq!(t.len(), 28);
        assert!((t.get(128, rate("1/2")).unwrap() / 7.616_692_357_290_297e-11 - 1.0).abs() < 1e-9);
        for &k in c.allowed_sizes() {
            let col: Vec<f64> = c
                .allowed_rates()
                .iter()
                .map(|&r| t.get(k, r).unwrap())
                .collect();
            assert!(col.windows(2).all(|w| w[0] > w[1]), "k={k}");
        }
        let unit = CodebookConstraints::new(vec![128], vec![rate("1")], "").unwrap();
        let t1 = default_rate_table(&unit, &zero_db());
        assert_eq!(t1.get(128, rate("1")).unwrap(), 0.5);
    }

    #[test]
    fn select_rate_for_1e5_target() {
        let c = CodebookConstraints::standard();
        let t = default_rate_table(&c, &zero_db());
        let p = ProtectionProfile::new(vec![1e-5; 128], "").unwrap();
        let fitted = FittedGroups {
            groups: vec![FittedGroup {
                members: 0..128,
                k: 128,
                padding: 0,
            }],
            singles: 128..128,
        };
        let plan = select_rates(&fitted, &p, &t, &c, 0.0786).unwrap();
        match &plan.groups[0].coding {
            GroupCoding::Block { rate: r, n, .. } => {
                assert_eq!(*r, rate("15/24"));
                assert_eq!(*n, 205);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn select_rate_extremes() {
        let c = CodebookConstraints::standard();
        let t = default_rate_table(&c, &zero_db());
        let fitted = FittedGroups {
            groups: vec![FittedGroup {
                members: 0..128,
                k: 128,
                padding: 0,
            }],
            singles: 128..128,
        };
        let loose = ProtectionProfile::new(vec![0.05; 128], "").unwrap();
        let plan = select_rates(&fitted, &loose, &t, &c, 0.0786).unwrap();
        assert!(
            matches!(plan.groups[0].coding, GroupCoding::Block { rate: r, .. } if r == rate("3/4"))
        );

        let strict = ProtectionProfile::new(vec![1e-40; 128], "").unwrap();
        let plan = select_rates(&fitted, &strict, &t, &c, 0.0786).unwrap();
        assert!(matches!(
            plan.groups[0].coding,
            GroupCoding::RepetitionFallback { .. }
        ));
        plan.validate(&strict, Some(&t)).unwrap();
    }

    #[test]
    fn table_gap_reported() {
        let c = CodebookConstraints::standard();
        let t = RateTable::from_entries(
            [RateEntry {
                k: 128,
                r: rate("1/2"),
                flip_prob: 1e-3,
            }],
            TableProvenance::Measured,
        )
        .unwrap();
        assert!(matches!(t.check_covers(&c), Err(Error::TableGap { .. })));
    }

    #[test]
    fn table_csv_round_trip() {
        let c = CodebookConstraints::standard();
        let t = default_rate_table(&c, &zero_db());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = RateTable::load_csv(buf.as_slice()).unwrap();
        assert_eq!(back.provenance(), TableProvenance::File);
        assert_eq!(
            back.entries().collect::<Vec<_>>(),
            t.entries().collect::<Vec<_>>()
        );
        assert!(RateTable::load_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(RateTable::load_csv("k,r,flip_prob\n128,1/2,1.5\n".as_bytes()).is_err());
    }

    #[test]
    fn all_singletons_plan() {
        let c = CodebookConstraints::standard();
        let model = zero_db();
        let t = default_rate_table(&c, &model);
        let p = ProtectionProfile::new(vec![0.2; 40], "").unwrap();
        let plan = plan_block_uep(&p, 0.0786, &model, &c, &t).unwrap();
        assert!(plan.groups.is_empty());
        assert_eq!(plan.singletons, 0..40);
        assert_eq!(plan.total_blocklength(), 40);
        plan.validate(&p, Some(&t)).unwrap();
    }

    #[test]
    fn block_plan_json_shape() {
        let c = CodebookConstraints::standard();
        let model = zero_db();
        let t = default_rate_table(&c, &model);
        let mut mu = vec![1e-5; 128];
        mu.extend(vec![0.3; 10]);
        let p = ProtectionProfile::new(mu, "").unwrap();
        let plan = plan_block_uep(&p, 0.0786, &model, &c, &t).unwrap();
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        let g = &v["groups"][0];
        assert_eq!(g["members"]["start"], 0);
        assert_eq!(g["k"], 128);
        assert_eq!(g["rate"], "15/24");
        assert_eq!(g["n"], 205);
        assert_eq!(g["coding"], "block");
        let back: BlockPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
    }
}
