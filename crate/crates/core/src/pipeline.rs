//! Monte Carlo experiment runner: plan, encode, transmit, decode, count flips.
//!
//! Trials are independent. Trial `t` draws from its own generator seeded by mixing the
//! root seed with `t`, so error counts do not depend on how trials are spread over
//! threads.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    awgn_bpsk_in_place, coded_bit_flip_prob, flip_bsc_in_place, ChannelMode, ChannelSpec,
};
use crate::error::{Error, Result};
use crate::fbl::BlerModel;
use crate::grouping::{
    default_rate_table, plan_block_uep, plan_equal_rate, BlockPlan, CodeRate, CodebookConstraints,
    GroupCoding, RateTable, TableProvenance,
};
use crate::profiles::{permute_bits, sort_profile, Direction, Permutation, ProtectionProfile};
use crate::repetition::{assign_repetitions, RepetitionPlan};

const TRIALS_PER_TASK: u64 = 2048;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheme {
    BitUep,
    BlockUep,
    FixedRepetition(u32),
    EqualRateBlock(CodeRate),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BitUep => f.write_str("bit-uep"),
            Self::BlockUep => f.write_str("block-uep"),
            Self::FixedRepetition(r) => write!(f, "fixed-rep:{r}"),
            Self::EqualRateBlock(rate) => write!(f, "equal-rate:{rate}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// `bit-uep`, `block-uep`, `fixed-rep:R` or `equal-rate:a/b` (underscores accepted).
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let (name, arg) = match norm.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (norm.as_str(), None),
        };
        let need = |what: &str| Error::Config(format!("scheme `{s}` needs {what}"));
        match (name, arg) {
            ("bit-uep", None) => Ok(Self::BitUep),
            ("block-uep", None) => Ok(Self::BlockUep),
            ("fixed-rep" | "fixed-repetition", Some(a)) => {
                let r: u32 = a.parse().map_err(|_| need("an odd repetition count"))?;
                if r.is_multiple_of(2) {
                    return Err(Error::EvenRepetition(r));
                }
                Ok(Self::FixedRepetition(r))
            }
            ("equal-rate" | "equal-rate-block", Some(a)) => Ok(Self::EqualRateBlock(a.parse()?)),
            ("fixed-rep" | "fixed-repetition", None) => Err(need("`:R`")),
            ("equal-rate" | "equal-rate-block", None) => Err(need("`:rate`")),
            _ => Err(Error::Config(format!("unknown scheme `{s}`"))),
        }
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One experiment. `profile` is in original bit order.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub profile: ProtectionProfile,
    pub channel: ChannelSpec,
    pub mode: ChannelMode,
    /// Coded-bit flip probability used for planning and by the BSC; defaults to the
    /// channel's hard-decision error rate.
    pub eps_override: Option<f64>,
    pub scheme: Scheme,
    pub trials: u64,
    pub seed: u64,
    /// Fixed payload in original order; random per trial when absent.
    pub payload: Option<Vec<bool>>,
    pub constraints: CodebookConstraints,
    /// Rate table for block plans; the model table when absent.
    pub table: Option<RateTable>,
}

impl ExperimentConfig {
    pub fn new(profile: ProtectionProfile, scheme: Scheme) -> Self {
        Self {
            profile,
            channel: ChannelSpec::default(),
            mode: ChannelMode::Bsc,
            eps_override: None,
            scheme,
            trials: 1000,
            seed: 0,
            payload: None,
            constraints: CodebookConstraints::standard(),
            table: None,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps_override
            .unwrap_or_else(|| coded_bit_flip_prob(&self.channel))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let eps = self.eps();
        if !(0.0..=0.5).contains(&eps) {
            return Err(Error::InvalidProbability(eps));
        }
        if let Scheme::FixedRepetition(r) = self.scheme {
            if r % 2 == 0 {
                return Err(Error::EvenRepetition(r));
            }
        }
        if let Some(p) = &self.payload {
            if p.len() != self.profile.len() {
                return Err(Error::LengthMismatch {
                    expected: self.profile.len(),
                    actual: p.len(),
                });
            }
        }
        Ok(())
    }

    fn model(&self) -> Result<BlerModel> {
        BlerModel::from_channel(&self.channel)
    }
}

/// Per-coded-bit channel used inside the simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transmission {
    Bsc(f64),
    Awgn(ChannelSpec),
    Genie,
}

impl Transmission {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        match cfg.mode {
            ChannelMode::Bsc => Self::Bsc(cfg.eps()),
            ChannelMode::Awgn => Self::Awgn(cfg.channel),
            ChannelMode::Genie => Self::Genie,
        }
    }

    pub fn corrupt<R: Rng + ?Sized>(&self, bits: &mut [bool], rng: &mut R) {
        match self {
            Self::Bsc(eps) => flip_bsc_in_place(bits, *eps, rng),
            Self::Awgn(ch) => awgn_bpsk_in_place(bits, ch, rng),
            Self::Genie => {}
        }
    }

    fn is_noiseless(&self) -> bool {
        matches!(self, Self::Genie) || matches!(self, Self::Bsc(e) if *e <= 0.0)
    }
}

/// Block-code channel model: with probability `fail_prob` the block fails and every
/// information bit flips independently with probability 1/2. Returns whether it failed.
pub fn simulate_block_group<R: Rng + ?Sized>(
    bits: &mut [bool],
    fail_prob: f64,
    rng: &mut R,
) -> bool {
    if fail_prob <= 0.0 || !rng.random_bool(fail_prob.min(1.0)) {
        return false;
    }
    for b in bits.iter_mut() {
        *b ^= rng.random::<bool>();
    }
    true
}

/// Block failure probability for a coded group: the model BLER for model tables, and
/// `min(1, 2T)` for measured tables so that the marginal flip rate `BLER / 2` equals `T`.
pub fn block_failure_probability(
    model: &BlerModel,
    n: u64,
    k: usize,
    entry: f64,
    provenance: TableProvenance,
) -> f64 {
    match provenance {
        TableProvenance::Model => model.bler(n, k as u64),
        TableProvenance::Measured | TableProvenance::File => (2.0 * entry).min(1.0),
    }
}

/// A contiguous slice of the sorted payload and how it is protected.
#[derive(Clone, Debug, PartialEq)]
enum Segment {
    Repetition {
        start: usize,
        reps: Vec<u32>,
    },
    Block {
        members: Range<usize>,
        fail_prob: f64,
    },
    Uncoded {
        members: Range<usize>,
    },
}

fn trial_seed(root: u64, trial: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix64(splitmix64(root) ^ trial)
}

struct Engine<'a> {
    segments: &'a [Segment],
    k: usize,
    link: Transmission,
    /// Fixed payload in sorted order.
    payload: Option<&'a [bool]>,
}

impl Engine<'_> {
    fn run_trial(
        &self,
        rng: &mut ChaCha8Rng,
        sent: &mut Vec<bool>,
        got: &mut Vec<bool>,
        coded: &mut Vec<bool>,
    ) {
        match self.payload {
            Some(p) => sent.clone_from_slice(p),
            None => sent.iter_mut().for_each(|b| *b = rng.random()),
        }
        got.clone_from(sent);
        for seg in self.segments {
            match seg {
                Segment::Repetition { start, reps } => {
                    coded.clear();
                    for (i, &r) in reps.iter().enumerate() {
                        coded.extend(std::iter::repeat_n(sent[start + i], r as usize));
                    }
                    self.link.corrupt(coded, rng);
                    let mut pos = 0;
                    for (i, &r) in reps.iter().enumerate() {
                        let ones = coded[pos..pos + r as usize].iter().filter(|&&b| b).count();
                        got[start + i] = 2 * ones > r as usize;
                        pos += r as usize;
                    }
                }
                Segment::Block { members, fail_prob } => {
                    if !self.link.is_noiseless() {
                        simulate_block_group(&mut got[members.clone()], *fail_prob, rng);
                    }
                }
                Segment::Uncoded { members } => self.link.corrupt(&mut got[members.clone()], rng),
            }
        }
    }

    /// Per-bit error counts in sorted order.
    fn count_errors(&self, trials: u64, seed: u64) -> Vec<u64> {
        let tasks = trials.div_ceil(TRIALS_PER_TASK);
        (0..tasks)
            .into_par_iter()
            .map(|task| {
                let mut errors = vec![0u64; self.k];
                let mut sent = vec![false; self.k];
                let mut got = vec![false; self.k];
                let mut coded = Vec::new();
                let end = ((task + 1) * TRIALS_PER_TASK).min(trials);
                for t in task * TRIALS_PER_TASK..end {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
                    self.run_trial(&mut rng, &mut sent, &mut got, &mut coded);
                    for (e, (s, g)) in errors.iter_mut().zip(sent.iter().zip(got.iter())) {
                        *e += u64::from(s != g);
                    }
                }
                errors
            })
            .reduce(
                || vec![0u64; self.k],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            )
    }
}

/// Monte Carlo of a repetition plan: per-bit decoding error counts, in plan order.
pub fn simulate_repetition(
    plan: &RepetitionPlan,
    link: Transmission,
    trials: u64,
    seed: u64,
) -> Vec<u64> {
    let segments = [Segment::Repetition {
        start: 0,
        reps: plan.reps().to_vec(),
    }];
    Engine {
        segments: &segments,
        k: plan.len(),
        link,
        payload: None,
    }
    .count_errors(trials, seed)
}

/// `errors > T mu + 3 sqrt(T mu (1 - mu))`.
pub fn exceeds_tolerance(errors: u64, trials: u64, mu: f64) -> bool {
    let t = trials as f64;
    errors as f64 > t * mu + 3.0 * (t * mu * (1.0 - mu)).sqrt()
}

/// A fully specified transmission plan over the sorted profile.
#[derive(Clone, Debug, PartialEq)]
pub enum Plan {
    Repetition(RepetitionPlan),
    Block(BlockPlan),
}

impl Plan {
    pub fn total_blocklength(&self) -> u64 {
        match self {
            Self::Repetition(p) => p.total_blocklength(),
            Self::Block(p) => p.total_blocklength(),
        }
    }
}

/// Builds the plan a config asks for, over the sorted profile.
pub fn build_plan(cfg: &ExperimentConfig, sorted: &ProtectionProfile) -> Result<Plan> {
    let eps = cfg.eps();
    Ok(match cfg.scheme {
        Scheme::BitUep => Plan::Repetition(assign_repetitions(sorted, eps)?),
        Scheme::FixedRepetition(r) => {
            Plan::Repetition(RepetitionPlan::uniform(eps, sorted.len(), r)?)
        }
        Scheme::BlockUep => {
            let model = cfg.model()?;
            let table = match &cfg.table {
                Some(t) => t.clone(),
                None => default_rate_table(&cfg.constraints, &model),
            };
            Plan::Block(plan_block_uep(
                sorted,
                eps,
                &model,
                &cfg.constraints,
                &table,
            )?)
        }
        Scheme::EqualRateBlock(rate) => Plan::Block(plan_equal_rate(
            sorted,
            eps,
            &cfg.model()?,
            &cfg.constraints,
            rate,
        )?),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitRow {
    pub bit_index: usize,
    pub mu: f64,
    pub empirical: f64,
    /// Repetition count (`R9`), block group (`G0`) or uncoded singleton (`S`).
    #[serde(rename = "R_or_group")]
    pub r_or_group: String,
    /// Share of the total blocklength spent on this bit.
    pub n_contribution: f64,
    pub errors: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub channel: ChannelMode,
    pub eps: f64,
    pub trials: u64,
    pub seed: u64,
    pub total_blocklength: u64,
    pub bits: Vec<BitRow>,
    /// Original bit indices whose error count exceeds the 3-sigma tolerance.
    pub violations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub total_blocklength: u64,
    /// Largest `empirical - mu`, floored at zero.
    pub max_violation: f64,
    pub mean_empirical: f64,
    pub violations: usize,
}

impl SummaryRow {
    fn of(run: &SchemeRun) -> Self {
        let k = run.bits.len().max(1) as f64;
        Self {
            scheme: run.scheme,
            total_blocklength: run.total_blocklength,
            max_violation: run
                .bits
                .iter()
                .map(|b| b.empirical - b.mu)
                .fold(0.0, f64::max),
            mean_empirical: run.bits.iter().map(|b| b.empirical).sum::<f64>() / k,
            violations: run.violations.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<SchemeRun>,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    pub fn from_runs(runs: Vec<SchemeRun>) -> Self {
        let summary = runs.iter().map(SummaryRow::of).collect();
        Self { runs, summary }
    }

    /// True when no run has a violation.
    pub fn satisfied(&self) -> bool {
        self.runs.iter().all(|r| r.violations.is_empty())
    }
}

fn segments_and_labels(
    plan: &Plan,
    model: &BlerModel,
    table_provenance: TableProvenance,
) -> (Vec<Segment>, Vec<(String, f64)>) {
    match plan {
        Plan::Repetition(p) => (
            vec![Segment::Repetition {
                start: 0,
                reps: p.reps().to_vec(),
            }],
            p.reps()
                .iter()
                .map(|&r| (format!("R{r}"), f64::from(r)))
                .collect(),
        ),
        Plan::Block(p) => {
            let mut segments = Vec::new();
            let mut labels = Vec::with_capacity(p.k);
            for (g, group) in p.groups.iter().enumerate() {
                match &group.coding {
                    GroupCoding::Block {
                        n,
                        achieved_flip_prob,
                        ..
                    } => {
                        segments.push(Segment::Block {
                            members: group.members.clone(),
                            fail_prob: block_failure_probability(
                                model,
                                *n,
                                group.k,
                                *achieved_flip_prob,
                                table_provenance,
                            ),
                        });
                        let share = *n as f64 / group.members.len() as f64;
                        labels.extend(std::iter::repeat_n(
                            (format!("G{g}"), share),
                            group.members.len(),
                        ));
                    }
                    GroupCoding::RepetitionFallback { reps } => {
                        segments.push(Segment::Repetition {
                            start: group.members.start,
                            reps: reps.clone(),
                        });
                        labels.extend(reps.iter().map(|&r| (format!("G{g}R{r}"), f64::from(r))));
                    }
                }
            }
            segments.push(Segment::Uncoded {
                members: p.singletons.clone(),
            });
            labels.extend(std::iter::repeat_n(
                ("S".to_string(), 1.0),
                p.singletons.len(),
            ));
            (segments, labels)
        }
    }
}

/// Plans, simulates and scores one scheme.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    Ok(Report::from_runs(vec![run_scheme(cfg)?]))
}

fn run_scheme(cfg: &ExperimentConfig) -> Result<SchemeRun> {
    cfg.validate()?;
    let (sorted, perm) = sort_profile(&cfg.profile);
    let plan = build_plan(cfg, &sorted)?;
    let model = cfg.model()?;
    let provenance = match (&cfg.scheme, &cfg.table) {
        (Scheme::BlockUep, Some(t)) => t.provenance(),
        _ => TableProvenance::Model,
    };
    let (segments, labels) = segments_and_labels(&plan, &model, provenance);
    let payload = cfg
        .payload
        .as_deref()
        .map(|p| permute_bits(p, &perm, Direction::Forward))
        .transpose()?;
    let engine = Engine {
        segments: &segments,
        k: sorted.len(),
        link: Transmission::from_config(cfg),
        payload: payload.as_deref(),
    };
    let sorted_errors = engine.count_errors(cfg.trials, cfg.seed);
    Ok(assemble_run(
        cfg,
        &perm,
        &sorted_errors,
        &labels,
        plan.total_blocklength(),
    ))
}

fn assemble_run(
    cfg: &ExperimentConfig,
    perm: &Permutation,
    sorted_errors: &[u64],
    sorted_labels: &[(String, f64)],
    total_blocklength: u64,
) -> SchemeRun {
    let errors = permute_bits(sorted_errors, perm, Direction::Inverse).expect("lengths match");
    let inv = perm.inverse();
    let mu = cfg.profile.mu();
    let bits: Vec<BitRow> = (0..mu.len())
        .map(|i| {
            let (label, share) = &sorted_labels[inv.forward()[i]];
            BitRow {
                bit_index: i,
                mu: mu[i],
                empirical: errors[i] as f64 / cfg.trials as f64,
                r_or_group: label.clone(),
                n_contribution: *share,
                errors: errors[i],
            }
        })
        .collect();
    let violations = bits
        .iter()
        .filter(|b| exceeds_tolerance(b.errors, cfg.trials, b.mu))
        .map(|b| b.bit_index)
        .collect();
    SchemeRun {
        scheme: cfg.scheme,
        channel: cfg.mode,
        eps: cfg.eps(),
        trials: cfg.trials,
        seed: cfg.seed,
        total_blocklength,
        bits,
        violations,
    }
}

/// Runs each config and tabulates one summary row per scheme.
pub fn compare_schemes(cfgs: &[ExperimentConfig]) -> Result<Report> {
    let runs = cfgs.iter().map(run_scheme).collect::<Result<Vec<_>>>()?;
    Ok(Report::from_runs(runs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plotdata" | "plot" | "dat" => Ok(Self::PlotData),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Writes a report.
///
/// CSV holds the per-bit table for a single run and the summary table otherwise.
/// Plot data is whitespace separated `blocklength scheme_id` with the scheme name as a
/// trailing comment.
pub fn emit_report<W: Write>(report: &Report, format: ReportFormat, mut sink: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, report)?;
            writeln!(sink)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            if let [run] = report.runs.as_slice() {
                for row in &run.bits {
                    w.serialize(row)?;
                }
            } else {
                for row in &report.summary {
                    w.serialize(row)?;
                }
            }
            w.flush()?;
        }
        ReportFormat::PlotData => {
            writeln!(sink, "# total_blocklength scheme_id")?;
            for (i, row) in report.summary.iter().enumerate() {
                writeln!(sink, "{} {} # {}", row.total_blocklength, i, row.scheme)?;
            }
        }
    }
    Ok(())
}

/// Parses a payload written as `0`/`1` characters; whitespace and commas are ignored.
pub fn parse_payload(text: &str) -> Result<Vec<bool>> {
    text.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .enumerate()
        .map(|(i, c)| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse {
                index: i,
                message: format!("payload character `{other}`"),
            }),
        })
        .collect()
}
