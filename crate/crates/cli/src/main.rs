//! `uep`: plan and verify unequal error protection from the command line.
//!
//! Exit status is 0 on success, 2 when a simulation detects a constraint violation,
//! and 1 on usage or input errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uep_core::channel::{coded_bit_flip_prob, ChannelMode, ChannelSpec};
use uep_core::fbl::BlerModel;
use uep_core::grouping::{
    default_rate_table, plan_block_uep, BlockPlan, CodeRate, CodebookConstraints, RateTable,
};
use uep_core::pipeline::{
    compare_schemes, emit_report, parse_payload, ExperimentConfig, ReportFormat, Scheme,
};
use uep_core::profiles::{
    load_profile, sort_profile, synth_profile, ProfileFormat, ProtectionProfile, SynthSpec,
};
use uep_core::repetition::{assign_repetitions, RepetitionPlan};

#[derive(Parser, Debug)]
#[command(
    name = "uep",
    version,
    about = "Unequal error protection planning and link simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repetition count per bit (bit-level UEP).
    PlanBit(PlanArgs),
    /// Grouped block-code plan (block-level UEP).
    PlanBlock(PlanArgs),
    /// Monte Carlo run of one scheme.
    Simulate(SimulateArgs),
    /// Monte Carlo run of several schemes on the same profile and channel.
    Compare(CompareArgs),
    /// Finite-blocklength model queries.
    #[command(subcommand)]
    Fbl(FblCommand),
    /// Rate tables.
    #[command(subcommand)]
    Table(TableCommand),
}

#[derive(Args, Debug, Clone)]
struct ProfileArgs {
    /// Profile file: CSV (one value per line, optional `mu` header) or a JSON array.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    profile: Option<PathBuf>,
    /// Profile file format; guessed from the extension when omitted.
    #[arg(long, value_parser = parse_profile_format)]
    profile_format: Option<ProfileFormat>,
    /// Synthetic profile, e.g. `segments:512:0.25@1e-4,0.75@0.3` or `log-uniform:1000:1e-5:0.5:seed=7`.
    #[arg(long)]
    synth: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct ChannelArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    snr_db: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    power_dbw: f64,
    /// Noise variance; overrides --snr-db.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Coded-bit flip probability; defaults to the hard-decision error rate of the channel.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct CodebookArgs {
    /// Allowed group sizes.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    sizes: Vec<usize>,
    /// Allowed code rates.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "3/4,2/3,15/24,14/24,13/24,1/2,1/3"
    )]
    rates: Vec<CodeRate>,
    /// Rate table CSV (`k,r,flip_prob`); the finite-blocklength model when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    channel: ChannelArgs,
    #[command(flatten)]
    codebook: CodebookArgs,
    #[arg(long, value_enum, default_value_t = PlanFormat::Json)]
    format: PlanFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    channel: ChannelArgs,
    #[command(flatten)]
    codebook: CodebookArgs,
    /// `bsc`, `awgn` or `genie`.
    #[arg(long = "channel", value_parser = parse_channel_mode, default_value = "bsc")]
    channel_mode: ChannelMode,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, env = "UEP_SEED", default_value_t = 0)]
    seed: u64,
    /// Fixed payload file of `0`/`1` characters in original bit order.
    #[arg(long)]
    payload: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `bit-uep`, `block-uep`, `fixed-rep:R` or `equal-rate:a/b`.
    #[arg(long, default_value = "bit-uep")]
    scheme: String,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Schemes to compare; `fixed-rep:max` uses the largest bit-level repetition count.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "bit-uep,block-uep,fixed-rep:max"
    )]
    schemes: Vec<String>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum FblCommand {
    /// Normal-approximation block error rate of an (n, k) code.
    Bler {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[command(flatten)]
        channel: ChannelArgs,
    },
    /// Smallest blocklength carrying k bits at a target block error rate.
    MinN {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        bler: f64,
        #[command(flatten)]
        channel: ChannelArgs,
    },
}

#[derive(Subcommand, Debug)]
enum TableCommand {
    /// Writes the model rate table for the given sizes and rates.
    Gen {
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
        sizes: Vec<usize>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "3/4,2/3,15/24,14/24,13/24,1/2,1/3"
        )]
        rates: Vec<CodeRate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reads a rate table, checks it covers the given sizes and rates, and writes it back.
    Load {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
        sizes: Vec<usize>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "3/4,2/3,15/24,14/24,13/24,1/2,1/3"
        )]
        rates: Vec<CodeRate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlanFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
    Plotdata,
}

impl From<OutFormat> for ReportFormat {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Self::Csv,
            OutFormat::Json => Self::Json,
            OutFormat::Plotdata => Self::PlotData,
        }
    }
}

fn parse_profile_format(s: &str) -> Result<ProfileFormat, String> {
    s.parse().map_err(|e: uep_core::Error| e.to_string())
}

fn parse_channel_mode(s: &str) -> Result<ChannelMode, String> {
    s.parse().map_err(|e: uep_core::Error| e.to_string())
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

enum Outcome {
    Done,
    Violations,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => {
            eprintln!("uep: constraint violation detected");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("uep: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> AnyResult<Outcome> {
    match command {
        Command::PlanBit(args) => plan_bit(&args),
        Command::PlanBlock(args) => plan_block(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Compare(args) => compare(&args),
        Command::Fbl(cmd) => fbl(&cmd),
        Command::Table(cmd) => table(&cmd),
    }
    .map(|o| o.unwrap_or(Outcome::Done))
}

fn sink(out: Option<&Path>) -> AnyResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

impl ProfileArgs {
    fn load(&self) -> AnyResult<ProtectionProfile> {
        match (&self.profile, &self.synth) {
            (Some(path), _) => {
                let fmt = self
                    .profile_format
                    .unwrap_or_else(|| ProfileFormat::from_path(path));
                let label = path.display().to_string();
                Ok(load_profile(File::open(path)?, fmt)?.with_label(label))
            }
            (None, Some(spec)) => {
                let spec: SynthSpec = spec.parse()?;
                Ok(synth_profile(&spec)?.with_label(spec.to_string()))
            }
            (None, None) => Err("one of --profile or --synth is required".into()),
        }
    }
}

impl ChannelArgs {
    fn spec(&self) -> AnyResult<ChannelSpec> {
        Ok(match self.noise_var {
            Some(nv) => ChannelSpec::from_noise_var(self.power_dbw, nv)?,
            None => ChannelSpec::from_snr_db(self.snr_db, self.power_dbw)?,
        })
    }

    fn eps(&self) -> AnyResult<f64> {
        Ok(self.eps.unwrap_or(coded_bit_flip_prob(&self.spec()?)))
    }

    fn model(&self) -> AnyResult<BlerModel> {
        Ok(BlerModel::from_channel(&self.spec()?)?)
    }
}

impl CodebookArgs {
    fn constraints(&self) -> AnyResult<CodebookConstraints> {
        Ok(CodebookConstraints::new(
            self.sizes.clone(),
            self.rates.clone(),
            "cli",
        )?)
    }

    fn table(&self) -> AnyResult<Option<RateTable>> {
        Ok(match &self.table {
            Some(p) => Some(RateTable::load_csv(File::open(p)?)?),
            None => None,
        })
    }
}

#[derive(Serialize)]
struct BitPlanOut<'a> {
    #[serde(flatten)]
    plan: &'a RepetitionPlan,
    /// `order[s]` is the original index of the bit at sorted position `s`.
    order: &'a [usize],
    total_blocklength: u64,
}

#[derive(Serialize)]
struct BlockPlanOut<'a> {
    #[serde(flatten)]
    plan: &'a BlockPlan,
    order: &'a [usize],
}

fn plan_bit(args: &PlanArgs) -> AnyResult<Option<Outcome>> {
    let profile = args.profile.load()?;
    let (sorted, perm) = sort_profile(&profile);
    let plan = assign_repetitions(&sorted, args.channel.eps()?)?;
    let mut out = sink(args.out.as_deref())?;
    match args.format {
        PlanFormat::Json => {
            let doc = BitPlanOut {
                plan: &plan,
                order: perm.forward(),
                total_blocklength: plan.total_blocklength(),
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
        PlanFormat::Csv => {
            writeln!(out, "bit_index,mu,R")?;
            let mut rows: Vec<_> = perm.forward().iter().zip(plan.reps()).collect();
            rows.sort_unstable();
            for (&i, r) in rows {
                writeln!(out, "{i},{},{r}", profile.mu()[i])?;
            }
        }
    }
    out.flush()?;
    Ok(None)
}

fn plan_block(args: &PlanArgs) -> AnyResult<Option<Outcome>> {
    let profile = args.profile.load()?;
    let (sorted, perm) = sort_profile(&profile);
    let model = args.channel.model()?;
    let constraints = args.codebook.constraints()?;
    let table = match args.codebook.table()? {
        Some(t) => t,
        None => default_rate_table(&constraints, &model),
    };
    let plan = plan_block_uep(&sorted, args.channel.eps()?, &model, &constraints, &table)?;
    let mut out = sink(args.out.as_deref())?;
    match args.format {
        PlanFormat::Json => {
            let doc = BlockPlanOut {
                plan: &plan,
                order: perm.forward(),
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
        PlanFormat::Csv => {
            writeln!(out, "group,start,end,k,padding,blocklength")?;
            for (g, group) in plan.groups.iter().enumerate() {
                writeln!(
                    out,
                    "{g},{},{},{},{},{}",
                    group.members.start,
                    group.members.end,
                    group.k,
                    group.padding,
                    group.blocklength()
                )?;
            }
            writeln!(
                out,
                "singletons,{},{},{},0,{}",
                plan.singletons.start,
                plan.singletons.end,
                plan.singletons.len(),
                plan.singletons.len()
            )?;
        }
    }
    out.flush()?;
    Ok(None)
}

impl RunArgs {
    fn config(&self, profile: &ProtectionProfile, scheme: Scheme) -> AnyResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::new(profile.clone(), scheme);
        cfg.channel = self.channel.spec()?;
        cfg.mode = self.channel_mode;
        cfg.eps_override = self.channel.eps;
        cfg.trials = self.trials;
        cfg.seed = self.seed;
        cfg.constraints = self.codebook.constraints()?;
        cfg.table = self.codebook.table()?;
        if let Some(p) = &self.payload {
            cfg.payload = Some(parse_payload(&std::fs::read_to_string(p)?)?);
        }
        Ok(cfg)
    }

    fn emit(&self, report: &uep_core::Report) -> AnyResult<Option<Outcome>> {
        let mut out = sink(self.out.as_deref())?;
        emit_report(report, self.format.into(), &mut out)?;
        out.flush()?;
        Ok(Some(if report.satisfied() {
            Outcome::Done
        } else {
            Outcome::Violations
        }))
    }
}

fn simulate(args: &SimulateArgs) -> AnyResult<Option<Outcome>> {
    let profile = args.run.profile.load()?;
    let cfg = args.run.config(&profile, args.scheme.parse()?)?;
    let report = compare_schemes(std::slice::from_ref(&cfg))?;
    args.run.emit(&report)
}

fn compare(args: &CompareArgs) -> AnyResult<Option<Outcome>> {
    let profile = args.run.profile.load()?;
    let mut cfgs = Vec::with_capacity(args.schemes.len());
    for name in &args.schemes {
        let scheme = if name.trim().eq_ignore_ascii_case("fixed-rep:max") {
            let (sorted, _) = sort_profile(&profile);
            let r_max = assign_repetitions(&sorted, args.run.channel.eps()?)?.max_rep();
            Scheme::FixedRepetition(r_max)
        } else {
            name.parse()?
        };
        cfgs.push(args.run.config(&profile, scheme)?);
    }
    let report = compare_schemes(&cfgs)?;
    args.run.emit(&report)
}

fn fbl(cmd: &FblCommand) -> AnyResult<Option<Outcome>> {
    let mut out = io::stdout().lock();
    match cmd {
        FblCommand::Bler { n, k, channel } => {
            if *n == 0 || *k == 0 {
                return Err("n and k must be positive".into());
            }
            let m = channel.model()?;
            writeln!(out, "n,k,bler,ln_bler")?;
            writeln!(out, "{n},{k},{:e},{}", m.bler(*n, *k), m.ln_bler(*n, *k))?;
        }
        FblCommand::MinN { k, bler, channel } => {
            let m = channel.model()?;
            let n = m.min_blocklength(*k, *bler)?;
            writeln!(out, "k,target_bler,n,achieved_bler")?;
            writeln!(out, "{k},{bler:e},{n},{:e}", m.bler(n, *k))?;
        }
    }
    Ok(None)
}

fn table(cmd: &TableCommand) -> AnyResult<Option<Outcome>> {
    match cmd {
        TableCommand::Gen {
            channel,
            sizes,
            rates,
            out,
        } => {
            let c = CodebookConstraints::new(sizes.clone(), rates.clone(), "cli")?;
            let t = default_rate_table(&c, &channel.model()?);
            let mut w = sink(out.as_deref())?;
            t.write_csv(&mut w)?;
            w.flush()?;
        }
        TableCommand::Load {
            table,
            sizes,
            rates,
            out,
        } => {
            let c = CodebookConstraints::new(sizes.clone(), rates.clone(), "cli")?;
            let t = RateTable::load_csv(File::open(table)?)?;
            t.check_covers(&c)?;
            let mut w = sink(out.as_deref())?;
            t.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(None)
}
