//! The `aidip` command line.
//!
//! Exit codes: 0 ok, 2 schema, 3 invariant breach, 4 out of range,
//! 5 invalid model, 1 for I/O failures on the output side.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::compliance::{
    apply_penalties, check_pre_survey_poll_bar, detect_respondent_collusion, parse_event_log,
    ComplianceReport,
};
use crate::config::{ConfigError, LoadedConfig, ScenarioConfig, SCHEMA_VERSION};
use crate::error::Error;
use crate::ids::RespondentId;
use crate::pricing::{
    effective_compute, individualized_fee, requires_participation, EffectiveCompute, FeePolicy,
    FeeQuote, FeeSchedule,
};
use crate::qf::{allocate, detect_funding_collusion, FundingCollusionFlag, MatchResult};
use crate::sim::{self, SimulationReport};
use crate::survey::{payouts, score_round, BtsScore, Role};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "AIDIP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "aidip",
    version,
    about = "Risk-priced indemnification and safety-research funding toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; beats AIDIP_OUT_DIR and the config's [outputs] dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Overrides the config's master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Silenced,
    ScaledPayout,
}

impl From<PolicyArg> for FeePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Silenced => FeePolicy::Silenced,
            PolicyArg::ScaledPayout => FeePolicy::ScaledPayout,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BTS scores and payouts for the configured survey round.
    Score(#[command(flatten)] Common),
    /// Individualized fee for one training run.
    Fee {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        flops: f64,
        #[arg(long, default_value_t = 1.0)]
        efficiency: f64,
        #[arg(long)]
        developer: String,
        #[arg(long, value_enum, default_value_t = PolicyArg::Silenced)]
        policy: PolicyArg,
    },
    /// Quadratic Financing allocation.
    Qf(#[command(flatten)] Common),
    /// Monte Carlo incentive checks.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replicates: Option<usize>,
        /// Also write the per-replicate payout trace as CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Collusion flags, penalty ledger and poll-bar violations.
    Detect(#[command(flatten)] Common),
}

/// Ties every JSON report to the config bytes and seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub report: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub interval_label: String,
    pub alpha: f64,
    pub payout_scale: f64,
    pub pseudo_count: f64,
    pub scores: Vec<BtsScore>,
    pub payouts: BTreeMap<RespondentId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeReport {
    pub effective_compute: EffectiveCompute,
    pub participation_required: bool,
    pub quote: Option<FeeQuote>,
    pub schedule: FeeSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfReport {
    pub allocation: MatchResult,
    pub collusion_threshold: f64,
    pub collusion_flags: Vec<FundingCollusionFlag>,
}

/// A failed command: exit code, short kind and message.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn schema(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "schema".into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.message.starts_with(&self.kind) {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.kind, self.message)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::OutOfRange { .. } | Error::InvalidCompute(_) => 4,
            Error::InvalidModel(_) | Error::ImpossibleSignal(_) => 5,
            Error::InvalidEventLog { .. } => 2,
            _ => 3,
        };
        Self {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::schema(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (common, name) = match &cli.command {
        Command::Score(c) => (c, "score"),
        Command::Fee { common, .. } => (common, "fee"),
        Command::Qf(c) => (c, "qf"),
        Command::Simulate { common, .. } => (common, "simulate"),
        Command::Detect(c) => (c, "detect"),
    };
    let loaded = ScenarioConfig::load(&common.config)?;
    let ctx = Context {
        seed: common.seed.unwrap_or(loaded.config.master_seed),
        format: common.format,
        command: name,
        loaded: &loaded,
    };
    let outputs = match &cli.command {
        Command::Score(_) => ctx.score()?,
        Command::Fee {
            flops,
            efficiency,
            developer,
            policy,
            ..
        } => ctx.fee(
            *flops,
            *efficiency,
            &developer.as_str().into(),
            (*policy).into(),
            stdout,
        )?,
        Command::Qf(_) => ctx.qf()?,
        Command::Simulate {
            replicates, trace, ..
        } => ctx.simulate(*replicates, *trace)?,
        Command::Detect(_) => ctx.detect()?,
    };
    let dir = out_dir(common, &loaded);
    let written = outputs.commit(&dir).map_err(|e| Failure {
        code: 1,
        kind: "io".into(),
        message: format!("writing reports to {}: {e}", dir.display()),
    })?;
    for path in written {
        let _ = writeln!(stdout, "wrote {}", path.display());
    }
    Ok(())
}

fn out_dir(common: &Common, loaded: &LoadedConfig) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    if let Some(env) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    match loaded.config.outputs.as_ref().and_then(|o| o.dir.as_ref()) {
        Some(dir) => loaded.base_dir.join(dir),
        None => PathBuf::from("."),
    }
}

struct Context<'a> {
    seed: u64,
    format: Format,
    command: &'static str,
    loaded: &'a LoadedConfig,
}

impl Context<'_> {
    fn config(&self) -> &ScenarioConfig {
        &self.loaded.config
    }

    fn wrap<T: Serialize>(&self, report: T) -> Report<T> {
        Report {
            schema_version: SCHEMA_VERSION,
            command: self.command.into(),
            config_sha256: self.loaded.sha256.clone(),
            master_seed: self.seed,
            report,
        }
    }

    fn json<T: Serialize>(
        &self,
        outputs: &mut Outputs,
        name: &str,
        report: T,
    ) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(&self.wrap(report)).map_err(internal)?;
        bytes.push(b'\n');
        outputs.add(name, bytes);
        Ok(())
    }

    fn require<'c, T>(&self, section: &'c Option<T>, name: &str) -> Result<&'c T, Failure> {
        section
            .as_ref()
            .ok_or_else(|| Failure::schema(format!("`{}` needs a [{name}] section", self.command)))
    }

    fn score(&self) -> Result<Outputs, Failure> {
        let round = self.require(&self.config().survey, "survey")?;
        round.validate()?;
        let scores = score_round(round)?;
        let paid = payouts(
            &scores,
            &round.respondents,
            &self.config().payout_rule(round.payout_scale),
        );
        let mut out = Outputs::default();
        match self.format {
            Format::Json => self.json(
                &mut out,
                "score_report.json",
                ScoreReport {
                    interval_label: round.interval_label.clone(),
                    alpha: round.alpha,
                    payout_scale: round.payout_scale,
                    pseudo_count: round.pseudo_count,
                    scores,
                    payouts: paid,
                },
            )?,
            Format::Csv => {
                out.add("scores.csv", csv_rows(&scores)?);
                let rows: Vec<PayoutRow> = paid
                    .into_iter()
                    .map(|(respondent_id, payout)| PayoutRow {
                        respondent_id,
                        payout,
                    })
                    .collect();
                out.add("payouts.csv", csv_rows(&rows)?);
            }
        }
        Ok(out)
    }

    fn fee(
        &self,
        flops: f64,
        efficiency: f64,
        developer: &RespondentId,
        policy: FeePolicy,
        stdout: &mut dyn Write,
    ) -> Result<Outputs, Failure> {
        let cfg = self.config();
        let round = self.require(&cfg.survey, "survey")?;
        let params = self.require(&cfg.schedule, "schedule")?;
        let disutilities = self.require(&cfg.disutilities, "disutilities")?;
        round.validate()?;
        let ec = effective_compute(flops, efficiency)?;
        let schedule = FeeSchedule::publish(round, params, disutilities)?;
        let required = requires_participation(&ec, &schedule);
        let quote = if required {
            Some(individualized_fee(
                developer, &ec, &schedule, round, policy,
            )?)
        } else {
            None
        };

        let mut text = format!(
            "effective_compute: {}\nparticipation_required: {required}\n",
            ec.value
        );
        match &quote {
            Some(q) => {
                text += &format!(
                    "base_fee: {}\ndiscount: {}\nfee: {}\n",
                    q.base_fee, q.discount, q.fee
                );
            }
            None => text += "participation not required\n",
        }
        stdout.write_all(text.as_bytes()).map_err(internal)?;

        let mut out = Outputs::default();
        let mut doc = serde_json::to_vec_pretty(&schedule).map_err(internal)?;
        doc.push(b'\n');
        out.add("schedule.json", doc);
        match self.format {
            Format::Json => self.json(
                &mut out,
                "fee_report.json",
                FeeReport {
                    effective_compute: ec,
                    participation_required: required,
                    quote,
                    schedule,
                },
            )?,
            Format::Csv => {
                let row = FeeRow {
                    developer_id: developer.clone(),
                    policy,
                    effective_compute: ec.value,
                    participation_required: required,
                    base_fee: quote.as_ref().map(|q| q.base_fee),
                    discount: quote.as_ref().map(|q| q.discount),
                    fee: quote.as_ref().map(|q| q.fee),
                };
                out.add("fee.csv", csv_rows(&[row])?);
            }
        }
        Ok(out)
    }

    fn qf(&self) -> Result<Outputs, Failure> {
        let section = self.require(&self.config().qf, "qf")?;
        let allocation = allocate(&section.round)?;
        let flags = detect_funding_collusion(&section.round, section.collusion_threshold);
        let mut out = Outputs::default();
        match self.format {
            Format::Json => self.json(
                &mut out,
                "qf_report.json",
                QfReport {
                    allocation,
                    collusion_threshold: section.collusion_threshold,
                    collusion_flags: flags,
                },
            )?,
            Format::Csv => out.add("qf.csv", csv_rows(&allocation.projects)?),
        }
        Ok(out)
    }

    fn simulate(&self, replicates: Option<usize>, trace: bool) -> Result<Outputs, Failure> {
        let section = self.require(&self.config().simulation, "simulation")?;
        let mut config = section.to_sim_config(self.seed);
        if let Some(r) = replicates {
            config.replicates = r;
        }
        let (report, rows) = sim::run(&config)?;
        let mut out = Outputs::default();
        match self.format {
            Format::Json => self.json(&mut out, "simulation_report.json", &report)?,
            Format::Csv => out.add("simulation.csv", csv_rows(&summary_rows(&report))?),
        }
        if trace {
            out.add("trace.csv", csv_rows(&rows)?);
        }
        Ok(out)
    }

    fn detect(&self) -> Result<Outputs, Failure> {
        let cfg = self.config();
        let compliance = self.require(&cfg.compliance, "compliance")?;
        let mut report = ComplianceReport::default();
        if let Some(round) = &cfg.survey {
            round.validate()?;
            report.flagged_groups =
                detect_respondent_collusion(round, compliance.detection_threshold)?;
        }
        if let Some(qf) = &cfg.qf {
            qf.round.validate()?;
            report.funding_flags = detect_funding_collusion(&qf.round, qf.collusion_threshold);
        }
        if !compliance.confirmed_groups.is_empty() || !compliance.whistleblowers.is_empty() {
            let penalties = self.require(&cfg.penalties, "penalties")?;
            report.ledger = apply_penalties(
                &compliance.confirmed_groups,
                &compliance.whistleblowers,
                penalties,
            )?;
        }
        if let Some(log) = &compliance.event_log {
            let survey_date = compliance
                .survey_date
                .ok_or_else(|| Failure::schema("[compliance] event_log needs survey_date"))?;
            let path = self.loaded.base_dir.join(log);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Failure::schema(format!("cannot read event log {}: {e}", path.display()))
            })?;
            let events = parse_event_log(&text)?;
            let developers: Option<Vec<String>> = compliance.indemnified.clone().or_else(|| {
                cfg.survey.as_ref().map(|r| {
                    r.respondents
                        .iter()
                        .filter(|p| p.role == Role::Developer)
                        .map(|p| p.id.to_string())
                        .collect()
                })
            });
            report.poll_violations = check_pre_survey_poll_bar(
                &events,
                survey_date,
                compliance.blackout_days,
                developers.as_deref(),
            );
        }
        let mut out = Outputs::default();
        match self.format {
            Format::Json => self.json(&mut out, "compliance_report.json", &report)?,
            Format::Csv => {
                let rows: Vec<FlagRow> = report
                    .flagged_groups
                    .iter()
                    .map(|f| FlagRow {
                        respondents: f
                            .respondents
                            .iter()
                            .map(|r| r.as_str())
                            .collect::<Vec<_>>()
                            .join(";"),
                        agreement: f.agreement,
                        prediction_distance: f.prediction_distance,
                        exclusivity: f.exclusivity,
                    })
                    .collect();
                out.add("flags.csv", csv_rows(&rows)?);
                out.add("ledger.csv", csv_rows(&report.ledger.items)?);
                out.add("poll_violations.csv", csv_rows(&report.poll_violations)?);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct PayoutRow {
    respondent_id: RespondentId,
    payout: f64,
}

#[derive(Serialize)]
struct FeeRow {
    developer_id: RespondentId,
    policy: FeePolicy,
    effective_compute: f64,
    participation_required: bool,
    base_fee: Option<f64>,
    discount: Option<f64>,
    fee: Option<f64>,
}

#[derive(Serialize)]
struct FlagRow {
    respondents: String,
    agreement: f64,
    prediction_distance: f64,
    exclusivity: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    policy: String,
    payout_mean: f64,
    payout_half_width: f64,
    gap_mean: Option<f64>,
    gap_half_width: Option<f64>,
    honest_dominates: Option<bool>,
}

fn summary_rows(report: &SimulationReport) -> Vec<SummaryRow> {
    let eq = &report.equilibrium;
    let mut rows = vec![SummaryRow {
        policy: "honest".into(),
        payout_mean: eq.honest.mean,
        payout_half_width: eq.honest.half_width,
        gap_mean: None,
        gap_half_width: None,
        honest_dominates: None,
    }];
    rows.extend(eq.deviations.iter().map(|d| SummaryRow {
        policy: d.policy.clone(),
        payout_mean: d.payout.mean,
        payout_half_width: d.payout.half_width,
        gap_mean: Some(d.gap.mean),
        gap_half_width: Some(d.gap.half_width),
        honest_dominates: Some(d.honest_dominates),
    }));
    rows
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    w.into_inner().map_err(|e| internal(e.into_error()))
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        kind: "io".into(),
        message: e.to_string(),
    }
}

/// Report files staged in memory and published together.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes every file to a temporary sibling, then renames them into
    /// place. On failure the temporaries and any already-renamed files
    /// are removed.
    pub fn commit(self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let pid = std::process::id();
        let mut staged = Vec::new();
        let result = (|| {
            for (name, bytes) in &self.files {
                let tmp = dir.join(format!(".{name}.{pid}.tmp"));
                staged.push((tmp.clone(), dir.join(name)));
                let mut f = std::fs::File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = std::fs::remove_file(tmp);
            }
            return Err(e);
        }
        let mut done = Vec::new();
        for (tmp, dest) in &staged {
            if let Err(e) = std::fs::rename(tmp, dest) {
                for (t, _) in &staged {
                    let _ = std::fs::remove_file(t);
                }
                for d in &done {
                    let _ = std::fs::remove_file(d);
                }
                return Err(e);
            }
            done.push(dest.clone());
        }
        Ok(done)
    }
}
