//! Command-line front end.
//!
//! Every command computes all of its outputs in memory before touching the
//! filesystem, so an error never leaves partial files behind.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::Dataset;
use crate::drift::{t_stability, DriftConfig, SlotMode};
use crate::error::{Error, Result};
use crate::eval::{temporal_split, EvalReport, SplitSpec, DEFAULT_FPR_CAP};
use crate::experiment::{run_comparison, ComparisonConfig, TrendScope};
use crate::io::{self, EvalSummary, ModelFile};
use crate::synth::{generate, SynthSpec, REFERENCE_SEED};
use crate::trainer::{
    train_svm, train_svm_cb, CbConfig, Schedule, TrainConfig, DEFAULT_INITIAL_STEP, DEFAULT_ITERATIONS,
    DEFAULT_L2, DEFAULT_UNSTABLE, HIGH_BOUND,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// 2015-01-01T00:00:00Z, the start of the default test period.
pub const DEFAULT_BOUNDARY: i64 = 1_420_070_400;

#[derive(Debug, Parser)]
#[command(name = "driftguard", version, about = "Feature drift analysis and drift-bounded linear SVMs")]
struct Cli {
    /// Seed for data generation (training is deterministic and only records it).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Omit the `generated_at` provenance line so reruns are byte-identical.
    #[arg(long, global = true)]
    no_provenance_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic drift dataset and its ground truth.
    Synth {
        /// Dataset path; ground truth goes to `<out>.truth.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline linear SVM.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train only on samples strictly before this time.
        #[arg(long, value_parser = parse_boundary)]
        boundary: Option<i64>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Rank features by temporal stability.
    Drift {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Analyze only samples strictly before this time.
        #[arg(long, value_parser = parse_boundary)]
        boundary: Option<i64>,
        #[command(flatten)]
        slots: SlotArgs,
    },
    /// Train an SVM whose most unstable weights are bounded; instability is
    /// measured on the reference `--model`.
    TrainCb {
        #[arg(long)]
        dataset: PathBuf,
        /// Reference model used for the drift analysis.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_boundary)]
        boundary: Option<i64>,
        #[arg(long, default_value_t = DEFAULT_UNSTABLE)]
        nf: usize,
        #[arg(long, default_value_t = HIGH_BOUND)]
        bound: f64,
        #[command(flatten)]
        slots: SlotArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Per-slot precision, recall and partial AUC of a saved model.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// CSV path; the JSON summary goes to `<out>.summary.json`.
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only samples at or after this time.
        #[arg(long, value_parser = parse_boundary)]
        boundary: Option<i64>,
        #[arg(long, default_value_t = DEFAULT_FPR_CAP)]
        fpr_cap: f64,
        #[command(flatten)]
        slots: SlotArgs,
    },
    /// Baseline SVM against both bounded variants over the test period.
    Compare {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_boundary, default_value_t = DEFAULT_BOUNDARY)]
        boundary: i64,
        #[arg(long, default_value_t = DEFAULT_UNSTABLE)]
        nf: usize,
        #[arg(long, default_value_t = DEFAULT_FPR_CAP)]
        fpr_cap: f64,
        /// Period covered by the score-trend reports.
        #[arg(long, value_enum, default_value_t = TrendScope::Test)]
        trend_scope: TrendScope,
        #[command(flatten)]
        slots: SlotArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SlotModeArg {
    Month,
    Fixed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Debug, Args)]
struct SlotArgs {
    #[arg(long, value_enum, default_value_t = SlotModeArg::Month)]
    slot_mode: SlotModeArg,
    /// Slot width for `--slot-mode fixed`.
    #[arg(long)]
    dt_seconds: Option<i64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_INITIAL_STEP)]
    eta0: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    schedule: ScheduleArg,
    /// Ignored by the bounded trainer, which has no L2 term.
    #[arg(long, default_value_t = DEFAULT_L2)]
    l2: f64,
}

fn parse_boundary(text: &str) -> std::result::Result<i64, String> {
    if let Ok(t) = text.parse::<i64>() {
        return Ok(t);
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| format!("expected epoch seconds or YYYY-MM-DD, got {text:?}"))
}

impl SlotArgs {
    fn config(&self) -> Result<DriftConfig> {
        let slot = match (self.slot_mode, self.dt_seconds) {
            (SlotModeArg::Month, None) => SlotMode::CalendarMonth,
            (SlotModeArg::Month, Some(_)) => {
                return Err(Error::InvalidConfig("--dt-seconds requires --slot-mode fixed".into()))
            }
            (SlotModeArg::Fixed, Some(dt)) => SlotMode::FixedSeconds(dt),
            (SlotModeArg::Fixed, None) => {
                return Err(Error::InvalidConfig("--slot-mode fixed requires --dt-seconds".into()))
            }
        };
        let config = DriftConfig {
            slot,
            ..DriftConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let config = TrainConfig {
            iterations: self.iters,
            initial_step: self.eta0,
            schedule: match self.schedule {
                ScheduleArg::Constant => Schedule::Constant,
                ScheduleArg::Cosine => Schedule::CosineAnnealing,
            },
            l2_lambda: self.l2,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Provenance lines written at the top of every output.
struct Provenance {
    lines: Vec<String>,
}

impl Provenance {
    fn new(command: &str, timestamp: bool) -> Self {
        let mut lines = vec![format!("driftguard {} {command}", env!("CARGO_PKG_VERSION"))];
        if timestamp {
            lines.push(format!(
                "generated_at={}",
                Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
            ));
        }
        Self { lines }
    }

    fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    fn train(&mut self, config: &TrainConfig) {
        self.set("iters", config.iterations);
        self.set("eta0", config.initial_step);
        self.set("schedule", config.schedule);
        self.set("l2", config.l2_lambda);
        self.set("seed", config.seed);
    }

    fn slots(&mut self, config: &DriftConfig) {
        self.set("slot_mode", config.slot);
        self.set("class_filter", config.class_filter);
    }
}

fn train_meta(file: ModelFile, config: &TrainConfig, l2: f64) -> ModelFile {
    file.with_meta("iters", config.iterations)
        .with_meta("eta0", config.initial_step)
        .with_meta("schedule", config.schedule)
        .with_meta("l2", l2)
        .with_meta("seed", config.seed)
}

fn input_dataset(path: &Path, boundary: Option<i64>, keep_before: bool) -> Result<Dataset> {
    let dataset = io::load_dataset(path)?;
    let Some(boundary) = boundary else {
        return Ok(dataset);
    };
    let (train, test) = temporal_split(&dataset, SplitSpec { boundary })?;
    Ok(if keep_before { train } else { test })
}

/// Output files of one command, written only once everything succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, String)>,
    stdout: String,
}

impl Outputs {
    fn file(&mut self, path: impl Into<PathBuf>, text: String) {
        self.files.push((path.into(), text));
    }

    fn commit(self) -> Result<()> {
        for (path, text) in &self.files {
            io::write_text(path, text)?;
        }
        io::emit(std::io::stdout().lock(), &self.stdout)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn execute(cli: Cli) -> Result<Outputs> {
    let stamp = !cli.no_provenance_timestamp;
    let mut out = Outputs::default();
    match cli.command {
        Command::Synth { out: path } => {
            let spec = SynthSpec {
                seed: cli.seed.unwrap_or(REFERENCE_SEED),
                ..SynthSpec::reference()
            };
            let (dataset, truth) = generate(&spec)?;
            let mut prov = Provenance::new("synth", stamp);
            prov.set("spec", format!("{spec:?}"));
            out.file(&path, io::render_dataset(&dataset, &prov.lines)?);
            out.file(with_suffix(&path, ".truth.json"), io::render_ground_truth(&truth)?);
        }
        Command::Train {
            dataset,
            out: path,
            boundary,
            train,
        } => {
            let config = train.config(cli.seed.unwrap_or(0))?;
            let data = input_dataset(&dataset, boundary, true)?;
            let trained = train_svm(&data, &config)?;
            let mut prov = Provenance::new("train", stamp);
            prov.set("dataset", dataset.display());
            prov.set("boundary", opt(boundary));
            prov.train(&config);
            prov.set("final_loss", trained.losses.last().copied().unwrap_or(f64::NAN));
            let file = train_meta(ModelFile::new(trained.model, "svm"), &config, config.l2_lambda);
            out.file(&path, io::render_model(&file, &prov.lines)?);
        }
        Command::Drift {
            dataset,
            model,
            out: path,
            boundary,
            slots,
        } => {
            let config = slots.config()?;
            let data = input_dataset(&dataset, boundary, true)?;
            let file = io::load_model(&model, Some(data.dictionary()))?;
            let report = t_stability(&file.model, &data, &config)?;
            let mut prov = Provenance::new("drift", stamp);
            prov.set("dataset", dataset.display());
            prov.set("model", model.display());
            prov.set("boundary", opt(boundary));
            prov.slots(&config);
            let csv = io::render_drift_report(&report, &prov.lines)?;
            match path {
                Some(path) => out.file(path, csv),
                None => out.stdout = csv,
            }
        }
        Command::TrainCb {
            dataset,
            model,
            out: path,
            boundary,
            nf,
            bound,
            slots,
            train,
        } => {
            let drift = slots.config()?;
            let base = train.config(cli.seed.unwrap_or(0))?;
            let data = input_dataset(&dataset, boundary, true)?;
            let reference = io::load_model(&model, Some(data.dictionary()))?;
            let report = t_stability(&reference.model, &data, &drift)?;
            let config = CbConfig::new(base, nf, bound);
            let (trained, bounded) = train_svm_cb(&data, &report.delta(), &config)?;
            let mut prov = Provenance::new("train-cb", stamp);
            prov.set("dataset", dataset.display());
            prov.set("reference_model", model.display());
            prov.set("boundary", opt(boundary));
            prov.slots(&drift);
            prov.train(&config.base);
            prov.set("nf", nf);
            prov.set("bound", bound);
            let mut file = train_meta(ModelFile::new(trained.model, "svm-cb"), &config.base, 0.0)
                .with_meta("nf", nf)
                .with_meta("bound", bound);
            file.bounded = bounded;
            out.file(&path, io::render_model(&file, &prov.lines)?);
        }
        Command::Eval {
            dataset,
            model,
            out: path,
            boundary,
            fpr_cap,
            slots,
        } => {
            let config = slots.config()?;
            let data = input_dataset(&dataset, boundary, false)?;
            let file = io::load_model(&model, Some(data.dictionary()))?;
            let report = EvalReport::build(&file.kind, &file.model, &data, &config, boundary, fpr_cap)?;
            let mut prov = Provenance::new("eval", stamp);
            prov.set("dataset", dataset.display());
            prov.set("model", model.display());
            prov.set("boundary", opt(boundary));
            prov.slots(&config);
            out.file(&path, io::render_eval_report(&report, &prov.lines)?);
            out.file(
                with_suffix(&path, ".summary.json"),
                io::render_json(&EvalSummary::of(&report))?,
            );
        }
        Command::Compare {
            dataset,
            out: dir,
            boundary,
            nf,
            fpr_cap,
            trend_scope,
            slots,
            train,
        } => {
            let mut config = ComparisonConfig::new(boundary);
            config.train = train.config(cli.seed.unwrap_or(0))?;
            config.drift = slots.config()?;
            config.n_unstable = nf;
            config.fpr_cap = fpr_cap;
            config.trend_scope = trend_scope;
            let data = io::load_dataset(&dataset)?;
            let cmp = run_comparison(&data, &config)?;

            let mut prov = Provenance::new("compare", stamp);
            prov.set("dataset", dataset.display());
            prov.set("boundary", boundary);
            prov.slots(&config.drift);
            prov.train(&config.train);
            prov.set("nf", nf);
            prov.set("bounds", format!("cb_h={},cb_l={}", config.high_bound, config.low_bound));
            prov.set("fpr_cap", fpr_cap);
            prov.set("trend_scope", format!("{trend_scope:?}").to_lowercase());

            out.file(dir.join("drift.csv"), io::render_drift_report(&cmp.drift, &prov.lines)?);
            for run in &cmp.runs {
                let mut file = ModelFile::new(run.model.clone(), if run.bound.is_some() { "svm-cb" } else { "svm" });
                file = match run.bound {
                    Some(r) => train_meta(file, &config.train, 0.0).with_meta("nf", nf).with_meta("bound", r),
                    None => train_meta(file, &config.train, config.train.l2_lambda),
                };
                file.bounded = run.bounded.clone();
                out.file(dir.join(format!("{}.model", run.id)), io::render_model(&file, &prov.lines)?);
                out.file(
                    dir.join(format!("eval_{}.csv", run.id)),
                    io::render_eval_report(&run.eval, &prov.lines)?,
                );
                out.file(
                    dir.join(format!("trend_{}.csv", run.id)),
                    io::render_score_trend(&run.trend, &prov.lines)?,
                );
            }
            let summary = serde_json::json!({
                "provenance": prov.lines,
                "comparison": cmp.summary(),
            });
            out.file(dir.join("summary.json"), io::render_json(&summary)?);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    Ok(out)
}

fn opt(v: Option<i64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli).and_then(Outputs::commit) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("driftguard: {e}");
            exit_code(&e)
        }
    }
}
