//! Command-line interface: argument definitions, run manifests and the
//! subcommand implementations behind the `driftcomp` binary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datagen::{gen_scenario, LoadSchedule, ProfileKind, ProfileSpec, ThermalModel, DEFAULT_WALK_COMPRESS};
use crate::datamodel::{load_scenario_csv, save_scenario_csv, windows_from_scenario, DEFAULT_RATE_HZ, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::eval::{evaluate_methods, format_table, label_models, write_plot_csv, write_report_csv};
use crate::models::{init_model, load_model, save_model, DriftModel, Family, ModelSpec};
use crate::pipeline::{stream_compensate, CalibrationMatrix, CompensatorState};
use crate::suite::{convergence, write_convergence_csv, ExperimentConfig};
use crate::training::{save_history, train_with_progress, TrainConfig};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FORMAT: &str = "driftcomp-manifest";

#[derive(Debug, Parser)]
#[command(name = "driftcomp", version, about = "Temperature-drift compensation for six-axis F/T sensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario CSV.
    Generate(GenerateArgs),
    /// Train one drift model on a labeled scenario.
    Train(TrainArgs),
    /// Score models against a scenario's ground truth.
    Evaluate(EvaluateArgs),
    /// Compensate frames streamed on standard input.
    Compensate(CompensateArgs),
    /// Run the full reproduction suite.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// chamber, heater, ice, walking or constant.
    #[arg(long)]
    pub profile: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the profile's default duration, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long = "rate-hz", default_value_t = DEFAULT_RATE_HZ)]
    pub rate_hz: f64,
    /// Walking time compression.
    #[arg(long)]
    pub compress: Option<f64>,
    /// Applied load: `none` or `gait`. Walking defaults to `gait`.
    #[arg(long)]
    pub load: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// lsm, mlp, mlp-seq, tcn or gru.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Hidden width; defaults to the family's width (GRU 32).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    /// Use every n-th window for training.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file; repeat for several methods.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Report CSV path; the table and plot data are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompensateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "paper-suite")]
    pub paper_suite: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long = "rate-hz", default_value_t = DEFAULT_RATE_HZ)]
    pub rate_hz: f64,
    #[arg(long, default_value_t = DEFAULT_WALK_COMPRESS)]
    pub compress: f64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Record of one command run, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub artifact_version: String,
    pub command: String,
    /// Arguments after the program name, as passed.
    pub argv: Vec<String>,
    /// Every flag after defaults were applied.
    pub flags: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, argv: &[String]) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            artifact_version: ARTIFACT_VERSION.into(),
            command: command.into(),
            argv: argv.to_vec(),
            flags: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn flag(&mut self, name: &str, v: impl Serialize) -> &mut Self {
        self.flags.insert(name.into(), serde_json::to_value(v).unwrap_or(Value::Null));
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("expected format `{MANIFEST_FORMAT}`, got `{}`", m.format)));
        }
        Ok(m)
    }
}

/// `out.csv` → `out.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

fn sibling(out: &Path, ext: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{ext}"))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Process standard streams, injectable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parses `argv` (without the program name) and runs the command. Returns
/// the process exit code.
pub fn main_with(argv: &[String], io: &mut Io<'_>) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("driftcomp".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(io.stdout, "{text}") } else { write!(io.stderr, "{text}") };
            return code;
        }
    };
    match run(cli, argv, io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: &[String], io: &mut Io<'_>) -> Result<i32> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, argv).map(|_| 0),
        Command::Train(a) => cmd_train(&a, argv, io).map(|_| 0),
        Command::Evaluate(a) => cmd_evaluate(&a, argv).map(|_| 0),
        Command::Compensate(a) => cmd_compensate(&a, io),
        Command::Report(a) => cmd_report(&a, argv, io).map(|_| 0),
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if m.command == "replay" {
                return Err(Error::Usage("a replay manifest cannot be replayed".into()));
            }
            let cli = Cli::try_parse_from(std::iter::once("driftcomp".to_string()).chain(m.argv.iter().cloned()))
                .map_err(|e| Error::Format(format!("manifest argv does not parse: {e}")))?;
            run(cli, &m.argv, io)
        }
    }
}

pub fn profile_from_args(a: &GenerateArgs) -> Result<ProfileSpec> {
    let mut spec = ProfileSpec::named(&a.profile, a.seed).map_err(|e| match e {
        Error::Config(m) => Error::Usage(m),
        e => e,
    })?;
    if let Some(c) = a.compress {
        match &mut spec.kind {
            ProfileKind::Walking { compress, plate_s, .. } => {
                *compress = c;
                spec.duration_s = 3.0 * *plate_s / c;
            }
            _ => return Err(Error::Usage("--compress applies only to the walking profile".into())),
        }
    }
    if let Some(d) = a.duration {
        spec.duration_s = d;
    }
    spec.validate()?;
    Ok(spec)
}

fn load_schedule(a: &GenerateArgs, spec: &ProfileSpec) -> Result<Option<LoadSchedule>> {
    let walking = matches!(spec.kind, ProfileKind::Walking { .. });
    match a.load.as_deref() {
        None if walking => Ok(Some(LoadSchedule::gait())),
        None | Some("none") => Ok(None),
        Some("gait") => Ok(Some(LoadSchedule::gait())),
        Some(other) => Err(Error::Usage(format!("unknown --load `{other}` (none, gait)"))),
    }
}

pub fn cmd_generate(a: &GenerateArgs, argv: &[String]) -> Result<()> {
    let spec = profile_from_args(a)?;
    let load = load_schedule(a, &spec)?;
    let s = gen_scenario(&spec, &ThermalModel::default(), a.rate_hz, load.as_ref())?;
    save_scenario_csv(&s, &a.out)?;
    let mut m = RunManifest::new("generate", argv);
    m.flag("profile", &a.profile)
        .flag("seed", a.seed)
        .flag("out", show(&a.out))
        .flag("duration", spec.duration_s)
        .flag("rate-hz", a.rate_hz)
        .flag("compress", a.compress)
        .flag("load", load.as_ref().map_or("none", |_| "gait"))
        .flag("spec", &spec)
        .flag("thermal", ThermalModel::default());
    m.seeds.insert("profile".into(), a.seed);
    m.outputs.push(show(&a.out));
    m.save(&manifest_path(&a.out))
}

pub fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        lr: a.lr,
        batch: a.batch,
        max_epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    }
}

pub fn cmd_train(a: &TrainArgs, argv: &[String], io: &mut Io<'_>) -> Result<()> {
    let family = Family::parse(&a.model).map_err(|e| Error::Usage(e.to_string()))?;
    if a.stride == 0 {
        return Err(Error::Usage("--stride must be at least 1".into()));
    }
    let hidden = a.hidden.unwrap_or(family.default_hidden());
    let spec = ModelSpec::new(family).with_window(a.window).with_hidden(hidden);
    let s = load_scenario_csv(&a.data)?;
    let set = windows_from_scenario(&s, a.window, a.stride)?;
    let cfg = train_config(a);
    let init = init_model(spec, a.seed)?;
    let report_every = (cfg.max_epochs / 10).max(1);
    let stderr = &mut *io.stderr;
    let outcome = train_with_progress(&init, &set, &cfg, |epoch, loss| {
        if epoch % report_every == 0 {
            let _ = writeln!(stderr, "epoch {epoch}: loss {loss:.6e}");
        }
    })?;
    save_model(&outcome.model, &a.out)?;
    let history = sibling(&a.out, "history.csv");
    save_history(&outcome.history, &history)?;
    writeln!(
        io.stdout,
        "{}: best loss {:.6e} at epoch {} ({} windows)",
        family.label(),
        outcome.best_loss,
        outcome.best_epoch,
        set.len()
    )?;

    let mut m = RunManifest::new("train", argv);
    m.flag("model", family.tag())
        .flag("data", show(&a.data))
        .flag("out", show(&a.out))
        .flag("seed", a.seed)
        .flag("window", a.window)
        .flag("hidden", hidden)
        .flag("lr", cfg.lr)
        .flag("batch", cfg.batch)
        .flag("epochs", cfg.max_epochs)
        .flag("stride", a.stride)
        .flag("optimizer", json!({"name": "adam", "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps}))
        .flag("best_epoch", outcome.best_epoch);
    m.seeds.insert("init".into(), a.seed);
    m.seeds.insert("shuffle".into(), cfg.seed);
    m.inputs.push(show(&a.data));
    m.outputs.extend([show(&a.out), show(&history)]);
    m.save(&manifest_path(&a.out))
}

fn load_calibration(p: Option<&PathBuf>) -> Result<CalibrationMatrix> {
    p.map_or_else(|| Ok(CalibrationMatrix::default()), |p| CalibrationMatrix::load(p))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes the report CSV at `out` plus `.txt` table and `.plot.csv` data.
fn write_evaluation(s: &crate::datamodel::Scenario, models: Vec<DriftModel>, calib: &CalibrationMatrix, out: &Path) -> Result<Vec<String>> {
    let (report, runs) = evaluate_methods(s, &label_models(models), calib)?;
    let table = sibling(out, "txt");
    let plot = sibling(out, "plot.csv");
    write_file(out, |w| write_report_csv(&report, w))?;
    write_file(&table, |w| Ok(w.write_all(format_table(&report).as_bytes())?))?;
    write_file(&plot, |w| write_plot_csv(s, &runs, w))?;
    Ok(vec![show(out), show(&table), show(&plot)])
}

pub fn cmd_evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let s = load_scenario_csv(&a.data)?;
    let calib = load_calibration(a.calib.as_ref())?;
    let models = a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let outputs = write_evaluation(&s, models, &calib, &a.out)?;
    let mut m = RunManifest::new("evaluate", argv);
    m.flag("data", show(&a.data))
        .flag("model", a.models.iter().map(|p| show(p)).collect::<Vec<_>>())
        .flag("out", show(&a.out))
        .flag("calib", a.calib.as_ref().map(|p| show(p)));
    m.inputs.push(show(&a.data));
    m.inputs.extend(a.models.iter().map(|p| show(p)));
    m.inputs.extend(a.calib.iter().map(|p| show(p)));
    m.outputs = outputs;
    m.save(&manifest_path(&a.out))
}

/// Exit code 3 when any row was skipped.
pub fn cmd_compensate(a: &CompensateArgs, io: &mut Io<'_>) -> Result<i32> {
    let model = Arc::new(load_model(&a.model)?);
    let calib = load_calibration(a.calib.as_ref())?;
    let mut state = CompensatorState::new(model, calib);
    let summary = stream_compensate(&mut state, &mut *io.stdin, &mut *io.stdout, &mut *io.stderr)?;
    if summary.skipped > 0 {
        writeln!(io.stderr, "{} row(s) skipped, {} compensated", summary.skipped, summary.rows)?;
        return Ok(3);
    }
    Ok(0)
}

/// Chamber convergence table, then heating, cooling and walking
/// comparisons, all from one seed.
pub fn cmd_report(a: &ReportArgs, argv: &[String], io: &mut Io<'_>) -> Result<()> {
    if !a.paper_suite {
        return Err(Error::Usage("report requires --paper-suite".into()));
    }
    fs::create_dir_all(&a.out)?;
    let tm = ThermalModel::default();
    let mut cfg = ExperimentConfig::new(a.seed);
    cfg.rate_hz = a.rate_hz;
    cfg.train.max_epochs = a.epochs;
    let mut outputs = Vec::new();

    let chamber = gen_scenario(&ProfileSpec::chamber(a.seed), &tm, a.rate_hz, None)?;
    let path = a.out.join("chamber.csv");
    save_scenario_csv(&chamber, &path)?;
    outputs.push(show(&path));
    writeln!(io.stdout, "training {} families on {} chamber frames", cfg.families.len(), chamber.len())?;
    let run = convergence(&chamber, &cfg)?;
    for (model, hist) in run.models.iter().zip(&run.histories) {
        let tag = model.family().tag();
        let mp = a.out.join(format!("model_{tag}.json"));
        let hp = a.out.join(format!("model_{tag}.history.csv"));
        save_model(model, &mp)?;
        save_history(hist, &hp)?;
        outputs.extend([show(&mp), show(&hp)]);
    }
    let conv = a.out.join("convergence.csv");
    write_file(&conv, |w| write_convergence_csv(&run.rows, a.seed, w))?;
    outputs.push(show(&conv));
    for r in &run.rows {
        writeln!(io.stdout, "{:8} held-out normalized RMSE {:.4}", r.family.label(), r.test_nrmse)?;
    }

    let scenarios = [
        ("heating", ProfileSpec::heater(a.seed + 100), None),
        ("cooling", ProfileSpec::ice(a.seed + 200), None),
        ("walking", ProfileSpec::walking(a.seed + 300, a.compress), Some(LoadSchedule::gait())),
    ];
    let calib = CalibrationMatrix::default();
    for (name, spec, load) in scenarios {
        let mut s = gen_scenario(&spec, &tm, a.rate_hz, load.as_ref())?;
        s.name = name.into();
        let data = a.out.join(format!("{name}.csv"));
        save_scenario_csv(&s, &data)?;
        outputs.push(show(&data));
        let rep = a.out.join(format!("report_{name}.csv"));
        outputs.extend(write_evaluation(&s, run.models.clone(), &calib, &rep)?);
        let table = fs::read_to_string(sibling(&rep, "txt"))?;
        writeln!(io.stdout, "\n{table}")?;
    }

    let mut m = RunManifest::new("report", argv);
    m.flag("paper-suite", true)
        .flag("out", show(&a.out))
        .flag("seed", a.seed)
        .flag("epochs", a.epochs)
        .flag("rate-hz", a.rate_hz)
        .flag("compress", a.compress)
        .flag("experiment", &cfg);
    m.seeds.insert("chamber".into(), a.seed);
    m.seeds.insert("heating".into(), a.seed + 100);
    m.seeds.insert("cooling".into(), a.seed + 200);
    m.seeds.insert("walking".into(), a.seed + 300);
    m.outputs = outputs;
    m.save(&a.out.join("report.manifest.json"))
}
