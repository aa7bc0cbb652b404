//! Command-line surface.
//!
//! Every subcommand reads its inputs, does its work, writes its artifact
//! through a temporary file that is renamed into place, and prints one
//! summary line. Failures print a single JSON object on stderr and map to
//! exit code 2 (configuration), 3 (data) or 4 (numerical).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::corpus::{clean, load_corpus, synthesize, write_corpus, SynthConfig, TrafficMatrix};
use crate::error::Error;
use crate::evaluation::{evaluate, sweep_seasonality, Split};
use crate::forecaster::{ForecastMode, ModelKind, TrafficForecaster};
use crate::models::{fit, read_model, write_model, ModelSpec, TrainedModel};

const DEFAULT_GRID: [usize; 7] = [24, 48, 72, 96, 120, 144, 168];

#[derive(Debug, Parser)]
#[command(
    name = "blockreg",
    version,
    about = "Per-station hourly traffic forecasting with a single shared linear model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus CSV
    Synth,
    /// Drop stations with missing, negative or non-finite hours
    Clean,
    /// Fit a model on the training range and write it as JSON
    Train,
    /// Forecast the test range of every station with a saved model
    Forecast,
    /// Fit (or load) a model and score it per station
    Eval,
    /// Score the block model over a grid of seasonalities
    Sweep,
}

/// Flags shared by all subcommands. Unset flags fall back to the `--config`
/// file, then to the built-in defaults shown in the help text.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Input corpus CSV (bs_id,hour,volume); for `synth`, an optional generator JSON
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output file; `.csv` selects CSV for reports, anything else JSON
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Model JSON to read (`forecast`, `eval`)
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Model kind [default: br]
    #[arg(long, global = true, value_enum)]
    pub kind: Option<ModelKind>,
    /// Seasonal lag; the differencing order for br and sa [default: 24]
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Window size [default: 3 for br, 72 for lr]
    #[arg(long, global = true)]
    pub w: Option<usize>,
    /// Autoregressive order for sa [default: 2]
    #[arg(long, global = true)]
    pub ar: Option<usize>,
    /// Moving-average order for sa [default: 1]
    #[arg(long, global = true)]
    pub ma: Option<usize>,
    /// Hours used for training [default: 240]
    #[arg(long, global = true)]
    pub train_hours: Option<usize>,
    /// Hours forecast and scored after the training range [default: 96]
    #[arg(long, global = true)]
    pub test_hours: Option<usize>,
    /// Forecast mode [default: one_step]
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ForecastMode>,
    /// Seed for the generator; recorded in reports [default: 1]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core [default: 0]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with any of the flag values (snake_case keys)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated seasonalities for `sweep` [default: 24,48,72,96,120,144,168]
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
}

/// Values that may come from a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    model: Option<PathBuf>,
    kind: Option<ModelKind>,
    m: Option<usize>,
    w: Option<usize>,
    ar: Option<usize>,
    ma: Option<usize>,
    train_hours: Option<usize>,
    test_hours: Option<usize>,
    mode: Option<ForecastMode>,
    seed: Option<u64>,
    threads: Option<usize>,
    grid: Option<Vec<usize>>,
    synth: Option<SynthConfig>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub spec: ModelSpec,
    pub split: Split,
    pub mode: ForecastMode,
    pub seed: u64,
    pub threads: usize,
    pub grid: Vec<usize>,
    pub synth: Option<SynthConfig>,
}

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(e) if e.is_numerical() => 4,
            CliError::Run(
                Error::InvalidConfig(_)
                | Error::InvalidGrid(_)
                | Error::SeasonalityTooLarge { .. }
                | Error::WindowTooLarge { .. }
                | Error::InsufficientSamples { .. },
            ) => 2,
            CliError::Run(_) => 3,
        }
    }

    fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "numerical",
            _ => "data",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => m.clone(),
            CliError::Run(e) => e.to_string(),
        }
    }

    /// The single JSON line printed on stderr.
    pub fn json_line(&self) -> String {
        serde_json::json!({
            "error": self.category(),
            "exit_code": self.exit_code(),
            "message": self.message(),
        })
        .to_string()
    }
}

impl RunConfig {
    /// Merges flags over the config file over the defaults.
    pub fn resolve(command: Command, opts: Options) -> Result<RunConfig, CliError> {
        let file = match &opts.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let kind = opts.kind.or(file.kind).unwrap_or(ModelKind::Br);
        let defaults = ModelSpec::default_for(kind);
        let spec = ModelSpec {
            kind,
            m: opts.m.or(file.m).unwrap_or(defaults.m),
            w: opts.w.or(file.w).unwrap_or(defaults.w),
            ar: opts.ar.or(file.ar).unwrap_or(defaults.ar),
            ma: opts.ma.or(file.ma).unwrap_or(defaults.ma),
        };
        let split = Split {
            train_hours: opts
                .train_hours
                .or(file.train_hours)
                .unwrap_or(Split::default().train_hours),
            test_hours: opts
                .test_hours
                .or(file.test_hours)
                .unwrap_or(Split::default().test_hours),
        };
        Ok(RunConfig {
            command,
            input: opts.input.or(file.input),
            output: opts.output.or(file.output),
            model: opts.model.or(file.model),
            spec,
            split,
            mode: opts.mode.or(file.mode).unwrap_or(ForecastMode::OneStep),
            seed: opts.seed.or(file.seed).unwrap_or(1),
            threads: opts.threads.or(file.threads).unwrap_or(0),
            grid: opts.grid.or(file.grid).unwrap_or_else(|| DEFAULT_GRID.to_vec()),
            synth: file.synth,
        })
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.json_line());
            return err.exit_code();
        }
    };
    let outcome = RunConfig::resolve(cli.command, cli.opts).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(err) => {
            eprintln!("{}", err.json_line());
            err.exit_code()
        }
    }
}

/// Executes a resolved configuration and returns the summary line.
pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.command {
        Command::Synth => run_synth(cfg),
        Command::Clean => run_clean(cfg),
        Command::Train => run_train(cfg),
        Command::Forecast => run_forecast(cfg),
        Command::Eval => run_eval(cfg),
        Command::Sweep => run_sweep(cfg),
    })
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes through a temporary file in the target directory, then renames it.
fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut File>) -> crate::Result<()>,
) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Loads a corpus and drops faulty stations. Returns the matrix and the
/// number of stations dropped.
fn load_clean(path: &Path) -> Result<(TrafficMatrix, usize), CliError> {
    let raw = load_corpus(path)?;
    let t = clean(&raw)?;
    Ok((t.clone(), raw.bs_ids.len() - t.n_bs()))
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_model(std::io::BufReader::new(file))?)
}

fn run_synth(cfg: &RunConfig) -> Result<String, CliError> {
    let out = required(&cfg.output, "output")?;
    let mut synth = match &cfg.input {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => cfg.synth.clone().unwrap_or_default(),
    };
    synth.seed = cfg.seed;
    let t = synthesize(&synth)?;
    write_atomic(out, |w| write_corpus(&t, w))?;
    Ok(format!(
        "synth: {} stations x {} hours (seed {}) -> {}",
        t.n_bs(),
        t.n_hours(),
        synth.seed,
        out.display()
    ))
}

fn run_clean(cfg: &RunConfig) -> Result<String, CliError> {
    let input = required(&cfg.input, "input")?;
    let out = required(&cfg.output, "output")?;
    let (t, dropped) = load_clean(input)?;
    write_atomic(out, |w| write_corpus(&t, w))?;
    Ok(format!(
        "clean: kept {} stations, dropped {dropped} -> {}",
        t.n_bs(),
        out.display()
    ))
}

fn run_train(cfg: &RunConfig) -> Result<String, CliError> {
    let input = required(&cfg.input, "input")?;
    let out = required(&cfg.output, "output")?;
    let (t, _) = load_clean(input)?;
    if cfg.split.train_hours == 0 || cfg.split.train_hours > t.n_hours() {
        return Err(CliError::Config(format!(
            "--train-hours {} must be between 1 and the corpus length {}",
            cfg.split.train_hours,
            t.n_hours()
        )));
    }
    let (model, diagnostics) = fit(&cfg.spec, &t, cfg.split.train_hours)?;
    write_atomic(out, |w| write_model(&model, w))?;
    let mut line = format!("train: {} with {} parameters", model.kind(), model.params());
    match (&model, diagnostics) {
        (_, Some(d)) => line.push_str(&format!(
            ", cost {:.6e} after {} iterations",
            d.final_cost, d.iterations
        )),
        (TrainedModel::Sa(sa), None) => line.push_str(&format!(", {} stations failed", sa.failed.len())),
        _ => {}
    }
    line.push_str(&format!(" -> {}", out.display()));
    Ok(line)
}

fn run_forecast(cfg: &RunConfig) -> Result<String, CliError> {
    let input = required(&cfg.input, "input")?;
    let out = required(&cfg.output, "output")?;
    let model = load_model(required(&cfg.model, "model")?)?;
    let (t, _) = load_clean(input)?;
    let start = t.start_hour() + cfg.split.train_hours as u64;
    let k = cfg.split.test_hours;

    let mut series = Vec::with_capacity(t.n_bs());
    let mut skipped = 0;
    for id in t.bs_ids() {
        match model.forecast_horizon(&t, id, start, k, cfg.mode) {
            Ok(s) => series.push(s),
            Err(Error::UnknownBs(_)) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    write_atomic(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Parse {
            line: 0,
            message: e.to_string(),
        };
        csv.write_record(["bs_id", "hour", "actual", "forecast", "mode"])
            .map_err(io)?;
        for s in &series {
            for (i, (hour, f)) in s.hours.iter().zip(&s.forecast).enumerate() {
                let actual = s.actual.as_ref().map(|a| a[i].to_string()).unwrap_or_default();
                csv.write_record([
                    s.bs_id.as_str(),
                    &hour.to_string(),
                    &actual,
                    &f.to_string(),
                    &s.mode.to_string(),
                ])
                .map_err(io)?;
            }
        }
        csv.flush().map_err(|e| Error::io(out, e))
    })?;
    Ok(format!(
        "forecast: {} stations x {k} hours ({}), {skipped} skipped -> {}",
        series.len(),
        cfg.mode,
        out.display()
    ))
}

fn run_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let input = required(&cfg.input, "input")?;
    let (t, _) = load_clean(input)?;
    let model = match &cfg.model {
        Some(path) => load_model(path)?,
        None => {
            if cfg.split.train_hours + cfg.split.test_hours > t.n_hours() {
                return Err(Error::InvalidConfig(format!(
                    "split {}+{} hours exceeds the corpus length {}",
                    cfg.split.train_hours,
                    cfg.split.test_hours,
                    t.n_hours()
                ))
                .into());
            }
            fit(&cfg.spec, &t, cfg.split.train_hours)?.0
        }
    };
    let mut report = evaluate(&model, &t, cfg.split, cfg.mode)?;
    report.config.seed = Some(cfg.seed);
    if let Some(out) = &cfg.output {
        if is_csv(out) {
            write_atomic(out, |w| report.write_csv(w))?;
        } else {
            write_atomic(out, |w| report.write_json(w))?;
        }
    }
    Ok(format!(
        "eval: {} average NRMSE {:.4} over {} stations ({} excluded)",
        model.kind(),
        report.average,
        report.per_bs.len(),
        report.excluded_count
    ))
}

fn run_sweep(cfg: &RunConfig) -> Result<String, CliError> {
    let input = required(&cfg.input, "input")?;
    let (t, _) = load_clean(input)?;
    let w = if cfg.spec.kind == ModelKind::Br {
        cfg.spec.w
    } else {
        ModelSpec::default_for(ModelKind::Br).w
    };
    let result = sweep_seasonality(&t, &cfg.grid, w, cfg.split, cfg.mode)?;
    if let Some(out) = &cfg.output {
        if is_csv(out) {
            write_atomic(out, |w| result.write_csv(w))?;
        } else {
            write_atomic(out, |w| result.write_json(w))?;
        }
    }
    let best = match result.best() {
        Some(p) => format!(
            "best m={} average NRMSE {:.4}",
            p.m,
            p.average_nrmse.unwrap_or(f64::NAN)
        ),
        None => "no seasonality could be evaluated".to_string(),
    };
    Ok(format!("sweep: {} points, {best}", result.points.len()))
}
