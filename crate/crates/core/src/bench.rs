//! Benchmark configuration and the grid runner behind the `bench` and
//! `train` commands.
//!
//! # Configuration
//!
//! Flat `key = value` lines; `#` starts a comment line. Lists are
//! comma-separated. Exactly one of `data` or `synthetic` is required.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `data` | | CSV file with a header row |
//! | `synthetic` | | `damped_rotation`, `sinusoid_ar` or `random_walk` |
//! | `synth_len` | 4096 | synthetic series length |
//! | `synth_channels` | 4 | synthetic channel count |
//! | `synth_seed` | 0 | synthetic generator seed |
//! | `windows` | 16, 32 | look-back lengths `P` |
//! | `horizons` | 4, 8 | forecast lengths `H` |
//! | `variant` | all eight | models to train |
//! | `persistence` | true | add persistence rows |
//! | `train_ratio` | 0.8 | chronological split point |
//! | `steps` | 2000 | optimizer steps per run |
//! | `batch_size` | 32 | minibatch size |
//! | `lr` | 3e-4 | Adam learning rate |
//! | `lambda_lyap` | 0.1 | Lyapunov hinge weight |
//! | `eval_every` | 0 | full-split evaluation cadence (0: end only) |
//! | `spectral_log_every` | 100 | snapshot cadence |
//! | `seed` | 0 | initialisation and sampling seed |
//! | `rho_max` | 0.99 | spectral upper bound |
//! | `rho_min` | 0 | spectral lower bound |
//! | `rank` | 16 | low-rank variant rank |
//! | `mlp_hidden` | 16 | hidden width of the spectral MLP |
//! | `d_model` | 32 | latent width |
//! | `n_patches` | 4 | encoder patches |
//! | `attention` | true | encoder self-attention layer |
//! | `ssm_hidden` | 32 | SSM state width |
//! | `ssm_diagonal` | false | restrict SSM updates to a diagonal `A` |
//! | `output` | `bench_out` | output directory |
//! | `workers` | 1 | concurrent runs (`KOOPMAN_WORKERS` overrides the default) |
//!
//! # Output layout
//!
//! ```text
//! <output>/summary.csv               variant,P,H,train_mse,train_mae,test_mse,test_mae,max_sv_final,status
//! <output>/spectra.csv               variant,backbone_tag,P,H,singular_value
//! <output>/history/<run>.csv         step,loss,mse,hinge,max_singular_value
//! <output>/checkpoints/<run>.ckpt    key-value checkpoint
//! ```
//!
//! `<run>` is `<variant>_P<P>_H<H>`. Rows are ordered by the configured
//! variant order, then `P`, then `H`, with persistence rows last.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::persistence_forecast;
use crate::data::{load_csv, synthesize_series, Series, SynthKind, WindowDataset, DEFAULT_TRAIN_RATIO};
use crate::diagnostics::{export_spectra, lyapunov_certificate_check, RunSpectrum};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::training::{evaluate_with, train, Metrics, RunHistory, TrainConfig};

/// Desk-scale grid used when `windows` or `horizons` is not given.
pub const DEFAULT_WINDOWS: [usize; 2] = [16, 32];
pub const DEFAULT_HORIZONS: [usize; 2] = [4, 8];

/// Environment variable that sets the default worker count.
pub const WORKERS_ENV: &str = "KOOPMAN_WORKERS";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic {
        kind: SynthKind,
        len: usize,
        channels: usize,
        seed: u64,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Series> {
        match self {
            DataSource::Csv(p) => load_csv(p),
            DataSource::Synthetic {
                kind,
                len,
                channels,
                seed,
            } => synthesize_series(*kind, *len, *channels, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub data: DataSource,
    pub windows: Vec<usize>,
    pub horizons: Vec<usize>,
    pub variants: Vec<ModelKind>,
    pub persistence: bool,
    pub train_ratio: f64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub output: PathBuf,
    pub workers: usize,
}

/// Every key [`parse_config`] accepts.
pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "synthetic",
    "synth_len",
    "synth_channels",
    "synth_seed",
    "windows",
    "horizons",
    "variant",
    "persistence",
    "train_ratio",
    "steps",
    "batch_size",
    "lr",
    "lambda_lyap",
    "eval_every",
    "spectral_log_every",
    "seed",
    "rho_max",
    "rho_min",
    "rank",
    "mlp_hidden",
    "d_model",
    "n_patches",
    "attention",
    "ssm_hidden",
    "ssm_diagonal",
    "output",
    "workers",
];

/// Accumulates keys before the required ones are known to be present.
#[derive(Clone, Debug)]
pub struct ConfigBuilder {
    csv: Option<PathBuf>,
    synthetic: Option<SynthKind>,
    synth_len: usize,
    synth_channels: usize,
    synth_seed: u64,
    windows: Option<Vec<usize>>,
    horizons: Option<Vec<usize>>,
    variants: Vec<ModelKind>,
    persistence: bool,
    train_ratio: f64,
    train: TrainConfig,
    model: ModelConfig,
    output: PathBuf,
    workers: usize,
    seen: Vec<(String, usize)>,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        let workers = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&w: &usize| w > 0)
            .unwrap_or(1);
        Self {
            csv: None,
            synthetic: None,
            synth_len: 4096,
            synth_channels: 4,
            synth_seed: 0,
            windows: None,
            horizons: None,
            variants: ModelKind::ALL.to_vec(),
            persistence: true,
            train_ratio: DEFAULT_TRAIN_RATIO,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            output: PathBuf::from("bench_out"),
            workers,
            seen: Vec::new(),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, raw: &str, what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: expected {what}, got `{raw}`")))
}

fn list<T: std::str::FromStr>(key: &str, raw: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s, what))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("key `{key}`: list is empty")));
    }
    Ok(items)
}

impl ConfigBuilder {
    /// Sets one key. `line` is the source line for duplicate reports; keys
    /// set with `line = 0` (command-line overrides) replace earlier values.
    pub fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<()> {
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        if line > 0 {
            if let Some((_, first)) = self.seen.iter().find(|(k, _)| k == key) {
                return Err(Error::Config(format!(
                    "duplicate key `{key}` on lines {first} and {line}"
                )));
            }
            self.seen.push((key.to_string(), line));
        }
        let raw = raw.trim();
        match key {
            "data" => self.csv = Some(PathBuf::from(raw)),
            "synthetic" => {
                self.synthetic = Some(
                    raw.parse()
                        .map_err(|_| Error::Config(format!("key `synthetic`: unknown series `{raw}`")))?,
                )
            }
            "synth_len" => self.synth_len = value(key, raw, "a count")?,
            "synth_channels" => self.synth_channels = value(key, raw, "a count")?,
            "synth_seed" => self.synth_seed = value(key, raw, "an integer seed")?,
            "windows" => self.windows = Some(list(key, raw, "a list of counts")?),
            "horizons" => self.horizons = Some(list(key, raw, "a list of counts")?),
            "variant" => {
                let mut kinds = Vec::new();
                for name in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let kind: ModelKind = name
                        .parse()
                        .map_err(|_| Error::Config(format!("key `variant`: unknown variant `{name}`")))?;
                    if !kinds.contains(&kind) {
                        kinds.push(kind);
                    }
                }
                if kinds.is_empty() {
                    return Err(Error::Config("key `variant`: list is empty".into()));
                }
                self.variants = kinds;
            }
            "persistence" => self.persistence = value(key, raw, "true or false")?,
            "train_ratio" => self.train_ratio = value(key, raw, "a number")?,
            "steps" => self.train.steps = value(key, raw, "a count")?,
            "batch_size" => self.train.batch_size = value(key, raw, "a count")?,
            "lr" => self.train.lr = value(key, raw, "a number")?,
            "lambda_lyap" => self.train.lambda_lyap = value(key, raw, "a number")?,
            "eval_every" => self.train.eval_every = value(key, raw, "a count")?,
            "spectral_log_every" => self.train.spectral_log_every = value(key, raw, "a count")?,
            "seed" => self.train.seed = value(key, raw, "an integer seed")?,
            "rho_max" => self.model.operator.rho_max = value(key, raw, "a number")?,
            "rho_min" => self.model.operator.rho_min = value(key, raw, "a number")?,
            "rank" => self.model.operator.rank = value(key, raw, "a count")?,
            "mlp_hidden" => self.model.operator.mlp_hidden = value(key, raw, "a count")?,
            "d_model" => self.model.d_model = value(key, raw, "a count")?,
            "n_patches" => self.model.n_patches = value(key, raw, "a count")?,
            "attention" => self.model.use_attention = value(key, raw, "true or false")?,
            "ssm_hidden" => self.model.ssm_hidden = value(key, raw, "a count")?,
            "ssm_diagonal" => self.model.ssm_diagonal = value(key, raw, "true or false")?,
            "output" => self.output = PathBuf::from(raw),
            "workers" => self.workers = value(key, raw, "a count")?,
            _ => unreachable!("key list checked above"),
        }
        Ok(())
    }

    pub fn build(self) -> Result<BenchmarkConfig> {
        let data = match (self.csv, self.synthetic) {
            (Some(p), None) => DataSource::Csv(p),
            (None, Some(kind)) => DataSource::Synthetic {
                kind,
                len: self.synth_len,
                channels: self.synth_channels,
                seed: self.synth_seed,
            },
            (None, None) => return Err(Error::Config("missing required key `data` (or `synthetic`)".into())),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "keys `data` and `synthetic` are mutually exclusive".into(),
                ))
            }
        };
        let windows = self.windows.unwrap_or_else(|| DEFAULT_WINDOWS.to_vec());
        let horizons = self.horizons.unwrap_or_else(|| DEFAULT_HORIZONS.to_vec());
        if windows.contains(&0) || horizons.contains(&0) {
            return Err(Error::Config(
                "keys `windows`/`horizons`: values must be positive".into(),
            ));
        }
        if self.workers == 0 {
            return Err(Error::Config("key `workers`: must be at least 1".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config(format!(
                "key `train_ratio`: must lie in (0, 1), got {}",
                self.train_ratio
            )));
        }
        let op = &self.model.operator;
        if !(op.rho_max > 0.0 && op.rho_max < 1.0 && op.rho_min >= 0.0 && op.rho_min < op.rho_max) {
            return Err(Error::Config(format!(
                "keys `rho_min`/`rho_max`: need 0 <= rho_min < rho_max < 1, got {} and {}",
                op.rho_min, op.rho_max
            )));
        }
        self.train.validate()?;
        Ok(BenchmarkConfig {
            data,
            windows,
            horizons,
            variants: self.variants,
            persistence: self.persistence,
            train_ratio: self.train_ratio,
            train: self.train,
            model: self.model,
            output: self.output,
            workers: self.workers,
        })
    }
}

/// Parses configuration text into a builder, so overrides can still be
/// applied before [`ConfigBuilder::build`].
pub fn parse_config_builder(text: &str) -> Result<ConfigBuilder> {
    let mut b = ConfigBuilder::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
        b.set(k.trim(), v, idx + 1)?;
    }
    Ok(b)
}

pub fn parse_config_str(text: &str) -> Result<BenchmarkConfig> {
    parse_config_builder(text)?.build()
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<BenchmarkConfig> {
    parse_config_str(&fs::read_to_string(path)?)
}

/// Outcome of one `(model, P, H)` run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub window: usize,
    pub horizon: usize,
    pub train: Metrics,
    pub test: Metrics,
    pub max_sv_final: Option<f64>,
    pub status: RunStatus,
    pub history: Option<RunHistory>,
    pub model: Option<Model>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Diverged { step: usize },
    InvariantViolated(String),
    Error(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }

    pub fn tag(&self) -> String {
        match self {
            RunStatus::Ok => "ok".into(),
            RunStatus::Diverged { step } => format!("diverged@{step}"),
            RunStatus::InvariantViolated(what) => format!("invariant:{what}"),
            RunStatus::Error(msg) => format!("error:{}", msg.replace([',', '\n'], ";")),
        }
    }
}

impl RunResult {
    pub fn run_id(&self) -> String {
        format!("{}_P{}_H{}", self.name, self.window, self.horizon)
    }
}

pub const SUMMARY_HEADER: &str = "variant,P,H,train_mse,train_mae,test_mse,test_mae,max_sv_final,status";

/// Summary table as CSV text.
pub fn summary_csv(results: &[RunResult]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in results {
        let sv = r.max_sv_final.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.name,
            r.window,
            r.horizon,
            r.train.mse,
            r.train.mae,
            r.test.mse,
            r.test.mae,
            sv,
            r.status.tag()
        );
    }
    out
}

/// Post-training invariants: bounded spectrum, orthonormal factors and a
/// passing identity-metric Lyapunov certificate for every ODO operator.
fn check_invariants(model: &Model, hist: &RunHistory, rho_max: f64) -> Option<String> {
    let Model::Koopman(f) = model else {
        return None;
    };
    if !f.koop.variant().is_odo() {
        return None;
    }
    if let Some(s) = hist.snapshots.iter().find(|s| !(s.max_sv < rho_max)) {
        return Some(format!("max_sv {} at step {}", s.max_sv, s.step));
    }
    if let Some(r) = hist.records.iter().find(|r| !(r.ortho_defect < 1e-10)) {
        return Some(format!("orthonormality defect {} at step {}", r.ortho_defect, r.step));
    }
    let k = f.koop.materialize();
    match lyapunov_certificate_check(&k, &Matrix::identity(k.rows()), 0.0) {
        Ok(c) if c.holds => None,
        Ok(c) => Some(format!("certificate max_eig {}", c.max_eig)),
        Err(e) => Some(format!("certificate {e}")),
    }
}

/// Initialises and trains one model on a prepared dataset.
pub fn run_single(
    kind: ModelKind,
    data: &WindowDataset,
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> RunResult {
    let mut result = RunResult {
        name: kind.name().to_string(),
        window: data.window,
        horizon: data.horizon,
        train: Metrics::default(),
        test: Metrics::default(),
        max_sv_final: None,
        status: RunStatus::Ok,
        history: None,
        model: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let outcome = Model::init(kind, data.window, data.horizon, data.channels(), model_cfg, &mut rng)
        .and_then(|m| train(&m, data, train_cfg));
    match outcome {
        Ok((model, hist)) => {
            result.train = hist.final_train;
            result.test = hist.final_test.unwrap_or_default();
            result.max_sv_final = hist.final_snapshot().map(|s| s.max_sv);
            result.status = match (
                &hist.failure,
                check_invariants(&model, &hist, model_cfg.operator.rho_max),
            ) {
                (Some(f), _) => RunStatus::Diverged { step: f.step },
                (None, Some(what)) => RunStatus::InvariantViolated(what),
                (None, None) => RunStatus::Ok,
            };
            result.history = Some(hist);
            result.model = Some(model);
        }
        Err(e) => result.status = RunStatus::Error(e.to_string()),
    }
    result
}

/// Persistence evaluated on both splits, no training.
pub fn run_persistence(data: &WindowDataset) -> RunResult {
    let h = data.horizon;
    let eval = |w: &[crate::data::Window]| evaluate_with(w, |x| persistence_forecast(x, h));
    let (train, test) = match (eval(&data.train), eval(&data.test)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            return RunResult {
                name: "persistence".into(),
                window: data.window,
                horizon: h,
                train: Metrics::default(),
                test: Metrics::default(),
                max_sv_final: None,
                status: RunStatus::Error(e.to_string()),
                history: None,
                model: None,
            }
        }
    };
    RunResult {
        name: "persistence".into(),
        window: data.window,
        horizon: h,
        train,
        test,
        max_sv_final: None,
        status: RunStatus::Ok,
        history: None,
        model: None,
    }
}

/// Everything a benchmark produced.
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub results: Vec<RunResult>,
    pub summary: String,
    pub spectra: String,
}

impl BenchReport {
    /// True when any run diverged, errored or violated an invariant.
    pub fn any_failed(&self) -> bool {
        self.results.iter().any(|r| !r.status.is_ok())
    }

    pub fn get(&self, name: &str, window: usize, horizon: usize) -> Option<&RunResult> {
        self.results
            .iter()
            .find(|r| r.name == name && r.window == window && r.horizon == horizon)
    }
}

/// Runs the grid in memory without touching the filesystem.
pub fn run_grid(cfg: &BenchmarkConfig) -> Result<BenchReport> {
    let series = cfg.data.load()?;
    let mut datasets = Vec::new();
    for &p in &cfg.windows {
        for &h in &cfg.horizons {
            datasets.push(WindowDataset::build(&series, p, h, cfg.train_ratio)?);
        }
    }
    let jobs: Vec<(ModelKind, usize)> = cfg
        .variants
        .iter()
        .flat_map(|&k| (0..datasets.len()).map(move |i| (k, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let mut results: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, i)| run_single(kind, &datasets[i], &cfg.train, &cfg.model))
            .collect()
    });
    if cfg.persistence {
        results.extend(datasets.iter().map(run_persistence));
    }

    let spectra: Vec<RunSpectrum> = results
        .iter()
        .filter_map(|r| {
            let snap = r.history.as_ref()?.final_snapshot()?.clone();
            let backbone = if r.name == "ssm" { "ssm" } else { "patch" };
            Some(RunSpectrum {
                variant: r.name.clone(),
                backbone: backbone.into(),
                window: r.window,
                horizon: r.horizon,
                snapshot: snap,
            })
        })
        .collect();
    Ok(BenchReport {
        summary: summary_csv(&results),
        spectra: export_spectra(&spectra),
        results,
    })
}

/// Runs the grid and writes the output layout described in the module docs.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchReport> {
    let report = run_grid(cfg)?;
    write_report(&report, &cfg.output)?;
    Ok(report)
}

pub fn write_report(report: &BenchReport, dir: &Path) -> Result<()> {
    let hist_dir = dir.join("history");
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&hist_dir)?;
    fs::create_dir_all(&ckpt_dir)?;
    fs::write(dir.join("summary.csv"), &report.summary)?;
    fs::write(dir.join("spectra.csv"), &report.spectra)?;
    for r in &report.results {
        if let Some(h) = &r.history {
            fs::write(hist_dir.join(format!("{}.csv", r.run_id())), h.to_csv())?;
        }
        if let Some(m) = &r.model {
            fs::write(ckpt_dir.join(format!("{}.ckpt", r.run_id())), m.to_checkpoint())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "synthetic = damped_rotation\nwindows = 16\nhorizons = 4\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.train.lr, 3e-4);
        assert_eq!(c.train.lambda_lyap, 0.1);
        assert_eq!(c.model.operator.rho_max, 0.99);
        assert_eq!(c.variants.len(), 8);
        assert_eq!((c.windows.clone(), c.horizons.clone()), (vec![16], vec![4]));
    }

    #[test]
    fn config_errors_name_the_key() {
        let err = parse_config_str(&format!("{MINIMAL}variant = frobnicate\n")).unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}windows = 32\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`windows`") && msg.contains("lines 2 and 4"), "{msg}");
        let err = parse_config_str(&format!("{MINIMAL}colour = blue\n")).unwrap_err();
        assert!(err.to_string().contains("`colour`"));
        let err = parse_config_str(&format!("{MINIMAL}steps = many\n")).unwrap_err();
        assert!(err.to_string().contains("`steps`"));
        let err = parse_config_str("windows = 16\n").unwrap_err();
        assert!(err.to_string().contains("`data`"));
        let grid = parse_config_str("synthetic = damped_rotation\n").unwrap();
        assert_eq!((grid.windows, grid.horizons), (vec![16, 32], vec![4, 8]));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut b = parse_config_builder(&format!("{MINIMAL}steps = 10\n")).unwrap();
        b.set("steps", "20", 0).unwrap();
        assert_eq!(b.build().unwrap().train.steps, 20);
    }

    #[test]
    fn grid_row_count_and_determinism() {
        let text =
            "synthetic = damped_rotation\nsynth_len = 200\nsynth_channels = 2\nwindows = 8, 12\nhorizons = 2, 3\n\
                    steps = 3\nbatch_size = 2\nd_model = 4\nrank = 2\nmlp_hidden = 3\nssm_hidden = 3\nworkers = 3\n";
        let c = parse_config_str(text).unwrap();
        let a = run_grid(&c).unwrap();
        assert_eq!(a.results.len(), 2 * 2 * 8 + 4);
        assert_eq!(a.summary.lines().count(), 1 + 36);
        assert!(!a.any_failed(), "{}", a.summary);
        let serial = BenchmarkConfig { workers: 1, ..c };
        let b = run_grid(&serial).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.spectra, b.spectra);
    }
}
