//! Series ingestion, synthetic generators, windowing, chronological split
//! and z-score normalisation.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Default train fraction of the chronological split.
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// A multivariate series, one row per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Matrix,
    pub names: Vec<String>,
}

impl Series {
    pub fn new(values: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::InvalidArgument(format!(
                "{} channel names for {} channels",
                names.len(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("series values".into()));
        }
        Ok(Self { values, names })
    }

    /// Channels named `x0, x1, …`.
    pub fn unnamed(values: Matrix) -> Result<Self> {
        let names = (0..values.cols()).map(|c| format!("x{c}")).collect();
        Self::new(values, names)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    /// Writes the series as CSV: a header of channel names, then one row per
    /// time step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names).map_err(csv_io)?;
        for t in 0..self.len() {
            w.write_record(self.values.row(t).iter().map(|v| v.to_string()))
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a CSV file with a header row and one numeric column per channel.
/// A leading column named `time` is skipped.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Series> {
    let path = path.as_ref();
    let data_err = |message: String| Error::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(data_err("empty file".into()));
    }
    let skip_time = header.get(0).is_some_and(|h| h.eq_ignore_ascii_case("time"));
    let first = usize::from(skip_time);
    let names: Vec<String> = header.iter().skip(first).map(str::to_string).collect();
    if names.is_empty() {
        return Err(data_err("no data columns".into()));
    }

    let mut values = Vec::new();
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        // line 1 is the header
        let line = idx + 2;
        let record = record.map_err(|e| data_err(format!("row {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(data_err(format!(
                "row {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        for (col, cell) in record.iter().enumerate().skip(first) {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                data_err(format!(
                    "row {line}, column `{}`: non-numeric cell `{cell}`",
                    &header[col]
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(data_err("no data rows".into()));
    }
    Series::new(Matrix::from_vec(rows, names.len(), values)?, names)
}

/// Synthetic series families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// `x_{t+1} = ρ R(θ) x_t + ε_t` with 2×2 rotation blocks.
    DampedRotation,
    /// Two sinusoids per channel plus AR(1) noise.
    SinusoidAr,
    /// Cumulative Gaussian steps.
    RandomWalk,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::DampedRotation => "damped_rotation",
            SynthKind::SinusoidAr => "sinusoid_ar",
            SynthKind::RandomWalk => "random_walk",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "damped_rotation" => Ok(SynthKind::DampedRotation),
            "sinusoid_ar" => Ok(SynthKind::SinusoidAr),
            "random_walk" => Ok(SynthKind::RandomWalk),
            _ => Err(Error::InvalidArgument(format!("unknown synthetic series `{s}`"))),
        }
    }
}

/// Generator knobs; the defaults are what [`synthesize_series`] uses.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    /// Contraction factor of the damped rotation.
    pub rho: f64,
    /// Rotation angle per step, radians.
    pub theta: f64,
    /// Standard deviation of the additive noise (rotation innovations, AR
    /// innovations, random-walk steps).
    pub noise: f64,
    /// AR(1) coefficient of the sinusoid noise.
    pub ar_coef: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            rho: 0.97,
            theta: 0.2,
            noise: 0.01,
            ar_coef: 0.8,
        }
    }
}

impl SynthOptions {
    fn for_kind(kind: SynthKind) -> Self {
        match kind {
            SynthKind::DampedRotation => Self::default(),
            SynthKind::SinusoidAr => Self {
                noise: 0.1,
                ..Self::default()
            },
            SynthKind::RandomWalk => Self {
                noise: 1.0,
                ..Self::default()
            },
        }
    }
}

/// Minimum series length accepted by the generators.
pub const MIN_SYNTH_LEN: usize = 64;

pub fn synthesize_series(kind: SynthKind, len: usize, channels: usize, seed: u64) -> Result<Series> {
    synthesize_series_with(kind, len, channels, seed, &SynthOptions::for_kind(kind))
}

/// Sinusoid frequency bins `(k1, k2)` for a series of length `len`; the
/// second sits near `√5·k1` so the two tones share no short common period.
pub fn sinusoid_bins(len: usize) -> (usize, usize) {
    let k1 = (len / 32).max(1);
    let mut k2 = ((k1 as f64) * 5f64.sqrt()).round() as usize;
    if k2 == k1 {
        k2 += 1;
    }
    (k1, k2.min(len / 2 - 1))
}

pub fn synthesize_series_with(
    kind: SynthKind,
    len: usize,
    channels: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Series> {
    if len < MIN_SYNTH_LEN {
        return Err(Error::InvalidArgument(format!(
            "synthetic series need T >= {MIN_SYNTH_LEN}, got {len}"
        )));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("at least one channel is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || rng.sample::<f64, _>(StandardNormal);
    let mut values = Matrix::zeros(len, channels);
    match kind {
        SynthKind::DampedRotation => {
            if !channels.is_multiple_of(2) {
                return Err(Error::InvalidArgument(format!(
                    "damped_rotation needs an even channel count, got {channels}"
                )));
            }
            let (c, s) = (opts.theta.cos(), opts.theta.sin());
            // start from the stationary distribution when there is noise
            let init_scale = if opts.noise > 0.0 {
                opts.noise / (1.0 - opts.rho * opts.rho).sqrt()
            } else {
                1.0
            };
            for ch in 0..channels {
                values[(0, ch)] = init_scale * gauss();
            }
            for t in 1..len {
                for blk in (0..channels).step_by(2) {
                    let (a, b) = (values[(t - 1, blk)], values[(t - 1, blk + 1)]);
                    values[(t, blk)] = opts.rho * (c * a - s * b);
                    values[(t, blk + 1)] = opts.rho * (s * a + c * b);
                }
                if opts.noise > 0.0 {
                    for ch in 0..channels {
                        values[(t, ch)] += opts.noise * gauss();
                    }
                }
            }
        }
        SynthKind::SinusoidAr => {
            let (k1, k2) = sinusoid_bins(len);
            let (f1, f2) = (k1 as f64 / len as f64, k2 as f64 / len as f64);
            for ch in 0..channels {
                let phase1 = 2.0 * PI * (ch as f64 + 1.0) / (channels as f64 + 1.0);
                let phase2 = 0.5 * phase1 + 0.3;
                let mut ar = 0.0;
                for t in 0..len {
                    if opts.noise > 0.0 {
                        ar = opts.ar_coef * ar + opts.noise * gauss();
                    }
                    let tt = t as f64;
                    values[(t, ch)] =
                        (2.0 * PI * f1 * tt + phase1).sin() + 0.5 * (2.0 * PI * f2 * tt + phase2).sin() + ar;
                }
            }
        }
        SynthKind::RandomWalk => {
            for t in 1..len {
                for ch in 0..channels {
                    values[(t, ch)] = values[(t - 1, ch)] + opts.noise * gauss();
                }
            }
        }
    }
    Series::unnamed(values)
}

/// One `(X, Y)` training pair; `start` is the series row of `X`'s first row.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub x: Matrix,
    pub y: Matrix,
}

/// All stride-1 windows: `X` covers rows `t..t+P`, `Y` rows `t+P..t+P+H`.
pub fn make_windows(series: &Series, window: usize, horizon: usize) -> Result<Vec<Window>> {
    if window == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("P and H must be positive".into()));
    }
    let total = series.len();
    if total < window + horizon {
        return Err(Error::InvalidArgument(format!(
            "series of length {total} is too short for P = {window}, H = {horizon}"
        )));
    }
    let d = series.channels();
    let slice = |from: usize, rows: usize| {
        let data = series.values.as_slice()[from * d..(from + rows) * d].to_vec();
        Matrix::from_vec(rows, d, data).expect("slice shape")
    };
    Ok((0..=total - window - horizon)
        .map(|t| Window {
            start: t,
            x: slice(t, window),
            y: slice(t + window, horizon),
        })
        .collect())
}

/// First `floor(ratio · N)` windows train, the rest test; order preserved.
pub fn chrono_split(mut windows: Vec<Window>, ratio: f64) -> Result<(Vec<Window>, Vec<Window>)> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_train = (ratio * windows.len() as f64).floor() as usize;
    if n_train == 0 || n_train == windows.len() {
        return Err(Error::InvalidArgument(format!(
            "split of {} windows at {ratio} leaves one side empty",
            windows.len()
        )));
    }
    let test = windows.split_off(n_train);
    Ok((windows, test))
}

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose training standard deviation was zero (std set to 1).
    pub degenerate: Vec<bool>,
}

impl NormStats {
    /// Statistics of all training-window `X` entries, pooled per channel.
    pub fn from_windows(train: &[Window]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::InvalidArgument("no training windows".into()))?;
        let d = first.x.cols();
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for w in train {
            for t in 0..w.x.rows() {
                sum.iter_mut().zip(w.x.row(t)).for_each(|(s, v)| *s += v);
            }
            count += w.x.rows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for w in train {
            for t in 0..w.x.rows() {
                for (c, v) in w.x.row(t).iter().enumerate() {
                    sq[c] += (v - mean[c]) * (v - mean[c]);
                }
            }
        }
        let mut degenerate = vec![false; d];
        let std = sq
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    degenerate[c] = true;
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std, degenerate })
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for t in 0..out.rows() {
            for (c, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn invert(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for t in 0..out.rows() {
            for (c, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }

    fn apply_window(&self, w: &Window) -> Window {
        Window {
            start: w.start,
            x: self.apply(&w.x),
            y: self.apply(&w.y),
        }
    }
}

/// Normalises both splits (inputs and targets) with training statistics.
pub fn normalize(train: &[Window], test: &[Window]) -> Result<(Vec<Window>, Vec<Window>, NormStats)> {
    let stats = NormStats::from_windows(train)?;
    let tr = train.iter().map(|w| stats.apply_window(w)).collect();
    let te = test.iter().map(|w| stats.apply_window(w)).collect();
    Ok((tr, te, stats))
}

/// Normalised train/test windows for one `(P, H)` configuration.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    pub window: usize,
    pub horizon: usize,
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    pub stats: NormStats,
}

impl WindowDataset {
    /// Windowing, chronological split and normalisation in one go.
    pub fn build(series: &Series, window: usize, horizon: usize, train_ratio: f64) -> Result<Self> {
        let windows = make_windows(series, window, horizon)?;
        let (train, test) = chrono_split(windows, train_ratio)?;
        let (train, test, stats) = normalize(&train, &test)?;
        Ok(Self {
            window,
            horizon,
            train,
            test,
            stats,
        })
    }

    pub fn channels(&self) -> usize {
        self.stats.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ramp(len: usize, d: usize) -> Series {
        let data = (0..len * d).map(|i| i as f64).collect();
        Series::unnamed(Matrix::from_vec(len, d, data).unwrap()).unwrap()
    }

    #[test]
    fn load_small_csv() {
        let f = write_tmp("a,b\n1,2\n3,4\n5,6\n7,8\n9,10\n");
        let s = load_csv(f.path()).unwrap();
        assert_eq!((s.len(), s.channels()), (5, 2));
        assert_eq!(s.names, vec!["a", "b"]);
        assert_eq!(s.values.row(4), &[9.0, 10.0]);
    }

    #[test]
    fn load_csv_skips_time_column() {
        let f = write_tmp("time,a\n2020-01-01,1.5\n2020-01-02,2.5\n");
        let s = load_csv(f.path()).unwrap();
        assert_eq!(s.names, vec!["a"]);
        assert_eq!(s.values.as_slice(), &[1.5, 2.5]);
    }

    #[test]
    fn load_csv_errors() {
        let err = load_csv(write_tmp("a,b\n").path()).unwrap_err();
        assert!(err.to_string().contains("no data rows"), "{err}");
        let err = load_csv(write_tmp("a,b\n1,2\n3,NaN\n").path()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("row 3") && msg.contains("`b`") && msg.contains("NaN"),
            "{msg}"
        );
        let err = load_csv(write_tmp("a,b\n1,2\n3\n").path()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        assert!(load_csv(write_tmp("").path()).is_err());
        assert!(load_csv(write_tmp("a\nfoo\n").path()).is_err());
    }

    #[test]
    fn csv_write_read_round_trip() {
        let s = synthesize_series(SynthKind::RandomWalk, 80, 3, 4).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        s.save_csv(f.path()).unwrap();
        assert_eq!(load_csv(f.path()).unwrap(), s);
    }

    #[test]
    fn window_count_and_indexing() {
        let s = ramp(10, 2);
        let w = make_windows(&s, 4, 2).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w[0].y.row(0), s.values.row(4));
        for win in &w {
            let mut joined = win.x.as_slice().to_vec();
            joined.extend_from_slice(win.y.as_slice());
            assert_eq!(
                joined.as_slice(),
                &s.values.as_slice()[win.start * 2..(win.start + 6) * 2]
            );
        }
        assert!(make_windows(&s, 8, 3).is_err());
    }

    #[test]
    fn window_count_over_default_grid() {
        let s = ramp(200, 1);
        for p in [16, 32, 80, 140] {
            for h in [4, 8, 16] {
                assert_eq!(make_windows(&s, p, h).unwrap().len(), 200 - p - h + 1);
            }
        }
    }

    #[test]
    fn split_cases() {
        let s = ramp(15, 1);
        let w = make_windows(&s, 4, 2).unwrap();
        assert_eq!(w.len(), 10);
        let (tr, te) = chrono_split(w, 0.8).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let max_train = tr.iter().map(|w| w.start).max().unwrap();
        let min_test = te.iter().map(|w| w.start).min().unwrap();
        assert!(max_train < min_test);

        let one = make_windows(&ramp(6, 1), 4, 2).unwrap();
        assert!(chrono_split(one, 0.8).is_err());
    }

    #[test]
    fn normalization_properties() {
        let mut s = synthesize_series(SynthKind::SinusoidAr, 200, 2, 1).unwrap();
        for t in 0..s.len() {
            s.values[(t, 1)] = 4.0;
        }
        let ds = WindowDataset::build(&s, 10, 3, 0.8).unwrap();
        assert_eq!(ds.stats.degenerate, vec![false, true]);
        let mut n = 0.0;
        let (mut sum, mut sq) = (0.0, 0.0);
        for w in &ds.train {
            for t in 0..w.x.rows() {
                sum += w.x[(t, 0)];
                sq += w.x[(t, 0)] * w.x[(t, 0)];
                n += 1.0;
                assert_eq!(w.x[(t, 1)], 0.0);
            }
        }
        assert!((sum / n).abs() < 1e-10);
        assert!(((sq / n) - 1.0).abs() < 1e-10);

        // statistics come from the training split alone
        let windows = make_windows(&s, 10, 3).unwrap();
        let (tr, _) = chrono_split(windows, 0.8).unwrap();
        assert_eq!(NormStats::from_windows(&tr).unwrap(), ds.stats);

        let raw = &s.values;
        let back = ds.stats.invert(&ds.stats.apply(raw));
        assert!(back.sub(raw).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn noiseless_rotation_contracts_exactly() {
        let opts = SynthOptions {
            noise: 0.0,
            ..SynthOptions::default()
        };
        let s = synthesize_series_with(SynthKind::DampedRotation, 100, 4, 3, &opts).unwrap();
        for t in 0..99 {
            let ratio = norm2(s.values.row(t + 1)) / norm2(s.values.row(t));
            assert!((ratio - 0.97).abs() < 1e-12);
        }
        assert!(synthesize_series(SynthKind::DampedRotation, 100, 3, 0).is_err());
        assert!(synthesize_series(SynthKind::RandomWalk, 10, 3, 0).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [SynthKind::DampedRotation, SynthKind::SinusoidAr, SynthKind::RandomWalk] {
            let a = synthesize_series(kind, 128, 2, 77).unwrap();
            let b = synthesize_series(kind, 128, 2, 77).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, synthesize_series(kind, 128, 2, 78).unwrap(), "{kind}");
        }
    }

    #[test]
    fn noiseless_sinusoids_have_two_frequencies() {
        let opts = SynthOptions {
            noise: 0.0,
            ..SynthOptions::default()
        };
        let len = 256;
        let s = synthesize_series_with(SynthKind::SinusoidAr, len, 3, 0, &opts).unwrap();
        let (k1, k2) = sinusoid_bins(len);
        for ch in 0..3 {
            let x = s.values.col(ch);
            // direct DFT magnitudes over the non-negative frequencies
            let peaks: Vec<usize> = (0..=len / 2)
                .filter(|&k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (t, v) in x.iter().enumerate() {
                        let ang = -2.0 * PI * (k * t) as f64 / len as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).sqrt() > 1e-6 * len as f64
                })
                .collect();
            assert_eq!(peaks, vec![k1, k2], "channel {ch}");
        }
    }
}
