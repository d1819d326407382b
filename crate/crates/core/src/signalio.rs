//! Loading, clipping, windowing and synthesis of multichannel recordings.
//!
//! On disk a recording is a pair of files: `<name>.csv` holds one row per
//! sample and one column per channel, `<name>.meta` holds `key=value` lines:
//!
//! ```text
//! fs=500
//! channels=a,b,c
//! onset_sample=6000
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Segment class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Interictal = 0,
    Ictal = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Interictal),
            1 => Some(Label::Ictal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// `n_samples × n_channels`, microvolts.
    pub samples: DMatrix<f64>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub onset_sample: Option<usize>,
}

impl Recording {
    pub fn new(
        samples: DMatrix<f64>,
        fs: f64,
        channel_names: Vec<String>,
        onset_sample: Option<usize>,
    ) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::Metadata(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.ncols() < 2 {
            return Err(Error::Metadata(format!(
                "at least 2 channels required, got {}",
                samples.ncols()
            )));
        }
        if channel_names.len() != samples.ncols() {
            return Err(Error::Metadata(format!(
                "{} channel names for {} columns",
                channel_names.len(),
                samples.ncols()
            )));
        }
        if let Some(onset) = onset_sample {
            if onset >= samples.nrows() {
                return Err(Error::Metadata(format!(
                    "onset_sample {onset} outside recording of {} samples",
                    samples.nrows()
                )));
            }
        }
        Ok(Recording {
            samples,
            fs,
            channel_names,
            onset_sample,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    fn rows(&self, start: usize, end: usize) -> Recording {
        Recording {
            samples: self.samples.rows(start, end - start).into_owned(),
            fs: self.fs,
            channel_names: self.channel_names.clone(),
            onset_sample: None,
        }
    }
}

/// A fixed-length analysis window with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `w × n_channels`.
    pub samples: DMatrix<f64>,
    pub fs: f64,
    pub label: Label,
}

impl Segment {
    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.column(c).iter().copied().collect()
    }
}

/// Path of the metadata sidecar belonging to a CSV payload.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

pub fn load_recording(path: &Path) -> Result<Recording> {
    let meta_file = meta_path(path);
    let meta_text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let mut fs_hz = None;
    let mut channels: Option<Vec<String>> = None;
    let mut onset = None;
    for (lineno, raw) in meta_text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: meta_file.clone(),
            line: lineno + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let value = value.trim();
        let bad = |what: &str| Error::Parse {
            path: meta_file.clone(),
            line: lineno + 1,
            message: format!("invalid {what} {value:?}"),
        };
        match key.trim() {
            "fs" => fs_hz = Some(value.parse::<f64>().map_err(|_| bad("fs"))?),
            "channels" | "channel_names" => channels = Some(value.split(',').map(|s| s.trim().to_string()).collect()),
            "onset_sample" => onset = Some(value.parse::<usize>().map_err(|_| bad("onset_sample"))?),
            _ => {}
        }
    }
    let fs_hz = fs_hz.ok_or_else(|| Error::Metadata("fs missing".into()))?;
    if !(fs_hz > 0.0) {
        return Err(Error::Metadata(format!("sampling rate must be positive, got {fs_hz}")));
    }
    let channels = channels.ok_or_else(|| Error::Metadata("channels missing".into()))?;
    let n_ch = channels.len();

    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v = field.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            values.push(v);
            count += 1;
        }
        if count != n_ch {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("ragged row: {count} values, expected {n_ch}"),
            });
        }
        n_rows += 1;
    }
    let samples = DMatrix::from_row_slice(n_rows, n_ch, &values);
    Recording::new(samples, fs_hz, channels, onset)
}

/// Writes `rec` as `<csv>` plus its `.meta` sidecar.
pub fn write_recording(rec: &Recording, csv: &Path) -> Result<()> {
    let mut out = String::new();
    for row in rec.samples.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(csv, out).map_err(|e| Error::io(csv, e))?;
    let mut meta = format!("fs={}\nchannels={}\n", rec.fs, rec.channel_names.join(","));
    if let Some(onset) = rec.onset_sample {
        let _ = writeln!(meta, "onset_sample={onset}");
    }
    let meta_file = meta_path(csv);
    fs::write(&meta_file, meta).map_err(|e| Error::io(&meta_file, e))
}

/// Splits a recording around its seizure onset into `(interictal, ictal)`
/// clips of `pre_s` and `post_s` seconds, truncated at the recording bounds.
pub fn clip_peri_ictal(rec: &Recording, pre_s: f64, post_s: f64) -> Result<(Recording, Recording)> {
    let onset = rec.onset_sample.ok_or(Error::MissingAnnotation)?;
    if pre_s < 0.0 || post_s < 0.0 {
        return Err(Error::Parameter("clip lengths must be nonnegative".into()));
    }
    let pre = (pre_s * rec.fs).round() as usize;
    let post = (post_s * rec.fs).round() as usize;
    let start = onset.saturating_sub(pre);
    let end = (onset + post).min(rec.n_samples());
    Ok((rec.rows(start, onset), rec.rows(onset, end)))
}

/// Samples per window and hop for the given window length and overlap.
pub fn window_geometry(fs: f64, window_s: f64, overlap: f64) -> Result<(usize, usize)> {
    if !(window_s > 0.0) || !(0.0..1.0).contains(&overlap) {
        return Err(Error::Parameter(format!(
            "window_s must be positive and overlap in [0, 1), got {window_s}, {overlap}"
        )));
    }
    let w = (window_s * fs).round() as usize;
    let hop = (window_s * fs * (1.0 - overlap)).round() as usize;
    if w == 0 || hop == 0 {
        return Err(Error::Parameter("window or hop rounds to zero samples".into()));
    }
    Ok((w, hop))
}

/// Cuts `rec` into labelled windows; the trailing partial window is dropped.
pub fn segment_windows(rec: &Recording, window_s: f64, overlap: f64, label: Label) -> Result<Vec<Segment>> {
    let (w, hop) = window_geometry(rec.fs, window_s, overlap)?;
    let n = rec.n_samples();
    if n < w {
        return Err(Error::TooShort(format!(
            "{n} samples cannot hold one {w}-sample window"
        )));
    }
    Ok((0..=(n - w) / hop)
        .map(|i| Segment {
            samples: rec.samples.rows(i * hop, w).into_owned(),
            fs: rec.fs,
            label,
        })
        .collect())
}

/// One planted directed coupling `x_dst(t) += coeff · x_src(t − lag)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub src: usize,
    pub dst: usize,
    pub lag: usize,
    pub coeff: f64,
}

impl Coupling {
    pub fn new(src: usize, dst: usize, lag: usize, coeff: f64) -> Self {
        Coupling { src, dst, lag, coeff }
    }
}

/// Companion matrix of the VAR process defined by `couplings`.
pub fn companion_matrix(couplings: &[Coupling], n_channels: usize) -> DMatrix<f64> {
    let order = couplings.iter().map(|c| c.lag).max().unwrap_or(1).max(1);
    let dim = n_channels * order;
    let mut m = DMatrix::zeros(dim, dim);
    for c in couplings {
        m[(c.dst, (c.lag - 1) * n_channels + c.src)] += c.coeff;
    }
    for i in n_channels..dim {
        m[(i, i - n_channels)] = 1.0;
    }
    m
}

/// Largest eigenvalue modulus of the VAR companion matrix.
pub fn spectral_radius(couplings: &[Coupling], n_channels: usize) -> f64 {
    companion_matrix(couplings, n_channels)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

const BURN_IN: usize = 500;

/// Simulates a stable VAR process with the given couplings and white
/// Gaussian innovations. Deterministic for a fixed seed.
pub fn synth_var_recording(
    couplings: &[Coupling],
    n_channels: usize,
    fs: f64,
    duration_s: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Recording> {
    if n_channels < 2 {
        return Err(Error::Parameter("at least 2 channels required".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!(
            "noise_sd must be nonnegative, got {noise_sd}"
        )));
    }
    for c in couplings {
        if c.src >= n_channels || c.dst >= n_channels || c.lag == 0 {
            return Err(Error::Parameter(format!("invalid coupling {c:?}")));
        }
    }
    let radius = spectral_radius(couplings, n_channels);
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    let n = (duration_s * fs).round() as usize;
    let total = n + BURN_IN;
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = DMatrix::<f64>::zeros(total, n_channels);
    for t in 0..total {
        for ch in 0..n_channels {
            x[(t, ch)] = noise_sd * normal.sample(&mut rng);
        }
        for c in couplings {
            if t >= c.lag {
                x[(t, c.dst)] += c.coeff * x[(t - c.lag, c.src)];
            }
        }
    }
    let samples = x.rows(BURN_IN, n).into_owned();
    let names = (0..n_channels).map(|i| format!("ch{}", i + 1)).collect();
    Recording::new(samples, fs, names, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, ch: usize, fs: f64, onset: Option<usize>) -> Recording {
        let samples = DMatrix::from_fn(n, ch, |r, c| (r * ch + c) as f64);
        let names = (0..ch).map(|i| format!("c{i}")).collect();
        Recording::new(samples, fs, names, onset).unwrap()
    }

    #[test]
    fn clip_indices_follow_onset() {
        let rec = ramp(20_000, 2, 500.0, Some(6000));
        let (inter, ictal) = clip_peri_ictal(&rec, 10.0, 10.0).unwrap();
        assert_eq!(inter.n_samples(), 5000);
        assert_eq!(inter.samples[(0, 0)], rec.samples[(1000, 0)]);
        assert_eq!(ictal.n_samples(), 5000);
        assert_eq!(ictal.samples[(0, 0)], rec.samples[(6000, 0)]);
        assert_eq!(ictal.samples[(4999, 1)], rec.samples[(10_999, 1)]);
    }

    #[test]
    fn clip_truncates_at_start() {
        let rec = ramp(20_000, 2, 500.0, Some(2000));
        let (inter, _) = clip_peri_ictal(&rec, 10.0, 10.0).unwrap();
        assert_eq!(inter.n_samples(), 2000);
        assert_eq!(inter.samples[(0, 0)], 0.0);
    }

    #[test]
    fn clip_requires_onset() {
        let rec = ramp(100, 2, 500.0, None);
        assert!(matches!(
            clip_peri_ictal(&rec, 10.0, 10.0),
            Err(Error::MissingAnnotation)
        ));
    }

    #[test]
    fn window_counts() {
        let rec = ramp(5000, 3, 500.0, None);
        let segs = segment_windows(&rec, 2.0, 0.5, Label::Ictal).unwrap();
        assert_eq!(segs.len(), 9);
        assert!(segs.iter().all(|s| s.samples.nrows() == 1000));
        assert_eq!(segs[1].samples[(0, 0)], rec.samples[(500, 0)]);

        let rec = ramp(1000, 3, 500.0, None);
        assert_eq!(segment_windows(&rec, 2.0, 0.5, Label::Ictal).unwrap().len(), 1);

        let rec = ramp(950, 3, 500.0, None);
        assert!(matches!(
            segment_windows(&rec, 2.0, 0.5, Label::Ictal),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn synth_is_deterministic_and_checks_stability() {
        let c = [Coupling::new(0, 1, 1, 0.5)];
        let a = synth_var_recording(&c, 3, 500.0, 2.0, 1.0, 42).unwrap();
        let b = synth_var_recording(&c, 3, 500.0, 2.0, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let unstable = [Coupling::new(0, 0, 1, 1.5)];
        assert!(matches!(
            synth_var_recording(&unstable, 3, 500.0, 2.0, 1.0, 1),
            Err(Error::Unstable { .. })
        ));
        let silent = synth_var_recording(&[], 3, 500.0, 2.0, 0.0, 1).unwrap();
        assert!(silent.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn independent_white_noise_without_couplings() {
        let rec = synth_var_recording(&[], 2, 500.0, 20.0, 1.0, 3).unwrap();
        let n = rec.n_samples() as f64;
        let x = rec.samples.column(0);
        let y = rec.samples.column(1);
        let var = x.dot(&x) / n;
        let cross = x.dot(&y) / n;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert!(cross.abs() < 0.05, "cross {cross}");
    }

    /// Power-iteration estimate of the companion spectral radius, independent
    /// of the Schur decomposition used in the implementation.
    fn power_radius(m: &DMatrix<f64>) -> f64 {
        let mut v = DMatrix::from_element(m.nrows(), 1, 1.0);
        let mut growth = 0.0;
        for _ in 0..2000 {
            let next = m * &v;
            let nrm = next.norm();
            if nrm == 0.0 {
                return 0.0;
            }
            growth = nrm / v.norm();
            v = next / nrm;
        }
        growth
    }

    #[test]
    fn spectral_radius_matches_power_iteration() {
        let self_lag = [Coupling::new(0, 0, 1, 1.5)];
        assert!((power_radius(&companion_matrix(&self_lag, 3)) - 1.5).abs() < 1e-9);
        assert!((spectral_radius(&self_lag, 3) - 1.5).abs() < 1e-9);
        let stable = [
            Coupling::new(0, 0, 1, 0.6),
            Coupling::new(1, 1, 2, 0.3),
            Coupling::new(0, 1, 1, 0.4),
        ];
        let r = spectral_radius(&stable, 2);
        assert!(r < 1.0);
        assert!((power_radius(&companion_matrix(&stable, 2)) - r).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synth_var_recording(&[], 3, 500.0, 2.0, 1.0, 9).unwrap();
        let rec = Recording {
            onset_sample: Some(10),
            ..rec
        };
        let p = dir.path().join("r.csv");
        write_recording(&rec, &p).unwrap();
        let back = load_recording(&p).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.n_samples(), 1000);
        assert_eq!(back.n_channels(), 3);

        fs::write(dir.path().join("r.meta"), "fs=500\nchannels=a,b,c\n").unwrap();
        assert_eq!(load_recording(&p).unwrap().onset_sample, None);

        fs::write(&p, "1,2,3\n4,5\n7,8,9\n").unwrap();
        match load_recording(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(dir.path().join("r.meta"), "fs=0\nchannels=a,b,c\n").unwrap();
        assert!(matches!(load_recording(&p), Err(Error::Metadata(_))));
    }

    proptest::proptest! {
        #[test]
        fn window_count_matches_enumeration(n in 0usize..6000, fs in prop_oneof_fs()) {
            let rec = ramp(n.max(1), 2, fs, None);
            let w = (2.0 * fs).round() as usize;
            let s = (w as f64 / 2.0).round() as usize;
            let mut naive = 0;
            let mut start = 0;
            while start + w <= rec.n_samples() {
                naive += 1;
                start += s;
            }
            match segment_windows(&rec, 2.0, 0.5, Label::Interictal) {
                Ok(segs) => proptest::prop_assert_eq!(segs.len(), naive),
                Err(_) => proptest::prop_assert_eq!(naive, 0),
            }
        }

        #[test]
        fn clips_are_disjoint_and_bounded(n in 100usize..20_000, onset_frac in 0.0f64..1.0, pre in 0.0f64..15.0, post in 0.0f64..15.0) {
            let onset = ((n as f64 * onset_frac) as usize).min(n - 1);
            let rec = ramp(n, 2, 500.0, Some(onset));
            let (a, b) = clip_peri_ictal(&rec, pre, post).unwrap();
            proptest::prop_assert!(a.n_samples() <= onset && b.n_samples() <= n - onset);
            let limit = ((pre * 500.0).round() + (post * 500.0).round()) as usize;
            proptest::prop_assert!(a.n_samples() + b.n_samples() <= limit);
            if a.n_samples() > 0 {
                proptest::prop_assert!(a.samples[(a.n_samples() - 1, 0)] < b.samples.get((0, 0)).copied().unwrap_or(f64::INFINITY));
            }
        }
    }

    fn prop_oneof_fs() -> impl proptest::strategy::Strategy<Value = f64> {
        proptest::prop_oneof![
            proptest::strategy::Just(500.0),
            proptest::strategy::Just(1024.0),
            proptest::strategy::Just(256.0)
        ]
    }
}
