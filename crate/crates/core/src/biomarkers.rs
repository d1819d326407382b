//! Per-channel epileptogenicity features.
//!
//! Five features per channel, in a fixed order: interictal spike rate,
//! high-frequency-oscillation rate, sample entropy, Petrosian and Katz
//! fractal dimensions. Rates are events per second.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::{envelope, ZeroPhaseFilter};
use crate::signalio::Segment;

pub const FEATURE_NAMES: [&str; 5] = ["spike_rate", "hfo_rate", "sample_entropy", "pfd", "kfd"];

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    /// `n_channels × F`.
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
}

impl NodeFeatureMatrix {
    pub fn new(values: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        if values.ncols() != feature_names.len() {
            return Err(Error::Shape(format!(
                "{} feature columns but {} names",
                values.ncols(),
                feature_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("node features must be finite".into()));
        }
        Ok(NodeFeatureMatrix { values, feature_names })
    }

    /// Matrix with the standard feature names.
    pub fn standard(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, FEATURE_NAMES.iter().map(|s| s.to_string()).collect())
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Median and normal-consistent MAD.
fn median_mad(x: &[f64]) -> (f64, f64) {
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 0 {
            (v[m - 1] + v[m]) / 2.0
        } else {
            v[m]
        }
    };
    let centre = median(&mut x.to_vec());
    let mad = median(&mut x.iter().map(|v| (v - centre).abs()).collect());
    (centre, 1.4826 * mad)
}

fn is_flat(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

const SPIKE_Z: f64 = 5.0;
const SPIKE_MIN_WIDTH_S: f64 = 0.020;
const SPIKE_MAX_WIDTH_S: f64 = 0.070;
const SPIKE_REFRACTORY_S: f64 = 0.100;

/// Width of the lobe around `peak` at half its height, in samples, using
/// linear interpolation at the crossings. `y` must be oriented so the peak is
/// positive.
fn half_height_width(y: &[f64], peak: usize) -> f64 {
    let half = y[peak] / 2.0;
    let mut left = 0.0;
    let mut i = peak;
    while i > 0 {
        if y[i - 1] <= half {
            left = (i - 1) as f64 + (half - y[i - 1]) / (y[i] - y[i - 1]);
            break;
        }
        i -= 1;
    }
    let mut right = (y.len() - 1) as f64;
    let mut j = peak;
    while j + 1 < y.len() {
        if y[j + 1] <= half {
            right = j as f64 + (y[j] - half) / (y[j] - y[j + 1]);
            break;
        }
        j += 1;
    }
    right - left
}

/// Threshold spike detector: band-pass 1–70 Hz, z-score, local extrema with
/// `|z| > 5` lasting 20–70 ms (twice the half-height width), 100 ms refractory period
/// (larger peaks win).
pub fn spike_rate(x: &[f64], fs: f64) -> Result<f64> {
    if (x.len() as f64) < fs {
        return Err(Error::TooShort(format!(
            "spike detection needs at least 1 s, got {} samples at {fs} Hz",
            x.len()
        )));
    }
    let duration = x.len() as f64 / fs;
    if is_flat(x) {
        return Ok(0.0);
    }
    let hi = 70.0f64.min(0.45 * fs);
    let y = ZeroPhaseFilter::bandpass(1.0, hi, fs).apply(x);
    // robust z-score, so the spikes themselves do not inflate the scale
    let (centre, scale) = median_mad(&y);
    let (_, raw_sd) = mean_sd(x);
    if !(scale > 1e-9 * raw_sd) {
        return Ok(0.0);
    }
    let z: Vec<f64> = y.iter().map(|v| (v - centre) / scale).collect();
    let mut candidates: Vec<usize> = Vec::new();
    for i in 1..z.len() - 1 {
        let a = z[i].abs();
        if a > SPIKE_Z && a >= z[i - 1].abs() && a > z[i + 1].abs() {
            let sign = z[i].signum();
            let oriented: Vec<f64> = z.iter().map(|v| v * sign).collect();
            // a triangular transient lasts twice its half-height width
            let duration = 2.0 * half_height_width(&oriented, i) / fs;
            if (SPIKE_MIN_WIDTH_S..=SPIKE_MAX_WIDTH_S).contains(&duration) {
                candidates.push(i);
            }
        }
    }
    candidates.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
    let refractory = SPIKE_REFRACTORY_S * fs;
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| (a as f64 - c as f64).abs() >= refractory) {
            accepted.push(c);
        }
    }
    Ok(accepted.len() as f64 / duration)
}

const HFO_LO: f64 = 80.0;
const HFO_SD: f64 = 3.0;
const HFO_MIN_DURATION_S: f64 = 0.006;
const HFO_MIN_PEAKS: usize = 4;

/// Hilbert-envelope HFO detector over the ripple band.
pub fn hfo_rate(x: &[f64], fs: f64) -> f64 {
    if fs < 200.0 {
        log::warn!("HFO band unobservable at {fs} Hz; reporting rate 0");
        return 0.0;
    }
    let hi = 250.0f64.min(0.45 * fs);
    if x.len() < 3 || hi <= HFO_LO || is_flat(x) {
        return 0.0;
    }
    let duration = x.len() as f64 / fs;
    let bp = ZeroPhaseFilter::bandpass(HFO_LO, hi, fs).apply(x);
    let env = envelope(&bp);
    let (mean, sd) = mean_sd(&env);
    let (_, raw_sd) = mean_sd(x);
    if !(sd > 1e-9 * raw_sd) {
        return 0.0;
    }
    let threshold = mean + HFO_SD * sd;
    let rect: Vec<f64> = bp.iter().map(|v| v.abs()).collect();

    let min_len = HFO_MIN_DURATION_S * fs;
    let mut events = 0;
    let mut i = 0;
    while i < env.len() {
        if env[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < env.len() && env[i] > threshold {
            i += 1;
        }
        let end = i;
        if ((end - start) as f64) < min_len {
            continue;
        }
        let peaks = (start.max(1)..end.min(rect.len() - 1))
            .filter(|&k| rect[k] > threshold && rect[k] >= rect[k - 1] && rect[k] > rect[k + 1])
            .count();
        if peaks >= HFO_MIN_PEAKS {
            events += 1;
        }
    }
    events as f64 / duration
}

const SAMPEN_EPS: f64 = 1e-10;

/// Sample entropy with Chebyshev distance and tolerance `r · SD(x)`.
pub fn sample_entropy(x: &[f64], m: usize, r: f64) -> Result<f64> {
    let n = x.len();
    if n < m + 2 {
        return Err(Error::TooShort(format!(
            "sample entropy with m={m} needs at least {} samples, got {n}",
            m + 2
        )));
    }
    let tol = r * mean_sd(x).1;
    let templates = n - m;
    let (mut b, mut a) = (0u64, 0u64);
    for i in 0..templates {
        for j in i + 1..templates {
            let mut d = 0.0f64;
            for k in 0..m {
                d = d.max((x[i + k] - x[j + k]).abs());
                if d > tol {
                    break;
                }
            }
            if d <= tol {
                b += 1;
                if (x[i + m] - x[j + m]).abs() <= tol {
                    a += 1;
                }
            }
        }
    }
    Ok(-((a as f64 + SAMPEN_EPS) / (b as f64 + SAMPEN_EPS)).ln())
}

/// Petrosian fractal dimension.
pub fn petrosian_fd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let diff: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let changes = diff.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64;
    let log_n = n.log10();
    log_n / (log_n + (n / (n + 0.4 * changes)).log10())
}

/// Katz fractal dimension of the planar curve `(i, x_i)`.
pub fn katz_fd(x: &[f64]) -> f64 {
    let length: f64 = x.windows(2).map(|w| (1.0 + (w[1] - w[0]).powi(2)).sqrt()).sum();
    let extent = x
        .iter()
        .enumerate()
        .map(|(i, v)| ((i * i) as f64 + (v - x[0]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let steps = (x.len() - 1) as f64;
    let log_steps = steps.log10();
    log_steps / (log_steps + (extent / length).log10())
}

/// Raw (unnormalised) features of one channel.
pub fn channel_features(x: &[f64], fs: f64) -> Result<[f64; 5]> {
    Ok([
        spike_rate(x, fs)?,
        hfo_rate(x, fs),
        sample_entropy(x, 2, 0.2)?,
        petrosian_fd(x),
        katz_fd(x),
    ])
}

/// Column-wise min-max scaling; a constant column maps to 0.5.
pub fn min_max_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let lo = col.min();
        let hi = col.max();
        if hi > lo {
            col.apply(|v| *v = (*v - lo) / (hi - lo));
        } else {
            col.fill(0.5);
        }
    }
}

/// Node-feature matrix of a segment, min-max normalised across channels.
pub fn node_feature_matrix(seg: &Segment) -> Result<NodeFeatureMatrix> {
    let n = seg.n_channels();
    let mut values = DMatrix::zeros(n, FEATURE_NAMES.len());
    for c in 0..n {
        let feats = channel_features(&seg.channel(c), seg.fs)?;
        for (k, v) in feats.into_iter().enumerate() {
            values[(c, k)] = v;
        }
    }
    min_max_columns(&mut values);
    NodeFeatureMatrix::standard(values)
}
