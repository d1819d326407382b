//! Multivariate autoregressive modelling and directed transfer function graphs.
//!
//! The MVAR model is written in the residual form
//! `Σ_{k=0..p} Λ(k) S(t−k) = E(t)` with `Λ(0) = I`; fitting estimates the
//! regression `S(t) = Σ_{k=1..p} B(k) S(t−k) + E(t)` so `Λ(k) = −B(k)`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signalio::Segment;

/// Fitted MVAR model for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MvarModel {
    pub order: usize,
    /// `Λ(1) … Λ(p)`; `Λ(0) = I` is implicit.
    pub lambda: Vec<DMatrix<f64>>,
    pub residual_cov: DMatrix<f64>,
    pub fs: f64,
}

impl MvarModel {
    pub fn n_channels(&self) -> usize {
        self.residual_cov.nrows()
    }

    /// Regression coefficient `B(k) = −Λ(k)`, `k ≥ 1`; `B(k)[(dst, src)]`.
    pub fn coefficient(&self, k: usize) -> DMatrix<f64> {
        -&self.lambda[k - 1]
    }

    /// Builds a model directly from regression coefficients `B(1..p)`.
    pub fn from_coefficients(coeffs: &[DMatrix<f64>], fs: f64) -> Self {
        let n = coeffs.first().map_or(0, |m| m.nrows());
        MvarModel {
            order: coeffs.len(),
            lambda: coeffs.iter().map(|b| -b).collect(),
            residual_cov: DMatrix::identity(n, n),
            fs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBand {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyBand {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        let name = name.into();
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Parameter(format!(
                "band {name}: need 0 < lo < hi, got {lo}..{hi}"
            )));
        }
        Ok(FrequencyBand { name, lo, hi })
    }

    /// Restricts the band to `[1, fs/2]`; `None` when nothing remains.
    pub fn clip_to_nyquist(&self, fs: f64) -> Option<FrequencyBand> {
        let lo = self.lo.max(1.0);
        let hi = self.hi.min(fs / 2.0);
        (lo < hi).then(|| FrequencyBand {
            name: self.name.clone(),
            lo,
            hi,
        })
    }

    /// Integer-Hz evaluation grid `ceil(lo) ..= floor(hi)`.
    pub fn grid(&self) -> Vec<f64> {
        let lo = self.lo.ceil() as i64;
        let hi = self.hi.floor() as i64;
        (lo..=hi).map(|f| f as f64).collect()
    }
}

/// Delta through fast ripple, in Hz.
pub fn default_bands() -> Vec<FrequencyBand> {
    [
        ("delta", 1.0, 4.0),
        ("theta", 4.0, 8.0),
        ("alpha", 8.0, 13.0),
        ("beta", 13.0, 30.0),
        ("gamma", 30.0, 80.0),
        ("ripple", 80.0, 250.0),
        ("fast_ripple", 250.0, 500.0),
    ]
    .into_iter()
    .map(|(n, lo, hi)| FrequencyBand::new(n, lo, hi).expect("valid default band"))
    .collect()
}

/// Directed weighted connectivity; `weights[(i, j)]` is the influence of
/// channel `j` on channel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    pub weights: DMatrix<f64>,
    pub directed: bool,
}

impl ConnectivityMatrix {
    pub fn new(weights: DMatrix<f64>) -> Self {
        ConnectivityMatrix {
            weights,
            directed: true,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }
}

/// Least-squares MVAR fit of order `p`; channels are mean-removed first.
pub fn fit_mvar(seg: &Segment, p: usize) -> Result<MvarModel> {
    if p == 0 {
        return Err(Error::Parameter("MVAR order must be at least 1".into()));
    }
    let w = seg.samples.nrows();
    let n = seg.samples.ncols();
    if w <= p || w - p < n * p {
        return Err(Error::TooShort(format!(
            "{w} samples cannot support an order-{p} fit of {n} channels"
        )));
    }
    let mut s = seg.samples.clone();
    for mut col in s.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }

    let rows = w - p;
    let y = s.rows(p, rows).into_owned();
    let mut x = DMatrix::<f64>::zeros(rows, n * p);
    for k in 1..=p {
        x.columns_mut((k - 1) * n, n).copy_from(&s.rows(p - k, rows));
    }

    let gram = x.transpose() * &x;
    let spectrum = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max_ev = spectrum.max();
    let min_ev = spectrum.min();
    if !(max_ev > 0.0) || min_ev <= max_ev * 1e-12 {
        return Err(Error::Singular(format!(
            "regressor Gram matrix has eigenvalue range [{min_ev:.3e}, {max_ev:.3e}]"
        )));
    }
    let rhs = x.transpose() * &y;
    let coeffs = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorisation failed".into()))?
        .solve(&rhs);

    let resid = &y - &x * &coeffs;
    let residual_cov = (resid.transpose() * &resid) / rows as f64;
    let lambda = (1..=p).map(|k| -coeffs.rows((k - 1) * n, n).transpose()).collect();
    Ok(MvarModel {
        order: p,
        lambda,
        residual_cov,
        fs: seg.fs,
    })
}

/// `A(f) = Σ_{k=0..p} Λ(k) e^{−i2πfk/fs}`.
pub fn spectral_matrix(model: &MvarModel, f: f64) -> DMatrix<Complex64> {
    let n = model.n_channels();
    let mut a = DMatrix::<Complex64>::identity(n, n);
    for (k, lam) in model.lambda.iter().enumerate() {
        let phase = -2.0 * std::f64::consts::PI * f * (k + 1) as f64 / model.fs;
        let z = Complex64::from_polar(1.0, phase);
        a.zip_apply(lam, |acc, l| *acc += z * l);
    }
    a
}

fn norm_one(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Transfer matrix `H(f) = A(f)⁻¹`.
pub fn transfer_matrix(model: &MvarModel, f: f64) -> Result<DMatrix<Complex64>> {
    if !(0.0..=model.fs / 2.0).contains(&f) {
        return Err(Error::Parameter(format!(
            "frequency {f} outside [0, {}]",
            model.fs / 2.0
        )));
    }
    let a = spectral_matrix(model, f);
    let h = a.clone().try_inverse().ok_or(Error::IllConditioned {
        freq: f,
        condition: f64::INFINITY,
    })?;
    let condition = norm_one(&a) * norm_one(&h);
    if !condition.is_finite() || condition > 1e12 {
        return Err(Error::IllConditioned { freq: f, condition });
    }
    Ok(h)
}

/// `θ_ij(f) = |H_ij(f)|²`, optionally row-normalised to `ψ_ij(f)`.
/// The diagonal is kept.
pub fn dtf_at(model: &MvarModel, f: f64, normalized: bool) -> Result<DMatrix<f64>> {
    let h = transfer_matrix(model, f)?;
    let mut theta = h.map(|z| z.norm_sqr());
    if normalized {
        for mut row in theta.row_iter_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row /= total;
            }
        }
    }
    Ok(theta)
}

/// Band-integrated DTF on a 1 Hz grid with the diagonal zeroed.
pub fn band_dtf(model: &MvarModel, band: &FrequencyBand, normalized: bool) -> Result<ConnectivityMatrix> {
    if band.hi > model.fs / 2.0 {
        return Err(Error::Parameter(format!(
            "band {} exceeds Nyquist {}",
            band.name,
            model.fs / 2.0
        )));
    }
    let grid = band.grid();
    if grid.is_empty() {
        return Err(Error::EmptyBand(band.name.clone()));
    }
    let n = model.n_channels();
    let mut phi = DMatrix::<f64>::zeros(n, n);
    for f in grid {
        phi += dtf_at(model, f, normalized)?;
    }
    phi.fill_diagonal(0.0);
    Ok(ConnectivityMatrix::new(phi))
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Keeps off-diagonal weights at or above the 75th percentile of the nonzero
/// off-diagonal weights; everything else becomes zero.
pub fn threshold_top_quartile(c: &ConnectivityMatrix) -> Result<ConnectivityMatrix> {
    let mut w = c.weights.clone();
    w.fill_diagonal(0.0);
    let mut nonzero: Vec<f64> = w.iter().copied().filter(|&v| v != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate(
            "connectivity matrix has no nonzero off-diagonal weight".into(),
        ));
    }
    nonzero.sort_by(f64::total_cmp);
    let q = percentile(&nonzero, 0.75);
    w.apply(|v| {
        if *v < q {
            *v = 0.0
        }
    });
    Ok(ConnectivityMatrix {
        weights: w,
        directed: c.directed,
    })
}

/// One MVAR fit per segment, thresholded band DTF per valid band, averaged.
pub fn multiband_graph(
    seg: &Segment,
    bands: &[FrequencyBand],
    p: usize,
    normalized: bool,
) -> Result<ConnectivityMatrix> {
    let valid: Vec<FrequencyBand> = bands.iter().filter_map(|b| b.clip_to_nyquist(seg.fs)).collect();
    if valid.is_empty() {
        return Err(Error::EmptyBand("no band lies below Nyquist".into()));
    }
    let model = fit_mvar(seg, p)?;
    let n = model.n_channels();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for band in &valid {
        acc += threshold_top_quartile(&band_dtf(&model, band, normalized)?)?.weights;
    }
    Ok(ConnectivityMatrix::new(acc / valid.len() as f64))
}

/// Bands that survive Nyquist clipping at `fs`.
pub fn valid_bands(bands: &[FrequencyBand], fs: f64) -> Vec<FrequencyBand> {
    bands.iter().filter_map(|b| b.clip_to_nyquist(fs)).collect()
}
