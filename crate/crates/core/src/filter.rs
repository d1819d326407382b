//! Zero-phase IIR filtering and the analytic signal.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Pole quality factors of a 4th-order Butterworth split into two sections.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_7];

impl Biquad {
    fn from_raw(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Biquad {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    pub fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_raw(
            (1.0 - cos) / 2.0,
            1.0 - cos,
            (1.0 - cos) / 2.0,
            1.0 + alpha,
            -2.0 * cos,
            1.0 - alpha,
        )
    }

    pub fn highpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_raw(
            (1.0 + cos) / 2.0,
            -(1.0 + cos),
            (1.0 + cos) / 2.0,
            1.0 + alpha,
            -2.0 * cos,
            1.0 - alpha,
        )
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant input `x0` a steady state.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let y0 = self.dc_gain() * x0;
        let z2 = self.b[2] * x0 - self.a[1] * y0;
        let z1 = self.b[1] * x0 - self.a[0] * y0 + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [mut z1, mut z2] = self.steady_state(x0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Cascade of biquads applied forward and backward.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroPhaseFilter {
    sections: Vec<Biquad>,
    pad: usize,
}

impl ZeroPhaseFilter {
    /// 4th-order Butterworth high-pass followed by 4th-order low-pass.
    pub fn bandpass(lo: f64, hi: f64, fs: f64) -> Self {
        let mut sections = Vec::with_capacity(4);
        for q in BUTTER4_Q {
            sections.push(Biquad::highpass(lo, fs, q));
        }
        for q in BUTTER4_Q {
            sections.push(Biquad::lowpass(hi, fs, q));
        }
        // Reflection padding long enough for the slowest pole to settle.
        let pad = (3.0 * fs / lo).ceil() as usize;
        ZeroPhaseFilter { sections, pad }
    }

    fn pass(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.pad.min(n - 1);
        // odd extension about the end points
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.pass(&mut ext);
        ext.reverse();
        self.pass(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Analytic signal `x + i·Hilbert(x)` via the FFT.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, z) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *z *= gain / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Instantaneous amplitude `|analytic(x)|`.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).iter().map(|z| z.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn bandpass_passes_center_and_rejects_outside() {
        let fs = 1000.0;
        let f = ZeroPhaseFilter::bandpass(80.0, 250.0, fs);
        let inside = f.apply(&sine(150.0, fs, 4000));
        let below = f.apply(&sine(10.0, fs, 4000));
        let above = f.apply(&sine(450.0, fs, 4000));
        let mid = &inside[1000..3000];
        assert!((rms(mid) - 1.0 / 2f64.sqrt()).abs() < 0.02);
        assert!(rms(&below[1000..3000]) < 1e-3);
        assert!(rms(&above[1000..3000]) < 0.02);
    }

    #[test]
    fn zero_phase_keeps_peak_position() {
        let fs = 500.0;
        let mut x = vec![0.0; 1000];
        x[500] = 1.0;
        let y = ZeroPhaseFilter::bandpass(1.0, 70.0, fs).apply(&x);
        let argmax = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        assert_eq!(argmax, 500);
    }

    #[test]
    fn constant_input_is_removed() {
        let y = ZeroPhaseFilter::bandpass(1.0, 70.0, 500.0).apply(&vec![5.0; 800]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn envelope_of_sinusoid_is_flat() {
        let x: Vec<f64> = sine(50.0, 1000.0, 1000).iter().map(|v| 3.0 * v).collect();
        let env = envelope(&x);
        for v in &env[100..900] {
            assert!((v - 3.0).abs() < 1e-9);
        }
    }
}
