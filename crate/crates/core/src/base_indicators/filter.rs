//! Second-order Butterworth sections (bilinear transform with prewarping) and
//! zero-phase forward-backward filtering.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Normalized biquad, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn design(f0: f64, fs: f64, highpass: bool) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        let b = if highpass { [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0] } else { [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0] };
        Biquad { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    pub fn lowpass(fc: f64, fs: f64) -> Self {
        Self::design(fc, fs, false)
    }

    pub fn highpass(fc: f64, fs: f64) -> Self {
        Self::design(fc, fs, true)
    }

    /// DC gain.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state after settling on a constant unit input.
    fn unit_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        [self.b[1] + self.b[2] - (self.a[0] + self.a[1]) * g, z2]
    }

    /// |H| at frequency `f`, evaluated from the coefficients.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

/// Cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub sections: Vec<Biquad>,
    /// Lowest corner frequency, used to size edge padding.
    f_low: f64,
    fs: f64,
}

impl Cascade {
    /// High-pass at `f_lo` followed by low-pass at `f_hi`. The low-pass is
    /// dropped when `f_hi` is at or above 0.45·fs, where the sampling itself
    /// already bandlimits the signal.
    pub fn bandpass(f_lo: f64, f_hi: f64, fs: f64) -> Self {
        let mut sections = vec![Biquad::highpass(f_lo, fs)];
        if f_hi < 0.45 * fs {
            sections.push(Biquad::lowpass(f_hi, fs));
        }
        Cascade { sections, f_low: f_lo, fs }
    }

    /// Single-pass magnitude response.
    pub fn magnitude(&self, f: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(f, self.fs)).product()
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let [u1, u2] = s.unit_state();
            let (mut z1, mut z2) = (u1 * level, u2 * level);
            level *= s.dc_gain();
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in x.iter_mut() {
                let xi = *v;
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase filtering: odd-reflection padding, steady-state initial
    /// conditions, forward pass, backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return vec![0.0; n];
        }
        let pad = ((2.0 * self.fs / self.f_low).ceil() as usize).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}
