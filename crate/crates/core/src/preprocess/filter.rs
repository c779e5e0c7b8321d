//! IIR filters as cascaded biquads, applied forward-backward for zero phase.

use std::f64::consts::PI;

/// Direct-form II transposed second-order section, normalised so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth-stage low-pass via the bilinear transform (RBJ form).
    pub fn lowpass(fs: f64, fc: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    pub fn highpass(fs: f64, fc: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos) / 2.0 / a0;
        Self {
            b: [b0, -2.0 * b0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Second-order notch with quality factor `q` (bandwidth `f0 / q`).
    pub fn notch(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [1.0 / a0, -2.0 * cos / a0, 1.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Steady-state internal state for a constant input `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc_gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y = dc_gain * x;
        let s2 = b2 * x - a2 * y;
        let s1 = b1 * x - a1 * y + s2;
        [s1, s2]
    }

    fn run(&self, signal: &mut [f64]) {
        let Some(&first) = signal.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let [mut s1, mut s2] = self.steady_state(first);
        for v in signal.iter_mut() {
            let x = *v;
            let y = b0 * x + s1;
            s1 = b1 * x - a1 * y + s2;
            s2 = b2 * x - a2 * y;
            *v = y;
        }
    }

    /// Magnitude response at `f` Hz.
    pub fn gain(&self, fs: f64, f: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

/// Q factors of the biquad stages of an even-order Butterworth filter.
pub fn butterworth_qs(order: usize) -> Vec<f64> {
    assert!(order >= 2 && order.is_multiple_of(2), "butterworth order must be even");
    (0..order / 2)
        .map(|k| {
            let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
            1.0 / (2.0 * theta.cos())
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct Cascade {
    pub stages: Vec<Biquad>,
}

impl Cascade {
    /// Band-pass as a Butterworth high-pass at `lo` followed by a
    /// Butterworth low-pass at `hi`, with separate orders.
    pub fn butterworth_bandpass(fs: f64, lo: f64, hi: f64, hp_order: usize, lp_order: usize) -> Self {
        let mut stages: Vec<Biquad> = butterworth_qs(hp_order)
            .into_iter()
            .map(|q| Biquad::highpass(fs, lo, q))
            .collect();
        stages.extend(butterworth_qs(lp_order).into_iter().map(|q| Biquad::lowpass(fs, hi, q)));
        Self { stages }
    }

    pub fn notch(fs: f64, f0: f64, q: f64) -> Self {
        Self {
            stages: vec![Biquad::notch(fs, f0, q)],
        }
    }

    pub fn gain(&self, fs: f64, f: f64) -> f64 {
        self.stages.iter().map(|s| s.gain(fs, f)).product()
    }

    fn run(&self, signal: &mut [f64]) {
        for s in &self.stages {
            s.run(signal);
        }
    }

    /// Slowest pole decay, in samples.
    fn time_constant(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| {
                // complex pair: radius sqrt(a2); otherwise bound by the larger real root
                let [a1, a2] = s.a;
                let disc = a1 * a1 - 4.0 * a2;
                let r = if disc < 0.0 {
                    a2.sqrt()
                } else {
                    (a1.abs() + disc.sqrt()) / 2.0
                };
                if r > 0.0 && r < 1.0 {
                    -1.0 / r.ln()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// Zero-phase forward-backward filtering with mirror padding long enough
    /// for the slowest pole to settle. The effective magnitude response is
    /// `gain^2`.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let settle = (8.0 * self.time_constant()).ceil() as usize;
        let pad = settle.max(256).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
