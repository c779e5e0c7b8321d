//! Real-FFT energy vectors and their adjoint.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::config::EnergyKind;

const LOG_EPS: f64 = 1e-8;

/// Reusable forward plan for patches of one length.
pub struct EnergyPlan {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
    kind: EnergyKind,
}

impl EnergyPlan {
    pub fn new(len: usize, kind: EnergyKind) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        Self { fft, len, kind }
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// Non-negative half spectrum of `x`.
    pub fn spectrum(&self, x: ArrayView1<f64>) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    pub fn energy(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let t = self.len as f64;
        self.spectrum(x)
            .into_iter()
            .map(|z| {
                let p = z.norm_sqr() / t;
                match self.kind {
                    EnergyKind::Power => p,
                    EnergyKind::Magnitude => p.sqrt(),
                    EnergyKind::LogPower => (p + LOG_EPS).ln(),
                }
            })
            .collect()
    }

    /// Row-wise energy of `[N, t]`.
    pub fn energy_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.bins()));
        for (row, mut o) in x.outer_iter().zip(out.outer_iter_mut()) {
            o.assign(&self.energy(row));
        }
        out
    }

    /// `J(x)^T g` where `J` is the Jacobian of [`Self::energy`] at `x`.
    pub fn energy_vjp(&self, x: ArrayView1<f64>, g: ArrayView1<f64>) -> Array1<f64> {
        let t = self.len as f64;
        let spec = self.spectrum(x);
        // dE_k/dx_i = c_k (R_k cos(th) - I_k sin(th)),  th = 2 pi k i / t
        let coef: Vec<f64> = spec
            .iter()
            .zip(g.iter())
            .map(|(z, &gk)| {
                let p = z.norm_sqr() / t;
                let c = match self.kind {
                    EnergyKind::Power => 2.0 / t,
                    EnergyKind::Magnitude => {
                        let m = z.norm();
                        if m > 0.0 {
                            1.0 / (m * t.sqrt())
                        } else {
                            0.0
                        }
                    }
                    EnergyKind::LogPower => 2.0 / (t * (p + LOG_EPS)),
                };
                gk * c
            })
            .collect();
        Array1::from_shape_fn(self.len, |i| {
            spec.iter()
                .zip(&coef)
                .enumerate()
                .map(|(k, (z, &c))| {
                    let th = 2.0 * PI * (k * i % self.len) as f64 / t;
                    c * (z.re * th.cos() - z.im * th.sin())
                })
                .sum()
        })
    }
}

/// Power energy `|RFFT(x)_k|^2 / t`.
pub fn fft_energy(x: ArrayView1<f64>) -> Array1<f64> {
    EnergyPlan::new(x.len(), EnergyKind::Power).energy(x)
}
