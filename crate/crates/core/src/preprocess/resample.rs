//! Rational polyphase resampling with a Kaiser-windowed sinc anti-aliasing filter.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const KAISER_BETA: f64 = 5.0;
const HALF_LEN_FACTOR: usize = 10;

/// Reduce `from -> to` to an integer ratio `(up, down)`.
pub fn rational_ratio(from: f64, to: f64) -> Result<(usize, usize)> {
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(Error::Invalid(format!("cannot resample {from} Hz -> {to} Hz")));
    }
    for scale in [1.0, 10.0, 100.0, 1000.0] {
        let (a, b) = (from * scale, to * scale);
        if (a - a.round()).abs() < 1e-6 && (b - b.round()).abs() < 1e-6 {
            let (a, b) = (a.round() as usize, b.round() as usize);
            let g = gcd(a, b);
            return Ok((b / g, a / g));
        }
    }
    Err(Error::Invalid(format!(
        "rates {from} and {to} are not representable as a ratio with 3 decimals"
    )))
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Low-pass FIR designed for an `up/down` resampler, unit DC gain times `up`.
pub fn design_filter(up: usize, down: usize) -> Vec<f64> {
    let max_rate = up.max(down);
    let half_len = HALF_LEN_FACTOR * max_rate;
    let len = 2 * half_len + 1;
    let cutoff = 1.0 / max_rate as f64;
    let denom = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let m = i as f64 - half_len as f64;
            let x = cutoff * m;
            let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            let r = 2.0 * i as f64 / (len - 1) as f64 - 1.0;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= up as f64 / sum);
    h
}

/// Resample one channel by `up/down` to exactly `out_len` samples.
pub fn resample_poly(x: &[f64], up: usize, down: usize, h: &[f64], out_len: usize) -> Vec<f64> {
    let half_len = (h.len() - 1) / 2;
    (0..out_len)
        .map(|k| {
            // taps where the upsampled input is non-zero: (m0 - i) % up == 0
            let m0 = k * down + half_len;
            let mut acc = 0.0;
            let mut i = m0 % up;
            while i < h.len() && i <= m0 {
                let xi = (m0 - i) / up;
                if xi < x.len() {
                    acc += h[i] * x[xi];
                }
                i += up;
            }
            acc
        })
        .collect()
}
