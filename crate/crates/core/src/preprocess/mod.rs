//! Signal cleaning chain: band-pass, notch, resample, segment, reject, normalize.

pub mod filter;
pub mod resample;

use ndarray::{s, Array2, Axis};

use crate::eeg_io::{EegRecording, SampleSet};
use crate::error::{ensure, Error, Result};
use crate::kv::KvDoc;
use filter::Cascade;

pub const HIGHPASS_ORDER: usize = 4;
pub const LOWPASS_ORDER: usize = 8;
pub const NOTCH_Q: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub bandpass_lo: f64,
    pub bandpass_hi: f64,
    pub notch_freq: f64,
    pub target_rate: f64,
    pub segment_s: f64,
    pub reject_amp_uv: f64,
    pub norm_unit_uv: f64,
    /// Drop recordings no longer than this (0 disables).
    pub min_duration_s: f64,
    /// Seconds cut from both ends of each recording before filtering (0 disables).
    pub trim_edges_s: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            bandpass_lo: 0.3,
            bandpass_hi: 75.0,
            notch_freq: 60.0,
            target_rate: 200.0,
            segment_s: 30.0,
            reject_amp_uv: 100.0,
            norm_unit_uv: 100.0,
            min_duration_s: 0.0,
            trim_edges_s: 0.0,
        }
    }
}

impl PreprocessConfig {
    /// Full-corpus rules: recordings of at most 5 minutes dropped,
    /// first and last minute discarded.
    pub fn with_corpus_trimming(mut self) -> Self {
        self.min_duration_s = 300.0;
        self.trim_edges_s = 60.0;
        self
    }

    /// Checks that do not depend on a recording.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            0.0 < self.bandpass_lo && self.bandpass_lo < self.bandpass_hi,
            Config,
            "band edges must satisfy 0 < lo < hi (got {}..{})",
            self.bandpass_lo,
            self.bandpass_hi
        );
        ensure!(
            self.bandpass_hi < self.target_rate / 2.0,
            Config,
            "bandpass_hi {} must be below target Nyquist {}",
            self.bandpass_hi,
            self.target_rate / 2.0
        );
        ensure!(self.notch_freq > 0.0, Config, "notch_freq must be positive");
        ensure!(self.segment_s > 0.0, Config, "segment_s must be positive");
        ensure!(self.reject_amp_uv > 0.0, Config, "reject_amp_uV must be positive");
        ensure!(self.norm_unit_uv > 0.0, Config, "norm_unit_uV must be positive");
        ensure!(
            self.min_duration_s >= 0.0 && self.trim_edges_s >= 0.0,
            Config,
            "trimming options must be non-negative"
        );
        Ok(())
    }

    pub fn validate_for(&self, rec: &EegRecording) -> Result<()> {
        self.validate()?;
        let nyq = rec.sample_rate / 2.0;
        ensure!(
            self.notch_freq < nyq,
            Config,
            "notch {} Hz is not below the recording's Nyquist {nyq} Hz",
            self.notch_freq
        );
        ensure!(
            self.bandpass_hi < nyq,
            Config,
            "bandpass_hi {} Hz is not below the recording's Nyquist {nyq} Hz",
            self.bandpass_hi
        );
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("bandpass_lo", self.bandpass_lo);
        doc.set("bandpass_hi", self.bandpass_hi);
        doc.set("notch_freq", self.notch_freq);
        doc.set("target_rate", self.target_rate);
        doc.set("segment_s", self.segment_s);
        doc.set("reject_amp_uv", self.reject_amp_uv);
        doc.set("norm_unit_uv", self.norm_unit_uv);
        doc.set("min_duration_s", self.min_duration_s);
        doc.set("trim_edges_s", self.trim_edges_s);
        doc
    }

    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        use crate::kv::parse_value as p;
        match key {
            "bandpass_lo" => self.bandpass_lo = p(key, raw)?,
            "bandpass_hi" => self.bandpass_hi = p(key, raw)?,
            "notch_freq" => self.notch_freq = p(key, raw)?,
            "target_rate" => self.target_rate = p(key, raw)?,
            "segment_s" => self.segment_s = p(key, raw)?,
            "reject_amp_uv" => self.reject_amp_uv = p(key, raw)?,
            "norm_unit_uv" => self.norm_unit_uv = p(key, raw)?,
            "min_duration_s" => self.min_duration_s = p(key, raw)?,
            "trim_edges_s" => self.trim_edges_s = p(key, raw)?,
            _ => return Err(Error::Config(format!("unknown key `preprocess.{key}`"))),
        }
        Ok(())
    }
}

fn map_channels(rec: &EegRecording, f: impl Fn(&[f64]) -> Vec<f64>) -> Array2<f32> {
    let rows: Vec<Vec<f64>> = rec
        .data
        .axis_iter(Axis(0))
        .map(|row| f(&row.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()))
        .collect();
    let t = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), t), |(c, i)| rows[c][i] as f32)
}

fn with_data(rec: &EegRecording, data: Array2<f32>, sample_rate: f64) -> EegRecording {
    EegRecording {
        data,
        sample_rate,
        channel_names: rec.channel_names.clone(),
        unit_scale: rec.unit_scale,
    }
}

/// Zero-phase 4th-order Butterworth band-pass.
pub fn bandpass(rec: &EegRecording, lo: f64, hi: f64) -> Result<EegRecording> {
    let nyq = rec.sample_rate / 2.0;
    ensure!(
        0.0 < lo && lo < hi && hi < nyq,
        Invalid,
        "band edges must satisfy 0 < lo < hi < {nyq} Hz (got {lo}..{hi})"
    );
    let cascade = Cascade::butterworth_bandpass(rec.sample_rate, lo, hi, HIGHPASS_ORDER, LOWPASS_ORDER);
    Ok(with_data(rec, map_channels(rec, |x| cascade.filtfilt(x)), rec.sample_rate))
}

/// Zero-phase biquad notch (Q = 30) at `f0`.
pub fn notch(rec: &EegRecording, f0: f64) -> Result<EegRecording> {
    let nyq = rec.sample_rate / 2.0;
    ensure!(0.0 < f0 && f0 < nyq, Invalid, "notch {f0} Hz must lie in (0, {nyq}) Hz");
    let cascade = Cascade::notch(rec.sample_rate, f0, NOTCH_Q);
    Ok(with_data(rec, map_channels(rec, |x| cascade.filtfilt(x)), rec.sample_rate))
}

/// Polyphase rational resampling; output length `round(T * target / fs)`.
pub fn resample(rec: &EegRecording, target: f64) -> Result<EegRecording> {
    let (up, down) = resample::rational_ratio(rec.sample_rate, target)?;
    if up == down {
        return Ok(with_data(rec, rec.data.clone(), target));
    }
    let out_len = (rec.timepoints() as f64 * up as f64 / down as f64).round() as usize;
    ensure!(out_len >= 1, Invalid, "resampled recording would be empty");
    let h = resample::design_filter(up, down);
    let data = map_channels(rec, |x| resample::resample_poly(x, up, down, &h, out_len));
    Ok(with_data(rec, data, target))
}

/// Non-overlapping windows of `seconds`; the trailing remainder is dropped.
pub fn segment(rec: &EegRecording, seconds: f64) -> Result<SampleSet> {
    ensure!(seconds > 0.0, Invalid, "segment length must be positive");
    let win = (seconds * rec.sample_rate).round() as usize;
    ensure!(win >= 1, Invalid, "segment shorter than one sample");
    let count = rec.timepoints() / win;
    ensure!(
        count >= 1,
        Invalid,
        "recording of {:.3} s is shorter than one {seconds} s segment",
        rec.duration_s()
    );
    let samples = (0..count)
        .map(|k| rec.data.slice(s![.., k * win..(k + 1) * win]).to_owned())
        .collect();
    SampleSet::new(samples, None, rec.sample_rate)
}

/// Remove samples with any `|value| > threshold_uv`; survivors keep their order.
pub fn reject_bad(set: &SampleSet, threshold_uv: f64) -> SampleSet {
    let keep: Vec<usize> = (0..set.len())
        .filter(|&i| set.samples[i].iter().all(|v| f64::from(v.abs()) <= threshold_uv))
        .collect();
    set.select(&keep)
}

/// Divide every value by `unit_uv`.
pub fn normalize(set: &SampleSet, unit_uv: f64) -> Result<SampleSet> {
    ensure!(unit_uv > 0.0, Invalid, "normalization unit must be positive");
    Ok(SampleSet {
        samples: set
            .samples
            .iter()
            .map(|s| s.mapv(|v| (f64::from(v) / unit_uv) as f32))
            .collect(),
        labels: set.labels.clone(),
        sample_rate: set.sample_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineReport {
    pub segments: usize,
    pub rejected: usize,
    /// The recording failed the minimum-duration rule and produced nothing.
    pub skipped: bool,
}

impl PipelineReport {
    pub fn kept(&self) -> usize {
        self.segments - self.rejected
    }
}

impl std::fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.skipped {
            write!(f, "skipped (too short)")
        } else {
            write!(f, "{} segments, {} rejected", self.segments, self.rejected)
        }
    }
}

/// Full chain on one recording. Values are first converted to microvolts
/// using the recording's `unit_scale`.
pub fn run_pipeline(rec: &EegRecording, cfg: &PreprocessConfig) -> Result<(SampleSet, PipelineReport)> {
    cfg.validate_for(rec)?;
    let empty = || SampleSet {
        samples: vec![],
        labels: None,
        sample_rate: cfg.target_rate,
    };
    if cfg.min_duration_s > 0.0 && rec.duration_s() <= cfg.min_duration_s {
        return Ok((
            empty(),
            PipelineReport {
                skipped: true,
                ..Default::default()
            },
        ));
    }
    let to_uv = rec.unit_scale * 1e6;
    let mut uv = with_data(rec, rec.data.mapv(|v| (f64::from(v) * to_uv) as f32), rec.sample_rate);
    uv.unit_scale = 1e-6;
    if cfg.trim_edges_s > 0.0 {
        let cut = (cfg.trim_edges_s * rec.sample_rate).round() as usize;
        ensure!(
            2 * cut < uv.timepoints(),
            Invalid,
            "recording too short to trim {} s from each end",
            cfg.trim_edges_s
        );
        uv.data = uv.data.slice(s![.., cut..uv.timepoints() - cut]).to_owned();
    }
    let filtered = bandpass(&uv, cfg.bandpass_lo, cfg.bandpass_hi)?;
    let notched = notch(&filtered, cfg.notch_freq)?;
    let resampled = resample(&notched, cfg.target_rate)?;
    let segments = segment(&resampled, cfg.segment_s)?;
    let clean = reject_bad(&segments, cfg.reject_amp_uv);
    let report = PipelineReport {
        segments: segments.len(),
        rejected: segments.len() - clean.len(),
        skipped: false,
    };
    Ok((normalize(&clean, cfg.norm_unit_uv)?, report))
}
