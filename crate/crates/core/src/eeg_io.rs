//! EEG containers, synthetic data and batching.
//!
//! A recording container is a directory holding `manifest.txt` (line-oriented
//! `key=value`, `format_version=1`) and `data.f32`, the samples as raw
//! little-endian `f32` in row-major `[channels x timepoints]` order.
//! A sample-set container uses the same layout with an extra leading sample
//! axis and an optional `labels.txt`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::kv::{join_list, parse_list, KvDoc};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const DATA: &str = "data.f32";
const LABELS: &str = "labels.txt";

/// Continuous multichannel recording, `data[channel, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub data: Array2<f32>,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    /// Physical volts per stored unit.
    pub unit_scale: f64,
}

impl EegRecording {
    pub fn new(
        data: Array2<f32>,
        sample_rate: f64,
        channel_names: Vec<String>,
        unit_scale: f64,
    ) -> Result<Self> {
        let rec = Self {
            data,
            sample_rate,
            channel_names,
            unit_scale,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Recording with generated channel names `ch0..chN`.
    pub fn with_default_names(data: Array2<f32>, sample_rate: f64, unit_scale: f64) -> Result<Self> {
        let names = (0..data.nrows()).map(|i| format!("ch{i}")).collect();
        Self::new(data, sample_rate, names, unit_scale)
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn timepoints(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.timepoints() as f64 / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels() >= 1, Invalid, "recording has no channels");
        ensure!(self.timepoints() >= 1, Invalid, "recording has no timepoints");
        ensure!(
            self.sample_rate.is_finite() && self.sample_rate > 0.0,
            Invalid,
            "sample_rate must be positive, got {}",
            self.sample_rate
        );
        ensure!(
            self.unit_scale.is_finite() && self.unit_scale > 0.0,
            Invalid,
            "unit_scale must be positive, got {}",
            self.unit_scale
        );
        ensure!(
            self.channel_names.len() == self.channels(),
            Invalid,
            "{} channel names for {} channels",
            self.channel_names.len(),
            self.channels()
        );
        let unique: HashSet<&String> = self.channel_names.iter().collect();
        ensure!(unique.len() == self.channel_names.len(), Invalid, "duplicate channel names");
        ensure!(
            self.channel_names.iter().all(|n| !n.contains(',') && !n.contains('\n')),
            Invalid,
            "channel names may not contain ',' or newlines"
        );
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: "recording data".into(),
            });
        }
        Ok(())
    }
}

/// Labels attached to a [`SampleSet`].
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Class(Vec<usize>),
    Target(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(v) => v.len(),
            Labels::Target(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Class(v) => Labels::Class(idx.iter().map(|&i| v[i]).collect()),
            Labels::Target(v) => Labels::Target(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Real-valued view (class index as `f64`).
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Class(v) => v[i] as f64,
            Labels::Target(v) => v[i],
        }
    }
}

/// Fixed-shape samples `[C x T]` with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Array2<f32>>,
    pub labels: Option<Labels>,
    pub sample_rate: f64,
}

impl SampleSet {
    pub fn new(samples: Vec<Array2<f32>>, labels: Option<Labels>, sample_rate: f64) -> Result<Self> {
        let set = Self {
            samples,
            labels,
            sample_rate,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(C, T)` of the samples, or `None` for an empty set.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.dim())
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sample_rate.is_finite() && self.sample_rate > 0.0,
            Invalid,
            "sample_rate must be positive"
        );
        if let Some(shape) = self.shape() {
            ensure!(
                self.samples.iter().all(|s| s.dim() == shape),
                Shape,
                "samples differ in shape"
            );
        }
        if let Some(labels) = &self.labels {
            ensure!(
                labels.len() == self.samples.len(),
                Shape,
                "{} labels for {} samples",
                labels.len(),
                self.samples.len()
            );
        }
        Ok(())
    }

    /// Subset in the given index order.
    pub fn select(&self, idx: &[usize]) -> SampleSet {
        SampleSet {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| l.select(idx)),
            sample_rate: self.sample_rate,
        }
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Some(Labels::Class(v)) => Some(v),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Containers

fn write_raw_f32<'a>(path: &Path, values: impl Iterator<Item = &'a f32>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_raw_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    write_raw_f32(path, values.iter())
}

fn check_version(doc: &KvDoc, path: &Path) -> Result<()> {
    let version: u32 = doc
        .parse_key("format_version")
        .map_err(|e| Error::format(path, e.to_string()))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format_version {version}")));
    }
    Ok(())
}

fn manifest_err(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

/// Write `rec` to the container directory `dir` (created if absent).
pub fn write_container(rec: &EegRecording, dir: &Path) -> Result<()> {
    rec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut doc = KvDoc::new();
    doc.set("format_version", FORMAT_VERSION);
    doc.set("kind", "recording");
    doc.set("channels", rec.channels());
    doc.set("timepoints", rec.timepoints());
    doc.set("sample_rate", rec.sample_rate);
    doc.set("unit_scale", rec.unit_scale);
    doc.set("channel_names", rec.channel_names.join(","));
    let data = rec.data.as_standard_layout();
    write_raw_f32(&dir.join(DATA), data.iter())?;
    doc.write(&dir.join(MANIFEST))
}

/// Read a recording container written by [`write_container`].
pub fn read_container(dir: &Path) -> Result<EegRecording> {
    let mpath = dir.join(MANIFEST);
    let doc = KvDoc::read(&mpath)?;
    check_version(&doc, &mpath)?;
    let err = manifest_err(&mpath);
    let channels: usize = doc.parse_key("channels").map_err(&err)?;
    let timepoints: usize = doc.parse_key("timepoints").map_err(&err)?;
    let sample_rate: f64 = doc.parse_key("sample_rate").map_err(&err)?;
    let unit_scale: f64 = doc.parse_key("unit_scale").map_err(&err)?;
    let names: Vec<String> = doc
        .require("channel_names")
        .map_err(&err)?
        .split(',')
        .map(str::to_string)
        .collect();
    let values = read_raw_f32(&dir.join(DATA), channels * timepoints)?;
    let data = Array2::from_shape_vec((channels, timepoints), values)
        .map_err(|e| Error::format(dir, e.to_string()))?;
    EegRecording::new(data, sample_rate, names, unit_scale)
}

/// Write a sample set as `[N x C x T]` raw `f32` plus labels.
pub fn write_sample_set(set: &SampleSet, dir: &Path) -> Result<()> {
    set.validate()?;
    let (c, t) = set
        .shape()
        .ok_or_else(|| Error::Invalid("cannot write an empty sample set".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut doc = KvDoc::new();
    doc.set("format_version", FORMAT_VERSION);
    doc.set("kind", "sampleset");
    doc.set("samples", set.len());
    doc.set("channels", c);
    doc.set("timepoints", t);
    doc.set("sample_rate", set.sample_rate);
    let labels = match &set.labels {
        None => "none",
        Some(Labels::Class(_)) => "class",
        Some(Labels::Target(_)) => "target",
    };
    doc.set("labels", labels);
    let mut bytes = Vec::with_capacity(set.len() * c * t * 4);
    for s in &set.samples {
        for v in s.as_standard_layout().iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dpath = dir.join(DATA);
    std::fs::write(&dpath, bytes).map_err(|e| Error::io(&dpath, e))?;
    if let Some(l) = &set.labels {
        let text: String = (0..l.len())
            .map(|i| match l {
                Labels::Class(v) => format!("{}\n", v[i]),
                Labels::Target(v) => format!("{:e}\n", v[i]),
            })
            .collect();
        let lpath = dir.join(LABELS);
        std::fs::write(&lpath, text).map_err(|e| Error::io(&lpath, e))?;
    }
    doc.write(&dir.join(MANIFEST))
}

pub fn read_sample_set(dir: &Path) -> Result<SampleSet> {
    let mpath = dir.join(MANIFEST);
    let doc = KvDoc::read(&mpath)?;
    check_version(&doc, &mpath)?;
    let err = manifest_err(&mpath);
    let n: usize = doc.parse_key("samples").map_err(&err)?;
    let c: usize = doc.parse_key("channels").map_err(&err)?;
    let t: usize = doc.parse_key("timepoints").map_err(&err)?;
    let sample_rate: f64 = doc.parse_key("sample_rate").map_err(&err)?;
    let values = read_raw_f32(&dir.join(DATA), n * c * t)?;
    let samples = values
        .chunks_exact(c * t)
        .map(|chunk| Array2::from_shape_vec((c, t), chunk.to_vec()).expect("chunk size"))
        .collect();
    let lpath = dir.join(LABELS);
    let labels = match doc.require("labels").map_err(&err)? {
        "none" => None,
        kind @ ("class" | "target") => {
            let text = std::fs::read_to_string(&lpath).map_err(|e| Error::io(&lpath, e))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let bad = |l: &str| Error::format(&lpath, format!("bad label `{l}`"));
            Some(if kind == "class" {
                Labels::Class(
                    lines
                        .iter()
                        .map(|l| l.trim().parse().map_err(|_| bad(l)))
                        .collect::<Result<_>>()?,
                )
            } else {
                Labels::Target(
                    lines
                        .iter()
                        .map(|l| l.trim().parse().map_err(|_| bad(l)))
                        .collect::<Result<_>>()?,
                )
            })
        }
        other => return Err(Error::format(&mpath, format!("unknown labels kind `{other}`"))),
    };
    SampleSet::new(samples, labels, sample_rate).map_err(|e| Error::format(dir, e.to_string()))
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Where class `k`'s oscillation lives: channel group, band and amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct BandAssignment {
    pub channels: Vec<usize>,
    pub band: (f64, f64),
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_channels: usize,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub class_count: usize,
    /// One entry per class.
    pub band_assignments: Vec<BandAssignment>,
    pub samples_per_class: usize,
    pub noise_std: f64,
    /// Draw a uniform phase per sample instead of starting every tone at zero.
    pub random_phase: bool,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    /// Two classes over 8 channels: alpha-band tone on channels 0..4 vs
    /// beta-band tone on channels 4..8, 5 s at 200 Hz.
    fn default() -> Self {
        Self {
            n_channels: 8,
            duration_s: 5.0,
            sample_rate: 200.0,
            class_count: 2,
            band_assignments: vec![
                BandAssignment {
                    channels: (0..4).collect(),
                    band: (8.0, 12.0),
                    amplitude: 0.5,
                },
                BandAssignment {
                    channels: (4..8).collect(),
                    band: (20.0, 24.0),
                    amplitude: 0.5,
                },
            ],
            samples_per_class: 100,
            noise_std: 0.1,
            random_phase: true,
            rng_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn timepoints(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.class_count >= 1, Config, "class_count must be >= 1");
        ensure!(self.n_channels >= 1, Config, "n_channels must be >= 1");
        ensure!(self.sample_rate > 0.0, Config, "sample_rate must be positive");
        ensure!(self.timepoints() >= 1, Config, "duration too short");
        ensure!(self.noise_std >= 0.0, Config, "noise_std must be >= 0");
        ensure!(
            self.band_assignments.len() == self.class_count,
            Config,
            "{} band assignments for {} classes",
            self.band_assignments.len(),
            self.class_count
        );
        let nyquist = self.sample_rate / 2.0;
        for (k, b) in self.band_assignments.iter().enumerate() {
            ensure!(
                0.0 <= b.band.0 && b.band.0 <= b.band.1,
                Config,
                "class {k}: band {:?} is not ordered",
                b.band
            );
            ensure!(
                b.band.1 < nyquist,
                Config,
                "class {k}: band {:?} Hz is not below Nyquist {nyquist} Hz",
                b.band
            );
            ensure!(
                b.channels.iter().all(|&c| c < self.n_channels),
                Config,
                "class {k}: channel index out of range"
            );
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("channels", self.n_channels);
        doc.set("duration_s", self.duration_s);
        doc.set("sample_rate", self.sample_rate);
        doc.set("classes", self.class_count);
        doc.set("samples_per_class", self.samples_per_class);
        doc.set("noise_std", self.noise_std);
        doc.set("random_phase", self.random_phase);
        doc.set("seed", self.rng_seed);
        for (k, b) in self.band_assignments.iter().enumerate() {
            doc.set(format!("class{k}.channels"), join_list(&b.channels));
            doc.set(format!("class{k}.band"), format!("{},{}", b.band.0, b.band.1));
            doc.set(format!("class{k}.amplitude"), b.amplitude);
        }
        doc
    }

    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        use crate::kv::parse_value as p;
        match key {
            "channels" => self.n_channels = p(key, raw)?,
            "duration_s" => self.duration_s = p(key, raw)?,
            "sample_rate" => self.sample_rate = p(key, raw)?,
            "classes" => {
                self.class_count = p(key, raw)?;
                self.band_assignments.resize(
                    self.class_count,
                    BandAssignment {
                        channels: vec![],
                        band: (0.0, 0.0),
                        amplitude: 0.0,
                    },
                );
            }
            "samples_per_class" => self.samples_per_class = p(key, raw)?,
            "noise_std" => self.noise_std = p(key, raw)?,
            "random_phase" => self.random_phase = p(key, raw)?,
            "seed" => self.rng_seed = p(key, raw)?,
            _ => {
                let (class, field) = key
                    .strip_prefix("class")
                    .and_then(|r| r.split_once('.'))
                    .ok_or_else(|| Error::Config(format!("unknown key `synth.{key}`")))?;
                let k: usize = p(key, class)?;
                let slot = self
                    .band_assignments
                    .get_mut(k)
                    .ok_or_else(|| Error::Config(format!("class {k} out of range in `{key}`")))?;
                match field {
                    "channels" => slot.channels = parse_list(key, raw)?,
                    "band" => {
                        let v: Vec<f64> = parse_list(key, raw)?;
                        ensure!(v.len() == 2, Config, "`{key}` needs lo,hi");
                        slot.band = (v[0], v[1]);
                    }
                    "amplitude" => slot.amplitude = p(key, raw)?,
                    _ => return Err(Error::Config(format!("unknown key `synth.{key}`"))),
                }
            }
        }
        Ok(())
    }
}

/// Generate labelled samples; sample `i` has class `i % class_count`.
///
/// Each sample draws one frequency uniformly from its class band; the class's
/// channel group carries `amplitude * sin(2*pi*f*t/fs + phase)`. Gaussian noise
/// of `noise_std` is added to every channel.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SampleSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let t_len = spec.timepoints();
    let total = spec.class_count * spec.samples_per_class;
    let mut samples = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let k = i % spec.class_count;
        let assign = &spec.band_assignments[k];
        let f = if assign.band.1 > assign.band.0 {
            rng.random_range(assign.band.0..assign.band.1)
        } else {
            assign.band.0
        };
        let phase = if spec.random_phase {
            rng.random_range(0.0..2.0 * PI)
        } else {
            0.0
        };
        let mut sample = Array2::<f64>::zeros((spec.n_channels, t_len));
        for &c in &assign.channels {
            for (ti, v) in sample.row_mut(c).iter_mut().enumerate() {
                *v = assign.amplitude * (2.0 * PI * f * ti as f64 / spec.sample_rate + phase).sin();
            }
        }
        if spec.noise_std > 0.0 {
            sample.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        samples.push(sample.mapv(|v| v as f32));
        labels.push(k);
    }
    SampleSet::new(samples, Some(Labels::Class(labels)), spec.sample_rate)
}

// ---------------------------------------------------------------------------
// Batching

/// One epoch of index batches over a permutation of `0..len`.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// Batches of sample indices. `shuffle_seed = None` keeps natural order.
pub fn batch_iter(set: &SampleSet, batch_size: usize, shuffle_seed: Option<u64>) -> Result<BatchIter> {
    index_batches(set.len(), batch_size, shuffle_seed)
}

pub fn index_batches(len: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Result<BatchIter> {
    ensure!(len > 0, Invalid, "cannot batch an empty set");
    ensure!(batch_size >= 1, Config, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..len).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        order,
        batch_size,
        pos: 0,
    })
}

/// Convenience view of one sample as `f64`.
pub fn sample_f64(sample: ArrayView2<f32>) -> Array2<f64> {
    sample.mapv(f64::from)
}
