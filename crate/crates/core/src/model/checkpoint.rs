//! Checkpoint directories.
//!
//! `manifest.txt` holds `format_version`, `step`, `epoch`, one
//! `tensor.<name>=<dims>` or `state.<name>=<dims>` line per tensor, the model
//! configuration under `config.model.*` and free-form `meta.*` scalars. Each
//! tensor lives in `<name>.f32` (parameters) or `state.<name>.f32`
//! (optimizer state) as raw little-endian `f32`.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::config::ModelConfig;
use super::params::{encoder_specs, ParameterSet, HEAD_PREFIX};
use crate::eeg_io::{read_raw_f32, write_f32_file, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::kv::{join_list, parse_list, KvDoc};

const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterSet,
    /// Auxiliary tensors such as optimizer moments.
    pub state: ParameterSet,
    pub step: u64,
    pub epoch: usize,
    pub meta: KvDoc,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParameterSet) -> Self {
        Self {
            config,
            params,
            state: ParameterSet::new(),
            step: 0,
            epoch: 0,
            meta: KvDoc::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut doc = KvDoc::new();
        doc.set("format_version", FORMAT_VERSION);
        doc.set("step", self.step);
        doc.set("epoch", self.epoch);
        for (kind, set) in [("tensor", &self.params), ("state", &self.state)] {
            for (name, t) in set.iter() {
                doc.set(format!("{kind}.{name}"), join_list(t.shape()));
                let file = match kind {
                    "tensor" => format!("{name}.f32"),
                    _ => format!("state.{name}.f32"),
                };
                let values: Vec<f32> = t.iter().map(|&v| v as f32).collect();
                write_f32_file(&dir.join(file), &values)?;
            }
        }
        doc.extend_prefixed("config.model", &self.config.to_kv());
        doc.extend_prefixed("meta", &self.meta);
        doc.write(&dir.join(MANIFEST))
    }

    /// Load and validate every encoder tensor against the stored configuration.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let doc = KvDoc::read(&mpath)?;
        let fmt = |e: Error| Error::format(&mpath, e.to_string());
        let version: u32 = doc.parse_key("format_version").map_err(fmt)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(&mpath, format!("unsupported format_version {version}")));
        }
        let config = ModelConfig::from_kv(&doc.section("config.model"))?;
        let mut params = ParameterSet::new();
        let mut state = ParameterSet::new();
        for (key, dims) in doc.iter() {
            let (set, name, file) = if let Some(name) = key.strip_prefix("tensor.") {
                (&mut params, name, format!("{name}.f32"))
            } else if let Some(name) = key.strip_prefix("state.") {
                (&mut state, name, format!("state.{name}.f32"))
            } else {
                continue;
            };
            let shape: Vec<usize> = parse_list(key, dims).map_err(fmt)?;
            let values = read_raw_f32(&dir.join(file), shape.iter().product())?;
            let tensor = ArrayD::from_shape_vec(IxDyn(&shape), values.into_iter().map(f64::from).collect())
                .map_err(|e| Error::format(dir, e.to_string()))?;
            set.insert(name, tensor);
        }
        let specs = encoder_specs(&config);
        params.check_specs(&specs)?;
        let unexpected: Vec<&str> = params
            .names()
            .filter(|n| !n.starts_with(HEAD_PREFIX) && !specs.iter().any(|s| s.name == *n))
            .collect();
        if !unexpected.is_empty() {
            return Err(Error::Shape(format!("unexpected tensors in checkpoint: {unexpected:?}")));
        }
        params.check_finite()?;
        Ok(Self {
            config,
            params,
            state,
            step: doc.parse_key("step").map_err(fmt)?,
            epoch: doc.parse_key("epoch").map_err(fmt)?,
            meta: doc.section("meta"),
        })
    }
}

/// Shapes of `params` must match `cfg` exactly (encoder part).
pub fn check_compatible(cfg: &ModelConfig, params: &ParameterSet) -> Result<()> {
    params.check_specs(&encoder_specs(cfg))
}
