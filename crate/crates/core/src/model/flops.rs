//! Analytic forward FLOP count for one sample (2 FLOPs per multiply-add).

use std::fmt;

use super::config::{AttnAxis, ModelConfig, PeVariant};

/// Per-element cost of a normalisation (mean, variance, scale, shift).
const NORM_COST: u64 = 5;
/// Per-element cost of a softmax (max, exp, sum, divide).
const SOFTMAX_COST: u64 = 5;
/// Per-element cost of GELU.
const GELU_COST: u64 = 8;

pub const COMPONENTS: [&str; 16] = [
    "patch_conv",
    "patch_norm_act",
    "fft",
    "freq_fc",
    "pos_enc",
    "qkv_proj",
    "qk_norm",
    "scores_spatial",
    "scores_temporal",
    "scores_full",
    "softmax",
    "attn_values",
    "out_proj",
    "ffn",
    "layer_norm",
    "recon",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub channels: usize,
    pub seq_len: usize,
    pub components: Vec<(&'static str, u64)>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.components.iter().map(|(_, v)| v).sum()
    }

    pub fn get(&self, name: &str) -> u64 {
        self.components
            .iter()
            .find(|(k, _)| *k == name)
            .map_or(0, |(_, v)| *v)
    }

    /// All query-key score FLOPs regardless of stripe shape.
    pub fn scores(&self) -> u64 {
        self.get("scores_spatial") + self.get("scores_temporal") + self.get("scores_full")
    }

    fn add(&mut self, name: &str, v: u64) {
        let slot = self
            .components
            .iter_mut()
            .find(|(k, _)| *k == name)
            .expect("known component");
        slot.1 += v;
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.components {
            writeln!(f, "{k}={v}")?;
        }
        write!(f, "total={}", self.total())
    }
}

pub fn count_flops(cfg: &ModelConfig, channels: usize, seq_len: usize) -> FlopReport {
    let (c, n) = (channels as u64, seq_len as u64);
    let tokens = c * n;
    let d = cfg.d as u64;
    let t = cfg.patch_len as u64;
    let dk = cfg.head_dim() as u64;
    let mut r = FlopReport {
        channels,
        seq_len,
        components: COMPONENTS.iter().map(|&k| (k, 0)).collect(),
    };

    let mut len = cfg.patch_len;
    for spec in &cfg.conv {
        len = spec.out_len(len).unwrap_or(0);
        let outputs = tokens * (spec.out_ch * len) as u64;
        r.add("patch_conv", 2 * outputs * (spec.in_ch * spec.kernel) as u64);
        r.add("patch_norm_act", outputs * (NORM_COST + GELU_COST));
    }
    let bins = cfg.fft_bins() as u64;
    let log_t = (t as f64).log2().ceil() as u64;
    r.add("fft", tokens * (5 * t * log_t / 2 + 3 * bins));
    r.add("freq_fc", 2 * tokens * bins * d + tokens * d);
    r.add(
        "pos_enc",
        match (cfg.pe, cfg.pe_kernel()) {
            (_, Some((kh, kw))) => 2 * tokens * d * (kh * kw) as u64,
            (PeVariant::Ape, None) => tokens * d,
            _ => 0,
        },
    );

    for layer in 0..cfg.n_layers {
        r.add("layer_norm", 2 * tokens * d * NORM_COST);
        for g in cfg.head_groups(layer) {
            let w = g.width as u64;
            let heads = g.heads as u64;
            r.add("qkv_proj", 3 * 2 * tokens * w * w);
            r.add("qk_norm", 2 * tokens * w * NORM_COST);
            // sum over stripes of stripe_len^2
            let pairs = match g.axis {
                AttnAxis::Spatial => n * c * c,
                AttnAxis::Temporal => c * n * n,
                AttnAxis::Full => tokens * tokens,
            };
            let key = match g.axis {
                AttnAxis::Spatial => "scores_spatial",
                AttnAxis::Temporal => "scores_temporal",
                AttnAxis::Full => "scores_full",
            };
            r.add(key, heads * 2 * dk * pairs);
            r.add("softmax", heads * pairs * SOFTMAX_COST);
            r.add("attn_values", heads * 2 * dk * pairs);
        }
        r.add("out_proj", 2 * tokens * d * d);
        let f = cfg.ffn_dim as u64;
        r.add("ffn", 2 * 2 * tokens * d * f + tokens * f * GELU_COST);
    }
    r.add("recon", 2 * tokens * d * t);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::AttentionVariant;

    fn variant(v: AttentionVariant) -> ModelConfig {
        ModelConfig {
            attention: v,
            ..ModelConfig::base()
        }
    }

    #[test]
    fn single_token_scores_agree() {
        let s: Vec<u64> = AttentionVariant::ALL
            .iter()
            .map(|&v| count_flops(&variant(v), 1, 1).scores())
            .collect();
        assert!(s.iter().all(|&x| x == s[0]));
    }

    #[test]
    fn doubling_sequence_length() {
        let cc = variant(AttentionVariant::CrissCross);
        let (a, b) = (count_flops(&cc, 16, 10), count_flops(&cc, 16, 20));
        assert_eq!(b.get("scores_temporal"), 4 * a.get("scores_temporal"));
        assert_eq!(b.get("scores_spatial"), 2 * a.get("scores_spatial"));
        let full = variant(AttentionVariant::Full);
        assert_eq!(
            count_flops(&full, 16, 20).get("scores_full"),
            4 * count_flops(&full, 16, 10).get("scores_full")
        );
    }

    #[test]
    fn ordering_at_base_scale() {
        let [cc, full, axial] = AttentionVariant::ALL.map(|v| count_flops(&variant(v), 16, 10).total());
        assert!(cc < axial && axial < full, "{cc} {axial} {full}");
    }
}
