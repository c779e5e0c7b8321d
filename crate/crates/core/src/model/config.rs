use crate::error::{ensure, Error, Result};
use crate::kv::{join_list, parse_list, parse_value, KvDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

macro_rules! str_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl std::str::FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), s
                    ))),
                }
            }
        }
        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($name::$variant => $text,)+ })
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    CrissCross,
    Full,
    Axial,
}
str_enum!(AttentionVariant { CrissCross => "criss_cross", Full => "full", Axial => "axial" });

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] = [Self::CrissCross, Self::Full, Self::Axial];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeVariant {
    Acpe,
    Ape,
    Cpe,
    None,
}
str_enum!(PeVariant { Acpe => "acpe", Ape => "ape", Cpe => "cpe", None => "none" });

/// How the frequency branch turns an FFT into an energy vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    /// `|X_k|^2 / t`
    Power,
    /// `|X_k| / sqrt(t)`
    Magnitude,
    /// `ln(|X_k|^2 / t + 1e-8)`
    LogPower,
}
str_enum!(EnergyKind { Power => "power", Magnitude => "magnitude", LogPower => "log_power" });

/// Which tokens an attention head may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnAxis {
    /// Same time index (across channels).
    Spatial,
    /// Same channel (across time).
    Temporal,
    Full,
}

/// A set of heads sharing Q/K/V projections over a slice of the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadGroup {
    pub offset: usize,
    pub width: usize,
    pub heads: usize,
    pub axis: AttnAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub spatial_heads: usize,
    pub temporal_heads: usize,
    pub ffn_dim: usize,
    pub patch_len: usize,
    pub conv: Vec<ConvLayerSpec>,
    pub gn_groups: usize,
    /// `(spatial, temporal)` kernel of the asymmetric positional encoder.
    pub acpe_kernel: (usize, usize),
    pub cpe_kernel: usize,
    /// `(channels, patches)` capacity of the absolute position table.
    pub ape_max: (usize, usize),
    pub attention: AttentionVariant,
    pub pe: PeVariant,
    pub dropout: f64,
    /// Axial variant: layers below this index attend spatially, the rest temporally.
    pub axial_switch_layer: usize,
    pub energy: EnergyKind,
    pub learnable_mask_token: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::base()
    }
}

fn conv_stack(channels: usize, first_kernel: usize, first_stride: usize, first_pad: usize) -> Vec<ConvLayerSpec> {
    vec![
        ConvLayerSpec {
            in_ch: 1,
            out_ch: channels,
            kernel: first_kernel,
            stride: first_stride,
            padding: first_pad,
        },
        ConvLayerSpec {
            in_ch: channels,
            out_ch: channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        ConvLayerSpec {
            in_ch: channels,
            out_ch: channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
    ]
}

impl ModelConfig {
    /// Full-size pre-training configuration.
    pub fn base() -> Self {
        Self {
            d: 200,
            n_layers: 12,
            n_heads: 8,
            spatial_heads: 4,
            temporal_heads: 4,
            ffn_dim: 800,
            patch_len: 200,
            conv: conv_stack(25, 49, 25, 24),
            gn_groups: 5,
            acpe_kernel: (19, 7),
            cpe_kernel: 7,
            ape_max: (64, 64),
            attention: AttentionVariant::CrissCross,
            pe: PeVariant::Acpe,
            dropout: 0.1,
            axial_switch_layer: 6,
            energy: EnergyKind::Power,
            learnable_mask_token: false,
        }
    }

    /// Desk-scale model on 1 s / 200-point patches: `d = 4 channels x 8 positions`.
    pub fn small() -> Self {
        Self {
            d: 32,
            n_layers: 2,
            n_heads: 4,
            spatial_heads: 2,
            temporal_heads: 2,
            ffn_dim: 64,
            conv: conv_stack(4, 49, 25, 24),
            gn_groups: 2,
            acpe_kernel: (7, 3),
            axial_switch_layer: 1,
            ..Self::base()
        }
    }

    /// Gradient-check model: `d = 8`, 2 layers, 2 heads, 16-point patches.
    pub fn tiny() -> Self {
        Self {
            d: 8,
            n_layers: 2,
            n_heads: 2,
            spatial_heads: 1,
            temporal_heads: 1,
            ffn_dim: 16,
            patch_len: 16,
            conv: conv_stack(2, 5, 4, 2),
            gn_groups: 1,
            acpe_kernel: (5, 3),
            cpe_kernel: 3,
            ape_max: (8, 8),
            dropout: 0.0,
            axial_switch_layer: 1,
            ..Self::base()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    /// `(length, channels)` after each conv layer.
    pub fn conv_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.patch_len;
        self.conv
            .iter()
            .enumerate()
            .map(|(i, c)| {
                len = c.out_len(len).ok_or_else(|| {
                    Error::Config(format!("conv layer {i}: kernel {} longer than padded input", c.kernel))
                })?;
                Ok(len)
            })
            .collect()
    }

    pub fn fft_bins(&self) -> usize {
        self.patch_len / 2 + 1
    }

    /// `(spatial, temporal)` kernel of the convolutional positional encoder, if any.
    pub fn pe_kernel(&self) -> Option<(usize, usize)> {
        match self.pe {
            PeVariant::Acpe => Some(self.acpe_kernel),
            PeVariant::Cpe => Some((self.cpe_kernel, self.cpe_kernel)),
            PeVariant::Ape | PeVariant::None => None,
        }
    }

    pub fn head_groups(&self, layer: usize) -> Vec<HeadGroup> {
        let dk = self.head_dim();
        match self.attention {
            AttentionVariant::CrissCross => {
                let spatial = HeadGroup {
                    offset: 0,
                    width: self.spatial_heads * dk,
                    heads: self.spatial_heads,
                    axis: AttnAxis::Spatial,
                };
                let temporal = HeadGroup {
                    offset: spatial.width,
                    width: self.temporal_heads * dk,
                    heads: self.temporal_heads,
                    axis: AttnAxis::Temporal,
                };
                [spatial, temporal].into_iter().filter(|g| g.heads > 0).collect()
            }
            AttentionVariant::Full => vec![HeadGroup {
                offset: 0,
                width: self.d,
                heads: self.n_heads,
                axis: AttnAxis::Full,
            }],
            AttentionVariant::Axial => vec![HeadGroup {
                offset: 0,
                width: self.d,
                heads: self.n_heads,
                axis: if layer < self.axial_switch_layer {
                    AttnAxis::Spatial
                } else {
                    AttnAxis::Temporal
                },
            }],
        }
    }

    /// Group layout that fixes parameter shapes (identical for every layer).
    pub fn param_groups(&self) -> Vec<HeadGroup> {
        self.head_groups(0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d >= 1 && self.n_layers >= 1, Config, "d and n_layers must be >= 1");
        ensure!(self.n_heads >= 1, Config, "n_heads must be >= 1");
        ensure!(
            self.d.is_multiple_of(self.n_heads),
            Config,
            "d = {} is not divisible by n_heads = {}",
            self.d,
            self.n_heads
        );
        ensure!(
            self.spatial_heads + self.temporal_heads == self.n_heads,
            Config,
            "spatial_heads ({}) + temporal_heads ({}) != n_heads ({})",
            self.spatial_heads,
            self.temporal_heads,
            self.n_heads
        );
        ensure!(self.ffn_dim >= 1, Config, "ffn_dim must be >= 1");
        ensure!(self.patch_len >= 2, Config, "patch_len must be >= 2");
        ensure!(!self.conv.is_empty(), Config, "patch encoder needs at least one conv layer");
        ensure!(self.conv[0].in_ch == 1, Config, "first conv layer must take 1 input channel");
        for (i, pair) in self.conv.windows(2).enumerate() {
            ensure!(
                pair[1].in_ch == pair[0].out_ch,
                Config,
                "conv layer {} expects {} channels, previous emits {}",
                i + 1,
                pair[1].in_ch,
                pair[0].out_ch
            );
        }
        for (i, c) in self.conv.iter().enumerate() {
            ensure!(c.kernel >= 1 && c.stride >= 1, Config, "conv layer {i}: kernel and stride must be >= 1");
            ensure!(
                self.gn_groups >= 1 && c.out_ch % self.gn_groups == 0,
                Config,
                "conv layer {i}: {} channels not divisible into {} groups",
                c.out_ch,
                self.gn_groups
            );
        }
        let lens = self.conv_lengths()?;
        let flat = lens.last().unwrap() * self.conv.last().unwrap().out_ch;
        ensure!(
            flat == self.d,
            Config,
            "time branch flattens to {} values but d = {}",
            flat,
            self.d
        );
        let (ks, kt) = self.acpe_kernel;
        if self.pe == PeVariant::Acpe {
            ensure!(ks % 2 == 1 && kt % 2 == 1, Config, "ACPE kernel ({ks}, {kt}) must be odd");
            ensure!(ks > kt, Config, "ACPE kernel must be taller than wide (got ({ks}, {kt}))");
        }
        if self.pe == PeVariant::Cpe {
            ensure!(self.cpe_kernel % 2 == 1, Config, "CPE kernel {} must be odd", self.cpe_kernel);
        }
        ensure!(
            (0.0..1.0).contains(&self.dropout),
            Config,
            "dropout {} outside [0, 1)",
            self.dropout
        );
        ensure!(
            self.axial_switch_layer <= self.n_layers,
            Config,
            "axial_switch_layer {} > n_layers {}",
            self.axial_switch_layer,
            self.n_layers
        );
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        let col = |f: fn(&ConvLayerSpec) -> usize| join_list(&self.conv.iter().map(f).collect::<Vec<_>>());
        doc.set("d", self.d);
        doc.set("layers", self.n_layers);
        doc.set("heads", self.n_heads);
        doc.set("spatial_heads", self.spatial_heads);
        doc.set("temporal_heads", self.temporal_heads);
        doc.set("ffn_dim", self.ffn_dim);
        doc.set("patch_len", self.patch_len);
        doc.set("conv_in", col(|c| c.in_ch));
        doc.set("conv_out", col(|c| c.out_ch));
        doc.set("conv_kernel", col(|c| c.kernel));
        doc.set("conv_stride", col(|c| c.stride));
        doc.set("conv_padding", col(|c| c.padding));
        doc.set("gn_groups", self.gn_groups);
        doc.set("acpe_kernel", format!("{},{}", self.acpe_kernel.0, self.acpe_kernel.1));
        doc.set("cpe_kernel", self.cpe_kernel);
        doc.set("ape_max", format!("{},{}", self.ape_max.0, self.ape_max.1));
        doc.set("attention", self.attention);
        doc.set("pe", self.pe);
        doc.set("dropout", self.dropout);
        doc.set("axial_switch_layer", self.axial_switch_layer);
        doc.set("energy", self.energy);
        doc.set("learnable_mask_token", self.learnable_mask_token);
        doc
    }

    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        let pair = |raw: &str| -> Result<(usize, usize)> {
            let v: Vec<usize> = parse_list(key, raw)?;
            ensure!(v.len() == 2, Config, "`model.{key}` needs two values");
            Ok((v[0], v[1]))
        };
        let mut set_conv = |f: fn(&mut ConvLayerSpec, usize)| -> Result<()> {
            let vals: Vec<usize> = parse_list(key, raw)?;
            if self.conv.len() != vals.len() {
                self.conv.resize(
                    vals.len(),
                    ConvLayerSpec {
                        in_ch: 1,
                        out_ch: 1,
                        kernel: 1,
                        stride: 1,
                        padding: 0,
                    },
                );
            }
            self.conv.iter_mut().zip(vals).for_each(|(c, v)| f(c, v));
            Ok(())
        };
        match key {
            "conv_in" => set_conv(|c, v| c.in_ch = v)?,
            "conv_out" => set_conv(|c, v| c.out_ch = v)?,
            "conv_kernel" => set_conv(|c, v| c.kernel = v)?,
            "conv_stride" => set_conv(|c, v| c.stride = v)?,
            "conv_padding" => set_conv(|c, v| c.padding = v)?,
            "d" => self.d = parse_value(key, raw)?,
            "layers" => self.n_layers = parse_value(key, raw)?,
            "heads" => self.n_heads = parse_value(key, raw)?,
            "spatial_heads" => self.spatial_heads = parse_value(key, raw)?,
            "temporal_heads" => self.temporal_heads = parse_value(key, raw)?,
            "ffn_dim" => self.ffn_dim = parse_value(key, raw)?,
            "patch_len" => self.patch_len = parse_value(key, raw)?,
            "gn_groups" => self.gn_groups = parse_value(key, raw)?,
            "acpe_kernel" => self.acpe_kernel = pair(raw)?,
            "cpe_kernel" => self.cpe_kernel = parse_value(key, raw)?,
            "ape_max" => self.ape_max = pair(raw)?,
            "attention" => self.attention = raw.trim().parse()?,
            "pe" => self.pe = raw.trim().parse()?,
            "dropout" => self.dropout = parse_value(key, raw)?,
            "axial_switch_layer" => self.axial_switch_layer = parse_value(key, raw)?,
            "energy" => self.energy = raw.trim().parse()?,
            "learnable_mask_token" => self.learnable_mask_token = parse_value(key, raw)?,
            _ => return Err(Error::Config(format!("unknown key `model.{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = Self::base();
        for (k, v) in doc.iter() {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
