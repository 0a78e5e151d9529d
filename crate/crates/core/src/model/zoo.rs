//! Built-in leaf-disease architectures.
//!
//! Hidden layers are followed by ReLU throughout (after every conv or
//! conv/batch-norm pair and after every hidden dense layer).

use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, LayerSpec, ModelSpec, SkipEdge};
use crate::error::{Error, Result};
use crate::tensor::{pool_output_size, Padding};

pub const DEFAULT_DROPOUT: f32 = 0.5;
pub const DEFAULT_BN_EPS: f32 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f32 = 0.9;
pub const DEFAULT_L2_LAMBDA: f32 = 1e-4;

/// Incrementally assembles a sequential layer list with per-kind counters.
struct Builder {
    layers: Vec<LayerSpec>,
    skips: Vec<SkipEdge>,
    counters: std::collections::HashMap<&'static str, usize>,
}

impl Builder {
    fn new(channels: usize, size: usize) -> Self {
        let mut b = Self {
            layers: Vec::new(),
            skips: Vec::new(),
            counters: Default::default(),
        };
        b.push(
            "input",
            LayerKind::Input {
                channels,
                height: size,
                width: size,
            },
        );
        b
    }

    fn push(&mut self, base: &'static str, kind: LayerKind) -> String {
        let n = self.counters.entry(base).or_insert(0);
        *n += 1;
        let name = if base == "input" { base.to_string() } else { format!("{base}{n}") };
        self.layers.push(LayerSpec::new(name.clone(), kind));
        name
    }

    fn last(&self) -> String {
        self.layers.last().expect("input").name.clone()
    }

    fn conv(&mut self, filters: usize, kernel: usize, stride: usize) -> String {
        self.push(
            "conv",
            LayerKind::Conv {
                filters,
                kernel: [kernel, kernel],
                stride,
                padding: Padding::Same,
            },
        )
    }

    fn bn(&mut self) -> String {
        self.push(
            "bn",
            LayerKind::BatchNorm {
                eps: DEFAULT_BN_EPS,
                momentum: DEFAULT_BN_MOMENTUM,
            },
        )
    }

    fn relu(&mut self) -> String {
        self.push("relu", LayerKind::ReLU)
    }

    fn pool(&mut self, window: usize, stride: usize) -> String {
        self.push("pool", LayerKind::MaxPool { window, stride })
    }

    fn dense(&mut self, units: usize) -> String {
        self.push("dense", LayerKind::Dense { units })
    }

    fn finish(self, name: &str, num_classes: usize, l2_lambda: f32) -> ModelSpec {
        ModelSpec {
            name: name.to_string(),
            layers: self.layers,
            skip_edges: self.skips,
            num_classes,
            l2_lambda,
        }
    }
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::config(format!("num_classes must be >= 2, got {num_classes}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Options {
    pub num_classes: usize,
    pub input_size: usize,
    pub dropout: f32,
}

impl Default for Exp2Options {
    fn default() -> Self {
        Self {
            num_classes: 8,
            input_size: 128,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

/// Batch-normalized CNN: three 3×3/stride-2 convolutions with batch norm, two
/// 2×2 max pools, and a 256-128-K dense head with dropout.
pub fn build_exp2_bncnn(num_classes: usize) -> Result<ModelSpec> {
    build_exp2_bncnn_with(&Exp2Options {
        num_classes,
        ..Default::default()
    })
}

pub fn build_exp2_bncnn_with(o: &Exp2Options) -> Result<ModelSpec> {
    check_classes(o.num_classes)?;
    let mut b = Builder::new(3, o.input_size);
    for filters in [64, 64] {
        b.conv(filters, 3, 2);
        b.bn();
        b.relu();
    }
    b.pool(2, 2);
    b.conv(32, 3, 2);
    b.bn();
    b.relu();
    b.pool(2, 2);
    b.push("flatten", LayerKind::Flatten);
    for units in [256, 128] {
        b.dense(units);
        b.relu();
        b.push("dropout", LayerKind::Dropout { rate: o.dropout });
    }
    b.dense(o.num_classes);
    let spec = b.finish("exp2-bncnn", o.num_classes, 0.0);
    spec.plan()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exp3Variant {
    M1,
    M2,
    M3,
    M4,
}

impl std::str::FromStr for Exp3Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "m3" => Ok(Self::M3),
            "m4" => Ok(Self::M4),
            other => Err(Error::param(format!("unknown exp3 variant '{other}' (expected m1..m4)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crop {
    Corn,
    Tomato,
}

impl Exp3Variant {
    /// Default (conv layers, dense layers) for each crop's experiment.
    pub fn layer_counts(self, crop: Crop) -> (usize, usize) {
        match (self, crop) {
            (Exp3Variant::M1, _) => (6, 2),
            (Exp3Variant::M2, Crop::Corn) => (12, 4),
            (Exp3Variant::M2, Crop::Tomato) => (9, 4),
            (Exp3Variant::M3 | Exp3Variant::M4, Crop::Corn) => (16, 2),
            (Exp3Variant::M3 | Exp3Variant::M4, Crop::Tomato) => (12, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp3Options {
    pub variant: Exp3Variant,
    pub num_classes: usize,
    pub input_size: usize,
    pub crop: Crop,
    /// Overrides the crop default.
    pub conv_layers: Option<usize>,
    /// Overrides the crop default.
    pub dense_layers: Option<usize>,
    pub base_width: usize,
    pub max_width: usize,
    pub hidden_units: usize,
    pub l2_lambda: f32,
}

impl Default for Exp3Options {
    fn default() -> Self {
        Self {
            variant: Exp3Variant::M1,
            num_classes: 4,
            input_size: 256,
            crop: Crop::Corn,
            conv_layers: None,
            dense_layers: None,
            base_width: 32,
            max_width: 256,
            hidden_units: 256,
            l2_lambda: DEFAULT_L2_LAMBDA,
        }
    }
}

/// Experiment-3 family with the corn layer counts.
pub fn build_exp3_model(variant: Exp3Variant, num_classes: usize, input_size: usize) -> Result<ModelSpec> {
    build_exp3_model_with(&Exp3Options {
        variant,
        num_classes,
        input_size,
        ..Default::default()
    })
}

/// Convolutions are grouped into stages: pairs for m1, three equal stages for
/// m2 (each m1 block applied twice), and blocks of four for m3/m4 where each
/// full block is wrapped by a skip edge from the block input to the block's
/// final ReLU. Stage widths double from `base_width` up to `max_width`, and a
/// 2×2/stride-2 pool follows each stage while the feature map allows it.
pub fn build_exp3_model_with(o: &Exp3Options) -> Result<ModelSpec> {
    check_classes(o.num_classes)?;
    if o.input_size < 32 {
        return Err(Error::config(format!("exp3 input_size must be >= 32, got {}", o.input_size)));
    }
    let (default_convs, default_dense) = o.variant.layer_counts(o.crop);
    let convs = o.conv_layers.unwrap_or(default_convs);
    let dense = o.dense_layers.unwrap_or(default_dense);
    if convs == 0 || dense == 0 {
        return Err(Error::config("exp3 needs at least one conv and one dense layer"));
    }
    let residual = matches!(o.variant, Exp3Variant::M3 | Exp3Variant::M4);
    let stage_len = match o.variant {
        Exp3Variant::M1 => 2,
        Exp3Variant::M2 => convs.div_ceil(3),
        Exp3Variant::M3 | Exp3Variant::M4 => 4,
    };

    let mut b = Builder::new(3, o.input_size);
    let mut size = o.input_size;
    let mut remaining = convs;
    let mut stage = 0;
    while remaining > 0 {
        let len = stage_len.min(remaining);
        let width = (o.base_width << stage.min(16)).min(o.max_width);
        let block_input = b.last();
        for k in 0..len {
            b.conv(width, 3, 1);
            let relu = b.relu();
            if residual && len == 4 && k == len - 1 {
                b.skips.push(SkipEdge {
                    from: block_input.clone(),
                    to: relu,
                });
            }
        }
        if let Some(next) = pool_output_size(size, 2, 2) {
            b.pool(2, 2);
            size = next;
        }
        remaining -= len;
        stage += 1;
    }
    b.push("flatten", LayerKind::Flatten);
    let mut units = o.hidden_units;
    for _ in 1..dense {
        b.dense(units.max(1));
        b.relu();
        units /= 2;
    }
    b.dense(o.num_classes);
    let l2 = if o.variant == Exp3Variant::M4 { o.l2_lambda } else { 0.0 };
    let name = format!("exp3-{}", format!("{:?}", o.variant).to_lowercase());
    let spec = b.finish(&name, o.num_classes, l2);
    spec.plan()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp4Options {
    pub num_classes: usize,
    pub input_size: usize,
    /// Filters of each 6×6 conv / 2×2-stride-3 pool block.
    pub channels: Vec<usize>,
    pub hidden_units: usize,
}

impl Default for Exp4Options {
    fn default() -> Self {
        Self {
            num_classes: 8,
            input_size: 256,
            channels: vec![32, 64, 128, 256],
            hidden_units: 256,
        }
    }
}

pub fn build_exp4_proposed(num_classes: usize, input_size: usize) -> Result<ModelSpec> {
    build_exp4_proposed_with(&Exp4Options {
        num_classes,
        input_size,
        ..Default::default()
    })
}

/// Proposed model: every convolution is 6×6, stride 1, same padding, and every
/// pool is 2×2 with stride 3.
pub fn build_exp4_proposed_with(o: &Exp4Options) -> Result<ModelSpec> {
    check_classes(o.num_classes)?;
    if o.channels.is_empty() {
        return Err(Error::config("exp4 needs at least one conv block"));
    }
    let mut size = o.input_size;
    for (i, _) in o.channels.iter().enumerate() {
        size = pool_output_size(size, 2, 3).ok_or_else(|| {
            Error::config(format!(
                "exp4 input_size {} too small for {} blocks (block {} sees {}px)",
                o.input_size,
                o.channels.len(),
                i + 1,
                size
            ))
        })?;
    }
    let mut b = Builder::new(3, o.input_size);
    for &c in &o.channels {
        b.conv(c, 6, 1);
        b.relu();
        b.pool(2, 3);
    }
    b.push("flatten", LayerKind::Flatten);
    b.dense(o.hidden_units);
    b.relu();
    b.dense(o.num_classes);
    let spec = b.finish("exp4-proposed", o.num_classes, 0.0);
    spec.plan()?;
    Ok(spec)
}

/// Minimum input size for which `blocks` exp4 blocks leave a non-empty map.
pub fn exp4_min_input(blocks: usize) -> usize {
    (1..).find(|&s| (0..blocks).try_fold(s, |n, _| pool_output_size(n, 2, 3)).is_some()).unwrap_or(2)
}

/// (total, trainable) parameters, counting batch-norm running statistics as
/// non-trainable.
pub fn count_parameters(spec: &ModelSpec) -> Result<(usize, usize)> {
    Ok(super::Model::new(spec.clone())?.count_parameters())
}

/// Named architecture selector used by configuration files and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "exp2-bncnn")]
    Exp2BnCnn,
    #[serde(rename = "exp3-m1")]
    Exp3M1,
    #[serde(rename = "exp3-m2")]
    Exp3M2,
    #[serde(rename = "exp3-m3")]
    Exp3M3,
    #[serde(rename = "exp3-m4")]
    Exp3M4,
    #[serde(rename = "exp4-proposed")]
    Exp4Proposed,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Exp2BnCnn,
        Architecture::Exp3M1,
        Architecture::Exp3M2,
        Architecture::Exp3M3,
        Architecture::Exp3M4,
        Architecture::Exp4Proposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Exp2BnCnn => "exp2-bncnn",
            Architecture::Exp3M1 => "exp3-m1",
            Architecture::Exp3M2 => "exp3-m2",
            Architecture::Exp3M3 => "exp3-m3",
            Architecture::Exp3M4 => "exp3-m4",
            Architecture::Exp4Proposed => "exp4-proposed",
        }
    }

    pub fn default_input_size(self) -> usize {
        match self {
            Architecture::Exp2BnCnn => 128,
            _ => 256,
        }
    }

    /// Build with default options for everything except class count and input size.
    pub fn build(self, num_classes: usize, input_size: usize) -> Result<ModelSpec> {
        self.build_for_crop(num_classes, input_size, Crop::Corn)
    }

    /// Like [`Architecture::build`]; `crop` selects the experiment-3 layer counts.
    pub fn build_for_crop(self, num_classes: usize, input_size: usize, crop: Crop) -> Result<ModelSpec> {
        let exp3 = |variant| {
            build_exp3_model_with(&Exp3Options {
                variant,
                num_classes,
                input_size,
                crop,
                ..Default::default()
            })
        };
        match self {
            Architecture::Exp2BnCnn => build_exp2_bncnn_with(&Exp2Options {
                num_classes,
                input_size,
                ..Default::default()
            }),
            Architecture::Exp3M1 => exp3(Exp3Variant::M1),
            Architecture::Exp3M2 => exp3(Exp3Variant::M2),
            Architecture::Exp3M3 => exp3(Exp3Variant::M3),
            Architecture::Exp3M4 => exp3(Exp3Variant::M4),
            Architecture::Exp4Proposed => build_exp4_proposed(num_classes, input_size),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown architecture '{s}' (expected one of: {})",
                    Architecture::ALL.map(|a| a.as_str()).join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
