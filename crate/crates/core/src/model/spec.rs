//! Declarative model description and static shape planning.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pool_output_size, ConvGeometry, Padding, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    Input {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv {
        filters: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
    },
    BatchNorm {
        eps: f32,
        momentum: f32,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    ReLU,
    Dropout {
        rate: f32,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "Input",
            LayerKind::Conv { .. } => "Conv",
            LayerKind::BatchNorm { .. } => "BatchNorm",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::ReLU => "ReLU",
            LayerKind::Dropout { .. } => "Dropout",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dense { .. } => "Dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// The output of `from` is added to the input of `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub skip_edges: Vec<SkipEdge>,
    pub num_classes: usize,
    #[serde(default)]
    pub l2_lambda: f32,
}

/// A 1×1 convolution that adapts a skip source to its destination shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSkip {
    pub from: usize,
    pub to: usize,
    pub projection: Option<Projection>,
}

impl ResolvedSkip {
    /// Prefix for the projection's parameter names.
    pub fn param_prefix(&self, spec: &ModelSpec) -> String {
        format!("{}.skip_from_{}", spec.layers[self.to].name, spec.layers[self.from].name)
    }
}

/// Per-sample input and output shapes for every layer (batch axis is 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPlan {
    pub inputs: Vec<Shape>,
    pub outputs: Vec<Shape>,
    pub skips: Vec<ResolvedSkip>,
}

impl ModelPlan {
    pub fn skips_into(&self, layer: usize) -> impl Iterator<Item = &ResolvedSkip> {
        self.skips.iter().filter(move |s| s.to == layer)
    }
}

/// Stride of a 1×1 convolution mapping `from`'s spatial extent onto `to`'s.
fn projection_stride(from: Shape, to: Shape) -> Option<usize> {
    if from.h == 0 || from.w == 0 {
        return None;
    }
    (1..=from.h.max(from.w)).find(|&s| (from.h - 1) / s + 1 == to.h && (from.w - 1) / s + 1 == to.w)
}

impl ModelSpec {
    pub fn input_shape(&self) -> Option<Shape> {
        match self.layers.first().map(|l| &l.kind) {
            Some(LayerKind::Input {
                channels,
                height,
                width,
            }) => Some(Shape::new(1, *channels, *height, *width)),
            _ => None,
        }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Validate the graph and infer every layer's shapes.
    pub fn plan(&self) -> Result<ModelPlan> {
        let mut problems = Vec::new();
        let mut seen = HashMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            if seen.insert(l.name.as_str(), i).is_some() {
                problems.push(format!("duplicate layer name '{}'", l.name));
            }
            if i > 0 && matches!(l.kind, LayerKind::Input { .. }) {
                problems.push(format!("layer '{}': Input must be the first layer", l.name));
            }
            match l.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                    ..
                } => {
                    if filters == 0 || kernel[0] == 0 || kernel[1] == 0 || stride == 0 {
                        problems.push(format!("layer '{}': filters, kernel and stride must be >= 1", l.name));
                    }
                }
                LayerKind::BatchNorm { eps, momentum } => {
                    if !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                        problems.push(format!("layer '{}': eps must be > 0 and momentum in [0, 1]", l.name));
                    }
                }
                LayerKind::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 {
                        problems.push(format!("layer '{}': window and stride must be >= 1", l.name));
                    }
                }
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        problems.push(format!("layer '{}': dropout rate {rate} outside [0, 1)", l.name));
                    }
                }
                LayerKind::Dense { units } if units == 0 => {
                    problems.push(format!("layer '{}': units must be >= 1", l.name));
                }
                _ => {}
            }
        }
        if self.input_shape().is_none() {
            problems.push("first layer must be Input".to_string());
        }
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Dense { units }) if *units == self.num_classes => {}
            Some(LayerKind::Input { .. }) if self.layers.len() == 1 => {}
            _ => problems.push(format!(
                "final layer must be Dense with {} units (num_classes)",
                self.num_classes
            )),
        }
        if !(self.l2_lambda >= 0.0) {
            problems.push("l2_lambda must be >= 0".to_string());
        }
        let mut edges = Vec::new();
        for e in &self.skip_edges {
            match (seen.get(e.from.as_str()), seen.get(e.to.as_str())) {
                (Some(&f), Some(&t)) if f + 1 < t => edges.push((f, t)),
                (Some(_), Some(_)) => problems.push(format!(
                    "skip edge {} -> {}: source must precede the destination's input layer",
                    e.from, e.to
                )),
                _ => problems.push(format!("skip edge {} -> {}: unknown layer", e.from, e.to)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let mut skips = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 {
                self.input_shape().expect("checked")
            } else {
                outputs[i - 1]
            };
            for &(f, _) in edges.iter().filter(|&&(_, t)| t == i) {
                let src = outputs[f];
                let projection = if src == input {
                    None
                } else {
                    let stride = projection_stride(src, input).ok_or_else(|| {
                        Error::config(format!(
                            "skip edge {} -> {}: cannot project {} onto {}",
                            self.layers[f].name, layer.name, src, input
                        ))
                    })?;
                    Some(Projection {
                        in_channels: src.c,
                        out_channels: input.c,
                        stride,
                    })
                };
                skips.push(ResolvedSkip {
                    from: f,
                    to: i,
                    projection,
                });
            }
            let output = self.layer_output(layer, input)?;
            inputs.push(input);
            outputs.push(output);
        }
        Ok(ModelPlan {
            inputs,
            outputs,
            skips,
        })
    }

    fn layer_output(&self, layer: &LayerSpec, input: Shape) -> Result<Shape> {
        let err = |axis: &str, expected: usize, actual: usize| Error::Dimension {
            op: format!("layer '{}'", layer.name),
            axis: axis.to_string(),
            expected,
            actual,
        };
        Ok(match layer.kind {
            LayerKind::Input { .. } => input,
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                ConvGeometry::new(input, filters, kernel[0], kernel[1], stride, padding)
                    .map_err(|e| match e {
                        Error::Dimension {
                            axis,
                            expected,
                            actual,
                            ..
                        } => err(&axis, expected, actual),
                        other => other,
                    })?
                    .output_shape(1)
            }
            LayerKind::MaxPool { window, stride } => {
                let h = pool_output_size(input.h, window, stride).ok_or_else(|| err("height", window, input.h))?;
                let w = pool_output_size(input.w, window, stride).ok_or_else(|| err("width", window, input.w))?;
                Shape::new(1, input.c, h, w)
            }
            LayerKind::BatchNorm { .. } | LayerKind::ReLU | LayerKind::Dropout { .. } => input,
            LayerKind::Flatten => Shape::flat(1, input.sample_len()),
            LayerKind::Dense { units } => Shape::flat(1, units),
        })
    }

    /// Output shape of every layer, in declaration order.
    pub fn shape_trace(&self) -> Result<Vec<(String, Shape)>> {
        let plan = self.plan()?;
        Ok(self
            .layers
            .iter()
            .zip(plan.outputs)
            .map(|(l, s)| (l.name.clone(), s))
            .collect())
    }

    pub fn count_of(&self, type_name: &str) -> usize {
        self.layers.iter().filter(|l| l.kind.type_name() == type_name).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.plan()?;
        Ok(spec)
    }
}
