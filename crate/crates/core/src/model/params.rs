//! Named parameter arrays in layer declaration order.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, ModelPlan, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
        }
    }

    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Only convolution and dense kernels carry the L2 penalty.
    pub fn regularized(self) -> bool {
        self == ParamRole::Weight
    }
}

/// Description of one parameter array, before any values exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub role: ParamRole,
    pub shape: Shape,
    /// Fan-in used for He-normal initialization of weights.
    pub fan_in: usize,
}

fn slot(prefix: &str, role: ParamRole, shape: Shape, fan_in: usize) -> ParamSlot {
    ParamSlot {
        name: format!("{prefix}.{}", role.suffix()),
        role,
        shape,
        fan_in,
    }
}

/// Every parameter the model needs, in checkpoint order: layers in
/// declaration order, with skip projections placed before the parameters of
/// the layer they feed.
pub fn param_slots(spec: &ModelSpec, plan: &ModelPlan) -> Vec<ParamSlot> {
    let mut slots = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        for skip in plan.skips_into(i) {
            if let Some(p) = skip.projection {
                let prefix = skip.param_prefix(spec);
                slots.push(slot(
                    &prefix,
                    ParamRole::Weight,
                    Shape::new(p.out_channels, p.in_channels, 1, 1),
                    p.in_channels,
                ));
                slots.push(slot(&prefix, ParamRole::Bias, Shape::new(1, p.out_channels, 1, 1), 0));
            }
        }
        let input = plan.inputs[i];
        let name = layer.name.as_str();
        match layer.kind {
            LayerKind::Conv { filters, kernel, .. } => {
                let fan_in = input.c * kernel[0] * kernel[1];
                slots.push(slot(name, ParamRole::Weight, Shape::new(filters, input.c, kernel[0], kernel[1]), fan_in));
                slots.push(slot(name, ParamRole::Bias, Shape::new(1, filters, 1, 1), 0));
            }
            LayerKind::Dense { units } => {
                let features = input.sample_len();
                slots.push(slot(name, ParamRole::Weight, Shape::new(features, units, 1, 1), features));
                slots.push(slot(name, ParamRole::Bias, Shape::new(1, units, 1, 1), 0));
            }
            LayerKind::BatchNorm { .. } => {
                let c = Shape::new(1, input.c, 1, 1);
                for role in [ParamRole::Gamma, ParamRole::Beta, ParamRole::RunningMean, ParamRole::RunningVar] {
                    slots.push(slot(name, role, c, 0));
                }
            }
            _ => {}
        }
    }
    slots
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub role: ParamRole,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    /// He-normal weights (std = sqrt(2 / fan_in)), zero biases, unit gamma,
    /// zero beta, zero running mean and unit running variance.
    pub fn initialize(slots: &[ParamSlot], rng: &mut Prng) -> Self {
        let mut params = IndexMap::new();
        for s in slots {
            let value = match s.role {
                ParamRole::Weight => {
                    let std = (2.0 / s.fan_in.max(1) as f64).sqrt();
                    let data = (0..s.shape.len()).map(|_| (rng.gaussian() * std) as f32).collect();
                    Tensor::from_vec(s.shape, data).expect("slot length")
                }
                ParamRole::Gamma | ParamRole::RunningVar => Tensor::filled(s.shape, 1.0),
                _ => Tensor::zeros(s.shape),
            };
            params.insert(s.name.clone(), Param { role: s.role, value });
        }
        Self { params }
    }

    /// Rebuild from a flat little-endian-decoded value list.
    pub fn from_flat(slots: &[ParamSlot], values: &[f32]) -> Result<Self> {
        let total: usize = slots.iter().map(|s| s.shape.len()).sum();
        if values.len() != total {
            return Err(Error::dim("parameter store", "length", total, values.len()));
        }
        let mut params = IndexMap::new();
        let mut off = 0;
        for s in slots {
            let len = s.shape.len();
            let value = Tensor::from_vec(s.shape, values[off..off + len].to_vec())?;
            off += len;
            params.insert(s.name.clone(), Param { role: s.role, value });
        }
        Ok(Self { params })
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::param(format!("missing parameter '{name}'")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::param(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// (total, trainable) scalar counts.
    pub fn counts(&self) -> (usize, usize) {
        self.params.values().fold((0, 0), |(t, tr), p| {
            let n = p.value.len();
            (t + n, if p.role.trainable() { tr + n } else { tr })
        })
    }

    /// All values concatenated in store order.
    pub fn flat_values(&self) -> Vec<f32> {
        self.params.values().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Order-sensitive FNV-1a hash over the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, p) in &self.params {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
            }
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        h
    }

    /// True when names, roles and shapes match `slots` exactly.
    pub fn matches_slots(&self, slots: &[ParamSlot]) -> bool {
        self.params.len() == slots.len()
            && self
                .params
                .iter()
                .zip(slots)
                .all(|((name, p), s)| *name == s.name && p.role == s.role && p.value.shape() == s.shape)
    }
}

/// Gradients for the trainable entries of a [`ParamStore`], keyed by the same names.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: IndexMap<String, Vec<f32>>,
}

impl Gradients {
    pub(crate) fn insert(&mut self, name: String, grad: Vec<f32>) {
        self.grads.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.grads.get(name).map(|g| g.as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f32>> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Reorder to match the trainable entries of `params`.
    pub(crate) fn sorted_like(mut self, params: &ParamStore) -> Self {
        let mut grads = IndexMap::new();
        for (name, p) in params.iter() {
            if p.role.trainable() {
                if let Some(g) = self.grads.swap_remove(name) {
                    grads.insert(name.to_string(), g);
                }
            }
        }
        Self { grads }
    }
}
