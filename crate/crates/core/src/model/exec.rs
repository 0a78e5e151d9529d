//! Whole-model forward and backward passes.

use super::params::{param_slots, Gradients, ParamSlot, ParamStore};
use super::spec::{LayerKind, ModelPlan, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{
    batchnorm2d_backward, batchnorm2d_forward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, dropout_backward, dropout_forward, flatten, maxpool2d_backward,
    maxpool2d_forward, relu_backward, relu_forward, update_running_stats, BatchNormCache,
    DropoutMask, Mode, Padding, PoolIndices, Shape, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Use running statistics in batch-norm layers even in train mode.
    pub freeze_batchnorm: bool,
}

impl ForwardOptions {
    pub const TRAIN: Self = Self {
        mode: Mode::Train,
        freeze_batchnorm: false,
    };
    pub const INFER: Self = Self {
        mode: Mode::Infer,
        freeze_batchnorm: false,
    };

    fn batchnorm_mode(self) -> Mode {
        if self.freeze_batchnorm {
            Mode::Infer
        } else {
            self.mode
        }
    }
}

#[derive(Debug, Clone)]
enum LayerAux {
    None,
    Pool(PoolIndices),
    Norm(BatchNormCache),
    Drop(Option<DropoutMask>),
}

/// Activations and per-layer state retained for [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs that differ from the previous layer's output (skip sums).
    summed_inputs: Vec<Option<Tensor>>,
    outputs: Vec<Tensor>,
    aux: Vec<LayerAux>,
}

impl ForwardCache {
    pub fn output(&self, layer: usize) -> &Tensor {
        &self.outputs[layer]
    }

    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("non-empty model")
    }

    fn input(&self, layer: usize) -> &Tensor {
        self.summed_inputs[layer]
            .as_ref()
            .unwrap_or(&self.outputs[layer - 1])
    }
}

/// A validated [`ModelSpec`] together with its shape plan and parameter layout.
/// Immutable, so one instance can be shared across threads.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    plan: ModelPlan,
    slots: Vec<ParamSlot>,
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let plan = spec.plan()?;
        let slots = param_slots(&spec, &plan);
        Ok(Self { spec, plan, slots })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn input_shape(&self) -> Shape {
        self.plan.outputs[0]
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// (total, trainable) parameter counts.
    pub fn count_parameters(&self) -> (usize, usize) {
        self.slots.iter().fold((0, 0), |(t, tr), s| {
            let n = s.shape.len();
            (t + n, if s.role.trainable() { tr + n } else { tr })
        })
    }

    /// He-normal initialization, except that the weights of the final dense
    /// layer start at zero so the initial prediction is uniform.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut params = ParamStore::initialize(&self.slots, &mut Prng::derive(seed, 0x1417));
        if let Some(last) = self.spec.layers.last() {
            if matches!(last.kind, LayerKind::Dense { .. }) {
                if let Ok(w) = params.tensor_mut(&format!("{}.weight", last.name)) {
                    w.data_mut().fill(0.0);
                }
            }
        }
        params
    }

    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        if params.matches_slots(&self.slots) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "parameter store does not match model '{}'",
                self.spec.name
            )))
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let want = self.input_shape().with_batch(batch.shape().n);
        crate::tensor::check_same_shape(&format!("model '{}' input", self.spec.name), want, batch.shape())
    }

    fn layer_err(&self, i: usize, e: Error) -> Error {
        match e {
            Error::Dimension {
                axis,
                expected,
                actual,
                ..
            } => Error::Dimension {
                op: format!("layer '{}'", self.spec.layers[i].name),
                axis,
                expected,
                actual,
            },
            other => other,
        }
    }

    /// Forward pass retaining everything the backward pass needs.
    pub fn forward(
        &self,
        params: &ParamStore,
        batch: &Tensor,
        options: ForwardOptions,
        rng: &mut Prng,
    ) -> Result<(Tensor, ForwardCache)> {
        self.check_batch(batch)?;
        let n_layers = self.spec.layers.len();
        let mut cache = ForwardCache {
            summed_inputs: Vec::with_capacity(n_layers),
            outputs: Vec::with_capacity(n_layers),
            aux: Vec::with_capacity(n_layers),
        };
        for i in 0..n_layers {
            let summed = if i == 0 {
                None
            } else {
                self.skip_sum(params, i, &cache.outputs)?
            };
            let (out, aux) = if i == 0 {
                (batch.clone(), LayerAux::None)
            } else {
                let input = summed.as_ref().unwrap_or(&cache.outputs[i - 1]);
                self.layer_forward(params, i, input, options, rng)
                    .map_err(|e| self.layer_err(i, e))?
            };
            cache.summed_inputs.push(summed);
            cache.outputs.push(out);
            cache.aux.push(aux);
        }
        Ok((cache.logits().clone(), cache))
    }

    /// Infer-mode forward that frees activations as soon as nothing downstream needs them.
    pub fn infer(&self, params: &ParamStore, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let n_layers = self.spec.layers.len();
        let mut last_use: Vec<usize> = (0..n_layers).map(|i| i + 1).collect();
        for s in &self.plan.skips {
            last_use[s.from] = last_use[s.from].max(s.to);
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n_layers);
        let mut rng = Prng::new(0);
        for i in 0..n_layers {
            let out = if i == 0 {
                batch.clone()
            } else {
                let summed = self.skip_sum(params, i, &outputs)?;
                let input = summed.as_ref().unwrap_or(&outputs[i - 1]);
                self.layer_forward(params, i, input, ForwardOptions::INFER, &mut rng)
                    .map_err(|e| self.layer_err(i, e))?
                    .0
            };
            outputs.push(out);
            for j in 0..i {
                if last_use[j] == i {
                    outputs[j] = Tensor::zeros(Shape::new(0, 0, 0, 0));
                }
            }
        }
        Ok(outputs.pop().expect("non-empty model"))
    }

    fn skip_sum(&self, params: &ParamStore, i: usize, outputs: &[Tensor]) -> Result<Option<Tensor>> {
        let mut sum: Option<Tensor> = None;
        for s in self.plan.skips_into(i) {
            let src = &outputs[s.from];
            let contribution = match s.projection {
                Some(p) => {
                    let prefix = s.param_prefix(&self.spec);
                    let w = params.tensor(&format!("{prefix}.weight"))?;
                    let b = params.tensor(&format!("{prefix}.bias"))?;
                    conv2d_forward(src, w, b.data(), p.stride, Padding::Valid)?
                }
                None => src.clone(),
            };
            match sum.as_mut() {
                Some(acc) => acc.add_assign(&contribution)?,
                None => {
                    let mut acc = outputs[i - 1].clone();
                    acc.add_assign(&contribution).map_err(|e| self.layer_err(i, e))?;
                    sum = Some(acc);
                }
            }
        }
        Ok(sum)
    }

    fn layer_forward(
        &self,
        params: &ParamStore,
        i: usize,
        input: &Tensor,
        options: ForwardOptions,
        rng: &mut Prng,
    ) -> Result<(Tensor, LayerAux)> {
        let layer = &self.spec.layers[i];
        let p = |suffix: &str| params.tensor(&format!("{}.{suffix}", layer.name));
        Ok(match layer.kind {
            LayerKind::Input { .. } => (input.clone(), LayerAux::None),
            LayerKind::Conv { stride, padding, .. } => (
                conv2d_forward(input, p("weight")?, p("bias")?.data(), stride, padding)?,
                LayerAux::None,
            ),
            LayerKind::BatchNorm { eps, .. } => {
                let (out, c) = batchnorm2d_forward(
                    input,
                    p("gamma")?.data(),
                    p("beta")?.data(),
                    p("running_mean")?.data(),
                    p("running_var")?.data(),
                    options.batchnorm_mode(),
                    eps,
                )?;
                (out, LayerAux::Norm(c))
            }
            LayerKind::MaxPool { window, stride } => {
                let (out, idx) = maxpool2d_forward(input, window, stride)?;
                (out, LayerAux::Pool(idx))
            }
            LayerKind::ReLU => (relu_forward(input), LayerAux::None),
            LayerKind::Dropout { rate } => {
                let (out, mask) = dropout_forward(input, rate, rng, options.mode)?;
                (out, LayerAux::Drop(mask))
            }
            LayerKind::Flatten => (flatten(input.clone()), LayerAux::None),
            LayerKind::Dense { .. } => (
                dense_forward(input, p("weight")?, p("bias")?.data())?,
                LayerAux::None,
            ),
        })
    }

    /// Fold the batch statistics of a train-mode pass into the running statistics.
    pub fn update_running_stats(&self, params: &mut ParamStore, cache: &ForwardCache) -> Result<()> {
        for (layer, aux) in self.spec.layers.iter().zip(&cache.aux) {
            if let (LayerKind::BatchNorm { momentum, .. }, LayerAux::Norm(c)) = (&layer.kind, aux) {
                if !c.batch_stats {
                    continue;
                }
                let mut rm = params.tensor(&format!("{}.running_mean", layer.name))?.data().to_vec();
                let mut rv = params.tensor(&format!("{}.running_var", layer.name))?.data().to_vec();
                update_running_stats(&mut rm, &mut rv, c, *momentum);
                params
                    .tensor_mut(&format!("{}.running_mean", layer.name))?
                    .data_mut()
                    .copy_from_slice(&rm);
                params
                    .tensor_mut(&format!("{}.running_var", layer.name))?
                    .data_mut()
                    .copy_from_slice(&rv);
            }
        }
        Ok(())
    }

    /// Gradients of every trainable parameter given the gradient of the logits.
    pub fn backward(&self, params: &ParamStore, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        let n_layers = self.spec.layers.len();
        crate::tensor::check_same_shape("model backward", cache.logits().shape(), grad_logits.shape())?;
        let mut upstream: Vec<Option<Tensor>> = vec![None; n_layers];
        upstream[n_layers - 1] = Some(grad_logits.clone());
        let mut grads = Gradients::default();

        for i in (1..n_layers).rev() {
            let Some(g) = upstream[i].take() else {
                continue;
            };
            let has_skips = self.plan.skips_into(i).next().is_some();
            let need_dx = i > 1 || has_skips;
            let dx = self
                .layer_backward(params, cache, i, g, need_dx, &mut grads)
                .map_err(|e| self.layer_err(i, e))?;
            let Some(dx) = dx else {
                continue;
            };
            for s in self.plan.skips_into(i) {
                match s.projection {
                    Some(p) => {
                        let prefix = s.param_prefix(&self.spec);
                        let w = params.tensor(&format!("{prefix}.weight"))?;
                        let pg = conv2d_backward(&cache.outputs[s.from], w, p.stride, Padding::Valid, &dx, s.from > 0)?;
                        grads.insert(format!("{prefix}.weight"), pg.weights.into_data());
                        grads.insert(format!("{prefix}.bias"), pg.bias);
                        if let Some(d) = pg.input {
                            accumulate(&mut upstream[s.from], d)?;
                        }
                    }
                    None if s.from > 0 => accumulate(&mut upstream[s.from], dx.clone())?,
                    None => {}
                }
            }
            if i > 1 {
                accumulate(&mut upstream[i - 1], dx)?;
            }
        }
        Ok(grads.sorted_like(params))
    }

    fn layer_backward(
        &self,
        params: &ParamStore,
        cache: &ForwardCache,
        i: usize,
        g: Tensor,
        need_dx: bool,
        grads: &mut Gradients,
    ) -> Result<Option<Tensor>> {
        let layer = &self.spec.layers[i];
        let name = |suffix: &str| format!("{}.{suffix}", layer.name);
        let input = cache.input(i);
        Ok(match (&layer.kind, &cache.aux[i]) {
            (LayerKind::Input { .. }, _) => None,
            (LayerKind::Conv { stride, padding, .. }, _) => {
                let w = params.tensor(&name("weight"))?;
                let cg = conv2d_backward(input, w, *stride, *padding, &g, need_dx)?;
                grads.insert(name("weight"), cg.weights.into_data());
                grads.insert(name("bias"), cg.bias);
                cg.input
            }
            (LayerKind::BatchNorm { .. }, LayerAux::Norm(c)) => {
                let gamma = params.tensor(&name("gamma"))?;
                let bg = batchnorm2d_backward(c, gamma.data(), &g)?;
                grads.insert(name("gamma"), bg.gamma);
                grads.insert(name("beta"), bg.beta);
                Some(bg.input)
            }
            (LayerKind::MaxPool { .. }, LayerAux::Pool(idx)) => Some(maxpool2d_backward(idx, &g)?),
            (LayerKind::ReLU, _) => Some(relu_backward(input, &g)?),
            (LayerKind::Dropout { .. }, LayerAux::Drop(mask)) => Some(dropout_backward(mask.as_ref(), &g)?),
            (LayerKind::Flatten, _) => Some(g.reshape(input.shape())?),
            (LayerKind::Dense { .. }, _) => {
                let w = params.tensor(&name("weight"))?;
                let dg = dense_backward(input, w, &g)?;
                grads.insert(name("weight"), dg.weights.into_data());
                grads.insert(name("bias"), dg.bias);
                Some(dg.input)
            }
            (kind, _) => {
                return Err(Error::param(format!(
                    "layer '{}' ({}) has no forward state for backward",
                    layer.name,
                    kind.type_name()
                )))
            }
        })
    }
}
