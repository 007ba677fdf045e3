//! Layered classifier `h ∘ f` with per-layer probing.
//!
//! A network is an ordered list of layers acting on flat activation
//! vectors. "Layer `i`" always refers to the activation at the *output* of
//! `layers[i]`; splitting the network there gives the feature extractor
//! (layers `0..=i`) and the head (layers `i+1..`).

mod checkpoint;
mod train;

pub use checkpoint::{read_activation_dump, write_activation_dump, ActivationDump};
pub use train::{train, EpochStats, Optimizer, TrainConfig, TrainingHistory};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

pub type LayerIndex = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Relu,
    AveragePool,
    Flatten,
    Identity,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::AveragePool => "average_pool",
            LayerKind::Flatten => "flatten",
            LayerKind::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `W·x + b` with `W` of shape out×in.
    Dense { weight: Tensor, bias: Tensor },
    Relu,
    AveragePool { window: usize },
    Flatten,
    /// Dropout at inference time.
    Identity,
}

impl LayerSpec {
    pub fn dense(weight: Tensor, bias: Tensor) -> Result<Self> {
        let &[out, _] = weight.shape() else {
            return Err(Error::dim("dense", weight.shape(), bias.shape()));
        };
        if bias.len() != out {
            return Err(Error::dim("dense", weight.shape(), bias.shape()));
        }
        let bias = bias.reshape(vec![out])?;
        Ok(LayerSpec::Dense { weight, bias })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::AveragePool { .. } => LayerKind::AveragePool,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::Identity => LayerKind::Identity,
        }
    }

    pub fn is_affine(&self) -> bool {
        !matches!(self, LayerSpec::Relu)
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense { weight, bias } => weight.len() + bias.len(),
            _ => 0,
        }
    }

    fn output_dim(&self, input: usize) -> Result<usize> {
        match self {
            LayerSpec::Dense { weight, .. } => {
                let &[out, inp] = weight.shape() else { unreachable!() };
                if inp != input {
                    return Err(Error::dim("dense input", weight.shape(), &[input]));
                }
                Ok(out)
            }
            LayerSpec::AveragePool { window } => {
                if *window == 0 || input % window != 0 {
                    return Err(Error::Input(format!(
                        "average_pool window {window} does not divide {input}"
                    )));
                }
                Ok(input / window)
            }
            LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::Identity => Ok(input),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::Dense { weight, bias } => weight.matvec(x)?.add(bias),
            LayerSpec::Relu => Ok(x.relu()),
            LayerSpec::AveragePool { window } => x.average_pool(*window),
            LayerSpec::Flatten => Ok(x.flatten()),
            LayerSpec::Identity => Ok(x.clone()),
        }
    }

    /// Records the layer on `tape` with its parameters as constants.
    fn record<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        match self {
            LayerSpec::Dense { weight, bias } => {
                let w = tape.constant(weight);
                let b = tape.constant(bias);
                let y = tape.matvec(w, x)?;
                tape.add(y, b)
            }
            LayerSpec::Relu => tape.relu(x),
            LayerSpec::AveragePool { window } => tape.average_pool(x, *window),
            LayerSpec::Flatten | LayerSpec::Identity => Ok(x),
        }
    }
}

/// Architecture of the reference MLP: `hidden.len()` dense+relu blocks, an
/// average pool, an optional dropout (identity) and a dense classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpArch {
    pub input_dims: (usize, usize),
    pub hidden: Vec<usize>,
    pub pool_window: usize,
    pub dropout: bool,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    num_classes: usize,
    input_dims: (usize, usize),
    latent_dims: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_dims: (usize, usize), num_classes: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("network needs at least one layer".into()));
        }
        if input_dims.0 == 0 || input_dims.1 == 0 || num_classes == 0 {
            return Err(Error::Input("input dims and class count must be positive".into()));
        }
        let mut dim = input_dims.0 * input_dims.1;
        let mut latent_dims = Vec::with_capacity(layers.len());
        for layer in &layers {
            dim = layer.output_dim(dim)?;
            latent_dims.push(dim);
        }
        if dim != num_classes {
            return Err(Error::dim("network output", &[dim], &[num_classes]));
        }
        Ok(Self {
            layers,
            num_classes,
            input_dims,
            latent_dims,
        })
    }

    /// He-uniform initialised MLP with zero biases.
    pub fn mlp(arch: &MlpArch, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let mut dense = |inp: usize, out: usize| -> Result<LayerSpec> {
            let bound = (6.0 / inp as f64).sqrt();
            let w = (0..inp * out).map(|_| rng.random_range(-bound..bound)).collect();
            LayerSpec::dense(Tensor::matrix(out, inp, w)?, Tensor::zeros(&[out]))
        };
        let mut layers = Vec::new();
        let mut dim = arch.input_dims.0 * arch.input_dims.1;
        for &h in &arch.hidden {
            layers.push(dense(dim, h)?);
            layers.push(LayerSpec::Relu);
            dim = h;
        }
        if arch.pool_window > 1 {
            layers.push(LayerSpec::AveragePool {
                window: arch.pool_window,
            });
            if dim % arch.pool_window != 0 {
                return Err(Error::Input(format!(
                    "pool window {} does not divide width {dim}",
                    arch.pool_window
                )));
            }
            dim /= arch.pool_window;
        }
        if arch.dropout {
            layers.push(LayerSpec::Identity);
        }
        layers.push(dense(dim, arch.num_classes)?);
        Self::new(layers, arch.input_dims, arch.num_classes)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn input_len(&self) -> usize {
        self.input_dims.0 * self.input_dims.1
    }

    pub fn output_layer(&self) -> LayerIndex {
        self.layers.len() - 1
    }

    /// Activation dimensionality `m_l` at the output of `layer`.
    pub fn latent_dim(&self, layer: LayerIndex) -> Result<usize> {
        self.latent_dims.get(layer).copied().ok_or(Error::Range {
            what: "layer",
            index: layer,
            limit: self.layers.len(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerSpec] {
        &mut self.layers
    }

    fn check_layer(&self, layer: LayerIndex) -> Result<()> {
        self.latent_dim(layer).map(|_| ())
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.num_classes {
            return Err(Error::Range {
                what: "class",
                index: k,
                limit: self.num_classes,
            });
        }
        Ok(())
    }

    fn flat_input(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.input_len() {
            return Err(Error::dim(
                "network input",
                x.shape(),
                &[self.input_dims.0, self.input_dims.1],
            ));
        }
        Ok(x.flatten())
    }

    /// `f(x)` for the split after `layer`, as a flat vector.
    pub fn forward_to(&self, x: &Tensor, layer: LayerIndex) -> Result<Tensor> {
        self.check_layer(layer)?;
        let mut a = self.flat_input(x)?;
        for l in &self.layers[..=layer] {
            a = l.forward(&a)?;
        }
        Ok(a)
    }

    /// Every layer's activation for one input.
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut a = self.flat_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            a = l.forward(&a)?;
            out.push(a.clone());
        }
        Ok(out)
    }

    /// Head evaluation: logits from an activation taken at `layer`.
    pub fn logits_from(&self, layer: LayerIndex, a: &Tensor) -> Result<Tensor> {
        let m = self.latent_dim(layer)?;
        if a.len() != m {
            return Err(Error::dim("activation", a.shape(), &[m]));
        }
        let mut a = a.flatten();
        for l in &self.layers[layer + 1..] {
            a = l.forward(&a)?;
        }
        Ok(a)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_to(x, self.output_layer())
    }

    /// Raw logit `h_k(x)`; no softmax.
    pub fn logit(&self, x: &Tensor, k: usize) -> Result<f64> {
        self.check_class(k)?;
        Ok(self.logits(x)?.data()[k])
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }

    /// `∂h_k/∂a_layer` where `a` is the activation already computed at `layer`.
    pub fn logit_grad_from_activation(&self, layer: LayerIndex, a: &Tensor, k: usize) -> Result<Tensor> {
        self.check_class(k)?;
        let m = self.latent_dim(layer)?;
        if layer >= self.output_layer() {
            return Err(Error::Range {
                what: "probe layer (must precede the output)",
                index: layer,
                limit: self.output_layer(),
            });
        }
        if a.len() != m {
            return Err(Error::dim("activation", a.shape(), &[m]));
        }
        let mut tape = Tape::new();
        let leaf = tape.leaf(a.flatten());
        let mut v = leaf;
        for l in &self.layers[layer + 1..] {
            v = l.record(&mut tape, v)?;
        }
        let out = tape.select(v, k)?;
        tape.backward(out, leaf)
    }

    /// `∂h_k/∂a_layer` at input `x`.
    pub fn logit_grad_at_layer(&self, x: &Tensor, k: usize, layer: LayerIndex) -> Result<Tensor> {
        if layer >= self.output_layer() {
            self.check_layer(layer)?;
            return Err(Error::Range {
                what: "probe layer (must precede the output)",
                index: layer,
                limit: self.output_layer(),
            });
        }
        let a = self.forward_to(x, layer)?;
        self.logit_grad_from_activation(layer, &a, k)
    }

    /// True when every layer after `layer` is affine.
    pub fn tail_is_affine(&self, layer: LayerIndex) -> bool {
        self.layers
            .get(layer + 1..)
            .is_some_and(|tail| tail.iter().all(LayerSpec::is_affine))
    }

    /// Earliest layer after which the network is affine: the E-TCAV probe.
    pub fn find_affine_tail(&self) -> Result<LayerIndex> {
        let last = self.output_layer();
        if !self.layers[last].is_affine() {
            return Err(Error::NoAffineTail(last));
        }
        let boundary = self.layers.iter().rposition(|l| !l.is_affine()).unwrap_or(0);
        if boundary == last {
            return Err(Error::NoAffineTail(last));
        }
        Ok(boundary)
    }

    /// Collapses the affine head after `layer` into `h_k(a) = w_k·a + b_k`.
    ///
    /// The row vector is propagated in the same order the tape's backward
    /// pass uses, so `w_k` is bit-identical to `logit_grad_at_layer` there.
    pub fn effective_logit_weights(&self, k: usize, layer: LayerIndex) -> Result<(Tensor, f64)> {
        self.check_class(k)?;
        let m = self.latent_dim(layer)?;
        if layer >= self.output_layer() {
            return Err(Error::Range {
                what: "probe layer (must precede the output)",
                index: layer,
                limit: self.output_layer(),
            });
        }
        if let Some(bad) = self.layers[layer + 1..].iter().position(|l| !l.is_affine()) {
            return Err(Error::Precondition(format!(
                "layer {} after probe layer {layer} is {}",
                layer + 1 + bad,
                self.layers[layer + 1 + bad].kind().name()
            )));
        }
        let mut row = Tensor::zeros(&[self.num_classes]);
        let mut data = row.clone().into_data();
        data[k] = 1.0;
        row = Tensor::vector(data);
        let mut bias = 0.0;
        for l in self.layers[layer + 1..].iter().rev() {
            match l {
                LayerSpec::Dense { weight, bias: b } => {
                    bias += row.dot(b)?;
                    row = weight.matvec_transposed(&row)?;
                }
                LayerSpec::AveragePool { window } => {
                    let inv = 1.0 / *window as f64;
                    let spread = (0..row.len() * window).map(|j| row.data()[j / window] * inv).collect();
                    row = Tensor::vector(spread);
                }
                LayerSpec::Flatten | LayerSpec::Identity => {}
                LayerSpec::Relu => unreachable!("checked above"),
            }
        }
        debug_assert_eq!(row.len(), m);
        Ok((row, bias))
    }

    /// Block outputs used as probing points: every ReLU output plus the
    /// affine-tail boundary, in network order.
    pub fn probe_layers(&self) -> Vec<LayerIndex> {
        let mut out: Vec<LayerIndex> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(i, l)| matches!(l, LayerSpec::Relu) && *i < self.output_layer())
            .map(|(i, _)| i)
            .collect();
        if let Ok(tail) = self.find_affine_tail() {
            if !out.contains(&tail) {
                out.push(tail);
                out.sort_unstable();
            }
        }
        out
    }

    /// Distance (in probe points) of `layer` before the affine-tail boundary.
    pub fn depth_from_tail(&self, layer: LayerIndex) -> Result<usize> {
        let tail = self.find_affine_tail()?;
        let probes = self.probe_layers();
        let pos = |l: LayerIndex| probes.iter().position(|&p| p == l);
        let tail_pos = pos(tail).expect("tail is a probe layer");
        match pos(layer) {
            Some(p) if p <= tail_pos => Ok(tail_pos - p),
            _ => Err(Error::Input(format!(
                "layer {layer} is not a probe layer at or before the tail ({probes:?})"
            ))),
        }
    }
}
