use rand::seq::SliceRandom;

use super::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum with coefficient 0.9.
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::SgdMomentum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

const MOMENTUM: f64 = 0.9;

/// Mini-batch softmax cross-entropy training.
///
/// Epoch statistics are measured on the full training set after each epoch.
/// Zero epochs returns the network unchanged.
pub fn train(
    net: &NetworkSpec,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<(NetworkSpec, TrainingHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    for (x, y) in data {
        if *y >= net.num_classes() {
            return Err(Error::Range {
                what: "label",
                index: *y,
                limit: net.num_classes(),
            });
        }
        if x.len() != net.input_len() {
            return Err(Error::dim("training input", x.shape(), &[net.input_len()]));
        }
    }

    let mut net = net.clone();
    let mut history = TrainingHistory::default();
    let mut velocity: Vec<Option<(Vec<f64>, Vec<f64>)>> = net
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { weight, bias } => Some((vec![0.0; weight.len()], vec![0.0; bias.len()])),
            _ => None,
        })
        .collect();
    let mut rng = seed::rng(seed::stream_seed(cfg.seed, "train-shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch_gradients(&net, data, batch)?;
            let scale = 1.0 / batch.len() as f64;
            for ((layer, grad), vel) in net.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                let (LayerSpec::Dense { weight, bias }, Some((gw, gb)), Some((vw, vb))) = (layer, grad, vel) else {
                    continue;
                };
                *weight = step(weight, gw, vw, scale, cfg)?;
                *bias = step(bias, gb, vb, scale, cfg)?;
            }
        }
        history.epochs.push(evaluate(&net, data)?);
    }
    Ok((net, history))
}

fn step(param: &Tensor, grad: &[f64], vel: &mut [f64], scale: f64, cfg: &TrainConfig) -> Result<Tensor> {
    let mut p = param.data().to_vec();
    for ((pi, &gi), vi) in p.iter_mut().zip(grad).zip(vel.iter_mut()) {
        let g = gi * scale;
        let update = match cfg.optimizer {
            Optimizer::Sgd => g,
            Optimizer::SgdMomentum => {
                *vi = MOMENTUM * *vi + g;
                *vi
            }
        };
        *pi -= cfg.learning_rate * update;
    }
    Tensor::new(param.shape().to_vec(), p)
}

type LayerGrad = Option<(Vec<f64>, Vec<f64>)>;

fn batch_gradients(net: &NetworkSpec, data: &[(Tensor, usize)], batch: &[usize]) -> Result<Vec<LayerGrad>> {
    let mut sums: Vec<LayerGrad> = net
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { weight, bias } => Some((vec![0.0; weight.len()], vec![0.0; bias.len()])),
            _ => None,
        })
        .collect();

    for &i in batch {
        let (x, y) = &data[i];
        let mut tape = Tape::new();
        let mut v = tape.leaf(x.flatten());
        let mut params = Vec::with_capacity(net.layers().len());
        for layer in net.layers() {
            match layer {
                LayerSpec::Dense { weight, bias } => {
                    let w = tape.param(weight);
                    let b = tape.param(bias);
                    let z = tape.matvec(w, v)?;
                    v = tape.add(z, b)?;
                    params.push(Some((w, b)));
                }
                LayerSpec::Relu => {
                    v = tape.relu(v)?;
                    params.push(None);
                }
                LayerSpec::AveragePool { window } => {
                    v = tape.average_pool(v, *window)?;
                    params.push(None);
                }
                LayerSpec::Flatten | LayerSpec::Identity => params.push(None),
            }
        }
        let loss = tape.softmax_cross_entropy(v, *y)?;
        let grads = tape.gradients(loss)?;
        for (sum, p) in sums.iter_mut().zip(&params) {
            let (Some((sw, sb)), Some((w, b))) = (sum, p) else { continue };
            if let Some(gw) = grads.get(*w)? {
                sw.iter_mut().zip(gw.data()).for_each(|(s, g)| *s += g);
            }
            if let Some(gb) = grads.get(*b)? {
                sb.iter_mut().zip(gb.data()).for_each(|(s, g)| *s += g);
            }
        }
    }
    Ok(sums)
}

/// Mean cross-entropy and accuracy over `data`.
pub(crate) fn evaluate(net: &NetworkSpec, data: &[(Tensor, usize)]) -> Result<EpochStats> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in data {
        let z = net.logits(x)?;
        loss += crate::tensor::log_sum_exp(z.data()) - z.data()[*y];
        if z.argmax() == *y {
            correct += 1;
        }
    }
    Ok(EpochStats {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}
