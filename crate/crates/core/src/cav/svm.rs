use rand::Rng as _;

use super::LatentDataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{dot_slices, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    /// Regularization strength λ.
    pub reg: f64,
    pub iters: usize,
    pub batch: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            reg: 1e-3,
            iters: 2000,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmDiagnostics {
    /// Regularized hinge objective at the returned solution.
    pub objective: f64,
    /// Relative objective change over the second half of training.
    pub relative_change: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    /// Normal of the decision boundary in activation space, pointing toward
    /// the concept class.
    pub vector: Tensor,
    pub bias: f64,
    pub diagnostics: SvmDiagnostics,
}

const CONVERGENCE_TOL: f64 = 0.05;

/// Linear soft-margin SVM by mini-batch Pegasos.
///
/// Features are divided by their RMS norm and augmented with a constant 1
/// for the bias. The returned weights are the average of the iterates over
/// the second half of training, mapped back to the original scale.
pub fn svm_cav(data: &LatentDataset, cfg: &SvmConfig, seed: u64) -> Result<SvmFit> {
    if !(cfg.reg > 0.0) || cfg.iters == 0 || cfg.batch == 0 {
        return Err(Error::Input(format!("invalid svm config {cfg:?}")));
    }
    let rows = data.rows();
    let n = rows.len();
    let m = data.dim();
    let sq: f64 = rows.iter().map(|(h, _)| dot_slices(h.data(), h.data())).sum();
    let scale = (sq / n as f64).sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let feats: Vec<Vec<f64>> = rows
        .iter()
        .map(|(h, _)| h.data().iter().map(|v| v / scale).chain(std::iter::once(1.0)).collect())
        .collect();
    let ys: Vec<f64> = rows.iter().map(|(_, t)| if *t { 1.0 } else { -1.0 }).collect();

    let lambda = cfg.reg;
    let radius = 1.0 / lambda.sqrt();
    let batch = cfg.batch.min(n);
    let mut rng = seed::rng(seed);
    let mut w = vec![0.0; m + 1];
    let mut avg = vec![0.0; m + 1];
    let mut averaged = 0usize;
    let half = cfg.iters / 2;
    let mut mid_objective = None;
    let mut step = vec![0.0; m + 1];

    for t in 1..=cfg.iters {
        let eta = 1.0 / (lambda * t as f64);
        step.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..batch {
            let i = rng.random_range(0..n);
            if ys[i] * dot_slices(&w, &feats[i]) < 1.0 {
                for (s, &x) in step.iter_mut().zip(&feats[i]) {
                    *s += ys[i] * x;
                }
            }
        }
        let shrink = 1.0 - eta * lambda;
        let gain = eta / batch as f64;
        for (wj, &sj) in w.iter_mut().zip(&step) {
            *wj = shrink * *wj + gain * sj;
        }
        let norm = dot_slices(&w, &w).sqrt();
        if norm > radius {
            let r = radius / norm;
            w.iter_mut().for_each(|wj| *wj *= r);
        }
        if t > half {
            averaged += 1;
            for (a, &wj) in avg.iter_mut().zip(&w) {
                *a += wj;
            }
        }
        if t == half.max(1) {
            mid_objective = Some(objective(&w, &feats, &ys, lambda));
        }
    }
    avg.iter_mut().for_each(|a| *a /= averaged as f64);

    let obj = objective(&avg, &feats, &ys, lambda);
    let mid = mid_objective.unwrap_or(obj);
    let relative_change = (mid - obj).abs() / obj.abs().max(1e-12);
    let vector = Tensor::vector(avg[..m].iter().map(|v| v / scale).collect());
    Ok(SvmFit {
        vector,
        bias: avg[m],
        diagnostics: SvmDiagnostics {
            objective: obj,
            relative_change,
            converged: obj.is_finite() && relative_change <= CONVERGENCE_TOL,
        },
    })
}

fn objective(w: &[f64], feats: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = feats
        .iter()
        .zip(ys)
        .map(|(x, &y)| (1.0 - y * dot_slices(w, x)).max(0.0))
        .sum();
    0.5 * lambda * dot_slices(w, w) + hinge / feats.len() as f64
}
