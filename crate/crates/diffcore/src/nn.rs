//! Layer-level operations composed from the primitive ops.

use std::rc::Rc;

use crate::error::{invalid, Error, Result};
use crate::tensor::{Op, Tensor};
use crate::Elem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl<T: Elem> Tensor<T> {
    pub fn activation(&self, kind: Activation) -> Result<Tensor<T>> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::LeakyRelu(slope) => self.leaky_relu(T::lit(slope)),
            Activation::Tanh => self.tanh(),
        }
    }

    /// `x[N×F] · w[F×G] + b[G]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    /// Concatenation along axis 1 of two NCHW (or N×F) tensors.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() < 2 || other.shape().len() < 2 {
            return invalid("concat_channels", "inputs need a channel axis");
        }
        if self.shape()[1] == 0 || other.shape()[1] == 0 {
            return invalid("concat_channels", "empty channel dimension");
        }
        Tensor::concat(&[self, other], 1)
    }

    /// Mean cross-entropy of `logits[N×K]` against integer labels.
    ///
    /// Fused and first-order only: a second backward through it is an error.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let (n, k) = self.dims2()?;
        if labels.len() != n {
            return invalid(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), n),
            );
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return invalid("cross_entropy", format!("label {bad} out of range 0..{k}"));
        }
        let inv_n = T::one() / T::lit(n as f64);
        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); n * k];
        for (i, &label) in labels.iter().enumerate() {
            let row = &self.data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            loss = loss + (log_z - row[label]);
            for j in 0..k {
                let p = (row[j] - log_z).exp();
                let target = if j == label { T::one() } else { T::zero() };
                dlogits[i * k + j] = (p - target) * inv_n;
            }
        }
        Tensor::from_op(
            "cross_entropy",
            vec![loss * inv_n],
            vec![],
            Op::CrossEntropy(self.clone(), Rc::new(dlogits)),
        )
    }

    /// Row-wise softmax, computed outside the graph.
    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        let (n, k) = self.dims2()?;
        let mut out = Vec::with_capacity(n * k);
        for row in self.data().chunks(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: T = exps.iter().copied().sum();
            out.extend(exps.into_iter().map(|e| e / sum));
        }
        Tensor::from_vec(out, &[n, k])
    }
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Elem> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

fn channel_param<T: Elem>(p: &Tensor<T>, c: usize, rank: usize) -> Result<Tensor<T>> {
    if p.numel() != c {
        return Err(Error::ShapeMismatch {
            op: "normalization affine",
            lhs: vec![c],
            rhs: p.shape().to_vec(),
        });
    }
    let mut shape = vec![1; rank];
    shape[1] = c;
    p.reshape(&shape)
}

/// Per-channel batch normalization over (N, H, W) of an NCHW (or N×C) input.
///
/// In train mode the batch statistics are part of the graph and `running` is
/// updated with the unbiased batch variance; in eval mode `running` is used
/// as a constant.
pub fn batch_norm<T: Elem>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    train: bool,
    cfg: NormConfig,
) -> Result<Tensor<T>> {
    let rank = x.shape().len();
    if rank != 2 && rank != 4 {
        return invalid("batch_norm", format!("unsupported input shape {:?}", x.shape()));
    }
    let c = x.shape()[1];
    let n = x.shape()[0];
    let axes: Vec<usize> = (0..rank).filter(|&a| a != 1).collect();
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let g = channel_param(gamma, c, rank)?;
    let b = channel_param(beta, c, rank)?;
    let mut stat_shape = vec![1; rank];
    stat_shape[1] = c;
    let eps = T::lit(cfg.epsilon);
    let normalized = if train {
        if n < 2 || count < 2 {
            return Err(Error::BatchTooSmall);
        }
        let mean = x.mean_keepdim(&axes)?;
        let centered = x.sub(&mean)?;
        let var = centered.square()?.mean_keepdim(&axes)?;
        let m = T::lit(cfg.momentum);
        let unbias = T::lit(count as f64 / (count as f64 - 1.0));
        for ch in 0..c {
            running.mean[ch] = (T::one() - m) * running.mean[ch] + m * mean.data()[ch];
            running.var[ch] = (T::one() - m) * running.var[ch] + m * var.data()[ch] * unbias;
        }
        centered.mul(&var.add_scalar(eps)?.powf(T::lit(-0.5))?)?
    } else {
        let mean = Tensor::from_vec(running.mean.clone(), &stat_shape)?;
        let inv_std: Vec<T> = running
            .var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let inv_std = Tensor::from_vec(inv_std, &stat_shape)?;
        x.sub(&mean)?.mul(&inv_std)?
    };
    normalized.mul(&g)?.add(&b)
}

/// Per-sample normalization over all non-batch axes, with a per-channel affine.
pub fn layer_norm<T: Elem>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let rank = x.shape().len();
    if rank < 2 {
        return invalid("layer_norm", format!("unsupported input shape {:?}", x.shape()));
    }
    let c = x.shape()[1];
    let axes: Vec<usize> = (1..rank).collect();
    let mean = x.mean_keepdim(&axes)?;
    let centered = x.sub(&mean)?;
    let var = centered.square()?.mean_keepdim(&axes)?;
    let normalized = centered.mul(&var.add_scalar(T::lit(epsilon))?.powf(T::lit(-0.5))?)?;
    normalized
        .mul(&channel_param(gamma, c, rank)?)?
        .add(&channel_param(beta, c, rank)?)
}
