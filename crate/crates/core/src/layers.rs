//! Named parameter storage and the few layer types the networks are built from.

use std::cell::RefCell;

use diffcore::{batch_norm, layer_norm, Elem, NormConfig, RunningStats, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type ParamId = usize;
pub type BufferId = usize;

/// Trainable tensors plus non-trainable normalization statistics, both named
/// so they can be checkpointed.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Elem> {
    names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    buffers: Vec<(String, RefCell<RunningStats<T>>)>,
}

impl<T: Elem> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), buffers: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, data: Vec<T>, shape: &[usize]) -> Result<ParamId> {
        self.names.push(name.into());
        self.tensors.push(Tensor::var(data, shape)?);
        Ok(self.tensors.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.buffers.push((name.into(), RefCell::new(RunningStats::new(channels))));
        self.buffers.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn buffer(&self, id: BufferId) -> &RefCell<RunningStats<T>> {
        &self.buffers[id].1
    }

    /// Every stored array as (name, shape, values): parameters first, then
    /// running means and variances.
    pub fn records(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out: Vec<_> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_vec()))
            .collect();
        for (name, stats) in &self.buffers {
            let s = stats.borrow();
            out.push((format!("{name}.running_mean"), vec![s.mean.len()], s.mean.clone()));
            out.push((format!("{name}.running_var"), vec![s.var.len()], s.var.clone()));
        }
        out
    }

    /// Restores values written by [`ParamSet::records`]; names and shapes must
    /// match exactly.
    pub fn load_records(&mut self, records: &[(String, Vec<usize>, Vec<T>)]) -> Result<()> {
        let expected = self.records();
        if records.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {}",
                expected.len(),
                records.len()
            )));
        }
        for ((name, shape, _), (rname, rshape, _)) in expected.iter().zip(records) {
            if name != rname || shape != rshape {
                return Err(Error::Checkpoint(format!(
                    "record `{rname}` {rshape:?} does not match `{name}` {shape:?}"
                )));
            }
        }
        let np = self.tensors.len();
        for (i, (_, shape, data)) in records[..np].iter().enumerate() {
            self.tensors[i] = Tensor::var(data.clone(), shape)?;
        }
        for (i, pair) in records[np..].chunks_exact(2).enumerate() {
            let mut s = self.buffers[i].1.borrow_mut();
            s.mean = pair[0].2.clone();
            s.var = pair[1].2.clone();
        }
        Ok(())
    }
}

fn normal_vec<T: Elem>(rng: &mut impl Rng, n: usize, mean: f64, std: f64) -> Vec<T> {
    let d = Normal::new(mean, std).expect("valid normal");
    (0..n).map(|_| T::lit(d.sample(rng))).collect()
}

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: (usize, usize),
    padding: (usize, usize),
    transposed: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        let n = in_ch * out_ch * kernel.0 * kernel.1;
        let weight = ps.add(
            format!("{name}.weight"),
            normal_vec(rng, n, 0.0, INIT_STD),
            &[out_ch, in_ch, kernel.0, kernel.1],
        )?;
        let bias = if bias {
            Some(ps.add(format!("{name}.bias"), vec![T::zero(); out_ch], &[out_ch])?)
        } else {
            None
        };
        Ok(Conv { weight, bias, stride, padding, transposed: false })
    }

    /// Transposed convolution; the weight is stored as `[in, out, kh, kw]`.
    #[allow(clippy::too_many_arguments)]
    pub fn transposed<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        let mut conv = Conv::new(ps, rng, name, out_ch, in_ch, kernel, stride, padding, false)?;
        if bias {
            conv.bias = Some(ps.add(format!("{name}.bias"), vec![T::zero(); out_ch], &[out_ch])?);
        }
        conv.transposed = true;
        Ok(conv)
    }

    pub fn forward<T: Elem>(&self, ps: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = ps.get(self.weight);
        let b = self.bias.map(|b| ps.get(b));
        Ok(if self.transposed {
            x.conv_transpose2d(w, b, self.stride, self.padding)?
        } else {
            x.conv2d(w, b, self.stride, self.padding)?
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let weight = ps.add(
            format!("{name}.weight"),
            normal_vec(rng, in_features * out_features, 0.0, INIT_STD),
            &[in_features, out_features],
        )?;
        let bias = ps.add(format!("{name}.bias"), vec![T::zero(); out_features], &[out_features])?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Elem>(&self, ps: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.linear(ps.get(self.weight), Some(ps.get(self.bias)))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
    None,
}

impl NormKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "batch_norm" => Some(NormKind::Batch),
            "layer_norm" => Some(NormKind::Layer),
            "none" => Some(NormKind::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Batch => "batch_norm",
            NormKind::Layer => "layer_norm",
            NormKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Norm {
    Batch { gamma: ParamId, beta: ParamId, stats: BufferId, cfg: NormConfig },
    Layer { gamma: ParamId, beta: ParamId, epsilon: f64 },
    None,
}

impl Norm {
    pub fn new<T: Elem>(
        ps: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        kind: NormKind,
        channels: usize,
    ) -> Result<Self> {
        let cfg = NormConfig::default();
        let mut affine = |ps: &mut ParamSet<T>| -> Result<(ParamId, ParamId)> {
            let gamma = ps.add(format!("{name}.gamma"), normal_vec(rng, channels, 1.0, INIT_STD), &[channels])?;
            let beta = ps.add(format!("{name}.beta"), vec![T::zero(); channels], &[channels])?;
            Ok((gamma, beta))
        };
        Ok(match kind {
            NormKind::Batch => {
                let (gamma, beta) = affine(ps)?;
                let stats = ps.add_buffer(name, channels);
                Norm::Batch { gamma, beta, stats, cfg }
            }
            NormKind::Layer => {
                let (gamma, beta) = affine(ps)?;
                Norm::Layer { gamma, beta, epsilon: cfg.epsilon }
            }
            NormKind::None => Norm::None,
        })
    }

    pub fn forward<T: Elem>(&self, ps: &ParamSet<T>, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        Ok(match *self {
            Norm::Batch { gamma, beta, stats, cfg } => {
                let mut running = ps.buffer(stats).borrow_mut();
                batch_norm(x, ps.get(gamma), ps.get(beta), &mut running, train, cfg)?
            }
            Norm::Layer { gamma, beta, epsilon } => layer_norm(x, ps.get(gamma), ps.get(beta), epsilon)?,
            Norm::None => x.clone(),
        })
    }
}

/// Broadcasts labels into one-hot planes of shape `[N, K, h, w]`.
pub fn one_hot_planes<T: Elem>(labels: &[usize], k: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let plane = h * w;
    let mut data = vec![T::zero(); labels.len() * k * plane];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Model(format!("label {l} out of range for {k} classes")));
        }
        let off = (i * k + l) * plane;
        data[off..off + plane].iter_mut().for_each(|v| *v = T::one());
    }
    Ok(Tensor::from_vec(data, &[labels.len(), k, h, w])?)
}
