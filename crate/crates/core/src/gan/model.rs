//! Conditional generator and critic.

use diffcore::{Elem, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{critic_padding, GanConfig};
use crate::error::{Error, Result};
use crate::layers::{one_hot_planes, Conv, Linear, Norm, NormKind, ParamId, ParamSet};

/// Similarity features coupling the rows of `f` (n×A) through `t` (A×B×C):
/// `o[i][b] = Σ_j exp(−‖M_ib − M_jb‖₁)` with `M_i = f_i · T` viewed as B×C.
/// The sum runs over every j, including j = i.
pub fn minibatch_discrimination<T: Elem>(f: &Tensor<T>, t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, a) = f.dims2()?;
    if t.shape().len() != 3 || t.shape()[0] != a {
        return Err(Error::Model(format!(
            "minibatch transform {:?} does not match features {:?}",
            t.shape(),
            f.shape()
        )));
    }
    if n == 0 {
        return Err(Error::Model("minibatch discrimination needs at least one row".into()));
    }
    let (b, c) = (t.shape()[1], t.shape()[2]);
    let m = f.matmul(&t.reshape(&[a, b * c])?)?;
    let rows = m.reshape(&[n, 1, b, c])?;
    let cols = m.reshape(&[1, n, b, c])?;
    let l1 = rows.sub(&cols)?.abs()?.sum_keepdim(&[3])?;
    let o = l1.neg()?.exp()?.sum_keepdim(&[1])?;
    Ok(o.reshape(&[n, b])?)
}

fn labels_one_hot<T: Elem>(labels: &[usize], k: usize) -> Result<Tensor<T>> {
    one_hot_planes(labels, k, 1, 1)
}

#[derive(Debug, Clone)]
pub struct Generator<T: Elem> {
    pub params: ParamSet<T>,
    z_conv: Conv,
    z_norm: Norm,
    c_conv: Conv,
    c_norm: Norm,
    blocks: Vec<((usize, usize), Conv, Norm)>,
    out: Conv,
    latent_dim: usize,
    num_classes: usize,
}

impl<T: Elem> Generator<T> {
    pub fn new(cfg: &GanConfig, rng: &mut impl Rng) -> Result<Self> {
        let geo = cfg.geometry()?;
        let mut ps = ParamSet::new();
        let bn = NormKind::Batch;
        let z_conv = Conv::transposed(&mut ps, rng, "z_in", cfg.latent_dim, cfg.gen_z_width, geo.seed, (1, 1), (0, 0), false)?;
        let z_norm = Norm::new(&mut ps, rng, "z_in.bn", bn, cfg.gen_z_width)?;
        let c_conv = Conv::transposed(&mut ps, rng, "c_in", cfg.num_classes, cfg.gen_c_width, geo.seed, (1, 1), (0, 0), false)?;
        let c_norm = Norm::new(&mut ps, rng, "c_in.bn", bn, cfg.gen_c_width)?;
        let mut blocks = Vec::new();
        let mut ch = cfg.gen_z_width + cfg.gen_c_width;
        for (i, (&w, &f)) in cfg.gen_widths.iter().zip(&cfg.gen_upsample).enumerate() {
            let name = format!("block{}", i + 2);
            let conv = Conv::new(&mut ps, rng, &name, ch, w, (3, 3), (1, 1), (1, 1), false)?;
            let norm = Norm::new(&mut ps, rng, &format!("{name}.bn"), bn, w)?;
            blocks.push((f, conv, norm));
            ch = w;
        }
        let k = cfg.gen_out_kernel;
        let out = Conv::new(&mut ps, rng, "out", ch, cfg.channels, (k, k), (1, 1), (k / 2, k / 2), true)?;
        Ok(Generator {
            params: ps,
            z_conv,
            z_norm,
            c_conv,
            c_norm,
            blocks,
            out,
            latent_dim: cfg.latent_dim,
            num_classes: cfg.num_classes,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `z` is N×latent; returns N×channels×H×W in (−1, 1).
    pub fn forward(&self, z: &Tensor<T>, labels: &[usize], train: bool) -> Result<Tensor<T>> {
        let (n, d) = z.dims2()?;
        if d != self.latent_dim || n != labels.len() {
            return Err(Error::Model(format!(
                "generator expects {} labels and latent dim {}, got {:?}",
                labels.len(),
                self.latent_dim,
                z.shape()
            )));
        }
        let ps = &self.params;
        let zb = self.z_conv.forward(ps, &z.reshape(&[n, d, 1, 1])?)?;
        let zb = self.z_norm.forward(ps, &zb, train)?.relu()?;
        let cb = self.c_conv.forward(ps, &labels_one_hot(labels, self.num_classes)?)?;
        let cb = self.c_norm.forward(ps, &cb, train)?.relu()?;
        let mut h = zb.concat_channels(&cb)?;
        for (factor, conv, norm) in &self.blocks {
            h = conv.forward(ps, &h.upsample_bilinear(*factor)?)?;
            h = norm.forward(ps, &h, train)?.relu()?;
        }
        Ok(self.out.forward(ps, &h)?.tanh()?)
    }
}

#[derive(Debug, Clone)]
pub struct CriticOutput<T: Elem> {
    pub score: Tensor<T>,
    pub aux_logits: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Critic<T: Elem> {
    pub params: ParamSet<T>,
    image_conv: Conv,
    cond_conv: Conv,
    blocks: Vec<(Conv, Norm)>,
    mb_transform: ParamId,
    head: Linear,
    aux: Option<Linear>,
    slope: f64,
    num_classes: usize,
    input: (usize, usize, usize),
}

impl<T: Elem> Critic<T> {
    pub fn new(cfg: &GanConfig, rng: &mut impl Rng) -> Result<Self> {
        let geo = cfg.geometry()?;
        let mut ps = ParamSet::new();
        let k = (cfg.critic_kernel, cfg.critic_kernel);
        let pad = |(sh, sw): (usize, usize)| {
            (critic_padding(cfg.critic_kernel, sh), critic_padding(cfg.critic_kernel, sw))
        };
        let s0 = cfg.critic_strides[0];
        let half = cfg.critic_widths[0] / 2;
        let image_conv = Conv::new(&mut ps, rng, "x_in", cfg.channels, half, k, s0, pad(s0), true)?;
        let cond_conv = Conv::new(&mut ps, rng, "c_in", cfg.num_classes, half, k, s0, pad(s0), true)?;
        let mut blocks = Vec::new();
        let mut ch = cfg.critic_widths[0];
        for (i, (&w, &s)) in cfg.critic_widths.iter().zip(&cfg.critic_strides).enumerate().skip(1) {
            let name = format!("block{}", i + 1);
            let normed = cfg.critic_norm != NormKind::None;
            let conv = Conv::new(&mut ps, rng, &name, ch, w, k, s, pad(s), !normed)?;
            let norm = Norm::new(&mut ps, rng, &format!("{name}.norm"), cfg.critic_norm, w)?;
            blocks.push((conv, norm));
            ch = w;
        }
        let (a, b, c) = (geo.features, cfg.mb_kernels, cfg.mb_kernel_dim);
        let init = Normal::new(0.0, 0.02).expect("valid normal");
        let t: Vec<T> = (0..a * b * c).map(|_| T::lit(init.sample(rng))).collect();
        let mb_transform = ps.add("minibatch.T", t, &[a, b, c])?;
        let head = Linear::new(&mut ps, rng, "score", a + b, 1)?;
        let aux = if cfg.use_aux_classifier {
            Some(Linear::new(&mut ps, rng, "aux", a + b, cfg.num_classes)?)
        } else {
            None
        };
        Ok(Critic {
            params: ps,
            image_conv,
            cond_conv,
            blocks,
            mb_transform,
            head,
            aux,
            slope: cfg.leaky_slope,
            num_classes: cfg.num_classes,
            input: (cfg.channels, cfg.height, cfg.width),
        })
    }

    pub fn mb_transform(&self) -> ParamId {
        self.mb_transform
    }

    pub fn has_aux(&self) -> bool {
        self.aux.is_some()
    }

    /// Flattened output of the last convolutional block, N×A.
    pub fn features(&self, x: &Tensor<T>, labels: &[usize], train: bool) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if (c, h, w) != self.input || n != labels.len() {
            return Err(Error::Model(format!(
                "critic expects {} images of {:?}, got {:?}",
                labels.len(),
                self.input,
                x.shape()
            )));
        }
        let ps = &self.params;
        let slope = T::lit(self.slope);
        let xi = self.image_conv.forward(ps, x)?;
        let ci = self
            .cond_conv
            .forward(ps, &one_hot_planes(labels, self.num_classes, h, w)?)?;
        let mut f = xi.concat_channels(&ci)?.leaky_relu(slope)?;
        for (conv, norm) in &self.blocks {
            f = norm.forward(ps, &conv.forward(ps, &f)?, train)?.leaky_relu(slope)?;
        }
        Ok(f.flatten()?)
    }

    pub fn forward(&self, x: &Tensor<T>, labels: &[usize], train: bool) -> Result<CriticOutput<T>> {
        let f = self.features(x, labels, train)?;
        let o = minibatch_discrimination(&f, self.params.get(self.mb_transform))?;
        let joined = Tensor::concat(&[&f, &o], 1)?;
        let score = self.head.forward(&self.params, &joined)?;
        let aux_logits = match &self.aux {
            Some(l) => Some(l.forward(&self.params, &joined)?),
            None => None,
        };
        Ok(CriticOutput { score, aux_logits })
    }
}

#[derive(Debug, Clone)]
pub struct GanModel<T: Elem> {
    pub config: GanConfig,
    pub generator: Generator<T>,
    pub critic: Critic<T>,
}

impl<T: Elem> GanModel<T> {
    pub fn new(config: GanConfig, rng: &mut impl Rng) -> Result<Self> {
        let generator = Generator::new(&config, rng)?;
        let critic = Critic::new(&config, rng)?;
        Ok(GanModel { config, generator, critic })
    }
}
