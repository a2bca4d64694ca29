use diffcore::AdamConfig;

use crate::error::{Error, Result};
use crate::layers::NormKind;

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub latent_dim: usize,

    /// Output widths of the first-block transposed convolutions for z and c.
    pub gen_z_width: usize,
    pub gen_c_width: usize,
    /// Output widths of the upsample + 3×3 conv blocks.
    pub gen_widths: Vec<usize>,
    /// Upsampling factor (h, w) of each of those blocks.
    pub gen_upsample: Vec<(usize, usize)>,
    pub gen_out_kernel: usize,

    /// Output widths of the critic blocks; the first is split evenly between
    /// the image and condition convolutions.
    pub critic_widths: Vec<usize>,
    pub critic_strides: Vec<(usize, usize)>,
    pub critic_kernel: usize,
    pub critic_norm: NormKind,
    pub leaky_slope: f64,

    /// Minibatch-discrimination kernel count and kernel dimension.
    pub mb_kernels: usize,
    pub mb_kernel_dim: usize,

    pub use_aux_classifier: bool,
    pub ac_weight: f64,
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Save a resumable checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for GanConfig {
    /// Desk scale: 32×64 images.
    fn default() -> Self {
        GanConfig {
            height: 32,
            width: 64,
            channels: 3,
            num_classes: 4,
            latent_dim: 100,
            gen_z_width: 64,
            gen_c_width: 16,
            gen_widths: vec![64, 64, 32, 32, 16, 16],
            gen_upsample: vec![(1, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2)],
            gen_out_kernel: 7,
            critic_widths: vec![32, 32, 64, 64, 128, 128, 128],
            critic_strides: vec![(2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (1, 2), (1, 1)],
            critic_kernel: 4,
            critic_norm: NormKind::Layer,
            leaky_slope: 0.2,
            mb_kernels: 32,
            mb_kernel_dim: 3,
            use_aux_classifier: false,
            ac_weight: 1.0,
            lambda_gp: 10.0,
            n_critic: 5,
            batch_size: 100,
            epochs: 700,
            adam: AdamConfig::gan(),
            checkpoint_every: 0,
        }
    }
}

/// Symmetric padding for a critic convolution along one axis.
pub fn critic_padding(kernel: usize, stride: usize) -> usize {
    kernel.saturating_sub(stride).div_ceil(2)
}

/// Spatial sizes implied by a validated configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GanGeometry {
    /// Generator seed size produced by the first block.
    pub seed: (usize, usize),
    /// Critic feature-map size after each block.
    pub critic_maps: Vec<(usize, usize)>,
    /// Flattened critic feature size A.
    pub features: usize,
}

impl GanConfig {
    pub fn geometry(&self) -> Result<GanGeometry> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.num_classes == 0 || self.latent_dim == 0 {
            return bad("num_classes and latent_dim must be positive".into());
        }
        if self.gen_widths.len() != self.gen_upsample.len() {
            return bad(format!(
                "{} generator widths for {} upsampling blocks",
                self.gen_widths.len(),
                self.gen_upsample.len()
            ));
        }
        if self.gen_out_kernel % 2 == 0 {
            return bad("generator output kernel must be odd".into());
        }
        let (mut fh, mut fw) = (1usize, 1usize);
        for &(a, b) in &self.gen_upsample {
            if !(1..=2).contains(&a) || !(1..=2).contains(&b) {
                return bad(format!("unsupported upsampling factor ({a},{b})"));
            }
            fh *= a;
            fw *= b;
        }
        if self.height % fh != 0 || self.width % fw != 0 {
            return bad(format!(
                "upsampling by {fh}x{fw} cannot reach {}x{}",
                self.height, self.width
            ));
        }
        let seed = (self.height / fh, self.width / fw);

        if self.critic_widths.len() != self.critic_strides.len() || self.critic_widths.is_empty() {
            return bad("critic widths and strides must have the same non-zero length".into());
        }
        if self.critic_widths[0] < 2 || self.critic_widths[0] % 2 != 0 {
            return bad("first critic width must be even".into());
        }
        let k = self.critic_kernel;
        let mut maps = Vec::new();
        let (mut h, mut w) = (self.height, self.width);
        for (i, &(sh, sw)) in self.critic_strides.iter().enumerate() {
            if sh == 0 || sw == 0 {
                return bad("critic strides must be positive".into());
            }
            let next = |n: usize, s: usize| (n + 2 * critic_padding(k, s)).checked_sub(k).map(|v| v / s + 1);
            match (next(h, sh), next(w, sw)) {
                (Some(a), Some(b)) if a > 0 && b > 0 => (h, w) = (a, b),
                _ => return bad(format!("critic block {} has no output at {h}x{w}", i + 1)),
            }
            maps.push((h, w));
        }
        let features = self.critic_widths.last().copied().unwrap_or(0) * h * w;
        if self.mb_kernels == 0 || self.mb_kernel_dim == 0 {
            return bad("minibatch-discrimination dims must be positive".into());
        }
        if self.n_critic == 0 || self.batch_size < 2 {
            return bad("n_critic must be positive and batch_size at least 2".into());
        }
        Ok(GanGeometry { seed, critic_maps: maps, features })
    }
}
