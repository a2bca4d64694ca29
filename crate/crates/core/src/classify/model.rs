//! Compact four-stage convolutional classifier.

use diffcore::{AdamConfig, Elem, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv, Linear, Norm, NormKind, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Output channels of each conv → BN → ReLU → 2×2 pool stage.
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub channels: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Absolute validation-accuracy gain that counts as an improvement.
    pub plateau_threshold: f64,
    pub min_lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            widths: vec![16, 32, 64, 128],
            num_classes: 4,
            channels: 3,
            batch_size: 64,
            epochs: 60,
            adam: AdamConfig::classifier(),
            plateau_factor: 0.2,
            plateau_patience: 5,
            plateau_threshold: 1e-4,
            min_lr: 1e-6,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("classifier widths must be non-empty and positive");
        }
        if self.num_classes < 2 || self.channels == 0 {
            return bad("classifier needs at least 2 classes and 1 channel");
        }
        if self.batch_size < 2 || self.epochs == 0 {
            return bad("classifier needs a batch size of at least 2 and at least one epoch");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Classifier<T: Elem> {
    pub params: ParamSet<T>,
    stages: Vec<(Conv, Norm)>,
    head: Linear,
    channels: usize,
    num_classes: usize,
    trained: bool,
}

impl<T: Elem> Classifier<T> {
    pub fn new(cfg: &ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut stages = Vec::new();
        let mut ch = cfg.channels;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let name = format!("stage{}", i + 1);
            let conv = Conv::new(&mut ps, rng, &name, ch, w, (3, 3), (1, 1), (1, 1), false)?;
            let norm = Norm::new(&mut ps, rng, &format!("{name}.bn"), NormKind::Batch, w)?;
            stages.push((conv, norm));
            ch = w;
        }
        let head = Linear::new(&mut ps, rng, "head", ch, cfg.num_classes)?;
        Ok(Classifier {
            params: ps,
            stages,
            head,
            channels: cfg.channels,
            num_classes: cfg.num_classes,
            trained: false,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Set after training, or after loading trained weights.
    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let step = 1usize << self.stages.len();
        if c != self.channels || h % step != 0 || w % step != 0 || h == 0 || w == 0 {
            return Err(Error::Model(format!(
                "classifier expects {} channels and sides divisible by {step}, got {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Logits, plus the post-ReLU (pre-pool) output of every stage when
    /// `keep_stages` is set.
    pub fn run(&self, x: &Tensor<T>, train: bool, keep_stages: bool) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        self.check_input(x)?;
        let ps = &self.params;
        let mut kept = Vec::new();
        let mut h = x.clone();
        for (conv, norm) in &self.stages {
            let a = norm.forward(ps, &conv.forward(ps, &h)?, train)?.relu()?;
            h = a.avg_pool2d(2)?;
            if keep_stages {
                kept.push(a);
            }
        }
        let (n, c, _, _) = h.dims4()?;
        let pooled = h.mean_keepdim(&[2, 3])?.reshape(&[n, c])?;
        Ok((self.head.forward(ps, &pooled)?, kept))
    }

    pub fn logits(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        Ok(self.run(x, train, false)?.0)
    }
}
