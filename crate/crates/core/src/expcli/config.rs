//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::classify::ClassifierConfig;
use crate::datapipe::corpus::CorpusConfig;
use crate::datapipe::patches::PatchConfig;
use crate::datapipe::split::DEFAULT_RATIOS;
use crate::datapipe::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::layers::NormKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    None,
    Traditional,
    CganAc,
    CganNoFilter,
    CganFilter,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::None, Mode::Traditional, Mode::CganAc, Mode::CganNoFilter, Mode::CganFilter];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Traditional => "traditional",
            Mode::CganAc => "cgan_ac",
            Mode::CganNoFilter => "cgan_nofilter",
            Mode::CganFilter => "cgan_filter",
        }
    }

    /// Modes that add synthetic images and therefore take a ratio.
    pub fn uses_gan(self) -> bool {
        matches!(self, Mode::CganAc | Mode::CganNoFilter | Mode::CganFilter)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Root seed for the corpus, the split, the GANs, the pool and the extractor.
    pub seed: u64,
    /// Classifier seeds, one protocol run each.
    pub seeds: Vec<u64>,
    /// Mode and ratio used by single-run subcommands.
    pub mode: Mode,
    pub ratio: f64,
    /// Method rows of the protocol; GAN modes are crossed with `protocol_ratios`.
    pub protocol_modes: Vec<Mode>,
    pub protocol_ratios: Vec<f64>,
    /// Retrain GANs, extractor and pool for every classifier seed.
    pub regen_per_seed: bool,
    pub corpus: CorpusConfig,
    pub split_ratios: [f64; 3],
    pub patch: PatchConfig,
    pub gan: GanConfig,
    pub clf: ClassifierConfig,
    pub filter_layers: Vec<usize>,
    pub pool_per_class: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            mode: Mode::CganFilter,
            ratio: 2.0,
            protocol_modes: Mode::ALL.to_vec(),
            protocol_ratios: vec![0.5, 2.0],
            regen_per_seed: false,
            corpus: CorpusConfig::default(),
            split_ratios: DEFAULT_RATIOS,
            patch: PatchConfig::default(),
            gan: GanConfig::default(),
            clf: ClassifierConfig::default(),
            filter_layers: vec![0, 1, 2, 3],
            pool_per_class: 5000,
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse `{}`", p.trim())))
        .collect()
}

fn parse_one<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

/// `HxW` pairs, e.g. `1x2, 2x2`.
fn parse_pairs(v: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    parse_list::<String>(v)?
        .iter()
        .map(|p| {
            let (a, b) = p.split_once('x').ok_or_else(|| format!("expected HxW, got `{p}`"))?;
            Ok((parse_one(a)?, parse_one(b)?))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn join_pairs(v: &[(usize, usize)]) -> String {
    v.iter().map(|(a, b)| format!("{a}x{b}")).collect::<Vec<_>>().join(", ")
}

fn fixed<const N: usize, T: FromStr + Copy + Default>(v: &str) -> std::result::Result<[T; N], String> {
    let items = parse_list::<T>(v)?;
    if items.len() != N {
        return Err(format!("expected {N} values, got {}", items.len()));
    }
    let mut out = [T::default(); N];
    out.copy_from_slice(&items);
    Ok(out)
}

impl ExperimentConfig {
    /// Applies one assignment; the error is the message only.
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (g, c) = (&mut self.gan, &mut self.clf);
        match key {
            "seed" => self.seed = parse_one(v)?,
            "seeds" => self.seeds = parse_list(v)?,
            "mode" => self.mode = v.parse()?,
            "ratio" => self.ratio = parse_one(v)?,
            "protocol_modes" => self.protocol_modes = parse_list::<String>(v)?.iter().map(|m| m.parse()).collect::<std::result::Result<_, _>>()?,
            "protocol_ratios" => self.protocol_ratios = parse_list(v)?,
            "regen_per_seed" => self.regen_per_seed = parse_bool(v)?,
            "corpus.counts" => self.corpus.counts = fixed::<NUM_CLASSES, usize>(v)?,
            "image.height" => self.corpus.height = parse_one(v)?,
            "image.width" => self.corpus.width = parse_one(v)?,
            "split.ratios" => self.split_ratios = fixed::<3, f64>(v)?,
            "patch.margin" => self.patch.margin = parse_one(v)?,
            "patch.tolerance" => {
                self.patch.tolerance = if v == "auto" { None } else { Some(parse_one(v)?) };
            }
            "gan.latent_dim" => g.latent_dim = parse_one(v)?,
            "gan.z_width" => g.gen_z_width = parse_one(v)?,
            "gan.c_width" => g.gen_c_width = parse_one(v)?,
            "gan.widths" => g.gen_widths = parse_list(v)?,
            "gan.upsample" => g.gen_upsample = parse_pairs(v)?,
            "gan.out_kernel" => g.gen_out_kernel = parse_one(v)?,
            "gan.critic_widths" => g.critic_widths = parse_list(v)?,
            "gan.critic_strides" => g.critic_strides = parse_pairs(v)?,
            "gan.critic_kernel" => g.critic_kernel = parse_one(v)?,
            "gan.critic_norm" => {
                g.critic_norm = NormKind::parse(v).ok_or_else(|| format!("unknown normalization `{v}`"))?
            }
            "gan.leaky_slope" => g.leaky_slope = parse_one(v)?,
            "gan.mb_kernels" => g.mb_kernels = parse_one(v)?,
            "gan.mb_kernel_dim" => g.mb_kernel_dim = parse_one(v)?,
            "gan.ac_weight" => g.ac_weight = parse_one(v)?,
            "gan.lambda_gp" => g.lambda_gp = parse_one(v)?,
            "gan.n_critic" => g.n_critic = parse_one(v)?,
            "gan.batch_size" => g.batch_size = parse_one(v)?,
            "gan.epochs" => g.epochs = parse_one(v)?,
            "gan.lr" => g.adam.lr = parse_one(v)?,
            "gan.beta1" => g.adam.beta1 = parse_one(v)?,
            "gan.beta2" => g.adam.beta2 = parse_one(v)?,
            "gan.checkpoint_every" => g.checkpoint_every = parse_one(v)?,
            "clf.widths" => c.widths = parse_list(v)?,
            "clf.batch_size" => c.batch_size = parse_one(v)?,
            "clf.epochs" => c.epochs = parse_one(v)?,
            "clf.lr" => c.adam.lr = parse_one(v)?,
            "clf.weight_decay" => c.adam.weight_decay = parse_one(v)?,
            "clf.plateau_factor" => c.plateau_factor = parse_one(v)?,
            "clf.plateau_patience" => c.plateau_patience = parse_one(v)?,
            "clf.plateau_threshold" => c.plateau_threshold = parse_one(v)?,
            "clf.min_lr" => c.min_lr = parse_one(v)?,
            "filter.layers" => self.filter_layers = parse_list(v)?,
            "filter.pool_per_class" => self.pool_per_class = parse_one(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (g, c) = (&self.gan, &self.clf);
        vec![
            ("seed", self.seed.to_string()),
            ("seeds", join(&self.seeds)),
            ("mode", self.mode.to_string()),
            ("ratio", self.ratio.to_string()),
            ("protocol_modes", join(&self.protocol_modes)),
            ("protocol_ratios", join(&self.protocol_ratios)),
            ("regen_per_seed", self.regen_per_seed.to_string()),
            ("corpus.counts", join(&self.corpus.counts)),
            ("image.height", self.corpus.height.to_string()),
            ("image.width", self.corpus.width.to_string()),
            ("split.ratios", join(&self.split_ratios)),
            ("patch.margin", self.patch.margin.to_string()),
            ("patch.tolerance", self.patch.tolerance.map_or("auto".into(), |t| t.to_string())),
            ("gan.latent_dim", g.latent_dim.to_string()),
            ("gan.z_width", g.gen_z_width.to_string()),
            ("gan.c_width", g.gen_c_width.to_string()),
            ("gan.widths", join(&g.gen_widths)),
            ("gan.upsample", join_pairs(&g.gen_upsample)),
            ("gan.out_kernel", g.gen_out_kernel.to_string()),
            ("gan.critic_widths", join(&g.critic_widths)),
            ("gan.critic_strides", join_pairs(&g.critic_strides)),
            ("gan.critic_kernel", g.critic_kernel.to_string()),
            ("gan.critic_norm", g.critic_norm.as_str().to_string()),
            ("gan.leaky_slope", g.leaky_slope.to_string()),
            ("gan.mb_kernels", g.mb_kernels.to_string()),
            ("gan.mb_kernel_dim", g.mb_kernel_dim.to_string()),
            ("gan.ac_weight", g.ac_weight.to_string()),
            ("gan.lambda_gp", g.lambda_gp.to_string()),
            ("gan.n_critic", g.n_critic.to_string()),
            ("gan.batch_size", g.batch_size.to_string()),
            ("gan.epochs", g.epochs.to_string()),
            ("gan.lr", g.adam.lr.to_string()),
            ("gan.beta1", g.adam.beta1.to_string()),
            ("gan.beta2", g.adam.beta2.to_string()),
            ("gan.checkpoint_every", g.checkpoint_every.to_string()),
            ("clf.widths", join(&c.widths)),
            ("clf.batch_size", c.batch_size.to_string()),
            ("clf.epochs", c.epochs.to_string()),
            ("clf.lr", c.adam.lr.to_string()),
            ("clf.weight_decay", c.adam.weight_decay.to_string()),
            ("clf.plateau_factor", c.plateau_factor.to_string()),
            ("clf.plateau_patience", c.plateau_patience.to_string()),
            ("clf.plateau_threshold", c.plateau_threshold.to_string()),
            ("clf.min_lr", c.min_lr.to_string()),
            ("filter.layers", join(&self.filter_layers)),
            ("filter.pool_per_class", self.pool_per_class.to_string()),
        ]
    }

    /// Parses a file body on top of the defaults. Keys may appear once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| Error::Config { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The resolved configuration; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Generator/critic settings for this image size, with or without the
    /// auxiliary classifier.
    pub fn gan_config(&self, aux: bool) -> GanConfig {
        GanConfig {
            height: self.corpus.height,
            width: self.corpus.width,
            num_classes: NUM_CLASSES,
            use_aux_classifier: aux,
            ..self.gan.clone()
        }
    }

    pub fn clf_config(&self) -> ClassifierConfig {
        ClassifierConfig { num_classes: NUM_CLASSES, ..self.clf.clone() }
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig { target: (self.corpus.height, self.corpus.width), ..self.patch }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("at least one classifier seed is required".into());
        }
        if BTreeSet::from_iter(&self.seeds).len() != self.seeds.len() {
            return bad("classifier seeds must be distinct".into());
        }
        if self.protocol_modes.is_empty() {
            return bad("protocol_modes is empty".into());
        }
        for r in self.protocol_ratios.iter().chain([&self.ratio]) {
            if !(r.is_finite() && *r > 0.0) {
                return bad(format!("ratio {r} must be positive"));
            }
        }
        if self.protocol_modes.iter().any(|m| m.uses_gan()) && self.protocol_ratios.is_empty() {
            return bad("GAN modes need at least one protocol ratio".into());
        }
        let widths = self.clf.widths.len();
        if self.filter_layers.is_empty() || self.filter_layers.iter().any(|&l| l >= widths) {
            return bad(format!("filter layers {:?} for a {widths}-stage classifier", self.filter_layers));
        }
        let div = 1usize << widths;
        if self.corpus.height % div != 0 || self.corpus.width % div != 0 {
            return bad(format!(
                "image {}x{} is not divisible by {div} for a {widths}-stage classifier",
                self.corpus.height, self.corpus.width
            ));
        }
        if self.corpus.counts == [0; NUM_CLASSES] {
            return bad("corpus.counts are all zero".into());
        }
        self.gan_config(false).geometry()?;
        self.clf_config().validate()
    }
}
