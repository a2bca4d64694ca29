//! Subcommands of the `cgaf` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::artifacts::{load_classifier, load_gan, save_classifier};
use super::config::{ExperimentConfig, Mode};
use super::projection::{emit_projection, project_images};
use super::protocol::{run_protocol, train_extractor, train_gan_into, Splits};
use crate::classify::{evaluate, format_table, train_classifier, write_clf_log, write_json, MethodResult, MetricsReport};
use crate::datapipe::corpus::generate_synthetic_corpus;
use crate::datapipe::image::{load_mask, load_image};
use crate::datapipe::patches::extract_patches;
use crate::datapipe::split::{split_by_patient, SPLIT_NAMES};
use crate::datapipe::{read_dataset, write_dataset, Dataset, LabeledImage, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::featfilter::{compute_centroids, quotas, rank_and_filter, score_pool, write_scores, CentroidScorer};
use crate::gan::{generate, pool_origins};

#[derive(Debug, Parser)]
#[command(name = "cgaf", version, about = "Conditional GAN augmentation with feature-based filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured synthetic-to-real ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural corpus.
    GenData(Common),
    /// Cut medial-axis patches from images with masks (`X.ppm` + `X.pgm`).
    ExtractPatches {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Split a dataset by patient into train/val/test.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the conditional GAN (with the auxiliary head when mode = cgan_ac).
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Continue from a saved trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample class-conditional images from a trained generator.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gan: PathBuf,
        /// Images per class (default: the configured pool size).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score the pool against real-image centroids and keep the closest.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        /// Trained extractor; one is trained on the real images when omitted.
        #[arg(long)]
        extractor: Option<PathBuf>,
    },
    /// Train a classifier on the training split plus optional synthetic images.
    TrainClf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Evaluate a classifier on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Two-dimensional projection of extractor features.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        extractor: PathBuf,
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Rebuild the results table from a protocol's metrics.csv.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Every method row for every classifier seed.
    RunProtocol {
        #[command(flatten)]
        common: Common,
        /// Retrain GANs and extractor for each classifier seed.
        #[arg(long)]
        regen_per_seed: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c) => c,
            Command::ExtractPatches { common, .. }
            | Command::Split { common, .. }
            | Command::TrainGan { common, .. }
            | Command::Synthesize { common, .. }
            | Command::Filter { common, .. }
            | Command::TrainClf { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Project { common, .. }
            | Command::Report { common, .. }
            | Command::RunProtocol { common, .. } => common,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; nothing was written.
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            // variant messages already embed their sources
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

/// Configuration with command-line overrides applied.
pub fn resolve_config(common: &Common) -> std::result::Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.ratio {
        cfg.ratio = r;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn open_splits(dir: &Path) -> Result<Splits> {
    let mut parts = read_dataset(dir)?;
    let mut take = |name: &str| {
        parts
            .remove(name)
            .ok_or_else(|| Error::Data(format!("{}: no `{name}` split", dir.display())))
    };
    Ok(Splits { train: take(SPLIT_NAMES[0])?, val: take(SPLIT_NAMES[1])?, test: take(SPLIT_NAMES[2])? })
}

/// All images of a dataset directory regardless of split.
fn open_all(dir: &Path) -> Result<Dataset> {
    Ok(Dataset::new(read_dataset(dir)?.into_values().flat_map(|d| d.images).collect()))
}

fn print_quotas(q: &[usize]) {
    for (k, n) in q.iter().enumerate() {
        println!("class {k}: {n}");
    }
}

/// Executes one subcommand.
pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    let common = cli.command.common();
    let cfg = resolve_config(common)?;
    let out = common.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    if !matches!(cli.command, Command::RunProtocol { .. }) {
        cfg.save(&out.join("config.cfg"))?;
    }
    match cli.command {
        Command::GenData(_) => {
            let ds = generate_synthetic_corpus(cfg.seed, &cfg.corpus)?;
            write_dataset(&out, &[("all", &ds)])?;
            println!("{} images, class counts {:?}", ds.len(), ds.class_counts());
        }
        Command::ExtractPatches { input, .. } => {
            let patches = extract_from_manifest(&input, &cfg)?;
            write_dataset(&out, &[("all", &patches)])?;
            println!("{} patches", patches.len());
        }
        Command::Split { input, .. } => {
            let ds = open_all(&input)?;
            let a = split_by_patient(&ds, cfg.split_ratios, cfg.seed)?;
            let [train, val, test] = a.apply(&ds);
            write_dataset(&out, &[("train", &train), ("val", &val), ("test", &test)])?;
            for (name, h) in SPLIT_NAMES.iter().zip(a.histograms) {
                println!("{name}: {h:?}");
            }
        }
        Command::TrainGan { data, resume, .. } => {
            let splits = open_splits(&data)?;
            let aux = cfg.mode == Mode::CganAc;
            match resume {
                Some(ckpt) => {
                    let mut t = load_gan::<f32>(&ckpt, cfg.gan_config(aux))?;
                    let target = out.join("gan.ckpt");
                    let log = t.train(&splits.train, |_, _| Ok(()))?;
                    crate::gan::train::write_log(&out.join("gan_log.csv"), &log)?;
                    super::artifacts::save_gan(&target, &t)?;
                }
                None => {
                    train_gan_into(&out, &cfg, aux, &splits.train, cfg.seed)?;
                }
            }
        }
        Command::Synthesize { gan, count, .. } => {
            let t = load_gan::<f32>(&gan, cfg.gan_config(cfg.mode == Mode::CganAc))?;
            let n = count.unwrap_or(cfg.pool_per_class);
            let images = generate(&t.model.generator, &pool_origins(cfg.seed, &[n; NUM_CLASSES]), 100)?;
            write_dataset(&out, &[("synthetic", &Dataset::new(images))])?;
        }
        Command::Filter { data, gan, extractor, .. } => {
            let splits = open_splits(&data)?;
            let t = load_gan::<f32>(&gan, cfg.gan_config(false))?;
            let extractor = match extractor {
                Some(p) => load_classifier::<f32>(&p, &cfg.clf_config())?,
                None => {
                    let m = train_extractor(&cfg, &splits, cfg.seed)?;
                    save_classifier(&out.join("extractor.ckpt"), &m)?;
                    m
                }
            };
            let counts = splits.train.class_counts();
            let q = quotas(cfg.ratio, &counts);
            print_quotas(&q);
            let centroids = compute_centroids(&extractor, &splits.train, &cfg.filter_layers)?;
            let origins = pool_origins(cfg.seed, &[cfg.pool_per_class; NUM_CLASSES]);
            let scores = score_pool(&t.model.generator, &extractor, &CentroidScorer::new(&centroids), &origins, &cfg.filter_layers)?;
            let selected = rank_and_filter(&scores, &counts, cfg.ratio)?;
            write_scores(&out.join("scores.csv"), &scores, &selected)?;
            let origins: Vec<_> = selected.iter().map(|c| c.origin).collect();
            let images = generate(&t.model.generator, &origins, 100)?;
            write_dataset(&out, &[("synthetic", &Dataset::new(images))])?;
        }
        Command::TrainClf { data, synthetic, .. } => {
            let splits = open_splits(&data)?;
            let mut train = splits.train.clone();
            if let Some(dir) = synthetic {
                train.images.extend(open_all(&dir)?.images);
            }
            let augment = cfg.mode == Mode::Traditional;
            let (model, log) = train_classifier::<f32>(&cfg.clf_config(), &train, &splits.val, cfg.seed, augment)?;
            save_classifier(&out.join("clf.ckpt"), &model)?;
            write_clf_log(&out.join("clf_log.csv"), &log)?;
        }
        Command::Evaluate { data, model, .. } => {
            let splits = open_splits(&data)?;
            let m = load_classifier::<f32>(&model, &cfg.clf_config())?;
            let mut metrics = evaluate(&m, &splits.test)?;
            metrics.seed = Some(cfg.seed);
            write_json(&out.join("metrics.json"), &metrics)?;
            println!(
                "accuracy {:.4}  auc {:.4}  sensitivity {:.4}  specificity {:.4}",
                metrics.accuracy, metrics.auc, metrics.sensitivity, metrics.specificity
            );
        }
        Command::Project { data, extractor, synthetic, .. } => {
            let splits = open_splits(&data)?;
            let m = load_classifier::<f32>(&extractor, &cfg.clf_config())?;
            let real: Vec<&LabeledImage> = splits.train.images.iter().collect();
            let extra = match synthetic {
                Some(dir) => open_all(&dir)?.images,
                None => Vec::new(),
            };
            let mut all = real.clone();
            all.extend(extra.iter());
            emit_projection(&out.join("projection.csv"), &project_images(&m, &real, &all)?)?;
        }
        Command::Report { input, .. } => {
            let rows = read_metrics_csv(&input.join("metrics.csv"))?;
            let table = format_table(&rows);
            fs::write(out.join("report.txt"), &table).map_err(|e| Error::io(out.join("report.txt"), e))?;
            print!("{table}");
        }
        Command::RunProtocol { regen_per_seed, .. } => {
            let mut cfg = cfg;
            cfg.regen_per_seed |= regen_per_seed;
            let report = run_protocol(&cfg, &out)?;
            print!("{}", format_table(&report.rows));
        }
    }
    Ok(())
}

/// Patches for every manifest entry `X.ppm` with its mask `X.pgm`.
fn extract_from_manifest(input: &Path, cfg: &ExperimentConfig) -> Result<Dataset> {
    let manifest = input.join(crate::datapipe::MANIFEST);
    let csv_err = |e: csv::Error| Error::io(&manifest, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(&manifest).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |m: &str| Error::Data(format!("{}:{}: {m}", manifest.display(), i + 2));
        if rec.len() < 3 {
            return Err(bad("expected path,label,patient"));
        }
        let path = input.join(&rec[0]);
        let label: usize = rec[1].parse().map_err(|_| bad("bad label"))?;
        let patient: u32 = rec[2].parse().map_err(|_| bad("bad patient"))?;
        if label >= NUM_CLASSES {
            return Err(bad("label out of range"));
        }
        let img = load_image(&path, label, patient)?;
        let mask = load_mask(&path.with_extension("pgm"))?;
        let patches = extract_patches(&img, &mask, &cfg.patch_config()).map_err(|e| e.in_stage(&rec[0]))?;
        out.extend(patches);
    }
    Ok(Dataset::new(out))
}

/// Method rows from `method,seed,accuracy,auc,sensitivity,specificity`,
/// in order of first appearance.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MethodResult>> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut order: Vec<String> = Vec::new();
    let mut runs: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = || Error::Data(format!("{}: malformed row {}", path.display(), i + 2));
        if rec.len() != 6 {
            return Err(bad());
        }
        let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad());
        let report = MetricsReport {
            accuracy: num(2)?,
            auc: num(3)?,
            sensitivity: num(4)?,
            specificity: num(5)?,
            per_class: Vec::new(),
            seed: if rec[1].is_empty() { None } else { Some(rec[1].parse().map_err(|_| bad())?) },
        };
        let method = rec[0].to_string();
        if !runs.contains_key(&method) {
            order.push(method.clone());
        }
        runs.entry(method).or_default().push(report);
    }
    order.into_iter().map(|m| {
        let reports = runs.remove(&m).unwrap_or_default();
        MethodResult::new(m, reports)
    }).collect()
}
