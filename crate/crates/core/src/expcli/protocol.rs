//! The augmentation comparison: every method row trained once per classifier
//! seed, on top of a shared GAN, extractor and scored pool.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifacts::{save_classifier, save_gan};
use super::config::{ExperimentConfig, Mode};
use super::projection::{emit_projection, project_images, within_class_spread};
use crate::classify::{evaluate, format_table, train_classifier, write_clf_log, write_json, write_metrics_csv, Classifier, MethodResult, MetricsReport};
use crate::datapipe::corpus::generate_synthetic_corpus;
use crate::datapipe::image::SyntheticOrigin;
use crate::datapipe::split::split_by_patient;
use crate::datapipe::{Dataset, LabeledImage, Provenance, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::featfilter::{
    compute_centroids, first_by_index, quotas, rank_and_filter, score_pool, write_scores, CentroidScorer,
    ScoredCandidate,
};
use crate::gan::train::write_log;
use crate::gan::{generate, pool_origins, GanTrainer, Generator};

type Elem = f32;

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Corpus generation and the patient-level split, both from `cfg.seed`.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let corpus = generate_synthetic_corpus(cfg.seed, &cfg.corpus).map_err(|e| e.in_stage("gen-data"))?;
    let assignment = split_by_patient(&corpus, cfg.split_ratios, cfg.seed).map_err(|e| e.in_stage("split"))?;
    let [train, val, test] = assignment.apply(&corpus);
    Ok(Splits { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub mode: Mode,
    pub ratio: Option<f64>,
}

impl Method {
    pub fn name(&self) -> String {
        match self.ratio {
            Some(r) => format!("{} R={r}", self.mode),
            None => self.mode.to_string(),
        }
    }

    fn slug(&self) -> String {
        match self.ratio {
            Some(r) => format!("{}_R{r}", self.mode),
            None => self.mode.to_string(),
        }
    }
}

/// Table rows in configuration order; GAN modes once per ratio.
pub fn method_rows(cfg: &ExperimentConfig) -> Vec<Method> {
    let mut out = Vec::new();
    for &mode in &cfg.protocol_modes {
        if mode.uses_gan() {
            out.extend(cfg.protocol_ratios.iter().map(|&r| Method { mode, ratio: Some(r) }));
        } else {
            out.push(Method { mode, ratio: None });
        }
    }
    out
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains a GAN on `train`, checkpointing into `dir` every
/// `checkpoint_every` epochs and at the end.
pub fn train_gan_into(
    dir: &Path,
    cfg: &ExperimentConfig,
    aux: bool,
    train: &Dataset,
    seed: u64,
) -> Result<GanTrainer<Elem>> {
    create_dir(dir)?;
    let gan_cfg = cfg.gan_config(aux);
    let every = gan_cfg.checkpoint_every;
    let mut trainer = GanTrainer::new(gan_cfg, seed)?;
    let ckpt = dir.join("gan.ckpt");
    let log = trainer.train(train, |t, e| {
        log::debug!("gan epoch {}: critic {:.4} gp {:.4}", e.epoch, e.critic_loss, e.gp);
        if every > 0 && t.epoch % every == 0 {
            save_gan(&ckpt, t)?;
        }
        Ok(())
    })?;
    write_log(&dir.join("gan_log.csv"), &log)?;
    save_gan(&ckpt, &trainer)?;
    Ok(trainer)
}

/// Extractor training on real images only.
pub fn train_extractor(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<Classifier<Elem>> {
    let real = splits.train.count_provenance(Provenance::Real);
    if real != splits.train.len() {
        return Err(Error::Data(format!(
            "extractor training set holds {} non-real images",
            splits.train.len() - real
        )));
    }
    Ok(train_classifier(&cfg.clf_config(), &splits.train, &splits.val, seed, false)?.0)
}

/// GANs, extractor and scored pool derived from one root seed.
struct SynthSource {
    seed: u64,
    plain: Option<Generator<Elem>>,
    ac: Option<Generator<Elem>>,
    extractor: Option<Classifier<Elem>>,
    scores: Vec<ScoredCandidate>,
}

impl SynthSource {
    fn build(cfg: &ExperimentConfig, splits: &Splits, seed: u64, dir: &Path) -> Result<Self> {
        let modes = &cfg.protocol_modes;
        let mut src = SynthSource { seed, plain: None, ac: None, extractor: None, scores: Vec::new() };
        if modes.contains(&Mode::CganNoFilter) || modes.contains(&Mode::CganFilter) {
            log::info!("training the conditional GAN (seed {seed})");
            let t = train_gan_into(&dir.join("gan"), cfg, false, &splits.train, seed).map_err(|e| e.in_stage("train-gan"))?;
            src.plain = Some(t.model.generator);
        }
        if modes.contains(&Mode::CganAc) {
            log::info!("training the auxiliary-classifier GAN (seed {seed})");
            let t = train_gan_into(&dir.join("gan_ac"), cfg, true, &splits.train, seed).map_err(|e| e.in_stage("train-gan"))?;
            src.ac = Some(t.model.generator);
        }
        if modes.contains(&Mode::CganFilter) {
            log::info!("training the feature extractor and scoring the pool");
            let stage = |e: Error| e.in_stage("filter");
            let extractor = train_extractor(cfg, splits, seed).map_err(stage)?;
            save_classifier(&dir.join("extractor.ckpt"), &extractor)?;
            let centroids = compute_centroids(&extractor, &splits.train, &cfg.filter_layers).map_err(stage)?;
            let origins = pool_origins(seed, &[cfg.pool_per_class; NUM_CLASSES]);
            let generator = src.plain.as_ref().expect("plain GAN trained above");
            src.scores = score_pool(generator, &extractor, &CentroidScorer::new(&centroids), &origins, &cfg.filter_layers)
                .map_err(stage)?;
            write_scores(&dir.join("scores.csv"), &src.scores, &[])?;
            src.extractor = Some(extractor);
        }
        Ok(src)
    }

    /// Synthetic images for a GAN method row.
    fn select(&self, cfg: &ExperimentConfig, method: Method, real_counts: &[usize]) -> Result<Vec<LabeledImage>> {
        let r = method.ratio.unwrap_or(cfg.ratio);
        let q = quotas(r, real_counts);
        if let Some((class, &required)) = q.iter().enumerate().find(|(_, &n)| n > cfg.pool_per_class) {
            return Err(Error::PoolTooSmall { class, required, available: cfg.pool_per_class });
        }
        let (generator, origins): (&Generator<Elem>, Vec<SyntheticOrigin>) = match method.mode {
            Mode::CganFilter => (
                self.plain.as_ref().expect("built for this mode"),
                rank_and_filter(&self.scores, real_counts, r)?.iter().map(|c| c.origin).collect(),
            ),
            Mode::CganNoFilter => (self.plain.as_ref().expect("built for this mode"), pool_origins(self.seed, &q)),
            Mode::CganAc => (self.ac.as_ref().expect("built for this mode"), pool_origins(self.seed, &q)),
            Mode::None | Mode::Traditional => return Ok(Vec::new()),
        };
        generate(generator, &origins, 100)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassDistances {
    pub class: usize,
    pub pool: f64,
    pub filtered: f64,
    pub unfiltered: f64,
}

/// Distances of the filtered selection against the unfiltered one (the
/// lowest generation indices) drawn from the same pool.
#[derive(Debug, Clone, Serialize)]
pub struct FilterSummary {
    pub gan_seed: u64,
    pub ratio: f64,
    pub pool_mean: f64,
    pub filtered_mean: f64,
    pub unfiltered_mean: f64,
    pub per_class: Vec<ClassDistances>,
    /// Mean 2-D distance of synthetic points to their class mean.
    pub projection_spread_filtered: Option<f64>,
    pub projection_spread_unfiltered: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize_filter(
    src: &SynthSource,
    splits: &Splits,
    ratio: f64,
    dir: &Path,
) -> Result<FilterSummary> {
    let counts = splits.train.class_counts();
    let filtered = rank_and_filter(&src.scores, &counts, ratio)?;
    let unfiltered = first_by_index(&src.scores, &counts, ratio)?;
    write_scores(&dir.join(format!("scores_R{ratio}.csv")), &src.scores, &filtered)?;
    let of_class = |set: &[ScoredCandidate], k: usize| mean(set.iter().filter(|c| c.origin.class == k).map(|c| c.distance));
    let per_class = (0..NUM_CLASSES)
        .map(|k| ClassDistances {
            class: k,
            pool: of_class(&src.scores, k),
            filtered: of_class(&filtered, k),
            unfiltered: of_class(&unfiltered, k),
        })
        .collect();

    let extractor = src.extractor.as_ref().expect("built for this mode");
    let generator = src.plain.as_ref().expect("built for this mode");
    let real: Vec<&LabeledImage> = splits.train.images.iter().collect();
    let mut spreads = [None, None];
    for (i, (name, set)) in [("filtered", &filtered), ("unfiltered", &unfiltered)].into_iter().enumerate() {
        let origins: Vec<SyntheticOrigin> = set.iter().map(|c| c.origin).collect();
        let synth = generate(generator, &origins, 100)?;
        let mut all = real.clone();
        all.extend(synth.iter());
        let points = project_images(extractor, &real, &all)?;
        emit_projection(&dir.join(format!("projection_{name}_R{ratio}.csv")), &points)?;
        spreads[i] = within_class_spread(&points, Provenance::Synthetic);
    }
    Ok(FilterSummary {
        gan_seed: src.seed,
        ratio,
        pool_mean: mean(src.scores.iter().map(|c| c.distance)),
        filtered_mean: mean(filtered.iter().map(|c| c.distance)),
        unfiltered_mean: mean(unfiltered.iter().map(|c| c.distance)),
        per_class,
        projection_spread_filtered: spreads[0],
        projection_spread_unfiltered: spreads[1],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub real_images: usize,
    pub synthetic_images: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub rows: Vec<MethodResult>,
    pub runs: Vec<RunRecord>,
    pub filter: Vec<FilterSummary>,
}

/// Trains and evaluates one classifier for `method`, writing its log and
/// metrics under `dir`.
fn run_method(
    cfg: &ExperimentConfig,
    splits: &Splits,
    src: Option<&SynthSource>,
    method: Method,
    seed: u64,
    dir: &Path,
) -> Result<RunRecord> {
    let mut train = splits.train.clone();
    if method.mode.uses_gan() {
        let src = src.expect("GAN modes have a source");
        let synth = src.select(cfg, method, &splits.train.class_counts()).map_err(|e| e.in_stage("synthesize"))?;
        train.images.extend(synth);
    }
    let synthetic = train.count_provenance(Provenance::Synthetic);
    let expected = match method.mode {
        Mode::None | Mode::Traditional => 0,
        _ => quotas(method.ratio.unwrap_or(cfg.ratio), &splits.train.class_counts()).iter().sum(),
    };
    if synthetic != expected {
        return Err(Error::Data(format!("{}: {synthetic} synthetic training images, expected {expected}", method.name()))
            .in_stage("train-clf"));
    }
    let augment = method.mode == Mode::Traditional;
    let (model, log) =
        train_classifier::<Elem>(&cfg.clf_config(), &train, &splits.val, seed, augment).map_err(|e| e.in_stage("train-clf"))?;
    create_dir(dir)?;
    write_clf_log(&dir.join("clf_log.csv"), &log)?;
    let mut metrics = evaluate(&model, &splits.test).map_err(|e| e.in_stage("evaluate"))?;
    metrics.seed = Some(seed);
    let record = RunRecord {
        method: method.name(),
        seed,
        real_images: train.count_provenance(Provenance::Real),
        synthetic_images: synthetic,
        metrics,
    };
    write_json(&dir.join("metrics.json"), &record)?;
    Ok(record)
}

/// Runs every method row for every classifier seed and writes the resolved
/// configuration, per-run outputs and the aggregate table under `out`.
pub fn run_protocol(cfg: &ExperimentConfig, out: &Path) -> Result<ProtocolReport> {
    cfg.validate()?;
    create_dir(out)?;
    cfg.save(&out.join("config.cfg"))?;
    let splits = prepare_data(cfg)?;
    let methods = method_rows(cfg);
    let needs_gan = methods.iter().any(|m| m.mode.uses_gan());

    let synth_dir = |seed: Option<u64>| -> PathBuf {
        match seed {
            Some(s) => out.join(format!("seed_{s}")).join("synth"),
            None => out.join("synth"),
        }
    };
    let mut filter = Vec::new();
    let mut summarize = |src: &SynthSource, dir: &Path| -> Result<()> {
        if cfg.protocol_modes.contains(&Mode::CganFilter) {
            for &r in &cfg.protocol_ratios {
                let s = summarize_filter(src, &splits, r, dir).map_err(|e| e.in_stage("filter"))?;
                log::info!("R={r}: mean D_f filtered {:.4}, unfiltered {:.4}", s.filtered_mean, s.unfiltered_mean);
                filter.push(s);
            }
        }
        Ok(())
    };

    let shared = if needs_gan && !cfg.regen_per_seed {
        let dir = synth_dir(None);
        create_dir(&dir)?;
        let src = SynthSource::build(cfg, &splits, cfg.seed, &dir)?;
        summarize(&src, &dir)?;
        Some(src)
    } else {
        None
    };

    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let own = if needs_gan && cfg.regen_per_seed {
            let dir = synth_dir(Some(seed));
            create_dir(&dir)?;
            let src = SynthSource::build(cfg, &splits, seed, &dir)?;
            summarize(&src, &dir)?;
            Some(src)
        } else {
            None
        };
        let src = own.as_ref().or(shared.as_ref());
        for &m in &methods {
            log::info!("seed {seed}: {}", m.name());
            let dir = out.join(format!("seed_{seed}")).join(m.slug());
            runs.push(run_method(cfg, &splits, src, m, seed, &dir)?);
        }
    }

    let rows = methods
        .iter()
        .map(|m| {
            let name = m.name();
            let reports = runs.iter().filter(|r| r.method == name).map(|r| r.metrics.clone()).collect();
            MethodResult::new(name, reports)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ProtocolReport { rows, runs, filter };
    write_metrics_csv(&out.join("metrics.csv"), &report.rows)?;
    fs::write(out.join("report.txt"), format_table(&report.rows)).map_err(|e| Error::io(out.join("report.txt"), e))?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
