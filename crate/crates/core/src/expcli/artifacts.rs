//! Saving and restoring trained models.

use std::path::Path;

use diffcore::Elem;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{self, Record};
use crate::classify::{Classifier, ClassifierConfig};
use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanTrainer};

pub fn classifier_records<T: Elem>(model: &Classifier<T>) -> Vec<Record> {
    let mut out = checkpoint::param_records("classifier", &model.params);
    out.push(checkpoint::u64_record("state/trained", model.is_trained() as u64));
    out
}

pub fn save_classifier<T: Elem>(path: &Path, model: &Classifier<T>) -> Result<()> {
    checkpoint::save(path, &classifier_records(model))
}

/// Rebuilds a classifier of architecture `cfg` from a checkpoint.
pub fn load_classifier<T: Elem>(path: &Path, cfg: &ClassifierConfig) -> Result<Classifier<T>> {
    let records = checkpoint::load(path)?;
    let mut model = Classifier::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::load_params("classifier", &mut model.params, &records)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    model.set_trained(checkpoint::read_u64(&records, "state/trained")? == 1);
    Ok(model)
}

pub fn save_gan<T: Elem>(path: &Path, trainer: &GanTrainer<T>) -> Result<()> {
    checkpoint::save(path, &trainer.to_records())
}

pub fn load_gan<T: Elem>(path: &Path, cfg: GanConfig) -> Result<GanTrainer<T>> {
    let records = checkpoint::load(path)?;
    GanTrainer::from_records(cfg, &records).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
