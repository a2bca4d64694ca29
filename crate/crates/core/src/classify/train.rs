//! Classifier training with plateau scheduling and best-validation selection.

use std::path::Path;

use diffcore::{backward, no_grad, AdamState, Elem, PlateauState, Tensor};
use rand::seq::SliceRandom;

use super::model::{Classifier, ClassifierConfig};
use crate::datapipe::augment::traditional_augment;
use crate::datapipe::image::{batch_tensor, to_model_range};
use crate::datapipe::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::{stream, TAG_CLF_EPOCH, TAG_CLF_INIT};

/// Images scored per forward pass outside training.
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct ClfEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

pub fn write_clf_log(path: &Path, log: &[ClfEpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "train_loss", "val_accuracy", "lr"]).map_err(|e| csv_err(path, e))?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_accuracy.to_string(),
            e.lr.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Softmax probabilities (N×K) in eval mode.
pub fn predict_proba<T: Elem>(model: &Classifier<T>, images: &[&LabeledImage]) -> Result<Tensor<T>> {
    let k = model.num_classes();
    let mut out = Vec::with_capacity(images.len() * k);
    for chunk in images.chunks(EVAL_CHUNK) {
        let x = batch_tensor::<T>(chunk)?;
        let p = no_grad(|| model.logits(&x, false))?.softmax_rows()?;
        out.extend_from_slice(p.data());
    }
    Ok(Tensor::from_vec(out, &[images.len(), k])?)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy<T: Elem>(model: &Classifier<T>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let refs: Vec<&LabeledImage> = data.images.iter().collect();
    let p = predict_proba(model, &refs)?;
    let k = model.num_classes();
    let correct = p
        .data()
        .chunks(k)
        .zip(&data.images)
        .filter(|(row, img)| argmax(row) == img.label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn check_sets(cfg: &ClassifierConfig, train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("classifier needs non-empty training and validation sets".into()));
    }
    for set in [train, val] {
        if let Some(img) = set.images.iter().find(|i| i.label >= cfg.num_classes) {
            return Err(Error::Data(format!("label {} out of range", img.label)));
        }
    }
    for class in 0..cfg.num_classes {
        if !train.images.iter().any(|i| i.label == class) {
            return Err(Error::MissingClass { class, set: "training set" });
        }
    }
    Ok(())
}

/// Trains from `seed` and returns the parameters of the epoch with the best
/// validation accuracy (earliest on ties). With `augment`, every training
/// image is re-augmented each time it is drawn.
pub fn train_classifier<T: Elem>(
    cfg: &ClassifierConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
    augment: bool,
) -> Result<(Classifier<T>, Vec<ClfEpochLog>)> {
    cfg.validate()?;
    check_sets(cfg, train, val)?;
    let mut model = Classifier::<T>::new(cfg, &mut stream(seed, &[TAG_CLF_INIT]))?;
    let mut adam = AdamState::new(cfg.adam, &model.params.tensors);
    let mut plateau = PlateauState::new(
        cfg.adam.lr,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.min_lr,
        cfg.plateau_threshold,
    );
    let fixed: Vec<Vec<T>> = if augment {
        Vec::new()
    } else {
        train
            .images
            .iter()
            .map(|i| to_model_range(i).into_iter().map(|v| T::lit(v as f64)).collect())
            .collect()
    };
    let (h, w) = (train.images[0].height, train.images[0].width);
    let labels: Vec<usize> = train.images.iter().map(|i| i.label).collect();
    let mut best: Option<(f64, crate::layers::ParamSet<T>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = stream(seed, &[TAG_CLF_EPOCH, epoch as u64]);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let lr = adam.config.lr;
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            // a single-sample batch has no batch statistics to speak of
            if batch.len() < 2 {
                continue;
            }
            let x = if augment {
                let imgs: Vec<LabeledImage> =
                    batch.iter().map(|&i| traditional_augment(&train.images[i], &mut rng)).collect();
                let refs: Vec<&LabeledImage> = imgs.iter().collect();
                batch_tensor::<T>(&refs)?
            } else {
                let mut data = Vec::with_capacity(batch.len() * fixed[0].len());
                for &i in batch {
                    data.extend_from_slice(&fixed[i]);
                }
                Tensor::from_vec(data, &[batch.len(), cfg.channels, h, w])?
            };
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = model.logits(&x, true)?.cross_entropy(&y)?;
            let grads = backward(&loss, false)?;
            let g: Vec<Tensor<T>> = model.params.tensors.iter().map(|p| grads.get_or_zeros(p)).collect();
            adam.step(&mut model.params.tensors, &g)?;
            loss_sum += loss.item()?.to_f64().unwrap_or(f64::NAN);
            batches += 1;
        }
        let val_accuracy = accuracy(&model, val)?;
        adam.config.lr = plateau.step(val_accuracy);
        if best.as_ref().is_none_or(|(b, _)| val_accuracy > *b) {
            best = Some((val_accuracy, model.params.clone()));
        }
        let train_loss = if batches == 0 { 0.0 } else { loss_sum / batches as f64 };
        log::debug!("classifier epoch {} loss {train_loss:.4} val acc {val_accuracy:.4}", epoch + 1);
        log.push(ClfEpochLog {
            epoch: epoch + 1,
            train_loss,
            val_accuracy,
            lr,
        });
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.set_trained(true);
    Ok((model, log))
}
