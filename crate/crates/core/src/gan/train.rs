//! WGAN-GP training loop, resumable checkpoints and pool sampling.

use std::io::Write;
use std::path::Path;

use diffcore::{backward, no_grad, AdamState, Elem, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::GanConfig;
use super::loss::{critic_loss, generator_loss};
use super::model::{GanModel, Generator};
use crate::datapipe::image::{from_model_range, to_model_range, SyntheticOrigin};
use crate::datapipe::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::expcli::checkpoint::{self, Record};
use crate::rng::{derive_seed, stream, TAG_GAN_EPOCH, TAG_GAN_INIT, TAG_SAMPLE};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub critic_loss: f64,
    /// `None` when no generator step fell in this epoch.
    pub gen_loss: Option<f64>,
    pub wasserstein: f64,
    pub gp: f64,
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,critic_loss,gen_loss,wasserstein_estimate,gp\n");
    for e in log {
        let gen = e.gen_loss.map(|g| g.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.critic_loss, gen, e.wasserstein, e.gp
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn normal_vec<T: Elem>(rng: &mut impl Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn diverged(epoch: usize, step: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(source @ diffcore::Error::NonFinite { .. }) => Error::Diverged {
            epoch,
            step: step as usize,
            source,
        },
        other => other,
    }
}

/// Model plus optimizer state; everything needed to continue training
/// bit-for-bit.
#[derive(Debug, Clone)]
pub struct GanTrainer<T: Elem> {
    pub model: GanModel<T>,
    pub adam_gen: AdamState<T>,
    pub adam_critic: AdamState<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Critic updates so far; a generator update follows every `n_critic`.
    pub critic_steps: u64,
    pub seed: u64,
}

impl<T: Elem> GanTrainer<T> {
    pub fn new(config: GanConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, &[TAG_GAN_INIT]);
        let model = GanModel::new(config, &mut rng)?;
        let adam_gen = AdamState::new(model.config.adam, &model.generator.params.tensors);
        let adam_critic = AdamState::new(model.config.adam, &model.critic.params.tensors);
        Ok(GanTrainer { model, adam_gen, adam_critic, epoch: 0, critic_steps: 0, seed })
    }

    /// Runs one epoch over `images` (CHW, model range) with their labels.
    fn run_epoch(&mut self, images: &[Vec<T>], labels: &[usize]) -> Result<EpochLog> {
        let cfg = self.model.config.clone();
        let epoch = self.epoch;
        let mut rng = stream(self.seed, &[TAG_GAN_EPOCH, epoch as u64]);
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut rng);
        let shape = [cfg.channels, cfg.height, cfg.width];
        let (mut c_sum, mut w_sum, mut gp_sum, mut c_n) = (0.0, 0.0, 0.0, 0usize);
        let (mut g_sum, mut g_n) = (0.0, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let n = batch.len();
            let step = self.critic_steps;
            let wrap = diverged(epoch, step);
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut data = Vec::with_capacity(n * images[0].len());
            for &i in batch {
                data.extend_from_slice(&images[i]);
            }
            let real = Tensor::from_vec(data, &[n, shape[0], shape[1], shape[2]])?;

            let z = Tensor::from_vec(normal_vec(&mut rng, n * cfg.latent_dim), &[n, cfg.latent_dim])?;
            let eps: Vec<T> = (0..n).map(|_| T::lit(rng.gen::<f64>())).collect();
            let gen = &self.model.generator;
            let fake = no_grad(|| gen.forward(&z, &batch_labels, true)).map_err(&wrap)?;
            let loss = critic_loss(
                &self.model.critic,
                &real,
                &fake,
                &batch_labels,
                &eps,
                cfg.lambda_gp,
                cfg.ac_weight,
                true,
            )
            .map_err(&wrap)?;
            let grads = backward(&loss.total, false).map_err(|e| wrap(e.into()))?;
            let g: Vec<Tensor<T>> = self.model.critic.params.tensors.iter().map(|p| grads.get_or_zeros(p)).collect();
            self.adam_critic
                .step(&mut self.model.critic.params.tensors, &g)
                .map_err(|e| wrap(e.into()))?;
            let total = loss.total.item()?.to_f64().unwrap_or(f64::NAN);
            c_sum += total;
            w_sum += loss.wasserstein;
            gp_sum += loss.penalty;
            c_n += 1;
            self.critic_steps += 1;

            if self.critic_steps % cfg.n_critic as u64 == 0 {
                let z = Tensor::from_vec(normal_vec(&mut rng, n * cfg.latent_dim), &[n, cfg.latent_dim])?;
                let fake = self.model.generator.forward(&z, &batch_labels, true).map_err(&wrap)?;
                let loss = generator_loss(&self.model.critic, &fake, &batch_labels, cfg.ac_weight, true)
                    .map_err(&wrap)?;
                let grads = backward(&loss, false).map_err(|e| wrap(e.into()))?;
                let g: Vec<Tensor<T>> =
                    self.model.generator.params.tensors.iter().map(|p| grads.get_or_zeros(p)).collect();
                self.adam_gen
                    .step(&mut self.model.generator.params.tensors, &g)
                    .map_err(|e| wrap(e.into()))?;
                g_sum += loss.item()?.to_f64().unwrap_or(f64::NAN);
                g_n += 1;
            }
        }
        self.epoch += 1;
        let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
        Ok(EpochLog {
            epoch: self.epoch,
            critic_loss: mean(c_sum, c_n),
            gen_loss: (g_n > 0).then(|| g_sum / g_n as f64),
            wasserstein: mean(w_sum, c_n),
            gp: mean(gp_sum, c_n),
        })
    }

    /// Trains until `config.epochs` epochs are complete, calling `after_epoch`
    /// after each one (for logging or checkpointing).
    pub fn train(
        &mut self,
        data: &Dataset,
        mut after_epoch: impl FnMut(&Self, &EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let cfg = &self.model.config;
        if data.len() < 2 {
            return Err(Error::Data(format!("GAN training needs at least 2 images, got {}", data.len())));
        }
        data.validate_labels()?;
        if let Some(img) = data
            .images
            .iter()
            .find(|i| (i.height, i.width) != (cfg.height, cfg.width) || i.label >= cfg.num_classes)
        {
            return Err(Error::Data(format!(
                "image {}x{} label {} does not fit the GAN configuration",
                img.height, img.width, img.label
            )));
        }
        let images: Vec<Vec<T>> = data
            .images
            .iter()
            .map(|i| to_model_range(i).into_iter().map(|v| T::lit(v as f64)).collect())
            .collect();
        let labels: Vec<usize> = data.images.iter().map(|i| i.label).collect();
        let mut log = Vec::new();
        while self.epoch < self.model.config.epochs {
            let entry = self.run_epoch(&images, &labels)?;
            after_epoch(self, &entry)?;
            log.push(entry);
        }
        Ok(log)
    }

    pub fn to_records(&self) -> Vec<Record> {
        let mut out = checkpoint::param_records("generator", &self.model.generator.params);
        out.extend(checkpoint::param_records("critic", &self.model.critic.params));
        out.extend(checkpoint::adam_records("adam_generator", &self.adam_gen));
        out.extend(checkpoint::adam_records("adam_critic", &self.adam_critic));
        out.push(checkpoint::u64_record("state/epoch", self.epoch as u64));
        out.push(checkpoint::u64_record("state/critic_steps", self.critic_steps));
        out.push(checkpoint::u64_record("state/seed", self.seed));
        out
    }

    /// Rebuilds a trainer from `to_records` output; `config` must describe
    /// the same architecture (the epoch budget may differ).
    pub fn from_records(config: GanConfig, records: &[Record]) -> Result<Self> {
        let seed = checkpoint::read_u64(records, "state/seed")?;
        let mut t = GanTrainer::new(config, seed)?;
        checkpoint::load_params("generator", &mut t.model.generator.params, records)?;
        checkpoint::load_params("critic", &mut t.model.critic.params, records)?;
        checkpoint::load_adam("adam_generator", &mut t.adam_gen, records)?;
        checkpoint::load_adam("adam_critic", &mut t.adam_critic, records)?;
        t.epoch = checkpoint::read_u64(records, "state/epoch")? as usize;
        t.critic_steps = checkpoint::read_u64(records, "state/critic_steps")?;
        Ok(t)
    }
}

/// Convenience wrapper: fresh trainer, full run.
pub fn train_gan<T: Elem>(config: GanConfig, data: &Dataset, seed: u64) -> Result<(GanTrainer<T>, Vec<EpochLog>)> {
    let mut trainer = GanTrainer::new(config, seed)?;
    let log = trainer.train(data, |_, _| Ok(()))?;
    Ok((trainer, log))
}

pub fn z_seed(seed: u64, class: usize, index: u64) -> u64 {
    derive_seed(seed, &[TAG_SAMPLE, class as u64, index])
}

pub fn latent_for(z_seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(z_seed);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generates images for the given origins in eval mode, `chunk` at a time.
pub fn generate<T: Elem>(
    generator: &Generator<T>,
    origins: &[SyntheticOrigin],
    chunk: usize,
) -> Result<Vec<LabeledImage>> {
    let d = generator.latent_dim();
    let mut out = Vec::with_capacity(origins.len());
    for part in origins.chunks(chunk.max(1)) {
        let mut z = Vec::with_capacity(part.len() * d);
        for o in part {
            z.extend(latent_for(o.z_seed, d).into_iter().map(T::lit));
        }
        let labels: Vec<usize> = part.iter().map(|o| o.class).collect();
        let z = Tensor::from_vec(z, &[part.len(), d])?;
        let x = no_grad(|| generator.forward(&z, &labels, false))?;
        let (_, _, h, w) = x.dims4()?;
        let per = x.numel() / part.len();
        for (o, img) in part.iter().zip(x.data().chunks_exact(per)) {
            let chw: Vec<f32> = img.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect();
            out.push(LabeledImage::synthetic(h, w, from_model_range(&chw, h, w), *o)?);
        }
    }
    Ok(out)
}

/// Origins of the first `counts[k]` pool images of every class k.
pub fn pool_origins(seed: u64, counts: &[usize]) -> Vec<SyntheticOrigin> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(class, &n)| {
            (0..n as u64).map(move |index| SyntheticOrigin { class, index, z_seed: z_seed(seed, class, index) })
        })
        .collect()
}

/// Class-conditional samples with reproducible provenance.
pub fn sample<T: Elem>(generator: &Generator<T>, counts: &[usize], seed: u64) -> Result<Vec<LabeledImage>> {
    generate(generator, &pool_origins(seed, counts), 100)
}
