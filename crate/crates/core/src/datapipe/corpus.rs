//! Procedural four-class texture corpus.
//!
//! Each image is a band of stratified tissue: a pink background with
//! horizontal layering, and dark nuclei whose density, vertical reach and
//! stain tone grow with the class index. Patients add their own stain,
//! brightness and layering phase on top, so classes overlap at the margins.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::{LabeledImage, Provenance};
use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, TAG_CORPUS};

pub const NUM_CLASSES: usize = 4;
pub const DEFAULT_COUNTS: [usize; NUM_CLASSES] = [278, 45, 116, 114];
pub const MIN_PATIENT_IMAGES: usize = 4;
pub const MAX_PATIENT_IMAGES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub counts: [usize; NUM_CLASSES],
    pub height: usize,
    pub width: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            counts: DEFAULT_COUNTS,
            height: 32,
            width: 64,
        }
    }
}

struct ClassStyle {
    layer_freq: f32,
    nuclei_per_kpx: f32,
    nuclei_reach: f32,
    nucleus_radius: f32,
    stain: [f32; 3],
}

fn style(class: usize) -> ClassStyle {
    let t = class as f32 / (NUM_CLASSES - 1) as f32;
    ClassStyle {
        layer_freq: 1.5 + 2.0 * t,
        nuclei_per_kpx: 4.0 + 8.0 * t,
        nuclei_reach: 0.3 + 0.7 * t,
        nucleus_radius: 1.6 + 0.8 * t,
        stain: [0.42 - 0.12 * t, 0.22 - 0.06 * t, 0.55 + 0.05 * t],
    }
}

struct PatientNuisance {
    brightness: f32,
    stain_shift: [f32; 3],
    phase: f32,
    density_scale: f32,
}

fn patient_sizes(total: usize, rng: &mut impl Rng) -> Vec<usize> {
    if total < MIN_PATIENT_IMAGES {
        return if total == 0 { vec![] } else { vec![total] };
    }
    let mut sizes = Vec::new();
    let mut left = total;
    while left > 0 {
        if left <= MAX_PATIENT_IMAGES {
            sizes.push(left);
            break;
        }
        // keep the remainder large enough to form another patient
        let hi = MAX_PATIENT_IMAGES.min(left - MIN_PATIENT_IMAGES);
        let s = rng.gen_range(MIN_PATIENT_IMAGES..=hi);
        sizes.push(s);
        left -= s;
    }
    sizes
}

fn render(
    class: usize,
    nuisance: &PatientNuisance,
    cfg: &CorpusConfig,
    rng: &mut impl Rng,
) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let st = style(class);
    let noise = Normal::new(0.0f32, 0.03).expect("valid sigma");
    let mut px = vec![0.0f32; h * w * 3];

    let background = [0.93, 0.72, 0.82];
    for y in 0..h {
        let v = y as f32 / h as f32;
        let layer = 0.5
            + 0.5 * (std::f32::consts::TAU * st.layer_freq * v + nuisance.phase).sin();
        for x in 0..w {
            for c in 0..3 {
                let base = background[c] - 0.10 * layer + nuisance.stain_shift[c];
                px[(y * w + x) * 3 + c] = base;
            }
        }
    }

    // nuclei sit in the lower band of height `reach`; basal side is at the bottom
    let area = (h * w) as f32 / 1000.0;
    let mean_count = st.nuclei_per_kpx * area * nuisance.density_scale;
    let count = (mean_count + rng.gen_range(-1.5f32..1.5)).round().max(0.0) as usize;
    let reach = st.nuclei_reach * h as f32;
    for _ in 0..count {
        let cy = h as f32 - rng.gen_range(0.0..reach.max(1.0));
        let cx = rng.gen_range(0.0..w as f32);
        let r = st.nucleus_radius * rng.gen_range(0.8f32..1.25) * (h as f32 / 32.0).max(0.25);
        let (y0, y1) = ((cy - r - 1.0).max(0.0) as usize, ((cy + r + 1.0) as usize).min(h));
        let (x0, x1) = ((cx - r - 1.0).max(0.0) as usize, ((cx + r + 1.0) as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = (y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2);
                let a = (1.0 - d2 / (r * r)).clamp(0.0, 1.0).sqrt();
                for c in 0..3 {
                    let p = &mut px[(y * w + x) * 3 + c];
                    *p = *p * (1.0 - a) + (st.stain[c] + nuisance.stain_shift[c]) * a;
                }
            }
        }
    }

    for p in px.iter_mut() {
        *p = (*p * nuisance.brightness + noise.sample(rng)).clamp(0.0, 1.0);
    }
    px
}

/// Generates the corpus. Patient ids are unique across classes; images are
/// ordered by class, then patient, then index.
pub fn generate_synthetic_corpus(seed: u64, cfg: &CorpusConfig) -> Result<Dataset> {
    if cfg.height < 4 || cfg.width < 4 {
        return Err(Error::InvalidConfig(format!(
            "corpus images must be at least 4x4, got {}x{}",
            cfg.height, cfg.width
        )));
    }
    let mut images = Vec::with_capacity(cfg.counts.iter().sum());
    let mut next_patient = 0u32;
    for (class, &total) in cfg.counts.iter().enumerate() {
        let mut rng = stream(seed, &[TAG_CORPUS, class as u64]);
        for size in patient_sizes(total, &mut rng) {
            let patient = next_patient;
            next_patient += 1;
            let mut prng = stream(seed, &[TAG_CORPUS, class as u64, patient as u64]);
            let nuisance = PatientNuisance {
                brightness: prng.gen_range(0.9..1.1),
                stain_shift: [
                    prng.gen_range(-0.05..0.05),
                    prng.gen_range(-0.05..0.05),
                    prng.gen_range(-0.05..0.05),
                ],
                phase: prng.gen_range(0.0..std::f32::consts::TAU),
                density_scale: prng.gen_range(0.75..1.25),
            };
            for _ in 0..size {
                let pixels = render(class, &nuisance, cfg, &mut prng);
                images.push(LabeledImage::new(
                    cfg.height,
                    cfg.width,
                    pixels,
                    class,
                    patient,
                    Provenance::Real,
                )?);
            }
        }
    }
    Ok(Dataset::new(images))
}
