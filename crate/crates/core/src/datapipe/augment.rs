//! Traditional augmentation: flips and photometric jitter.

use rand::Rng;

use super::image::LabeledImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hflip: false,
        vflip: false,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        AugmentParams {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            brightness: rng.gen_range(0.8..1.2),
            contrast: rng.gen_range(0.8..1.2),
            saturation: rng.gen_range(0.8..1.2),
        }
    }
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Flips, then brightness, contrast and saturation, clamping after each step.
pub fn apply(img: &LabeledImage, p: &AugmentParams) -> LabeledImage {
    let (h, w) = (img.height, img.width);
    let mut px = vec![0.0f32; img.pixels.len()];
    for y in 0..h {
        let sy = if p.vflip { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if p.hflip { w - 1 - x } else { x };
            let (d, s) = ((y * w + x) * 3, (sy * w + sx) * 3);
            px[d..d + 3].copy_from_slice(&img.pixels[s..s + 3]);
        }
    }

    if p.brightness != 1.0 {
        for v in px.iter_mut() {
            *v = (*v * p.brightness).clamp(0.0, 1.0);
        }
    }
    if p.contrast != 1.0 {
        let mean = px.chunks_exact(3).map(luma).sum::<f32>() / (h * w) as f32;
        for v in px.iter_mut() {
            *v = ((*v - mean) * p.contrast + mean).clamp(0.0, 1.0);
        }
    }
    if p.saturation != 1.0 {
        for c in px.chunks_exact_mut(3) {
            let g = luma(c);
            for v in c.iter_mut() {
                *v = ((*v - g) * p.saturation + g).clamp(0.0, 1.0);
            }
        }
    }
    img.augmented(px)
}

pub fn traditional_augment(img: &LabeledImage, rng: &mut impl Rng) -> LabeledImage {
    apply(img, &AugmentParams::sample(rng))
}
