//! Multi-layer activations, class centroids and the normalized distance.

use diffcore::{no_grad, Elem};

use crate::classify::Classifier;
use crate::datapipe::image::batch_tensor;
use crate::datapipe::{Dataset, LabeledImage, Provenance};
use crate::error::{Error, Result};

/// Guard for the channel norm of an all-zero location.
pub const NORM_EPS: f64 = 1e-12;

/// Images per extractor forward pass.
pub const EXTRACT_CHUNK: usize = 64;

/// One layer's activations for one image, channel-major (A×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width || data.is_empty() {
            return Err(Error::Model(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                data.len()
            )));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

pub type FeatureStack = Vec<FeatureMap>;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCentroid {
    pub class: usize,
    /// Number of images averaged.
    pub count: usize,
    /// Unnormalized per-layer means.
    pub layers: FeatureStack,
}

/// Activations of the selected classifier stages for every image, in eval
/// mode so that a stack does not depend on which images share its batch.
pub fn extract_features<T: Elem>(
    model: &Classifier<T>,
    images: &[&LabeledImage],
    layers: &[usize],
) -> Result<Vec<FeatureStack>> {
    if !model.is_trained() {
        return Err(Error::Untrained);
    }
    if layers.is_empty() || layers.iter().any(|&l| l >= model.num_stages()) {
        return Err(Error::InvalidConfig(format!(
            "feature layers {layers:?} for a {}-stage extractor",
            model.num_stages()
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EXTRACT_CHUNK) {
        let x = batch_tensor::<T>(chunk)?;
        let (_, stages) = no_grad(|| model.run(&x, false, true))?;
        let mut per_image: Vec<FeatureStack> = vec![Vec::with_capacity(layers.len()); chunk.len()];
        for &l in layers {
            let s = &stages[l];
            let (_, c, h, w) = s.dims4()?;
            for (i, img) in s.data().chunks_exact(c * h * w).enumerate() {
                let data = img.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                per_image[i].push(FeatureMap::new(c, h, w, data)?);
            }
        }
        out.extend(per_image);
    }
    Ok(out)
}

/// Running per-class sums of feature stacks.
struct Accumulator {
    sums: Vec<Option<(usize, FeatureStack)>>,
}

impl Accumulator {
    fn new(num_classes: usize) -> Self {
        Accumulator { sums: vec![None; num_classes] }
    }

    fn add(&mut self, label: usize, stack: &FeatureStack) -> Result<()> {
        let slot = self
            .sums
            .get_mut(label)
            .ok_or_else(|| Error::Data(format!("label {label} out of range")))?;
        match slot {
            None => *slot = Some((1, stack.clone())),
            Some((n, acc)) => {
                check_same_dims(acc, stack)?;
                for (a, m) in acc.iter_mut().zip(stack) {
                    a.data.iter_mut().zip(&m.data).for_each(|(s, v)| *s += v);
                }
                *n += 1;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Vec<ClassCentroid>> {
        self.sums
            .into_iter()
            .enumerate()
            .map(|(class, s)| {
                let (count, mut layers) = s.ok_or(Error::MissingClass { class, set: "real training images" })?;
                for m in layers.iter_mut() {
                    m.data.iter_mut().for_each(|v| *v /= count as f64);
                }
                Ok(ClassCentroid { class, count, layers })
            })
            .collect()
    }
}

/// Per-class means of `(label, stack)` pairs; every class must occur.
pub fn centroids_from_stacks<'a>(
    stacks: impl IntoIterator<Item = (usize, &'a FeatureStack)>,
    num_classes: usize,
) -> Result<Vec<ClassCentroid>> {
    let mut acc = Accumulator::new(num_classes);
    for (label, stack) in stacks {
        acc.add(label, stack)?;
    }
    acc.finish()
}

/// Centroids over the real images of `train`; other provenances are ignored.
pub fn compute_centroids<T: Elem>(
    model: &Classifier<T>,
    train: &Dataset,
    layers: &[usize],
) -> Result<Vec<ClassCentroid>> {
    let real: Vec<&LabeledImage> = train.images.iter().filter(|i| i.provenance() == Provenance::Real).collect();
    let mut acc = Accumulator::new(model.num_classes());
    for chunk in real.chunks(EXTRACT_CHUNK) {
        for (img, stack) in chunk.iter().zip(extract_features(model, chunk, layers)?) {
            acc.add(img.label, &stack)?;
        }
    }
    acc.finish()
}

/// Scales the channel vector at every spatial location to unit L2 norm.
pub fn unit_normalize(map: &FeatureMap) -> FeatureMap {
    let hw = map.height * map.width;
    let mut out = map.clone();
    for p in 0..hw {
        let norm = (0..map.channels).map(|c| map.data[c * hw + p].powi(2)).sum::<f64>().sqrt();
        let scale = 1.0 / norm.max(NORM_EPS);
        for c in 0..map.channels {
            out.data[c * hw + p] *= scale;
        }
    }
    out
}

fn check_same_dims(a: &[FeatureMap], b: &[FeatureMap]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.dims() != y.dims()) {
        let dims = |s: &[FeatureMap]| s.iter().map(FeatureMap::dims).collect::<Vec<_>>();
        return Err(Error::Model(format!(
            "feature stacks differ: {:?} vs {:?}",
            dims(a),
            dims(b)
        )));
    }
    Ok(())
}

fn normalized_distance(x: &[FeatureMap], c: &[FeatureMap]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(a, b)| {
            let sq: f64 = a.data.iter().zip(&b.data).map(|(u, v)| (u - v).powi(2)).sum();
            sq / (a.height * a.width) as f64
        })
        .sum()
}

/// `Σ_l ‖φ̂_l(x) − φ̂_l(c)‖² / (H_l·W_l)`, normalizing both sides.
pub fn feature_distance(x: &[FeatureMap], centroid: &[FeatureMap]) -> Result<f64> {
    check_same_dims(x, centroid)?;
    let xn: Vec<FeatureMap> = x.iter().map(unit_normalize).collect();
    let cn: Vec<FeatureMap> = centroid.iter().map(unit_normalize).collect();
    Ok(normalized_distance(&xn, &cn))
}

/// Centroids normalized once, for scoring many candidates.
#[derive(Debug, Clone)]
pub struct CentroidScorer {
    normalized: Vec<FeatureStack>,
}

impl CentroidScorer {
    pub fn new(centroids: &[ClassCentroid]) -> Self {
        let mut sorted: Vec<&ClassCentroid> = centroids.iter().collect();
        sorted.sort_by_key(|c| c.class);
        CentroidScorer {
            normalized: sorted.iter().map(|c| c.layers.iter().map(unit_normalize).collect()).collect(),
        }
    }

    /// Same value as [`feature_distance`] against class `class`'s centroid.
    pub fn distance(&self, x: &[FeatureMap], class: usize) -> Result<f64> {
        let c = self
            .normalized
            .get(class)
            .ok_or_else(|| Error::Data(format!("no centroid for class {class}")))?;
        check_same_dims(x, c)?;
        let xn: Vec<FeatureMap> = x.iter().map(unit_normalize).collect();
        Ok(normalized_distance(&xn, c))
    }
}
