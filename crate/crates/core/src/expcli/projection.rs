//! Two-dimensional feature projections for visual inspection.

use std::path::Path;

use diffcore::Elem;

use crate::classify::Classifier;
use crate::datapipe::{LabeledImage, Provenance};
use crate::error::{Error, Result};
use crate::featfilter::{extract_features, Pca};

/// Spatial means of the last extractor stage, one vector per image.
pub fn pooled_features<T: Elem>(extractor: &Classifier<T>, images: &[&LabeledImage]) -> Result<Vec<Vec<f64>>> {
    let last = extractor.num_stages() - 1;
    Ok(extract_features(extractor, images, &[last])?
        .into_iter()
        .map(|stack| {
            let m = &stack[0];
            let hw = (m.height * m.width) as f64;
            m.data.chunks_exact(m.height * m.width).map(|plane| plane.iter().sum::<f64>() / hw).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub provenance: Provenance,
}

/// Projects `images` onto axes fitted to `reference` (so that several
/// projections share one plane).
pub fn project_images<T: Elem>(
    extractor: &Classifier<T>,
    reference: &[&LabeledImage],
    images: &[&LabeledImage],
) -> Result<Vec<ProjectedPoint>> {
    let pca = Pca::fit(&pooled_features(extractor, reference)?, 2)?;
    Ok(pooled_features(extractor, images)?
        .iter()
        .zip(images)
        .map(|(f, img)| {
            let p = pca.project(f);
            ProjectedPoint { x: p[0], y: p[1], label: img.label, provenance: img.provenance() }
        })
        .collect())
}

/// `x,y,label,provenance`, one row per point.
pub fn emit_projection(path: &Path, points: &[ProjectedPoint]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "y", "label", "provenance"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.label.to_string(), p.provenance.as_str().to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean distance of the points of `provenance` to their class's 2-D mean,
/// averaged over points. `None` without such points.
pub fn within_class_spread(points: &[ProjectedPoint], provenance: Provenance) -> Option<f64> {
    let chosen: Vec<&ProjectedPoint> = points.iter().filter(|p| p.provenance == provenance).collect();
    if chosen.is_empty() {
        return None;
    }
    let k = chosen.iter().map(|p| p.label).max().unwrap_or(0) + 1;
    let mut sums = vec![(0.0, 0.0, 0usize); k];
    for p in &chosen {
        let s = &mut sums[p.label];
        *s = (s.0 + p.x, s.1 + p.y, s.2 + 1);
    }
    let total: f64 = chosen
        .iter()
        .map(|p| {
            let (sx, sy, n) = sums[p.label];
            ((p.x - sx / n as f64).powi(2) + (p.y - sy / n as f64).powi(2)).sqrt()
        })
        .sum();
    Some(total / chosen.len() as f64)
}
