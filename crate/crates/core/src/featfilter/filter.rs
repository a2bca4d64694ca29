//! Quota-based selection of the synthetic candidates closest to their class
//! centroid.

use std::collections::BTreeSet;
use std::path::Path;

use diffcore::Elem;

use super::features::{extract_features, CentroidScorer, EXTRACT_CHUNK};
use crate::classify::Classifier;
use crate::datapipe::image::SyntheticOrigin;
use crate::datapipe::LabeledImage;
use crate::error::{Error, Result};
use crate::gan::{generate, Generator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub origin: SyntheticOrigin,
    pub distance: f64,
}

/// `round(r·count)` with exact halves rounded down.
pub fn quota(r: f64, count: usize) -> usize {
    let x = r * count as f64;
    let f = x.floor();
    if x - f > 0.5 {
        f as usize + 1
    } else {
        f as usize
    }
}

pub fn quotas(r: f64, counts: &[usize]) -> Vec<usize> {
    counts.iter().map(|&c| quota(r, c)).collect()
}

/// Keeps, for every class k, the `quota(r, real_counts[k])` candidates with
/// the smallest distance, ties going to the lower generation index. The
/// result is ordered by class, then by rank.
pub fn rank_and_filter(pool: &[ScoredCandidate], real_counts: &[usize], r: f64) -> Result<Vec<ScoredCandidate>> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidConfig(format!("ratio {r} must be finite and non-negative")));
    }
    if let Some(c) = pool.iter().find(|c| c.origin.class >= real_counts.len()) {
        return Err(Error::Data(format!("candidate of unknown class {}", c.origin.class)));
    }
    let mut out = Vec::new();
    for (class, &count) in real_counts.iter().enumerate() {
        let mut members: Vec<ScoredCandidate> = pool.iter().filter(|c| c.origin.class == class).copied().collect();
        let q = quota(r, count);
        if q > members.len() {
            return Err(Error::PoolTooSmall { class, required: q, available: members.len() });
        }
        members.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.origin.index.cmp(&b.origin.index)));
        out.extend_from_slice(&members[..q]);
    }
    Ok(out)
}

/// The `quota` lowest-index candidates per class: what an unfiltered run uses.
pub fn first_by_index(pool: &[ScoredCandidate], real_counts: &[usize], r: f64) -> Result<Vec<ScoredCandidate>> {
    let mut out = Vec::new();
    for (class, &count) in real_counts.iter().enumerate() {
        let mut members: Vec<ScoredCandidate> = pool.iter().filter(|c| c.origin.class == class).copied().collect();
        let q = quota(r, count);
        if q > members.len() {
            return Err(Error::PoolTooSmall { class, required: q, available: members.len() });
        }
        members.sort_by_key(|c| c.origin.index);
        out.extend_from_slice(&members[..q]);
    }
    Ok(out)
}

/// Scores already generated images against their own class centroid.
pub fn score_images<T: Elem>(
    extractor: &Classifier<T>,
    scorer: &CentroidScorer,
    images: &[&LabeledImage],
    layers: &[usize],
) -> Result<Vec<ScoredCandidate>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EXTRACT_CHUNK) {
        for (img, stack) in chunk.iter().zip(extract_features(extractor, chunk, layers)?) {
            let origin = img
                .origin()
                .ok_or_else(|| Error::Data("only synthetic images can be scored".into()))?;
            out.push(ScoredCandidate { origin, distance: scorer.distance(&stack, img.label)? });
        }
    }
    Ok(out)
}

/// Generates and scores the pool piece by piece, keeping only the scores;
/// selected images are regenerated later from their origins.
pub fn score_pool<G: Elem, C: Elem>(
    generator: &Generator<G>,
    extractor: &Classifier<C>,
    scorer: &CentroidScorer,
    origins: &[SyntheticOrigin],
    layers: &[usize],
) -> Result<Vec<ScoredCandidate>> {
    let mut out = Vec::with_capacity(origins.len());
    for part in origins.chunks(EXTRACT_CHUNK) {
        let images = generate(generator, part, EXTRACT_CHUNK)?;
        let refs: Vec<&LabeledImage> = images.iter().collect();
        out.extend(score_images(extractor, scorer, &refs, layers)?);
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// `class,index,distance,selected` for every pool member.
pub fn write_scores(path: &Path, pool: &[ScoredCandidate], selected: &[ScoredCandidate]) -> Result<()> {
    let chosen: BTreeSet<(usize, u64)> = selected.iter().map(|c| (c.origin.class, c.origin.index)).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["class", "index", "z_seed", "distance", "selected"])
        .map_err(|e| csv_err(path, e))?;
    for c in pool {
        let o = c.origin;
        w.write_record([
            o.class.to_string(),
            o.index.to_string(),
            o.z_seed.to_string(),
            c.distance.to_string(),
            chosen.contains(&(o.class, o.index)).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_scores`]; returns the pool and the
/// selected subset.
pub fn read_scores(path: &Path) -> Result<(Vec<ScoredCandidate>, Vec<ScoredCandidate>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let (mut pool, mut selected) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::Data(format!("{}: malformed score row {}", path.display(), i + 2));
        if rec.len() != 5 {
            return Err(bad());
        }
        let c = ScoredCandidate {
            origin: SyntheticOrigin {
                class: rec[0].parse().map_err(|_| bad())?,
                index: rec[1].parse().map_err(|_| bad())?,
                z_seed: rec[2].parse().map_err(|_| bad())?,
            },
            distance: rec[3].parse().map_err(|_| bad())?,
        };
        if rec[4].parse::<bool>().map_err(|_| bad())? {
            selected.push(c);
        }
        pool.push(c);
    }
    Ok((pool, selected))
}
