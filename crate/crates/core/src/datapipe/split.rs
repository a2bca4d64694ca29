//! Patient-level train/val/test splitting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{stream, TAG_SPLIT};

pub const DEFAULT_RATIOS: [f64; 3] = [7.0, 1.0, 2.0];
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    /// Patient ids per split, in train/val/test order.
    pub patients: [BTreeSet<u32>; 3],
    /// Image counts per split and class.
    pub histograms: [[usize; NUM_CLASSES]; 3],
}

impl SplitAssignment {
    pub fn split_of(&self, patient: u32) -> Option<usize> {
        self.patients.iter().position(|s| s.contains(&patient))
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.histograms.map(|h| h.iter().sum())
    }

    pub fn apply(&self, ds: &Dataset) -> [Dataset; 3] {
        let mut out: [Dataset; 3] = Default::default();
        for img in &ds.images {
            if let Some(s) = self.split_of(img.patient) {
                out[s].images.push(img.clone());
            }
        }
        out
    }
}

/// Within each class, patients are visited in a seeded random order and each
/// goes to the split whose image count lags its target the most.
pub fn split_by_patient(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConfig(format!("bad split ratios {ratios:?}")));
    }
    ds.validate_labels()?;
    let total_ratio: f64 = ratios.iter().sum();
    let mut by_class: [Vec<(u32, usize)>; NUM_CLASSES] = Default::default();
    let patients = ds.patients();
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    for img in &ds.images {
        if *seen.entry(img.patient).or_insert(img.label) != img.label {
            return Err(Error::Data(format!(
                "patient {} has images of more than one class",
                img.patient
            )));
        }
    }
    for (&p, &(class, n)) in &patients {
        by_class[class].push((p, n));
    }

    let mut out = SplitAssignment {
        patients: Default::default(),
        histograms: [[0; NUM_CLASSES]; 3],
    };
    for (class, list) in by_class.iter_mut().enumerate() {
        let mut rng = stream(seed, &[TAG_SPLIT, class as u64]);
        list.shuffle(&mut rng);
        let class_total: usize = list.iter().map(|&(_, n)| n).sum();
        let targets = ratios.map(|r| r / total_ratio * class_total as f64);
        for &(p, n) in list.iter() {
            let s = (0..3)
                .max_by(|&a, &b| {
                    let da = targets[a] - out.histograms[a][class] as f64;
                    let db = targets[b] - out.histograms[b][class] as f64;
                    // earliest split wins ties
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("three splits");
            out.patients[s].insert(p);
            out.histograms[s][class] += n;
        }
    }
    Ok(out)
}
