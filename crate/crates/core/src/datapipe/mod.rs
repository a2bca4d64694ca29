//! Data supply: images and masks, the procedural corpus, patient-level
//! splits, traditional augmentation and medial-axis patch extraction.

pub mod augment;
pub mod corpus;
pub mod image;
pub mod patches;
pub mod split;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
pub use corpus::NUM_CLASSES;
pub use image::{LabeledImage, Provenance};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(images: Vec<LabeledImage>) -> Self {
        Dataset { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    /// Image count and class for every patient.
    pub fn patients(&self) -> BTreeMap<u32, (usize, usize)> {
        let mut out = BTreeMap::new();
        for img in &self.images {
            out.entry(img.patient).or_insert((img.label, 0)).1 += 1;
        }
        out
    }

    pub fn count_provenance(&self, p: Provenance) -> usize {
        self.images.iter().filter(|i| i.provenance() == p).count()
    }

    pub fn filter(&self, keep: impl Fn(&LabeledImage) -> bool) -> Dataset {
        Dataset::new(self.images.iter().filter(|i| keep(i)).cloned().collect())
    }

    pub fn validate_labels(&self) -> Result<()> {
        match self.images.iter().find(|i| i.label >= NUM_CLASSES) {
            Some(i) => Err(Error::Data(format!("label {} out of range", i.label))),
            None => Ok(()),
        }
    }
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes `<split>/<class>/<patient>_<idx>.ppm` plus `manifest.csv`
/// (path, label, patient, provenance) under `root`.
pub fn write_dataset(root: &Path, parts: &[(&str, &Dataset)]) -> Result<()> {
    let manifest_path = root.join(MANIFEST);
    let mut w = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", manifest_path.display()));
    w.write_record(["path", "label", "patient", "provenance"])
        .map_err(csv_err)?;
    for (split, ds) in parts {
        let mut per_patient: BTreeMap<u32, usize> = BTreeMap::new();
        for img in &ds.images {
            let idx = per_patient.entry(img.patient).or_default();
            let rel = PathBuf::from(split)
                .join(img.label.to_string())
                .join(format!("{}_{}.ppm", img.patient, idx));
            *idx += 1;
            let full = root.join(&rel);
            let dir = full.parent().expect("relative path has a parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            image::save_image(img, &full)?;
            w.write_record([
                rel.to_string_lossy().as_ref(),
                &img.label.to_string(),
                &img.patient.to_string(),
                img.provenance().as_str(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))
}

/// Reads a dataset written by [`write_dataset`], grouped by split name.
pub fn read_dataset(root: &Path) -> Result<BTreeMap<String, Dataset>> {
    let manifest_path = root.join(MANIFEST);
    let bad = |line: usize, msg: String| {
        Error::Data(format!("{}:{line}: {msg}", manifest_path.display()))
    };
    let mut r = csv::Reader::from_path(&manifest_path)
        .map_err(|e| bad(0, e.to_string()))?;
    let mut out: BTreeMap<String, Dataset> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(bad(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let rel = Path::new(&rec[0]);
        let label: usize = rec[1].parse().map_err(|_| bad(line, "bad label".into()))?;
        if label >= NUM_CLASSES {
            return Err(bad(line, format!("label {label} out of range")));
        }
        let patient: u32 = rec[2].parse().map_err(|_| bad(line, "bad patient".into()))?;
        let prov = Provenance::parse(&rec[3])
            .ok_or_else(|| bad(line, format!("unknown provenance {}", &rec[3])))?;
        let split = rel
            .components()
            .next()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .ok_or_else(|| bad(line, "empty path".into()))?;
        let loaded = image::load_image(&root.join(rel), label, patient)?;
        let img = LabeledImage::new(
            loaded.height,
            loaded.width,
            loaded.pixels,
            label,
            patient,
            prov,
        )?;
        out.entry(split).or_default().images.push(img);
    }
    Ok(out)
}
