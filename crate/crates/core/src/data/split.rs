use std::path::Path;

use rand::seq::SliceRandom;

use super::dataset::{load_dataset, Dataset, DatasetManifest, MANIFEST_FILE};
use crate::binio;
use crate::error::{Error, Result};
use crate::seed;

pub const TRAIN_FILE: &str = "train.adtn";
pub const UNLABELED_FILE: &str = "unlabeled.adtn";
pub const TEST_FILE: &str = "test.adtn";
/// True labels of the unlabeled split, kept out of the training inputs.
pub const AUDIT_FILE: &str = "unlabeled_audit.json";

/// Output of [`split_balanced`]. The unlabeled split carries no labels; its
/// true labels are kept apart in `unlabeled_audit` for scoring pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
    pub unlabeled_audit: Vec<usize>,
}

impl Splits {
    /// Writes the three containers, the audit record and `manifest` into `dir`.
    pub fn save(&self, dir: &Path, manifest: &DatasetManifest) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.train.save(&dir.join(TRAIN_FILE))?;
        self.unlabeled.save(&dir.join(UNLABELED_FILE))?;
        self.test.save(&dir.join(TEST_FILE))?;
        let audit = serde_json::to_vec(&self.unlabeled_audit).map_err(|e| Error::input(e.to_string()))?;
        binio::write_atomic(&dir.join(AUDIT_FILE), &audit)?;
        manifest.save(&dir.join(MANIFEST_FILE))
    }

    /// Reads a directory written by [`Splits::save`]. A missing audit record
    /// yields an empty audit vector.
    pub fn load(dir: &Path) -> Result<(Self, Option<DatasetManifest>)> {
        let (train, manifest) = load_dataset(&dir.join(TRAIN_FILE))?;
        let (unlabeled, _) = load_dataset(&dir.join(UNLABELED_FILE))?;
        let (test, _) = load_dataset(&dir.join(TEST_FILE))?;
        train.require_labels()?;
        test.require_labels()?;
        if train.dims != test.dims || train.dims != unlabeled.dims {
            return Err(Error::Data(format!(
                "splits in {} disagree on image dims",
                dir.display()
            )));
        }
        let audit_path = dir.join(AUDIT_FILE);
        let unlabeled_audit = if audit_path.exists() {
            let bytes = std::fs::read(&audit_path).map_err(|e| Error::io(&audit_path, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&audit_path, e.to_string()))?
        } else {
            Vec::new()
        };
        Ok((
            Self {
                train,
                unlabeled: unlabeled.without_labels(),
                test,
                unlabeled_audit,
            },
            manifest,
        ))
    }
}

/// Per-class quota for `total` samples over `classes` classes; the remainder
/// goes to the lowest class indices.
pub fn class_quota(total: usize, classes: usize) -> Vec<usize> {
    (0..classes)
        .map(|k| total / classes + usize::from(k < total % classes))
        .collect()
}

/// Disjoint, class-balanced train / unlabeled / test splits drawn from a labeled pool.
pub fn split_balanced(pool: &Dataset, n_train: usize, n_unlabeled: usize, n_test: usize, seed: u64) -> Result<Splits> {
    let labels = pool.require_labels()?;
    let classes = pool.num_classes_seen();
    if classes < 2 {
        return Err(Error::config("pool must contain at least two classes"));
    }
    let quotas = [
        class_quota(n_train, classes),
        class_quota(n_unlabeled, classes),
        class_quota(n_test, classes),
    ];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut picks: [Vec<usize>; 3] = Default::default();
    for (k, members) in by_class.iter_mut().enumerate() {
        let need: usize = quotas.iter().map(|q| q[k]).sum();
        if members.len() < need {
            return Err(Error::config(format!(
                "class {k} has {} samples, {need} required",
                members.len()
            )));
        }
        let mut rng = seed::derived_rng(seed, &["split", &k.to_string()]);
        members.shuffle(&mut rng);
        let mut offset = 0;
        for (split, quota) in picks.iter_mut().zip(&quotas) {
            split.extend_from_slice(&members[offset..offset + quota[k]]);
            offset += quota[k];
        }
    }
    for split in &mut picks {
        split.sort_unstable();
    }
    let unlabeled_full = pool.subset(&picks[1]);
    Ok(Splits {
        train: pool.subset(&picks[0]),
        unlabeled_audit: unlabeled_full.labels.clone().unwrap_or_default(),
        unlabeled: unlabeled_full.without_labels(),
        test: pool.subset(&picks[2]),
    })
}

/// Per-class counts of a labeled dataset.
pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &y in labels {
        if y < classes {
            counts[y] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::diffnet::InputDims;

    fn pool(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let images = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        Dataset::new(InputDims::flat(1), images, Some((0..n).map(|i| i % classes).collect())).unwrap()
    }

    #[test]
    fn four_class_quota_counts() {
        let p = pool(1500, 4);
        let s = split_balanced(&p, 4000, 1000, 1000, 3).unwrap();
        assert_eq!(class_counts(s.train.labels.as_ref().unwrap(), 4), vec![1000; 4]);
        assert_eq!(class_counts(&s.unlabeled_audit, 4), vec![250; 4]);
        assert_eq!(class_counts(s.test.labels.as_ref().unwrap(), 4), vec![250; 4]);
        assert!(s.unlabeled.labels.is_none());
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let p = pool(50, 3);
        let a = split_balanced(&p, 60, 30, 30, 9).unwrap();
        let b = split_balanced(&p, 60, 30, 30, 9).unwrap();
        assert_eq!(a, b);
        // pixel values are unique per pool row, so they identify rows
        let mut seen: Vec<u64> = [&a.train, &a.unlabeled, &a.test]
            .iter()
            .flat_map(|d| d.images.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), total);
    }

    #[test]
    fn remainder_goes_to_low_classes() {
        assert_eq!(class_quota(500, 3), vec![167, 167, 166]);
    }

    #[test]
    fn deficient_class_is_named() {
        let p = pool(10, 2);
        let err = split_balanced(&p, 12, 6, 6, 0).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("class 0")), "{err}");
    }

    #[test]
    fn directory_round_trip() {
        let n = 90;
        let images = DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64 / 256.0);
        let p = Dataset::new(InputDims::flat(2), images, Some((0..n).map(|i| i % 3).collect())).unwrap();
        let s = split_balanced(&p, 30, 15, 15, 2).unwrap();
        let manifest = DatasetManifest {
            name: "t".into(),
            class_names: vec!["a".into(), "b".into(), "c".into()],
            dims: InputDims::flat(2),
            splits: Default::default(),
            pixel_scale: "unit".into(),
            seed: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path(), &manifest).unwrap();
        let (back, m) = Splits::load(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.unwrap(), manifest);
    }
}
