//! Dataset manifests, split assignment, and batch loading.
//!
//! The manifest is a CSV with header `path,label,split`: label 0 for
//! photographs, 1 for generated images; split one of train/val/test (or
//! empty until [`make_split`] assigns one). Relative paths resolve against
//! the manifest's directory. Input images are binary PPM (P6).

pub mod ppm;
pub mod transforms;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Photo = 0,
    Generated = 1,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "0" => Some(Label::Photo),
            "1" => Some(Label::Generated),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Label::Photo => 0.0,
            Label::Generated => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

/// Labeled records with disjoint split assignment.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// (photo, generated) counts within a split.
    pub fn class_counts(&self, split: Split) -> (usize, usize) {
        let mut photo = 0;
        let mut generated = 0;
        for r in self.records.iter().filter(|r| r.split == split) {
            match r.label {
                Label::Photo => photo += 1,
                Label::Generated => generated += 1,
            }
        }
        (photo, generated)
    }

    /// A split that feeds training or evaluation must hold both classes.
    pub fn require_both_classes(&self, split: Split) -> Result<()> {
        let (photo, generated) = self.class_counts(split);
        if photo == 0 || generated == 0 {
            return Err(Error::Manifest(format!(
                "{split} split needs both classes, has {photo} photos and {generated} generated"
            )));
        }
        Ok(())
    }
}

/// Parse and validate a manifest CSV. Every listed file must exist; rows
/// with unknown labels or splits are reported together.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "path,label,split" => {}
        _ => {
            return Err(Error::Manifest(
                "first line must be the header `path,label,split`".to_string(),
            ))
        }
    }
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            problems.push(format!("row {row}: expected 3 fields, got {}", fields.len()));
            continue;
        }
        let rel = Path::new(fields[0].trim());
        let full = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base.join(rel)
        };
        if !full.is_file() {
            problems.push(format!("row {row}: missing file {}", full.display()));
            continue;
        }
        let Some(label) = Label::parse(fields[1]) else {
            problems.push(format!("row {row}: unknown label `{}`", fields[1].trim()));
            continue;
        };
        let Some(split) = Split::parse(fields[2]) else {
            problems.push(format!("row {row}: unknown split `{}`", fields[2].trim()));
            continue;
        };
        records.push(ImageRecord {
            path: full,
            label,
            split,
        });
    }
    if !problems.is_empty() {
        let shown = problems.iter().take(10).cloned().collect::<Vec<_>>().join("; ");
        let extra = problems.len().saturating_sub(10);
        let suffix = if extra > 0 { format!(" (+{extra} more)") } else { String::new() };
        return Err(Error::Manifest(format!("{shown}{suffix}")));
    }
    if records.is_empty() {
        return Err(Error::Manifest("manifest has no records".to_string()));
    }
    check_disjoint(&records)?;
    Ok(DatasetManifest { records })
}

fn check_disjoint(records: &[ImageRecord]) -> Result<()> {
    use std::collections::HashMap;
    let mut seen: HashMap<&Path, Split> = HashMap::new();
    for r in records {
        if let Some(&prev) = seen.get(r.path.as_path()) {
            if prev != r.split {
                return Err(Error::Manifest(format!(
                    "{} appears in both {prev} and {} splits",
                    r.path.display(),
                    r.split
                )));
            }
        } else {
            seen.insert(r.path.as_path(), r.split);
        }
    }
    Ok(())
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = String::from("path,label,split\n");
    for r in &manifest.records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.path.display(),
            r.label.as_f64() as u8,
            r.split
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Assign splits by ratio after a deterministic seeded shuffle. Train and
/// val take their rounded-down shares; test takes the remainder.
pub fn make_split(
    records: Vec<(PathBuf, Label)>,
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetManifest> {
    let (rt, rv, rs) = ratios;
    let total_ratio = rt + rv + rs;
    if total_ratio == 0 {
        return Err(Error::arg("make_split: ratios sum to zero"));
    }
    if records.is_empty() {
        return Err(Error::Manifest("make_split: no records".to_string()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n = records.len();
    let n_train = n * rt / total_ratio;
    let n_val = n * rv / total_ratio;
    let mut out = Vec::with_capacity(n);
    for (pos, &idx) in order.iter().enumerate() {
        let split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let (path, label) = records[idx].clone();
        out.push(ImageRecord {
            path,
            label,
            split,
        });
    }
    check_disjoint(&out)?;
    Ok(DatasetManifest { records: out })
}

/// Decode records and stack them into a batch: images (B,3,side,side) in
/// [0,1] and labels (B). Images are resized when their native size differs.
pub fn load_batch<T: Scalar>(
    records: &[&ImageRecord],
    side: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if records.is_empty() {
        return Err(Error::arg("load_batch: empty batch"));
    }
    let mut images = Vec::with_capacity(records.len() * 3 * side * side);
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let img = load_image::<T>(&r.path, side)?;
        images.extend_from_slice(&img.data());
        labels.push(T::from_f64(r.label.as_f64()));
    }
    Ok((
        Tensor::constant(&[records.len(), 3, side, side], images)?,
        Tensor::constant(&[records.len()], labels)?,
    ))
}

/// Decode one image and resize it to `side x side`.
pub fn load_image<T: Scalar>(path: &Path, side: usize) -> Result<Tensor<T>> {
    let img = ppm::decode_p6::<T>(path)?;
    transforms::resize_bilinear(&img, side)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(n: usize) -> Vec<(PathBuf, Label)> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Photo } else { Label::Generated };
                (PathBuf::from(format!("img_{i}.ppm")), label)
            })
            .collect()
    }

    #[test]
    fn split_ratio_arithmetic() {
        let m = make_split(paths(40_000), (12, 3, 5), 1).unwrap();
        assert_eq!(m.split(Split::Train).len(), 24_000);
        assert_eq!(m.split(Split::Val).len(), 6_000);
        assert_eq!(m.split(Split::Test).len(), 10_000);
    }

    #[test]
    fn all_train_ratio() {
        let m = make_split(paths(10), (1, 0, 0), 3).unwrap();
        assert_eq!(m.split(Split::Train).len(), 10);
        assert_eq!(m.split(Split::Val).len(), 0);
        assert_eq!(m.split(Split::Test).len(), 0);
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let a = make_split(paths(100), (3, 1, 1), 9).unwrap();
        let b = make_split(paths(100), (3, 1, 1), 9).unwrap();
        let c = make_split(paths(100), (3, 1, 1), 10).unwrap();
        let key = |m: &DatasetManifest| {
            m.records
                .iter()
                .map(|r| (r.path.clone(), r.split))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
        assert_ne!(key(&a), key(&c));
        assert_eq!(c.split(Split::Train).len(), a.split(Split::Train).len());
    }

    #[test]
    fn splits_partition_the_records() {
        let m = make_split(paths(101), (3, 1, 1), 4).unwrap();
        let n = m.split(Split::Train).len() + m.split(Split::Val).len() + m.split(Split::Test).len();
        assert_eq!(n, 101);
    }

    #[test]
    fn manifest_round_trip_with_validation() {
        let dir = tempfile::tempdir().unwrap();
        // two tiny valid PPMs
        for name in ["a.ppm", "b.ppm"] {
            let bytes = [b"P6\n2 2\n255\n".as_slice(), &[10u8; 12]].concat();
            std::fs::write(dir.path().join(name), bytes).unwrap();
        }
        let manifest_path = dir.path().join("data.csv");
        std::fs::write(
            &manifest_path,
            "path,label,split\na.ppm,0,train\nb.ppm,1,train\n",
        )
        .unwrap();
        let m = load_manifest(&manifest_path).unwrap();
        assert_eq!(m.records.len(), 2);
        m.require_both_classes(Split::Train).unwrap();
        let (imgs, labels) = load_batch::<f32>(&m.split(Split::Train), 32).unwrap();
        assert_eq!(imgs.shape(), &[2, 3, 32, 32]);
        assert_eq!(labels.to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn manifest_reports_offending_rows() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = [b"P6\n1 1\n255\n".as_slice(), &[0u8; 3]].concat();
        std::fs::write(dir.path().join("ok.ppm"), bytes).unwrap();
        let manifest_path = dir.path().join("data.csv");
        std::fs::write(
            &manifest_path,
            "path,label,split\nok.ppm,7,train\nmissing.ppm,0,train\nok.ppm,1,banana\n",
        )
        .unwrap();
        let err = load_manifest(&manifest_path).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("label"), "{err}");
        assert!(err.contains("row 3") && err.contains("missing"), "{err}");
        assert!(err.contains("row 4") && err.contains("split"), "{err}");
    }

    #[test]
    fn split_leakage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = [b"P6\n1 1\n255\n".as_slice(), &[0u8; 3]].concat();
        std::fs::write(dir.path().join("x.ppm"), bytes).unwrap();
        let manifest_path = dir.path().join("data.csv");
        std::fs::write(
            &manifest_path,
            "path,label,split\nx.ppm,0,train\nx.ppm,0,test\n",
        )
        .unwrap();
        assert!(load_manifest(&manifest_path).is_err());
    }

    #[test]
    fn single_class_split_is_detected() {
        let records: Vec<(PathBuf, Label)> =
            (0..4).map(|i| (PathBuf::from(format!("p{i}")), Label::Photo)).collect();
        let m = make_split(records, (1, 0, 0), 0).unwrap();
        assert!(m.require_both_classes(Split::Train).is_err());
    }
}
