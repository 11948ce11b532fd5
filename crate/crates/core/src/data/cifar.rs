//! CIFAR-10/100 binary batches.
//!
//! CIFAR-10 records are 1 label byte and 3072 pixel bytes; CIFAR-100 records
//! carry a coarse and a fine label byte first. Pixels are three 32x32 planes,
//! R then G then B, each row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Reads and concatenates the given batch files.
pub fn read_cifar_binary<P: AsRef<Path>>(paths: &[P], variant: CifarVariant) -> Result<Dataset> {
    let record = variant.record_len();
    let n = variant.classes();
    let mut pixels = Vec::new();
    let mut fine = Vec::new();
    let mut coarse = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::TruncatedFile {
                path: path.to_path_buf(),
                len: bytes.len(),
                record,
            });
        }
        for rec in bytes.chunks_exact(record) {
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= n {
                return Err(Error::LabelOutOfRange { label, classes: n });
            }
            if variant == CifarVariant::Cifar100 {
                coarse.push(rec[0]);
            }
            fine.push(label);
            pixels.extend(rec[variant.label_bytes()..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let images = Tensor::new(vec![fine.len(), 3, SIDE, SIDE], pixels)?;
    let labels = Dataset::one_hot(&fine, n)?;
    let names: Vec<String> = paths.iter().map(|p| p.as_ref().display().to_string()).collect();
    let mut ds = Dataset::new(images, labels, Split::Full, format!("{variant:?}:{}", names.join(",")))?;
    if variant == CifarVariant::Cifar100 {
        ds.coarse_labels = Some(coarse);
    }
    Ok(ds)
}

/// Encodes a dataset in the binary layout. Pixels are rounded to the
/// nearest of the 256 levels; CIFAR-100 writes stored coarse labels or 0.
pub fn encode_cifar(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if ds.image_shape() != [3, SIDE, SIDE] {
        return Err(Error::BadShape(ds.images.shape().to_vec()));
    }
    let classes = ds.class_indices();
    let mut out = Vec::with_capacity(classes.len() * variant.record_len());
    for (i, &c) in classes.iter().enumerate() {
        let label = u8::try_from(c)
            .ok()
            .filter(|_| c < variant.classes())
            .ok_or(Error::LabelOutOfRange {
                label: c,
                classes: variant.classes(),
            })?;
        if variant == CifarVariant::Cifar100 {
            out.push(ds.coarse_labels.as_ref().map_or(0, |v| v[i]));
        }
        out.push(label);
        out.extend(ds.images.row(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_cifar_binary(ds: &Dataset, path: &Path, variant: CifarVariant) -> Result<PathBuf> {
    fs::write(path, encode_cifar(ds, variant)?)?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(variant: CifarVariant, records: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for r in 0..records {
            if variant == CifarVariant::Cifar100 {
                out.push((r % 20) as u8);
            }
            out.push((r * 7 % variant.classes()) as u8);
            out.extend((0..PIXELS).map(|i| ((i * 31 + r * 17) % 256) as u8));
        }
        out
    }

    #[test]
    fn reads_records_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [CifarVariant::Cifar10, CifarVariant::Cifar100] {
            let bytes = fixture(variant, 10);
            assert_eq!(bytes.len(), 10 * variant.record_len());
            let path = dir.path().join("batch.bin");
            fs::write(&path, &bytes).unwrap();
            let ds = read_cifar_binary(&[&path], variant).unwrap();
            assert_eq!(ds.len(), 10);
            let lb = variant.label_bytes();
            assert_eq!(ds.images.data()[0], bytes[lb] as f64 / 255.0);
            assert_eq!(encode_cifar(&ds, variant).unwrap(), bytes);
        }
    }

    #[test]
    fn missing_label_bytes_is_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, vec![0u8; 3 * PIXELS]).unwrap();
        assert!(matches!(
            read_cifar_binary(&[&path], CifarVariant::Cifar10),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let mut bytes = fixture(CifarVariant::Cifar10, 1);
        bytes[0] = 10;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_cifar_binary(&[&path], CifarVariant::Cifar10),
            Err(Error::LabelOutOfRange { label: 10, .. })
        ));
    }
}
