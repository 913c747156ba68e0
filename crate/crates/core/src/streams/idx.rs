//! IDX (MNIST) reader. Gzip-compressed files are detected by their magic
//! bytes and inflated transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{Image, Sample};
use crate::error::{CocaError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| CocaError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| CocaError::TruncatedFile {
                path: path.to_path_buf(),
                detail: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| CocaError::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", offset + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(CocaError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Reads an IDX image file and its label file. Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path)?;
    check_magic(&images, IMAGES_MAGIC, images_path)?;
    check_magic(&labels, LABELS_MAGIC, labels_path)?;

    let n_images = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(CocaError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let pixels_per = rows * cols;
    let pixel_bytes = images
        .get(16..16 + n_images * pixels_per)
        .ok_or_else(|| CocaError::TruncatedFile {
            path: images_path.to_path_buf(),
            detail: format!("expected {} pixel bytes, found {}", n_images * pixels_per, images.len().saturating_sub(16)),
        })?;
    let label_bytes = labels.get(8..8 + n_labels).ok_or_else(|| CocaError::TruncatedFile {
        path: labels_path.to_path_buf(),
        detail: format!("expected {n_labels} label bytes, found {}", labels.len().saturating_sub(8)),
    })?;

    Ok(pixel_bytes
        .chunks_exact(pixels_per.max(1))
        .zip(label_bytes)
        .map(|(px, &label)| Sample {
            image: Image::new(rows, cols, px.iter().map(|&b| b as f64 / 255.0).collect()),
            label: label as usize,
            task_id: None,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

fn find(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return gz;
    }
    plain
}

/// Loads `train-*` or `t10k-*` IDX files (optionally `.gz`) from `dir`.
pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<Vec<Sample>> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    load_idx(
        &find(dir, &format!("{prefix}-images-idx3-ubyte")),
        &find(dir, &format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_fixture(dir: &Path, image_magic: u32, label_magic: u32, n_labels: u32) -> (PathBuf, PathBuf) {
        let mut img = Vec::new();
        img.extend_from_slice(&image_magic.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&[0, 128, 255, 255, 0, 128]);
        let mut lab = Vec::new();
        lab.extend_from_slice(&label_magic.to_be_bytes());
        lab.extend_from_slice(&n_labels.to_be_bytes());
        lab.extend_from_slice(&[7, 3]);
        let ip = dir.join("imgs");
        let lp = dir.join("labs");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn reads_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 2);
        let samples = load_idx(&ip, &lp).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].image.pixels, vec![0.0, 128.0 / 255.0, 1.0]);
        assert_eq!(samples[1].image.pixels, vec![1.0, 0.0, 128.0 / 255.0]);
        assert_eq!((samples[0].label, samples[1].label), (7, 3));
        assert_eq!((samples[0].image.height, samples[0].image.width), (1, 3));
    }

    #[test]
    fn wrong_label_magic_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), IMAGES_MAGIC, 0x0000_0803, 2);
        assert!(matches!(load_idx(&ip, &lp), Err(CocaError::BadMagic { found: 0x803, .. })));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 3);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(CocaError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn truncated_images_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 2);
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(CocaError::TruncatedFile { .. })));
    }

    #[test]
    fn gzip_files_are_inflated() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), IMAGES_MAGIC, LABELS_MAGIC, 2);
        let raw = fs::read(&ip).unwrap();
        let gz_path = dir.path().join("imgs.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        fs::write(&gz_path, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx(&gz_path, &lp).unwrap(), load_idx(&ip, &lp).unwrap());
    }
}
