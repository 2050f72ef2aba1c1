//! Readers for the published CIFAR binary formats.
//!
//! CIFAR-10: `data_batch_{1..5}.bin` / `test_batch.bin`, records of one label
//! byte followed by 3072 pixel bytes (R, G, B planes of 32x32).
//! CIFAR-100: `train.bin` / `test.bin`, records of a coarse and a fine label
//! byte followed by the same 3072 pixel bytes. Fine labels are used.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array4;

use super::{LabeledImages, Split};
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

const CIFAR10_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Accepts either the directory holding the `.bin` files or its parent.
fn resolve(root: &Path, subdir: &str, probe: &str) -> Result<PathBuf> {
    for dir in [root.to_path_buf(), root.join(subdir)] {
        if dir.join(probe).is_file() {
            return Ok(dir);
        }
    }
    Err(Error::Dataset {
        path: root.to_path_buf(),
        message: format!("`{probe}` not found here or under `{subdir}/`"),
    })
}

fn read_records(path: &Path, label_bytes: usize, label_index: usize) -> Result<(Vec<u8>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let record = label_bytes + PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            message: format!(
                "corrupt file: {} bytes is not a multiple of the {record}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / record;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(record) {
        labels.push(chunk[label_index] as usize);
        pixels.extend_from_slice(&chunk[label_bytes..]);
    }
    Ok((pixels, labels))
}

fn class_names(path: &Path) -> Option<Vec<String>> {
    let text = fs::read_to_string(path).ok()?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    Some(names)
}

fn assemble(
    files: &[PathBuf],
    label_bytes: usize,
    label_index: usize,
    class_count: usize,
    names: Vec<String>,
) -> Result<LabeledImages> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let (p, l) = read_records(file, label_bytes, label_index)?;
        if let Some(bad) = l.iter().find(|&&v| v >= class_count) {
            return Err(Error::Dataset {
                path: file.clone(),
                message: format!("label {bad} out of range for {class_count} classes"),
            });
        }
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    let images = Array4::from_shape_vec(
        (n, 3, SIDE, SIDE),
        pixels.into_iter().map(|b| b as f64 / 255.0).collect(),
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    LabeledImages::new(images, labels, class_count, names)
}

pub fn load_cifar10(root: &Path, split: Split) -> Result<LabeledImages> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let dir = resolve(root, "cifar-10-batches-bin", &files[0])?;
    let names = class_names(&dir.join("batches.meta.txt"))
        .filter(|n| n.len() == 10)
        .unwrap_or_else(|| CIFAR10_NAMES.iter().map(|s| s.to_string()).collect());
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    assemble(&paths, 1, 0, 10, names)
}

pub fn load_cifar100(root: &Path, split: Split) -> Result<LabeledImages> {
    let file = match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
    };
    let dir = resolve(root, "cifar-100-binary", file)?;
    let names = class_names(&dir.join("fine_label_names.txt"))
        .filter(|n| n.len() == 100)
        .unwrap_or_default();
    assemble(&[dir.join(file)], 2, 1, 100, names)
}

/// Writes images (already in `[0, 1]`, shape `(N, 3, 32, 32)`) in the
/// CIFAR-10 record format. Pixels are quantized to bytes.
pub fn write_cifar10_batch(path: &Path, images: &Array4<f64>, labels: &[usize]) -> Result<()> {
    if images.dim().1 != 3 || images.dim().2 != SIDE || images.dim().3 != SIDE {
        return Err(Error::Shape(format!(
            "CIFAR records hold (3, 32, 32) images, got {:?}",
            images.dim()
        )));
    }
    let mut out = Vec::with_capacity(labels.len() * (PIXELS + 1));
    for (i, &label) in labels.iter().enumerate() {
        out.push(label as u8);
        out.extend(
            images
                .index_axis(ndarray::Axis(0), i)
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
