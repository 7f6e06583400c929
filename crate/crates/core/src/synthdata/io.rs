//! Dataset directory format:
//!
//! * `manifest.json` — format_version, shape fields, file names, spec echo;
//! * `images.f32`   — raw little-endian f32, row-major `[num][h][w]`;
//! * `masks.u8`     — raw bytes in {0,1}, `[num][annotators][h][w]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

use super::{AnnotatedExample, Dataset, DatasetSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    height: usize,
    width: usize,
    num_examples: usize,
    num_annotators: usize,
    image_file: String,
    mask_file: String,
    spec: DatasetSpec,
}

/// Write a dataset directory (created if missing).
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let side = dataset.side();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        height: side,
        width: side,
        num_examples: dataset.len(),
        num_annotators: dataset.spec.num_annotators,
        image_file: "images.f32".into(),
        mask_file: "masks.u8".into(),
        spec: dataset.spec.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let mut image_bytes = Vec::with_capacity(dataset.len() * side * side * 4);
    for ex in &dataset.examples {
        for v in &ex.image {
            image_bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(&manifest.image_file), image_bytes)?;

    let mut mask_bytes = Vec::with_capacity(dataset.len() * manifest.num_annotators * side * side);
    for ex in &dataset.examples {
        for m in &ex.masks {
            mask_bytes.extend_from_slice(&m.data);
        }
    }
    fs::write(dir.join(&manifest.mask_file), mask_bytes)?;
    Ok(())
}

fn read_exact_len(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.len() as u64 != expected {
        return Err(Error::TruncatedData {
            file: path.display().to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

/// Read a dataset directory back; `load(save(d)) == d` exactly.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::ManifestError(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::ManifestError(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::ManifestError(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    if manifest.num_examples == 0 {
        return Err(Error::ManifestError("dataset is empty".into()));
    }
    let (h, w) = (manifest.height, manifest.width);
    let pixels = h * w;

    let image_bytes = read_exact_len(
        &dir.join(&manifest.image_file),
        (manifest.num_examples * pixels * 4) as u64,
    )?;
    let mask_bytes = read_exact_len(
        &dir.join(&manifest.mask_file),
        (manifest.num_examples * manifest.num_annotators * pixels) as u64,
    )?;
    if manifest.height != manifest.spec.side
        || manifest.width != manifest.spec.side
        || manifest.num_annotators != manifest.spec.num_annotators
        || manifest.num_examples != manifest.spec.num_examples
    {
        return Err(Error::DatasetShape(
            "manifest fields disagree with the spec echo".into(),
        ));
    }

    let mut examples = Vec::with_capacity(manifest.num_examples);
    for idx in 0..manifest.num_examples {
        let mut image = Vec::with_capacity(pixels);
        let base = idx * pixels * 4;
        for p in 0..pixels {
            let off = base + p * 4;
            image.push(f32::from_le_bytes([
                image_bytes[off],
                image_bytes[off + 1],
                image_bytes[off + 2],
                image_bytes[off + 3],
            ]));
        }
        let mut masks = Vec::with_capacity(manifest.num_annotators);
        for a in 0..manifest.num_annotators {
            let start = (idx * manifest.num_annotators + a) * pixels;
            let data = mask_bytes[start..start + pixels].to_vec();
            masks.push(
                Mask::new(h, w, data)
                    .map_err(|_| Error::DatasetShape(format!("mask {idx}/{a} has non-binary bytes")))?,
            );
        }
        examples.push(AnnotatedExample { image, masks });
    }
    Ok(Dataset {
        spec: manifest.spec,
        examples,
    })
}
