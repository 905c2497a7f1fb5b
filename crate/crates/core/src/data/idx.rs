//! IDX binary format reader (MNIST-style image/label files).

use std::fs;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader {
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, count: usize, what: &str) -> Result<&[u8]> {
        if self.pos + count > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated {what}: expected {} bytes, file ends at {}",
                    self.pos + count,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + count];
        self.pos += count;
        Ok(s)
    }
}

fn open(path: &Path) -> Result<Reader> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(Reader { bytes, pos: 0 })
}

/// Load an IDX image/label file pair into a labeled dataset.
///
/// Pixels are scaled to `[0, 1]`; the label count must match the image
/// count. Malformed files fail with the byte offset of the problem.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut img = open(images_path)?;
    let magic = img.u32_be("images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = img.u32_be("image count")? as usize;
    let rows = img.u32_be("row count")? as usize;
    let cols = img.u32_be("column count")? as usize;
    let pixels = img.payload(n * rows * cols, "pixel data")?;
    let data: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();

    let mut lab = open(labels_path)?;
    let magic = lab.u32_be("labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = lab.u32_be("label count")? as usize;
    if n_labels != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {n_labels} labels"),
        });
    }
    let raw = lab.payload(n_labels, "label data")?;
    let labels: Vec<usize> = raw.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(1, |&m| m + 1);

    LabeledDataset::new(
        Tensor::new(vec![n, rows * cols], data)?,
        labels,
        n_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(bytes).unwrap();
        p
    }

    fn images_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&n.to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn hand_built_fixture_round_trips() {
        // 3 images of 2x2, bytes chosen so scaling is exact.
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 51, 102, 255, 0, 204, 153, 10, 20, 30, 40];
        let img = write_file(dir.path(), "img", &images_bytes(3, 2, 2, &pixels));
        let lab = write_file(dir.path(), "lab", &labels_bytes(&[2, 0, 1]));
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_classes(), 3);
        assert_eq!(ds.labels(), &[2, 0, 1]);
        let expect: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
        assert_eq!(ds.features().data(), expect.as_slice());
    }

    #[test]
    fn wrong_labels_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_file(dir.path(), "img", &images_bytes(1, 1, 1, &[7]));
        let mut bad = labels_bytes(&[0]);
        bad[3] = 0x99;
        let lab = write_file(dir.path(), "lab", &bad);
        match load_idx(&img, &lab) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_pixel_data_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        // 2 images of 2x2 need 8 pixel bytes; only 3 are present.
        let bytes = images_bytes(2, 2, 2, &[1, 2, 3]);
        let img = write_file(dir.path(), "img", &bytes);
        let lab = write_file(dir.path(), "lab", &labels_bytes(&[0, 0]));
        match load_idx(&img, &lab) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_file(dir.path(), "img", &images_bytes(2, 1, 1, &[1, 2]));
        let lab = write_file(dir.path(), "lab", &labels_bytes(&[0]));
        assert!(matches!(load_idx(&img, &lab), Err(Error::Format { .. })));
    }
}
