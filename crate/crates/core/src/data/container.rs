//! Flat little-endian container for persisting synthetic datasets.
//!
//! Layout: header of three `u32` values `{n, feature_dim, n_classes}`,
//! then `n * feature_dim` features as 32-bit floats, then `n` labels as
//! 32-bit unsigned integers. All little-endian.

use std::fs;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn save_container(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let n = ds.len() as u32;
    let dim = ds.feature_dim() as u32;
    let mut bytes = Vec::with_capacity(12 + ds.features().len() * 4 + ds.len() * 4);
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.extend_from_slice(&dim.to_le_bytes());
    bytes.extend_from_slice(&(ds.n_classes() as u32).to_le_bytes());
    for &v in ds.features().data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in ds.labels() {
        bytes.extend_from_slice(&(l as u32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let take_u32 = |pos: usize| -> Result<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
            .ok_or(Error::Format {
                offset: pos as u64,
                message: "truncated header".into(),
            })
    };
    let n = take_u32(0)? as usize;
    let dim = take_u32(4)? as usize;
    let n_classes = take_u32(8)? as usize;
    let expect = 12 + n * dim * 4 + n * 4;
    if bytes.len() != expect {
        return Err(Error::Format {
            offset: bytes.len().min(expect) as u64,
            message: format!("expected {expect} bytes for n={n} dim={dim}, got {}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(n * dim);
    let mut pos = 12;
    for _ in 0..n * dim {
        data.push(f64::from(f32::from_le_bytes(
            bytes[pos..pos + 4].try_into().unwrap(),
        )));
        pos += 4;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    LabeledDataset::new(Tensor::new(vec![n, dim], data)?, labels, n_classes)
}
