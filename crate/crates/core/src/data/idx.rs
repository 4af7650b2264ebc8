use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header at byte {at}")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "expected IDX image magic {IDX_IMAGES_MAGIC}, found {magic}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "truncated IDX image payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "expected IDX label magic {IDX_LABELS_MAGIC}, found {magic}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format(format!(
            "truncated IDX label payload: need {count} bytes, have {}",
            payload.len()
        )));
    }
    Ok(payload[..count].to_vec())
}

impl IdxImages {
    /// `(count, rows, cols)` tensor with pixels mapped `0 → -1`, `255 → 1`.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.count, self.rows, self.cols], self.normalized())
    }

    fn normalized(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|&p| f64::from(p) / 127.5 - 1.0)
            .collect()
    }
}

/// Load an IDX image/label file pair as a dataset.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let imgs = parse_idx_images(&img_bytes)?;
    let lbls = parse_idx_labels(&lbl_bytes)?;
    if imgs.count != lbls.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            imgs.count,
            lbls.len()
        )));
    }
    let n_classes = lbls
        .iter()
        .copied()
        .max()
        .map_or(1, |m| usize::from(m) + 1)
        .max(10);
    let features = Tensor::matrix(imgs.count, imgs.rows * imgs.cols, imgs.normalized())?;
    Dataset::new(
        features,
        lbls.into_iter().map(usize::from).collect(),
        n_classes,
        Some((imgs.rows, imgs.cols)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn parses_two_mnist_images() {
        let payload: Vec<u8> = (0..1568).map(|i| (i % 256) as u8).collect();
        let imgs = parse_idx_images(&image_file(2, 28, 28, &payload)).unwrap();
        assert_eq!(imgs.to_tensor().unwrap().shape(), &[2, 28, 28]);
    }

    #[test]
    fn rejects_label_magic_as_images() {
        let mut bytes = image_file(1, 1, 1, &[0]);
        bytes[..4].copy_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncated_payload() {
        assert!(matches!(
            parse_idx_images(&image_file(2, 2, 2, &[0; 7])),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_idx_images(&[0, 0, 8]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn pixel_endpoints_normalize_to_unit_interval() {
        let imgs = parse_idx_images(&image_file(1, 1, 2, &[255, 0])).unwrap();
        assert_eq!(imgs.to_tensor().unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn load_pair_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, image_file(2, 2, 2, &[0, 64, 128, 255, 1, 2, 3, 4])).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[3, 7]);
        fs::write(&lp, &lbl).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), &[3, 7]);

        lbl[7] = 3;
        lbl.push(1);
        fs::write(&lp, &lbl).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
    }
}
