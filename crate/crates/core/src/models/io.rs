use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::diffusion::DiffusionModel;
use crate::models::gan::GanModel;
use crate::nn::Tensor;

pub const MODEL_FORMAT: &str = "dpleak-model/1";

/// A saved generative model; the `kind` field tells the two families apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelCheckpoint {
    Gan(GanModel),
    Diffusion(DiffusionModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    model: ModelCheckpoint,
}

pub fn save_model(model: &ModelCheckpoint, path: &Path) -> Result<()> {
    let env = Envelope {
        format: MODEL_FORMAT.to_string(),
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string(&env)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelCheckpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope = serde_json::from_str(&text)?;
    if env.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "unknown model format `{}`",
            env.format
        )));
    }
    Ok(env.model)
}

pub fn save_tensor(tensor: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string(tensor)?).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t: Tensor = serde_json::from_str(&text)?;
    Tensor::new(t.shape().to_vec(), t.into_data())
}

/// Tile the rows of `samples` (each an `h × w` image in `[-1, 1]`) into a
/// grayscale PNG with `cols` tiles per row and a one-pixel gutter.
pub fn write_sample_grid(
    samples: &Tensor,
    image: (usize, usize),
    cols: usize,
    path: &Path,
) -> Result<()> {
    let (h, w) = image;
    if h * w != samples.trailing() || cols == 0 {
        return Err(Error::Dimension(format!(
            "cannot tile rows of width {} as {h}x{w} images in {cols} columns",
            samples.trailing()
        )));
    }
    let n = samples.rows();
    let grid_rows = n.div_ceil(cols).max(1);
    let (width, height) = (cols * (w + 1) + 1, grid_rows * (h + 1) + 1);
    let mut pixels = vec![0u8; width * height];
    for (k, img) in samples.iter_rows().enumerate() {
        let (top, left) = (1 + (k / cols) * (h + 1), 1 + (k % cols) * (w + 1));
        for r in 0..h {
            for c in 0..w {
                let v = ((img[r * w + c].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
                pixels[(top + r) * width + left + c] = v;
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiffusionConfig, GanConfig};

    #[test]
    fn checkpoints_round_trip_with_kind_header() {
        let dir = tempfile::tempdir().unwrap();
        let gan = GanModel::init(
            &GanConfig {
                gen_hidden: vec![4],
                disc_hidden: vec![4],
                ..GanConfig::default()
            },
            3,
            2,
            9,
        )
        .unwrap();
        let diff = DiffusionModel::init(
            &DiffusionConfig {
                hidden: vec![4],
                ..DiffusionConfig::default()
            },
            3,
            2,
            9,
        )
        .unwrap();
        for (name, m) in [
            ("g.json", ModelCheckpoint::Gan(gan)),
            ("d.json", ModelCheckpoint::Diffusion(diff)),
        ] {
            let p = dir.path().join(name);
            save_model(&m, &p).unwrap();
            assert_eq!(load_model(&p).unwrap(), m);
            let text = fs::read_to_string(&p).unwrap();
            assert!(text.contains("\"kind\":"));
        }
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"format":"other","model":{"kind":"gan"}}"#).unwrap();
        assert!(load_model(&bad).is_err());
    }

    #[test]
    fn grid_png_decodes_to_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.png");
        let samples =
            Tensor::matrix(5, 4, (0..20).map(|i| i as f64 / 10.0 - 1.0).collect()).unwrap();
        write_sample_grid(&samples, (2, 2), 3, &p).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&p).unwrap()));
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        assert_eq!((info.width, info.height), (3 * 3 + 1, 2 * 3 + 1));
        assert!(write_sample_grid(&samples, (3, 2), 3, &p).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let t = Tensor::matrix(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]).unwrap();
        save_tensor(&t, &p).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
    }
}
