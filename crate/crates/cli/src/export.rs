//! Attention-map export: per-layer averaged attention as CSV and per-head
//! head-token attention over the patch grid as 8-bit binary PGM (P5),
//! min-max normalized per map.

use std::path::{Path, PathBuf};

use dhvt_core::model::{model_forward, ForwardOpts, ModelConfig};
use dhvt_core::nn::AttnCapture;
use dhvt_core::params::ParamStore;
use dhvt_core::tape::{Mode, Tape};
use dhvt_core::tensor::{Element, Tensor};

use crate::checkpoint::LoadedStore;
use crate::data::Normalization;
use crate::error::{CliError, Result};

/// Input image for the export run.
pub enum ImageSource {
    /// Constant mid-gray frame at the model resolution.
    Gray,
    /// Image file (PNG); must already match the model resolution.
    File(PathBuf),
}

impl ImageSource {
    pub fn parse(arg: &str) -> Self {
        if arg == "gray" {
            ImageSource::Gray
        } else {
            ImageSource::File(PathBuf::from(arg))
        }
    }

    fn pixels(&self, cfg: &ModelConfig, normalize: &Normalization) -> Result<Vec<f64>> {
        let (h, w) = cfg.image_size;
        match self {
            ImageSource::Gray => Ok(vec![0.5; 3 * h * w]),
            ImageSource::File(path) => {
                let img = image::open(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
                    .to_rgb8();
                if (img.height() as usize, img.width() as usize) != (h, w) {
                    return Err(CliError::Data(format!(
                        "{} is {}x{} but the model expects {h}x{w}",
                        path.display(),
                        img.height(),
                        img.width()
                    )));
                }
                let mut out = vec![0.0; 3 * h * w];
                for (x, y, p) in img.enumerate_pixels() {
                    for c in 0..3 {
                        let v = p.0[c] as f64 / 255.0;
                        out[c * h * w + y as usize * w + x as usize] =
                            (v - normalize.mean[c]) / normalize.std[c];
                    }
                }
                Ok(out)
            }
        }
    }
}

pub struct ExportOutcome {
    pub files: Vec<PathBuf>,
    pub head_maps_skipped: bool,
}

pub fn export_attention(
    cfg: &ModelConfig,
    store: &mut LoadedStore,
    image: &ImageSource,
    layers: &[usize],
    normalize: &Normalization,
    out_dir: &Path,
) -> Result<ExportOutcome> {
    for &layer in layers {
        if layer >= cfg.depth {
            return Err(CliError::Config(format!(
                "layer {layer} out of range; valid layers: 0..={}",
                cfg.depth - 1
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let pixels = image.pixels(cfg, normalize)?;
    let captures = match store {
        LoadedStore::F32(s) => capture_attention::<f32>(cfg, s, &pixels)?,
        LoadedStore::F64(s) => capture_attention::<f64>(cfg, s, &pixels)?,
    };

    let n = cfg.num_patches();
    let side = (n as f64).sqrt().round() as usize;
    let heads = cfg.num_heads;
    let mut files = Vec::new();
    for &layer in layers {
        let cap = &captures[layer];
        let t = cap.shape[2];
        // (a) head-averaged full attention matrix as CSV.
        let csv_path = out_dir.join(format!("layer_{layer}_attention.csv"));
        let mut csv = String::new();
        for i in 0..t {
            let mut row = Vec::with_capacity(t);
            for j in 0..t {
                let mut s = 0.0;
                for g in 0..heads {
                    s += cap.data[(g * t + i) * t + j];
                }
                row.push(format!("{:.10e}", s / heads as f64));
            }
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        std::fs::write(&csv_path, csv).map_err(|e| CliError::io(&csv_path, e))?;
        files.push(csv_path);

        // (b) per-head-token attention over the patch grid as PGM.
        if cfg.use_head_token && side * side == n {
            for g in 0..heads {
                let head_token_row = n + 1 + g;
                let mut map = Vec::with_capacity(n);
                for p in 0..n {
                    map.push(cap.data[(g * t + head_token_row) * t + 1 + p]);
                }
                let pgm_path = out_dir.join(format!("layer_{layer}_head_{g}.pgm"));
                write_pgm(&pgm_path, &map, side, side)?;
                files.push(pgm_path);
            }
        }
    }
    Ok(ExportOutcome {
        files,
        head_maps_skipped: !cfg.use_head_token,
    })
}

fn capture_attention<E: Element>(
    cfg: &ModelConfig,
    store: &mut ParamStore<E>,
    pixels: &[f64],
) -> Result<Vec<Capture>> {
    let (h, w) = cfg.image_size;
    let images = Tensor::new(
        vec![1, 3, h, w],
        pixels.iter().map(|&v| E::from_f64(v)).collect(),
    )
    .map_err(CliError::Core)?;
    let mut tape = Tape::new();
    tape.set_finite_checks(false);
    let out = model_forward(
        store,
        cfg,
        &images,
        Mode::Eval,
        &mut tape,
        &ForwardOpts {
            capture_attention: true,
            dropout_seed: 0,
        },
    )
    .map_err(CliError::Core)?;
    Ok(out.attention.iter().map(Capture::from_attn).collect())
}

/// Attention matrices of one block in f64, shape [heads, T, T] (batch 1).
struct Capture {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Capture {
    fn from_attn<E: Element>(cap: &AttnCapture<E>) -> Capture {
        Capture {
            shape: cap.shape[1..].to_vec(),
            data: cap.data.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Binary (P5) PGM with 8-bit depth, min-max normalized.
fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &v in values {
        let scaled = if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0u8
        };
        bytes.push(scaled);
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
