//! Resampling, brain masking and intensity standardization of input images.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use lesionbench_core::{
    apply_mask, read_mask, read_scalar_volume, resample_labels, resample_scalars, standardize_intensities,
    write_scalar_volume, BrainMask, LabelVolume, ScalarVolume,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct PreprocessRequest {
    pub case_id: String,
    pub images: Vec<PathBuf>,
    /// Brain mask on the grid of the images; the whole field of view when absent.
    pub mask: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub spacing_mm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Sidecar written next to the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub case_id: String,
    pub spacing_mm: f64,
    pub steps: Vec<&'static str>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub created_unix_s: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn resample_mask(mask: &BrainMask, spacing: [f64; 3]) -> Result<BrainMask> {
    let labels: Vec<u16> = mask.inside().iter().map(|&b| b as u16).collect();
    let lv = LabelVolume::from_labels(mask.grid().clone(), labels)?;
    Ok(BrainMask::from_labels(&resample_labels(&lv, spacing)?))
}

/// Resample → mask → standardize on one image. Background stays 0.
pub fn preprocess_image(image: &ScalarVolume, mask: Option<&BrainMask>, spacing_mm: f64) -> Result<ScalarVolume> {
    let spacing = [spacing_mm; 3];
    let resampled = resample_scalars(image, spacing)?;
    let mask = match mask {
        Some(m) => {
            image.grid().ensure_same_dims(m.grid())?;
            resample_mask(m, spacing)?
        }
        None => BrainMask::full(resampled.grid().clone()),
    };
    let masked = apply_mask(&resampled, &mask, 0.0)?;
    let standardized = standardize_intensities(&masked, &mask)?;
    Ok(apply_mask(&standardized, &mask, 0.0)?)
}

fn output_name(input: &Path) -> String {
    let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name
        .strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(&name);
    format!("{stem}_preproc.nii.gz")
}

/// Preprocesses every image of a case and writes the outputs plus a
/// `<case_id>_provenance.json` sidecar. Returns the output paths.
pub fn run_preprocess(req: &PreprocessRequest) -> Result<Vec<PathBuf>> {
    let case = &req.case_id;
    let mask = req
        .mask
        .as_ref()
        .map(|p| read_mask(p).with_context(|| format!("case {case}: reading mask {}", p.display())))
        .transpose()?;
    std::fs::create_dir_all(&req.output_dir)
        .with_context(|| format!("creating {}", req.output_dir.display()))?;

    let mut outputs = Vec::new();
    let mut inputs = Vec::new();
    for path in &req.images {
        let image = read_scalar_volume(path).with_context(|| format!("case {case}: reading {}", path.display()))?;
        let out = preprocess_image(&image, mask.as_ref(), req.spacing_mm)
            .with_context(|| format!("case {case}: preprocessing {}", path.display()))?;
        let out_path = req.output_dir.join(output_name(path));
        write_scalar_volume(&out, &out_path).with_context(|| format!("writing {}", out_path.display()))?;
        inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        outputs.push(out_path);
    }
    if let Some(p) = &req.mask {
        inputs.push(InputRecord {
            path: p.display().to_string(),
            sha256: sha256_file(p)?,
        });
    }

    let sidecar = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        case_id: case.clone(),
        spacing_mm: req.spacing_mm,
        steps: vec!["resample", "apply_mask", "standardize_intensities"],
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let sidecar_path = req.output_dir.join(format!("{case}_provenance.json"));
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)
        .with_context(|| format!("writing {}", sidecar_path.display()))?;
    Ok(outputs)
}
