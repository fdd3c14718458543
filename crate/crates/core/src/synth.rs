//! Deterministic geometric phantoms: an elliptical tissue section with disk
//! tumors, and an MC stack whose per-iteration logits carry Gaussian noise
//! scaled per region.
//!
//! The noise for pixel `i` at iteration `j` is
//! `CounterRng::new(seed).normal_at(i·alpha + j)`, so generation order does
//! not affect the output.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc_agg::{aggregate_prediction, PredictionStack, DEFAULT_THRESHOLD};
use crate::metrics::{confusion, dice};
use crate::regions::RegionMasks;
use crate::rng::{hash_str, CounterRng};
use crate::tensor_io::{
    write_mask, write_rgb, write_tensor, Manifest, ManifestEntry, Mask2, Tensor3,
};

/// Noiseless logit magnitude; `sigmoid(4) ≈ 0.982` clears the 0.95 threshold.
pub const BASE_LOGIT: f64 = 4.0;

/// Default per-region logit noise for tumor, non-tumor tissue and non-tissue.
pub const DEFAULT_SIGMAS: [f64; 3] = [1.5, 1.0, 0.5];
/// Default largest multiplier of the cohort's linear noise sweep.
pub const DEFAULT_SWEEP_MAX: f64 = 1.6;

pub const BACKGROUND_RGB: [u8; 3] = [243, 241, 245];
pub const TISSUE_RGB: [u8; 3] = [226, 155, 190];
pub const TUMOR_RGB: [u8; 3] = [172, 96, 160];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cy: f64,
    pub cx: f64,
    pub r: f64,
}

impl Disk {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        dy * dy + dx * dx <= self.r * self.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub tissue: Ellipse,
    pub tumor_blobs: Vec<Disk>,
    pub sigma_tumor: f64,
    pub sigma_non_tumor: f64,
    pub sigma_non_tissue: f64,
    pub alpha: usize,
    /// Pixels within this Chebyshev distance of another region take the
    /// largest sigma among the regions they see.
    pub boundary_band: usize,
}

impl PhantomSpec {
    /// Centered ellipse with two tumor disks, noiseless.
    pub fn standard(seed: u64, height: usize, width: usize, alpha: usize) -> Self {
        let (h, w) = (height as f64, width as f64);
        let m = h.min(w);
        Self {
            seed,
            height,
            width,
            tissue: Ellipse {
                cy: h / 2.0,
                cx: w / 2.0,
                ry: 0.38 * h,
                rx: 0.42 * w,
            },
            tumor_blobs: vec![
                Disk {
                    cy: 0.44 * h,
                    cx: 0.40 * w,
                    r: 0.12 * m,
                },
                Disk {
                    cy: 0.60 * h,
                    cx: 0.63 * w,
                    r: 0.09 * m,
                },
            ],
            sigma_tumor: 0.0,
            sigma_non_tumor: 0.0,
            sigma_non_tissue: 0.0,
            alpha,
            boundary_band: 1,
        }
    }

    pub fn with_sigmas(mut self, tumor: f64, non_tumor: f64, non_tissue: f64) -> Self {
        self.sigma_tumor = tumor;
        self.sigma_non_tumor = non_tumor;
        self.sigma_non_tissue = non_tissue;
        self
    }

    pub fn tumor_free(mut self) -> Self {
        self.tumor_blobs.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(
                "phantom size must be positive".into(),
            ));
        }
        if self.alpha == 0 {
            return Err(Error::InvalidArgument("alpha must be at least 1".into()));
        }
        for s in [
            self.sigma_tumor,
            self.sigma_non_tumor,
            self.sigma_non_tissue,
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "noise levels must be finite and non-negative, got {s}"
                )));
            }
        }
        if !(self.tissue.ry > 0.0 && self.tissue.rx > 0.0) {
            return Err(Error::InvalidArgument(
                "tissue ellipse axes must be positive".into(),
            ));
        }
        for (i, blob) in self.tumor_blobs.iter().enumerate() {
            if blob.r.is_nan() || blob.r <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "tumor blob {i} has non-positive radius"
                )));
            }
            let (y0, y1) = pixel_span(blob.cy, blob.r, self.height);
            let (x0, x1) = pixel_span(blob.cx, blob.r, self.width);
            let outside = (y0..y1).any(|y| {
                (x0..x1).any(|x| {
                    let (fy, fx) = (y as f64, x as f64);
                    blob.contains(fy, fx) && !self.tissue.contains(fy, fx)
                })
            });
            let off_image = blob.cy - blob.r < 0.0
                || blob.cx - blob.r < 0.0
                || blob.cy + blob.r > (self.height - 1) as f64
                || blob.cx + blob.r > (self.width - 1) as f64;
            if outside || off_image {
                return Err(Error::InvalidArgument(format!(
                    "tumor blob {i} extends outside the tissue ellipse"
                )));
            }
        }
        Ok(())
    }
}

fn pixel_span(center: f64, r: f64, len: usize) -> (usize, usize) {
    let lo = (center - r).floor().max(0.0) as usize;
    let hi = ((center + r).ceil() + 1.0).clamp(0.0, len as f64) as usize;
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct PhantomTruth {
    pub rgb: RgbImage,
    pub gt: Mask2,
    pub regions: RegionMasks,
    /// Noiseless logit per pixel: `+BASE_LOGIT` inside tumor, `-BASE_LOGIT` elsewhere.
    pub logit_field: Vec<f64>,
    /// Per-pixel noise level after boundary widening.
    pub sigma_field: Vec<f64>,
}

const TUMOR: u8 = 0;
const NON_TUMOR: u8 = 1;
const NON_TISSUE: u8 = 2;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(PhantomTruth, PredictionStack)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let tissue = Mask2::from_fn(h, w, |y, x| spec.tissue.contains(y as f64, x as f64));
    let gt = Mask2::from_fn(h, w, |y, x| {
        spec.tumor_blobs
            .iter()
            .any(|b| b.contains(y as f64, x as f64))
    });
    let regions = RegionMasks {
        non_tumor: tissue.difference(&gt)?,
        non_tissue: tissue.complement(),
        tumor: gt.clone(),
        tissue,
    };

    let labels: Vec<u8> = (0..h * w)
        .map(|i| {
            if regions.tumor.data()[i] == 1 {
                TUMOR
            } else if regions.non_tumor.data()[i] == 1 {
                NON_TUMOR
            } else {
                NON_TISSUE
            }
        })
        .collect();
    let sigma_of = |label: u8| match label {
        TUMOR => spec.sigma_tumor,
        NON_TUMOR => spec.sigma_non_tumor,
        _ => spec.sigma_non_tissue,
    };
    let band = spec.boundary_band;
    let sigma_field: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let mut s = sigma_of(labels[i]);
            for yy in y.saturating_sub(band)..(y + band + 1).min(h) {
                for xx in x.saturating_sub(band)..(x + band + 1).min(w) {
                    s = s.max(sigma_of(labels[yy * w + xx]));
                }
            }
            s
        })
        .collect();
    let logit_field: Vec<f64> = labels
        .iter()
        .map(|&l| if l == TUMOR { BASE_LOGIT } else { -BASE_LOGIT })
        .collect();

    let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(match labels[y as usize * w + x as usize] {
            TUMOR => TUMOR_RGB,
            NON_TUMOR => TISSUE_RGB,
            _ => BACKGROUND_RGB,
        })
    });

    let rng = CounterRng::new(spec.seed);
    let hw = h * w;
    let alpha = spec.alpha as u64;
    let mut data = vec![0.0f32; spec.alpha * hw];
    data.par_chunks_mut(hw).enumerate().for_each(|(t, plane)| {
        for (i, v) in plane.iter_mut().enumerate() {
            let sigma = sigma_field[i];
            let noise = if sigma > 0.0 {
                sigma * rng.normal_at(i as u64 * alpha + t as u64)
            } else {
                0.0
            };
            *v = sigmoid(logit_field[i] + noise) as f32;
        }
    });
    let stack = PredictionStack::new(Tensor3::new([spec.alpha, h, w], data)?)?;

    Ok((
        PhantomTruth {
            rgb,
            gt,
            regions,
            logit_field,
            sigma_field,
        },
        stack,
    ))
}

/// Seed of image `image_id` in a cohort generated from `base_seed`.
pub fn image_seed(base_seed: u64, image_id: &str) -> u64 {
    CounterRng::new(base_seed)
        .substream(hash_str(image_id))
        .key()
}

pub fn cohort_image_id(index: usize) -> String {
    format!("img{index:03}")
}

/// One spec per sweep multiplier; each region sigma is scaled by the
/// multiplier and each image gets its own derived seed.
pub fn cohort_specs(
    base: &PhantomSpec,
    n_images: usize,
    sweep: &[f64],
) -> Result<Vec<(String, PhantomSpec)>> {
    if sweep.len() != n_images {
        return Err(Error::InvalidArgument(format!(
            "sweep has {} multipliers for {n_images} images",
            sweep.len()
        )));
    }
    sweep
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sweep multiplier {m} must be finite and non-negative"
                )));
            }
            let id = cohort_image_id(i);
            let spec = PhantomSpec {
                seed: image_seed(base.seed, &id),
                sigma_tumor: base.sigma_tumor * m,
                sigma_non_tumor: base.sigma_non_tumor * m,
                sigma_non_tissue: base.sigma_non_tissue * m,
                ..base.clone()
            };
            Ok((id, spec))
        })
        .collect()
}

/// Evenly spaced multipliers from 0 to `max` inclusive.
pub fn linear_sweep(n_images: usize, max: f64) -> Vec<f64> {
    match n_images {
        0 => vec![],
        1 => vec![max],
        n => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub image_id: String,
    #[serde(rename = "sigma_T")]
    pub sigma_t: f64,
    #[serde(rename = "sigma_NT")]
    pub sigma_nt: f64,
    #[serde(rename = "sigma_NTi")]
    pub sigma_nti: f64,
    pub true_dice_after_aggregation: f64,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub manifest: Manifest,
    pub truth: Vec<TruthRow>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.csv";

/// Writes `<id>_stack.runc`, `<id>_rgb.png`, `<id>_gt.png` per image plus
/// `manifest.json` and `truth.csv` into `out_dir`.
pub fn generate_cohort(
    base: &PhantomSpec,
    n_images: usize,
    sweep: &[f64],
    out_dir: impl AsRef<Path>,
) -> Result<Cohort> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let specs = cohort_specs(base, n_images, sweep)?;
    let rows: Vec<(ManifestEntry, TruthRow)> = specs
        .par_iter()
        .map(|(id, spec)| {
            let (truth, stack) = generate_phantom(spec)?;
            let pred = aggregate_prediction(&stack, true, DEFAULT_THRESHOLD)?;
            let true_dice = dice(&confusion(&pred, &truth.gt)?);
            let entry = ManifestEntry {
                image_id: id.clone(),
                stack_path: PathBuf::from(format!("{id}_stack.runc")),
                rgb_path: Some(PathBuf::from(format!("{id}_rgb.png"))),
                gt_path: PathBuf::from(format!("{id}_gt.png")),
                has_tumor: !spec.tumor_blobs.is_empty(),
            };
            write_tensor(out_dir.join(&entry.stack_path), stack.tensor())?;
            write_rgb(out_dir.join(entry.rgb_path.as_ref().unwrap()), &truth.rgb)?;
            write_mask(out_dir.join(&entry.gt_path), &truth.gt)?;
            Ok((
                entry,
                TruthRow {
                    image_id: id.clone(),
                    sigma_t: spec.sigma_tumor,
                    sigma_nt: spec.sigma_non_tumor,
                    sigma_nti: spec.sigma_non_tissue,
                    true_dice_after_aggregation: true_dice,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (entries, truth): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let manifest = Manifest::new(entries, out_dir)?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;

    let truth_path = out_dir.join(TRUTH_FILE);
    let mut w = csv::Writer::from_path(&truth_path)?;
    for row in &truth {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&truth_path, e))?;
    Ok(Cohort { manifest, truth })
}
