//! Clinical region masks (tumor, non-tumor tissue, non-tissue) and
//! region-mean uncertainty.

use std::fmt;
use std::str::FromStr;

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc_agg::UncertaintyMap;
use crate::tensor_io::Mask2;

pub const DEFAULT_WHITE_THRESHOLD: u8 = 220;

/// Tissue mask from an H&E RGB image: a pixel is background iff
/// `min(R, G, B) >= white_threshold`.
pub fn binarize_tissue(rgb: &RgbImage, white_threshold: u8) -> Mask2 {
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            u8::from(r.min(g).min(b) < white_threshold)
        })
        .collect();
    Mask2::new(h as usize, w as usize, data).expect("binary data of matching length")
}

/// [`binarize_tissue`] for an arbitrary decoded image; only 8-bit RGB is accepted.
pub fn binarize_tissue_dynamic(img: &DynamicImage, white_threshold: u8) -> Result<Mask2> {
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(binarize_tissue(rgb, white_threshold)),
        other => Err(Error::ChannelCount {
            expected: 3,
            found: other.color().channel_count(),
        }),
    }
}

/// Partition of an image into tumor, non-tumor tissue and non-tissue pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMasks {
    pub tissue: Mask2,
    pub tumor: Mask2,
    pub non_tumor: Mask2,
    pub non_tissue: Mask2,
}

impl RegionMasks {
    pub fn shape(&self) -> (usize, usize) {
        self.tissue.shape()
    }

    pub fn mask(&self, region: Region) -> Option<&Mask2> {
        match region {
            Region::Overall => None,
            Region::Tumor => Some(&self.tumor),
            Region::NonTumor => Some(&self.non_tumor),
            Region::NonTissue => Some(&self.non_tissue),
        }
    }

    pub fn counts(&self) -> RegionCounts {
        RegionCounts {
            tumor: self.tumor.count_ones(),
            non_tumor: self.non_tumor.count_ones(),
            non_tissue: self.non_tissue.count_ones(),
            total: self.tissue.len(),
        }
    }
}

/// Ground-truth tumor pixels outside the tissue mask are folded into tissue,
/// so the three regions always partition the image.
pub fn derive_regions(tissue: &Mask2, gt_tumor: &Mask2) -> Result<RegionMasks> {
    gt_tumor.ensure_shape(tissue.shape())?;
    let tissue = tissue.or(gt_tumor)?;
    let tumor = gt_tumor.clone();
    let non_tumor = tissue.difference(&tumor)?;
    let non_tissue = tissue.complement();
    Ok(RegionMasks {
        tissue,
        tumor,
        non_tumor,
        non_tissue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Overall,
    Tumor,
    NonTumor,
    NonTissue,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::Overall,
        Region::Tumor,
        Region::NonTumor,
        Region::NonTissue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Overall => "overall",
            Region::Tumor => "tumor",
            Region::NonTumor => "nontumor",
            Region::NonTissue => "nontissue",
        }
    }
}

/// Denominator of a region mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Divide the masked sum by the region's pixel count.
    #[default]
    RegionPixels,
    /// Divide by `H·W`; region values then sum to the overall mean.
    AllPixels,
}

impl Denominator {
    pub fn as_str(self) -> &'static str {
        match self {
            Denominator::RegionPixels => "region_pixels",
            Denominator::AllPixels => "all_pixels",
        }
    }
}

impl fmt::Display for Denominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Denominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "region" | "region_pixels" => Ok(Denominator::RegionPixels),
            "all" | "all_pixels" => Ok(Denominator::AllPixels),
            other => Err(Error::InvalidArgument(format!(
                "unknown denominator {other:?} (expected region or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMean {
    pub value: f64,
    pub pixel_count: usize,
}

impl RegionMean {
    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }
}

/// Mean of `region ⊙ map`. An empty region yields 0.
pub fn region_uncertainty(
    map: &UncertaintyMap,
    region: &Mask2,
    denom: Denominator,
) -> Result<RegionMean> {
    region.ensure_shape(map.shape())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&v, &m) in map.values().iter().zip(region.data()) {
        if m == 1 {
            sum += v;
            count += 1;
        }
    }
    let value = match denom {
        Denominator::RegionPixels if count == 0 => 0.0,
        Denominator::RegionPixels => sum / count as f64,
        Denominator::AllPixels if map.values().is_empty() => 0.0,
        Denominator::AllPixels => sum / map.values().len() as f64,
    };
    Ok(RegionMean {
        value,
        pixel_count: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub tumor: usize,
    pub non_tumor: usize,
    pub non_tissue: usize,
    pub total: usize,
}

/// The four predictors of one image: overall, tumor, non-tumor, non-tissue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionUncertainties {
    pub overall: f64,
    pub tumor: f64,
    pub non_tumor: f64,
    pub non_tissue: f64,
    pub counts: RegionCounts,
    pub denom: Denominator,
}

impl RegionUncertainties {
    pub fn get(&self, region: Region) -> f64 {
        match region {
            Region::Overall => self.overall,
            Region::Tumor => self.tumor,
            Region::NonTumor => self.non_tumor,
            Region::NonTissue => self.non_tissue,
        }
    }

    pub fn is_empty(&self, region: Region) -> bool {
        match region {
            Region::Overall => self.counts.total == 0,
            Region::Tumor => self.counts.tumor == 0,
            Region::NonTumor => self.counts.non_tumor == 0,
            Region::NonTissue => self.counts.non_tissue == 0,
        }
    }
}

pub fn compute_region_uncertainties(
    map: &UncertaintyMap,
    regions: &RegionMasks,
    denom: Denominator,
) -> Result<RegionUncertainties> {
    regions.tissue.ensure_shape(map.shape())?;
    let tumor = region_uncertainty(map, &regions.tumor, denom)?;
    let non_tumor = region_uncertainty(map, &regions.non_tumor, denom)?;
    let non_tissue = region_uncertainty(map, &regions.non_tissue, denom)?;
    Ok(RegionUncertainties {
        overall: map.mean_uncertainty(),
        tumor: tumor.value,
        non_tumor: non_tumor.value,
        non_tissue: non_tissue.value,
        counts: regions.counts(),
        denom,
    })
}
