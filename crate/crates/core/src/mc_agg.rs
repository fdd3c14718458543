//! Collapsing a Monte-Carlo dropout prediction stack into a segmentation and
//! a per-pixel uncertainty map.

use crate::error::{Error, Result};
use crate::tensor_io::{Mask2, Tensor3};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_P_HI: f64 = 67.0;
pub const DEFAULT_P_LO: f64 = 33.0;

/// `T` Monte-Carlo iterations of per-pixel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    probs: Tensor3,
}

impl PredictionStack {
    pub fn new(probs: Tensor3) -> Result<Self> {
        if let Some(i) = probs.data().iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "probability {} at index {i} is outside [0, 1]",
                probs.data()[i]
            )));
        }
        Ok(Self { probs })
    }

    pub fn alpha(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        let [_, h, w] = self.probs.shape();
        (h, w)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.probs
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.alpha() == 0 {
            return Err(Error::Empty("prediction stack has no iterations"));
        }
        Ok(())
    }

    /// Per-pixel mean of the foreground probability over iterations.
    pub fn mean_probability(&self) -> Result<Vec<f64>> {
        self.per_pixel_mean(false)
    }

    fn per_pixel_mean(&self, binarize_iters: bool) -> Result<Vec<f64>> {
        self.ensure_nonempty()?;
        let (h, w) = self.shape();
        let mut sums = vec![0.0f64; h * w];
        for t in 0..self.alpha() {
            for (s, &p) in sums.iter_mut().zip(self.probs.plane(t)) {
                *s += if binarize_iters {
                    f64::from(u8::from(p > 0.5))
                } else {
                    f64::from(p)
                };
            }
        }
        let n = self.alpha() as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        Ok(sums)
    }
}

/// Per-pixel uncertainty in [0, 1] and its image mean.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    mean_uncertainty: f64,
}

impl UncertaintyMap {
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch(height * width, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "uncertainty {} at index {i} is outside [0, 1]",
                values[i]
            )));
        }
        let mean_uncertainty = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Ok(Self {
            height,
            width,
            values,
            mean_uncertainty,
        })
    }

    /// Reads a map stored as a `(1, H, W)` tensor.
    pub fn from_tensor(tensor: &Tensor3) -> Result<Self> {
        let [t, h, w] = tensor.shape();
        if t != 1 {
            return Err(Error::InvalidArgument(format!(
                "uncertainty tensor must have T = 1, found {t}"
            )));
        }
        Self::from_values(h, w, tensor.data().iter().map(|&v| f64::from(v)).collect())
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::new(
            [1, self.height, self.width],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("finite values of matching length")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean_uncertainty(&self) -> f64 {
        self.mean_uncertainty
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Hadamard product with a region mask.
    pub fn masked(&self, region: &Mask2) -> Result<UncertaintyMap> {
        region.ensure_shape(self.shape())?;
        let values = self
            .values
            .iter()
            .zip(region.data())
            .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
            .collect();
        Self::from_values(self.height, self.width, values)
    }
}

/// Final segmentation: per-pixel mean over iterations, 1 iff mean > threshold.
///
/// With `binarize_iters` each iteration contributes its class decision
/// (`p > 0.5`); otherwise the raw probability is averaged.
pub fn aggregate_prediction(
    stack: &PredictionStack,
    binarize_iters: bool,
    threshold: f64,
) -> Result<Mask2> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let means = stack.per_pixel_mean(binarize_iters)?;
    let (h, w) = stack.shape();
    Mask2::new(
        h,
        w,
        means.iter().map(|&m| u8::from(m > threshold)).collect(),
    )
}

/// Per-pixel `P_hi − P_lo` spread of the winning-class probability
/// `max(p, 1 − p)` across iterations.
pub fn uncertainty_map(stack: &PredictionStack, p_hi: f64, p_lo: f64) -> Result<UncertaintyMap> {
    if !(0.0..=100.0).contains(&p_lo) || !(0.0..=100.0).contains(&p_hi) || p_lo >= p_hi {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= p_lo < p_hi <= 100, got p_lo = {p_lo}, p_hi = {p_hi}"
        )));
    }
    stack.ensure_nonempty()?;
    let (h, w) = stack.shape();
    let alpha = stack.alpha();
    let data = stack.tensor().data();
    let hw = h * w;
    let mut samples = vec![0.0f64; alpha];
    let mut values = Vec::with_capacity(hw);
    for px in 0..hw {
        for (t, s) in samples.iter_mut().enumerate() {
            let p = f64::from(data[t * hw + px]);
            *s = p.max(1.0 - p);
        }
        samples.sort_unstable_by(f64::total_cmp);
        let spread = percentile_sorted(&samples, p_hi) - percentile_sorted(&samples, p_lo);
        values.push(spread.clamp(0.0, 1.0));
    }
    UncertaintyMap::from_values(h, w, values)
}

/// Linear-interpolation percentile over `n − 1` intervals.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("percentile of an empty sample list"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in [0, 100], got {p}"
        )));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// [`percentile`] on an already ascending, non-empty slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
    }
}
