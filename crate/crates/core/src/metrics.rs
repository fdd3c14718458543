//! Pixel-level segmentation metrics and empirical bootstrap intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor_io::Mask2;

pub const DEFAULT_N_BOOT: usize = 5000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &Mask2, gt: &Mask2) -> Result<ConfusionCounts> {
    pred.ensure_shape(gt.shape())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2·tp / (2·tp + fp + fn)`; 1.0 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// `(tp / (tp + fn), fp / (fp + tn))`, each 0 on a zero denominator.
pub fn tpr_fpr(c: &ConfusionCounts) -> (f64, f64) {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    (ratio(c.tp, c.tp + c.fn_), ratio(c.fp, c.fp + c.tn))
}

/// Mann-Whitney AUROC of `scores` against the positives of `gt`.
pub fn auroc(scores: &[f64], gt: &Mask2) -> Result<f64> {
    if scores.len() != gt.len() {
        return Err(Error::LengthMismatch(gt.len(), scores.len()));
    }
    let labels: Vec<bool> = gt.data().iter().map(|&v| v == 1).collect();
    auroc_labels(scores, &labels)
}

/// AUROC over parallel score/label slices; ties count one half.
pub fn auroc_labels(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of average ranks (1-based) of the positives.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    Median,
    Mean,
}

impl Statistic {
    fn eval_in_place(self, values: &mut [f64]) -> f64 {
        match self {
            Statistic::Median => median_in_place(values),
            Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of an empty list"));
    }
    Ok(median_in_place(&mut values.to_vec()))
}

/// Empirical percentile bootstrap interval.
///
/// Replicate `r` draws its `k`-th resample index from counter `r·n + k` of
/// `CounterRng::new(seed)`, so the result is independent of thread count.
/// Endpoints are the order statistics at `floor(a·(B−1))` and
/// `ceil((1−a)·(B−1))` of the `B` sorted replicate statistics, `a = (1−level)/2`.
pub fn bootstrap_ci(
    values: &[f64],
    n_boot: usize,
    level: f64,
    statistic: Statistic,
    seed: u64,
) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap of an empty list"));
    }
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN value".into()));
    }
    let n = values.len();
    let rng = CounterRng::new(seed);
    let mut stats: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, r| {
                let base = (r as u64) * n as u64;
                for (k, slot) in buf.iter_mut().enumerate() {
                    *slot = values[rng.index_at(base + k as u64, n)];
                }
                statistic.eval_in_place(buf)
            },
        )
        .collect();
    stats.sort_unstable_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    let last = (n_boot - 1) as f64;
    let lo = (a * last).floor() as usize;
    let hi = (((1.0 - a) * last).ceil() as usize).min(n_boot - 1);
    Ok((stats[lo], stats[hi]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AurocMode {
    /// AUROC per image, summarized by the cohort median.
    #[default]
    PerImageMedian,
    /// One AUROC over all pixels of all images.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub dice: f64,
    pub auroc: Option<f64>,
    pub tpr: f64,
    pub fpr: f64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub dice: MetricSummary,
    pub auroc: MetricSummary,
    pub tpr: MetricSummary,
    pub fpr: MetricSummary,
}

/// Cohort metric report with bootstrap intervals on the per-image medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub n_boot: usize,
    pub level: f64,
    pub auroc_mode: AurocMode,
    pub summary: SummaryTable,
    pub images: Vec<ImageMetrics>,
}

fn summarize(values: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<MetricSummary> {
    if values.is_empty() {
        return Ok(MetricSummary {
            median: None,
            ci_lo: None,
            ci_hi: None,
            n: 0,
        });
    }
    let (lo, hi) = bootstrap_ci(values, n_boot, level, Statistic::Median, seed)?;
    Ok(MetricSummary {
        median: Some(median(values)?),
        ci_lo: Some(lo),
        ci_hi: Some(hi),
        n: values.len(),
    })
}

impl MetricReport {
    /// `pooled_auroc` replaces the per-image AUROC summary when the cohort
    /// is evaluated in [`AurocMode::Pooled`].
    pub fn build(
        images: Vec<ImageMetrics>,
        n_boot: usize,
        level: f64,
        seed: u64,
        pooled_auroc: Option<f64>,
    ) -> Result<Self> {
        let col = |f: fn(&ImageMetrics) -> Option<f64>| -> Vec<f64> {
            images.iter().filter_map(f).collect()
        };
        let auroc = match pooled_auroc {
            Some(v) => MetricSummary {
                median: Some(v),
                ci_lo: None,
                ci_hi: None,
                n: images.len(),
            },
            None => summarize(&col(|m| m.auroc), n_boot, level, seed)?,
        };
        let summary = SummaryTable {
            dice: summarize(&col(|m| Some(m.dice)), n_boot, level, seed)?,
            auroc,
            tpr: summarize(&col(|m| Some(m.tpr)), n_boot, level, seed)?,
            fpr: summarize(&col(|m| Some(m.fpr)), n_boot, level, seed)?,
        };
        Ok(Self {
            seed,
            n_boot,
            level,
            auroc_mode: if pooled_auroc.is_some() {
                AurocMode::Pooled
            } else {
                AurocMode::PerImageMedian
            },
            summary,
            images,
        })
    }
}
