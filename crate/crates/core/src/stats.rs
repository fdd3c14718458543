//! Linear models that predict Dice from region uncertainties, plus Spearman
//! correlation and RMSE.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::regions::{Denominator, Region, RegionUncertainties};

/// Smallest admissible singular value of the column-normalized design.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Largest `n` accepted by [`spearman_exact`].
pub const EXACT_SPEARMAN_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    /// Overall mean uncertainty.
    X0,
    /// Tumor region.
    X1,
    /// Non-tumor tissue region.
    X2,
    /// Non-tissue region.
    X3,
}

impl Predictor {
    pub const ALL: [Predictor; 4] = [Predictor::X0, Predictor::X1, Predictor::X2, Predictor::X3];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::X0 => "x0",
            Predictor::X1 => "x1",
            Predictor::X2 => "x2",
            Predictor::X3 => "x3",
        }
    }

    pub fn region(self) -> Region {
        match self {
            Predictor::X0 => Region::Overall,
            Predictor::X1 => Region::Tumor,
            Predictor::X2 => Region::NonTumor,
            Predictor::X3 => Region::NonTissue,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// `Dice ~ x1 + x2 + x3`
    #[serde(rename = "full_eq1")]
    FullEq1,
    /// `Dice ~ x1`
    #[serde(rename = "tumor_eq2i")]
    TumorEq2i,
    /// `Dice ~ x2`
    #[serde(rename = "nontumor_eq2ii")]
    NonTumorEq2ii,
    /// `Dice ~ x3`
    #[serde(rename = "nontissue_eq2iii")]
    NonTissueEq2iii,
    /// `Dice ~ x0`
    #[serde(rename = "overall_eq3")]
    OverallEq3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::FullEq1,
        ModelKind::TumorEq2i,
        ModelKind::NonTumorEq2ii,
        ModelKind::NonTissueEq2iii,
        ModelKind::OverallEq3,
    ];

    pub fn predictors(self) -> &'static [Predictor] {
        match self {
            ModelKind::FullEq1 => &[Predictor::X1, Predictor::X2, Predictor::X3],
            ModelKind::TumorEq2i => &[Predictor::X1],
            ModelKind::NonTumorEq2ii => &[Predictor::X2],
            ModelKind::NonTissueEq2iii => &[Predictor::X3],
            ModelKind::OverallEq3 => &[Predictor::X0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::FullEq1 => "full_eq1",
            ModelKind::TumorEq2i => "tumor_eq2i",
            ModelKind::NonTumorEq2ii => "nontumor_eq2ii",
            ModelKind::NonTissueEq2iii => "nontissue_eq2iii",
            ModelKind::OverallEq3 => "overall_eq3",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s:?}")))
    }
}

/// One image's Dice and its four mean uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// Absent when the record is only used for prediction.
    pub dice: Option<f64>,
    pub x0: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    /// Per predictor, whether its region had no pixels.
    pub empty: [bool; 4],
    pub denom: Denominator,
}

impl ImageRecord {
    pub fn from_regions(
        image_id: impl Into<String>,
        dice: Option<f64>,
        r: &RegionUncertainties,
    ) -> Self {
        let mut empty = [false; 4];
        for p in Predictor::ALL {
            empty[p.index()] = r.is_empty(p.region());
        }
        Self {
            image_id: image_id.into(),
            dice,
            x0: r.overall,
            x1: r.tumor,
            x2: r.non_tumor,
            x3: r.non_tissue,
            empty,
            denom: r.denom,
        }
    }

    pub fn value(&self, p: Predictor) -> f64 {
        match p {
            Predictor::X0 => self.x0,
            Predictor::X1 => self.x1,
            Predictor::X2 => self.x2,
            Predictor::X3 => self.x3,
        }
    }

    pub fn is_empty(&self, p: Predictor) -> bool {
        self.empty[p.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if let Some(d) = self.dice {
            if !in_unit(d) {
                return Err(Error::InvalidArgument(format!(
                    "{}: dice {d} outside [0, 1]",
                    self.image_id
                )));
            }
        }
        for p in Predictor::ALL {
            if !in_unit(self.value(p)) {
                return Err(Error::InvalidArgument(format!(
                    "{}: {p} = {} outside [0, 1]",
                    self.image_id,
                    self.value(p)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub intercept: f64,
    pub coefficients: BTreeMap<Predictor, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: ModelKind,
    pub intercept: f64,
    /// Every predictor of `kind`; dropped predictors are exactly 0.
    pub coefficients: BTreeMap<Predictor, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<Predictor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<StdErrors>,
    pub rmse: f64,
    /// Spearman correlation of each fitted predictor with Dice. Missing when
    /// either side has no rank variance.
    pub spearman: BTreeMap<Predictor, SpearmanResult>,
    pub n: usize,
    /// `None` for models of unknown provenance; those accept any records.
    pub denom_convention: Option<Denominator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl LinearModel {
    pub fn coefficient(&self, p: Predictor) -> Option<f64> {
        self.coefficients.get(&p).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicePrediction {
    pub raw: f64,
    pub clamped: f64,
}

/// Ordinary least squares with intercept via the normal equations.
///
/// Predictors whose region is empty in every record are left out of the
/// design and reported with coefficient 0. Columns are scaled to unit norm
/// before the rank check and the Cholesky solve.
pub fn fit_ols(records: &[ImageRecord], kind: ModelKind) -> Result<LinearModel> {
    let n = records.len();
    let denom = match records.first() {
        Some(r) => r.denom,
        None => {
            return Err(Error::InsufficientSamples {
                n: 0,
                params: 1 + kind.predictors().len(),
            })
        }
    };
    if let Some(r) = records.iter().find(|r| r.denom != denom) {
        return Err(Error::ConventionMismatch {
            model: denom.to_string(),
            records: format!("{} ({})", r.denom, r.image_id),
        });
    }
    let y: Vec<f64> = records
        .iter()
        .map(|r| r.dice.ok_or_else(|| Error::MissingDice(r.image_id.clone())))
        .collect::<Result<_>>()?;

    let (included, dropped): (Vec<Predictor>, Vec<Predictor>) = kind
        .predictors()
        .iter()
        .partition(|&&p| !records.iter().all(|r| r.is_empty(p)));
    let params = included.len() + 1;
    if n <= params {
        return Err(Error::InsufficientSamples { n, params });
    }
    for r in records {
        for &p in &included {
            if !r.value(p).is_finite() {
                return Err(Error::MissingPredictor {
                    image_id: r.image_id.clone(),
                    predictor: p.name().into(),
                });
            }
        }
    }

    let names: Vec<String> = std::iter::once("intercept".to_string())
        .chain(included.iter().map(|p| p.name().to_string()))
        .collect();
    let design = DMatrix::from_fn(n, params, |i, j| {
        if j == 0 {
            1.0
        } else {
            records[i].value(included[j - 1])
        }
    });
    let scales: Vec<f64> = design.column_iter().map(|c| c.norm()).collect();
    if let Some(j) = scales.iter().position(|&s| s == 0.0) {
        return Err(Error::RankDeficient(vec![names[j].clone()]));
    }
    let mut scaled = design.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scales[j];
    }

    let svd = scaled.clone().svd(false, true);
    let (min_idx, &min_sv) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one column");
    if min_sv < RANK_TOLERANCE {
        let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
        let null = v_t.row(min_idx);
        let involved = names
            .iter()
            .enumerate()
            .filter(|(j, _)| null[*j].abs() > 1e-3)
            .map(|(_, name)| name.clone())
            .collect();
        return Err(Error::RankDeficient(involved));
    }

    let gram = scaled.transpose() * &scaled;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(names.clone()))?;
    let y_vec = DVector::from_column_slice(&y);
    let beta_scaled = chol.solve(&(scaled.transpose() * &y_vec));
    let beta: Vec<f64> = beta_scaled
        .iter()
        .zip(&scales)
        .map(|(b, s)| b / s)
        .collect();

    let residuals = &y_vec - &design * DVector::from_column_slice(&beta);
    let sigma2 = residuals.norm_squared() / (n - params) as f64;
    let inv_gram = chol.inverse();
    let se: Vec<f64> = (0..params)
        .map(|j| (sigma2 * inv_gram[(j, j)]).sqrt() / scales[j])
        .collect();

    let mut coefficients = BTreeMap::new();
    let mut se_coefficients = BTreeMap::new();
    for (j, &p) in included.iter().enumerate() {
        coefficients.insert(p, beta[j + 1]);
        se_coefficients.insert(p, se[j + 1]);
    }
    for &p in &dropped {
        coefficients.insert(p, 0.0);
    }

    let mut spearman_map = BTreeMap::new();
    for &p in &included {
        let x: Vec<f64> = records.iter().map(|r| r.value(p)).collect();
        match spearman(&x, &y) {
            Ok(s) => {
                spearman_map.insert(p, s);
            }
            Err(Error::ConstantInput) => {}
            Err(e) => return Err(e),
        }
    }

    let mut model = LinearModel {
        kind,
        intercept: beta[0],
        coefficients,
        dropped,
        std_errors: Some(StdErrors {
            intercept: se[0],
            coefficients: se_coefficients,
        }),
        rmse: 0.0,
        spearman: spearman_map,
        n,
        denom_convention: Some(denom),
        source: None,
    };
    let predicted: Vec<f64> = records
        .iter()
        .map(|r| predict_dice(&model, r).map(|p| p.raw))
        .collect::<Result<_>>()?;
    model.rmse = rmse(&predicted, &y)?;
    Ok(model)
}

/// `intercept + Σ coefficient · x`, raw and clamped to [0, 1].
pub fn predict_dice(model: &LinearModel, record: &ImageRecord) -> Result<DicePrediction> {
    if let Some(d) = model.denom_convention {
        if d != record.denom {
            return Err(Error::ConventionMismatch {
                model: d.to_string(),
                records: record.denom.to_string(),
            });
        }
    }
    let mut raw = model.intercept;
    for &p in model.kind.predictors() {
        let coeff = model
            .coefficient(p)
            .ok_or_else(|| Error::MissingPredictor {
                image_id: format!("model {}", model.kind),
                predictor: p.name().into(),
            })?;
        let x = record.value(p);
        if !x.is_finite() {
            return Err(Error::MissingPredictor {
                image_id: record.image_id.clone(),
                predictor: p.name().into(),
            });
        }
        raw += coeff * x;
    }
    Ok(DicePrediction {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs at least 3 samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN input".into()));
    }
    Ok(())
}

/// Spearman's rho with a two-sided p-value from the t-approximation on
/// `n − 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    check_pair(x, y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    let n = x.len() as f64;
    let one_minus = 1.0 - rho * rho;
    let p = if one_minus <= f64::EPSILON {
        0.0
    } else {
        let t = rho * ((n - 2.0) / one_minus).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0).expect("n - 2 >= 1");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanResult { rho, p })
}

/// Spearman's rho with an exact two-sided permutation p-value over all `n!`
/// orderings of `y`; `n` at most [`EXACT_SPEARMAN_MAX_N`].
pub fn spearman_exact(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    check_pair(x, y)?;
    if x.len() > EXACT_SPEARMAN_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact spearman supports n <= {EXACT_SPEARMAN_MAX_N}, got {}",
            x.len()
        )));
    }
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let rho = pearson(&rx, &ry)?;
    let target = rho.abs() - 1e-12;

    // Heap's algorithm over permutations of ry.
    let n = ry.len();
    let mut c = vec![0usize; n];
    let mut total = 1u64;
    let mut extreme = u64::from(pearson(&rx, &ry)?.abs() >= target);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            total += 1;
            if pearson(&rx, &ry)?.abs() >= target {
                extreme += 1;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(SpearmanResult {
        rho,
        p: extreme as f64 / total as f64,
    })
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch(predicted.len(), actual.len()));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("rmse of empty vectors"));
    }
    let mse = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(mse.sqrt())
}

/// A published model bundled for the `predict` path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub id: String,
    pub cohort: String,
    #[serde(default)]
    pub reported_rho: Option<f64>,
    pub model: LinearModel,
}

const REFERENCE_MODELS_JSON: &str = include_str!("../data/reference_models.json");

pub fn reference_models() -> Vec<ReferenceModel> {
    serde_json::from_str(REFERENCE_MODELS_JSON).expect("bundled reference models parse")
}

pub fn reference_model(id: &str) -> Result<LinearModel> {
    reference_models()
        .into_iter()
        .find(|m| m.id == id)
        .map(|m| m.model)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown reference model {id:?}")))
}
