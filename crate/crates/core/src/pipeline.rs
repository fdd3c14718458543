//! Manifest-driven batch processing behind the `roi-unc` commands.
//!
//! Images are processed in parallel (bounded by `jobs`), but every summary is
//! assembled in manifest order, so reruns produce byte-identical files.
//! A failure on one image is recorded and the rest of the cohort continues.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc_agg::{
    aggregate_prediction, uncertainty_map, PredictionStack, UncertaintyMap, DEFAULT_P_HI,
    DEFAULT_P_LO, DEFAULT_THRESHOLD,
};
use crate::metrics::{
    auroc, auroc_labels, confusion, dice, tpr_fpr, AurocMode, ConfusionCounts, ImageMetrics,
    MetricReport, DEFAULT_LEVEL, DEFAULT_N_BOOT,
};
use crate::regions::{
    binarize_tissue, compute_region_uncertainties, derive_regions, Denominator, Region,
    RegionMasks, RegionUncertainties, DEFAULT_WHITE_THRESHOLD,
};
use crate::stats::{fit_ols, predict_dice, rmse, ImageRecord, LinearModel, ModelKind, Predictor};
use crate::tensor_io::{
    read_mask, read_rgb, read_tensor, write_heatmap, write_mask, write_tensor, Manifest,
    ManifestEntry, Mask2,
};

pub const AGGREGATE_SUMMARY: &str = "aggregate_summary.json";
pub const REGIONS_SUMMARY: &str = "regions_summary.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const FIT_REPORT: &str = "fit_report.md";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Smallest heatmap scale, used when a map is all zero.
pub const VMAX_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub output_dir: PathBuf,
    pub threshold: f64,
    pub binarize_iters: bool,
    pub p_hi: f64,
    pub p_lo: f64,
    pub denom: Denominator,
    pub white_threshold: u8,
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub models: Vec<ModelKind>,
    pub auroc_mode: AurocMode,
}

impl RunConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest_path: manifest_path.into(),
            output_dir: output_dir.into(),
            threshold: DEFAULT_THRESHOLD,
            binarize_iters: true,
            p_hi: DEFAULT_P_HI,
            p_lo: DEFAULT_P_LO,
            denom: Denominator::RegionPixels,
            white_threshold: DEFAULT_WHITE_THRESHOLD,
            n_boot: DEFAULT_N_BOOT,
            level: DEFAULT_LEVEL,
            seed: 0,
            jobs: 0,
            models: ModelKind::ALL.to_vec(),
            auroc_mode: AurocMode::PerImageMedian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(0.0 <= self.p_lo && self.p_lo < self.p_hi && self.p_hi <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "percentiles must satisfy 0 <= p_lo < p_hi <= 100, got {} and {}",
                self.p_lo, self.p_hi
            )));
        }
        if self.n_boot == 0 {
            return Err(Error::InvalidArgument("n_boot must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }

    fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageError {
    pub image_id: String,
    pub error: String,
}

/// Everything computed for one image.
#[derive(Debug, Clone)]
pub struct ImageAnalysis {
    pub image_id: String,
    pub prediction: Mask2,
    pub mean_probability: Vec<f64>,
    pub uncertainty: UncertaintyMap,
    pub gt: Mask2,
    pub regions: RegionMasks,
    pub region_uncertainty: RegionUncertainties,
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// `None` when the ground truth has a single class.
    pub auroc: Option<f64>,
}

impl ImageAnalysis {
    pub fn record(&self) -> ImageRecord {
        ImageRecord::from_regions(
            self.image_id.clone(),
            Some(self.dice),
            &self.region_uncertainty,
        )
    }

    pub fn metrics(&self) -> ImageMetrics {
        ImageMetrics {
            image_id: self.image_id.clone(),
            dice: self.dice,
            auroc: self.auroc,
            tpr: self.tpr,
            fpr: self.fpr,
            counts: self.counts,
        }
    }
}

fn load_stack(manifest: &Manifest, entry: &ManifestEntry) -> Result<PredictionStack> {
    PredictionStack::new(read_tensor(manifest.resolve(&entry.stack_path))?)
}

fn check_files(manifest: &Manifest, entry: &ManifestEntry) -> Result<()> {
    let missing = manifest.missing_files(entry);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Manifest(format!(
            "missing {}",
            missing
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

/// Segmentation and uncertainty map from the stack alone.
pub fn aggregate_entry(
    manifest: &Manifest,
    entry: &ManifestEntry,
    cfg: &RunConfig,
) -> Result<(Mask2, UncertaintyMap)> {
    let stack_path = manifest.resolve(&entry.stack_path);
    if !stack_path.is_file() {
        return Err(Error::Manifest(format!("missing {}", stack_path.display())));
    }
    let stack = load_stack(manifest, entry)?;
    Ok((
        aggregate_prediction(&stack, cfg.binarize_iters, cfg.threshold)?,
        uncertainty_map(&stack, cfg.p_hi, cfg.p_lo)?,
    ))
}

/// Region masks from the RGB image and ground truth. Without an RGB image
/// the whole frame is treated as tissue.
pub fn entry_regions(
    manifest: &Manifest,
    entry: &ManifestEntry,
    cfg: &RunConfig,
    shape: (usize, usize),
) -> Result<(Mask2, RegionMasks)> {
    let gt = read_mask(manifest.resolve(&entry.gt_path))?;
    gt.ensure_shape(shape)?;
    if entry.has_tumor != (gt.count_ones() > 0) {
        warn!(
            "{}: has_tumor = {} disagrees with the ground-truth mask",
            entry.image_id, entry.has_tumor
        );
    }
    let tissue = match &entry.rgb_path {
        Some(p) => {
            let t = binarize_tissue(&read_rgb(manifest.resolve(p))?, cfg.white_threshold);
            t.ensure_shape(shape)?;
            t
        }
        None => Mask2::filled(shape.0, shape.1, true),
    };
    let regions = derive_regions(&tissue, &gt)?;
    Ok((gt, regions))
}

pub fn analyze_image(
    manifest: &Manifest,
    entry: &ManifestEntry,
    cfg: &RunConfig,
) -> Result<ImageAnalysis> {
    check_files(manifest, entry)?;
    let stack = load_stack(manifest, entry)?;
    let prediction = aggregate_prediction(&stack, cfg.binarize_iters, cfg.threshold)?;
    let uncertainty = uncertainty_map(&stack, cfg.p_hi, cfg.p_lo)?;
    let mean_probability = stack.mean_probability()?;
    let (gt, regions) = entry_regions(manifest, entry, cfg, stack.shape())?;
    let region_uncertainty = compute_region_uncertainties(&uncertainty, &regions, cfg.denom)?;
    let counts = confusion(&prediction, &gt)?;
    let (tpr, fpr) = tpr_fpr(&counts);
    let auroc = match auroc(&mean_probability, &gt) {
        Ok(v) => Some(v),
        Err(Error::AurocUndefined) => None,
        Err(e) => return Err(e),
    };
    Ok(ImageAnalysis {
        image_id: entry.image_id.clone(),
        prediction,
        mean_probability,
        uncertainty,
        gt,
        regions,
        region_uncertainty,
        counts,
        dice: dice(&counts),
        tpr,
        fpr,
        auroc,
    })
}

/// Runs `f` over every manifest entry on a pool of `cfg.jobs` threads and
/// returns the results in manifest order.
pub fn for_each_image<T, F>(
    manifest: &Manifest,
    cfg: &RunConfig,
    f: F,
) -> Result<Vec<(String, Result<T>)>>
where
    T: Send,
    F: Fn(&ManifestEntry) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| (e.image_id.clone(), f(e)))
            .collect()
    }))
}

fn split_results<T>(results: Vec<(String, Result<T>)>) -> (Vec<T>, Vec<ImageError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                warn!("{id}: {e}");
                errors.push(ImageError {
                    image_id: id,
                    error: e.to_string(),
                });
            }
        }
    }
    (ok, errors)
}

fn prepare(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest_path)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn unc_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}_unc.runc"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateImage {
    pub image_id: String,
    pub mean_uncertainty: f64,
    pub predicted_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub threshold: f64,
    pub binarize_iters: bool,
    pub p_hi: f64,
    pub p_lo: f64,
    pub images: Vec<AggregateImage>,
    pub errors: Vec<ImageError>,
}

/// Writes `<id>_pred.png`, `<id>_unc.runc` and `aggregate_summary.json`.
pub fn cmd_aggregate(cfg: &RunConfig) -> Result<Vec<ImageError>> {
    let manifest = prepare(cfg)?;
    let results = for_each_image(&manifest, cfg, |entry| {
        let (pred, unc) = aggregate_entry(&manifest, entry, cfg)?;
        write_mask(cfg.out(format!("{}_pred.png", entry.image_id)), &pred)?;
        write_tensor(unc_path(&cfg.output_dir, &entry.image_id), &unc.to_tensor())?;
        Ok(AggregateImage {
            image_id: entry.image_id.clone(),
            mean_uncertainty: unc.mean_uncertainty(),
            predicted_pixels: pred.count_ones(),
        })
    })?;
    let (images, errors) = split_results(results);
    info!(
        "aggregate: {} images, {} errors",
        images.len(),
        errors.len()
    );
    write_json(
        cfg.out(AGGREGATE_SUMMARY),
        &AggregateSummary {
            threshold: cfg.threshold,
            binarize_iters: cfg.binarize_iters,
            p_hi: cfg.p_hi,
            p_lo: cfg.p_lo,
            images,
            errors: errors.clone(),
        },
    )?;
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsImage {
    pub image_id: String,
    pub dice: f64,
    #[serde(flatten)]
    pub uncertainty: RegionUncertainties,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsSummary {
    pub denom: Denominator,
    pub white_threshold: u8,
    pub images: Vec<RegionsImage>,
    pub errors: Vec<ImageError>,
}

/// Writes the four region masks per image, `records.csv` and
/// `regions_summary.json`.
pub fn cmd_regions(cfg: &RunConfig) -> Result<Vec<ImageError>> {
    let manifest = prepare(cfg)?;
    let results = for_each_image(&manifest, cfg, |entry| {
        let a = analyze_image(&manifest, entry, cfg)?;
        let id = &entry.image_id;
        write_mask(cfg.out(format!("{id}_tissue.png")), &a.regions.tissue)?;
        write_mask(cfg.out(format!("{id}_tumor.png")), &a.regions.tumor)?;
        write_mask(cfg.out(format!("{id}_nontumor.png")), &a.regions.non_tumor)?;
        write_mask(
            cfg.out(format!("{id}_nontissue.png")),
            &a.regions.non_tissue,
        )?;
        Ok((
            a.record(),
            RegionsImage {
                image_id: id.clone(),
                dice: a.dice,
                uncertainty: a.region_uncertainty,
            },
        ))
    })?;
    let (ok, errors) = split_results(results);
    let (records, images): (Vec<_>, Vec<_>) = ok.into_iter().unzip();
    write_records(cfg.out(RECORDS_FILE), &records)?;
    write_json(
        cfg.out(REGIONS_SUMMARY),
        &RegionsSummary {
            denom: cfg.denom,
            white_threshold: cfg.white_threshold,
            images,
            errors: errors.clone(),
        },
    )?;
    info!(
        "regions: {} records, {} errors",
        records.len(),
        errors.len()
    );
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(flatten)]
    pub report: MetricReport,
    pub errors: Vec<ImageError>,
}

/// Writes `metrics.json`: per-image Dice/AUROC/TPR/FPR with cohort medians
/// and bootstrap intervals.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<Vec<ImageError>> {
    let manifest = prepare(cfg)?;
    let pooled = cfg.auroc_mode == AurocMode::Pooled;
    let results = for_each_image(&manifest, cfg, |entry| {
        let a = analyze_image(&manifest, entry, cfg)?;
        let pixels = if pooled {
            Some((
                a.mean_probability.clone(),
                a.gt.data().iter().map(|&v| v == 1).collect::<Vec<bool>>(),
            ))
        } else {
            None
        };
        Ok((a.metrics(), pixels))
    })?;
    let (ok, mut errors) = split_results(results);
    let mut images = Vec::with_capacity(ok.len());
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, pixels) in ok {
        images.push(m);
        if let Some((s, l)) = pixels {
            scores.extend(s);
            labels.extend(l);
        }
    }
    let pooled_auroc = if pooled && !images.is_empty() {
        match auroc_labels(&scores, &labels) {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(ImageError {
                    image_id: "pooled".into(),
                    error: e.to_string(),
                });
                None
            }
        }
    } else {
        None
    };
    let report = MetricReport::build(images, cfg.n_boot, cfg.level, cfg.seed, pooled_auroc)?;
    write_json(
        cfg.out(METRICS_FILE),
        &MetricsFile {
            report,
            errors: errors.clone(),
        },
    )?;
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordRow {
    image_id: String,
    dice: Option<f64>,
    x0: Option<f64>,
    x1: Option<f64>,
    x2: Option<f64>,
    x3: Option<f64>,
    #[serde(default)]
    empty_x0: Option<bool>,
    #[serde(default)]
    empty_x1: Option<bool>,
    #[serde(default)]
    empty_x2: Option<bool>,
    #[serde(default)]
    empty_x3: Option<bool>,
    denom: Denominator,
}

pub fn write_records(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record([
            "image_id", "dice", "x0", "x1", "x2", "x3", "empty_x0", "empty_x1", "empty_x2",
            "empty_x3", "denom",
        ])?;
    }
    for r in records {
        w.serialize(RecordRow {
            image_id: r.image_id.clone(),
            dice: r.dice,
            x0: Some(r.x0),
            x1: Some(r.x1),
            x2: Some(r.x2),
            x3: Some(r.x3),
            empty_x0: Some(r.empty[0]),
            empty_x1: Some(r.empty[1]),
            empty_x2: Some(r.empty[2]),
            empty_x3: Some(r.empty[3]),
            denom: r.denom,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a records CSV. Only `image_id` and `denom` are required; a missing
/// or blank predictor reads as NaN and is rejected by any model that needs it.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    for required in ["image_id", "denom"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::InvalidArgument(format!(
                "{}: missing column {required:?}",
                path.display()
            )));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<RecordRow>() {
        let row = row?;
        let record = ImageRecord {
            image_id: row.image_id,
            dice: row.dice,
            x0: row.x0.unwrap_or(f64::NAN),
            x1: row.x1.unwrap_or(f64::NAN),
            x2: row.x2.unwrap_or(f64::NAN),
            x3: row.x3.unwrap_or(f64::NAN),
            empty: [
                row.empty_x0.unwrap_or(false),
                row.empty_x1.unwrap_or(false),
                row.empty_x2.unwrap_or(false),
                row.empty_x3.unwrap_or(false),
            ],
            denom: row.denom,
        };
        if let Some(d) = record.dice {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidArgument(format!(
                    "{}: dice {d} outside [0, 1]",
                    record.image_id
                )));
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Records for the manifest: reuses `records.csv` in the output directory
/// when it covers exactly the manifest's images under the configured
/// convention, otherwise recomputes and rewrites it.
pub fn load_or_compute_records(cfg: &RunConfig) -> Result<(Vec<ImageRecord>, Vec<ImageError>)> {
    let manifest = prepare(cfg)?;
    let path = cfg.out(RECORDS_FILE);
    if path.is_file() {
        if let Ok(records) = read_records(&path) {
            let ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
            let expected: Vec<&str> = manifest
                .entries
                .iter()
                .map(|e| e.image_id.as_str())
                .collect();
            if ids == expected
                && records
                    .iter()
                    .all(|r| r.denom == cfg.denom && r.dice.is_some())
            {
                info!("reusing {}", path.display());
                return Ok((records, vec![]));
            }
        }
    }
    let results = for_each_image(&manifest, cfg, |entry| {
        analyze_image(&manifest, entry, cfg).map(|a| a.record())
    })?;
    let (records, errors) = split_results(results);
    write_records(&path, &records)?;
    Ok((records, errors))
}

pub fn model_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("model_{kind}.json"))
}

fn formula(kind: ModelKind) -> String {
    let terms: Vec<&str> = kind.predictors().iter().map(|p| p.name()).collect();
    format!("Dice ~ {}", terms.join(" + "))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

pub fn render_fit_report(
    models: &[LinearModel],
    failures: &[(ModelKind, String)],
    n_records: usize,
    denom: Denominator,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Dice from region uncertainty: linear models\n");
    let _ = writeln!(
        s,
        "{n_records} images; region means use the `{denom}` denominator.\n"
    );
    let _ = writeln!(
        s,
        "| model | formula | intercept | x0 | x1 | x2 | x3 | RMSE | n |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for m in models {
        let coeff = |p: Predictor| fmt_opt(m.coefficient(p));
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} | {} | {} | {} | {:.4} | {} |",
            m.kind,
            formula(m.kind),
            m.intercept,
            coeff(Predictor::X0),
            coeff(Predictor::X1),
            coeff(Predictor::X2),
            coeff(Predictor::X3),
            m.rmse,
            m.n
        );
    }
    let _ = writeln!(s, "\n## Spearman correlation with Dice\n");
    let _ = writeln!(s, "| model | predictor | rho | p |");
    let _ = writeln!(s, "|---|---|---|---|");
    for m in models {
        for &p in m.kind.predictors() {
            match m.spearman.get(&p) {
                Some(r) => {
                    let _ = writeln!(s, "| {} | {p} | {:.4} | {:.4e} |", m.kind, r.rho, r.p);
                }
                None => {
                    let _ = writeln!(s, "| {} | {p} | n/a | n/a |", m.kind);
                }
            }
        }
    }
    let dropped: Vec<String> = models
        .iter()
        .filter(|m| !m.dropped.is_empty())
        .map(|m| {
            let names: Vec<&str> = m.dropped.iter().map(|p| p.name()).collect();
            format!(
                "- {}: {} (region empty in every image, coefficient 0)",
                m.kind,
                names.join(", ")
            )
        })
        .collect();
    if !dropped.is_empty() {
        let _ = writeln!(s, "\n## Dropped predictors\n");
        for line in dropped {
            let _ = writeln!(s, "{line}");
        }
    }
    if !failures.is_empty() {
        let _ = writeln!(s, "\n## Failed fits\n");
        for (kind, err) in failures {
            let _ = writeln!(s, "- {kind}: {err}");
        }
    }
    s
}

/// Fits every configured model kind; writes `model_<kind>.json` and
/// `fit_report.md`. Fit failures are reported like per-image errors.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<ImageError>> {
    let (records, mut errors) = load_or_compute_records(cfg)?;
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for &kind in &cfg.models {
        match fit_ols(&records, kind) {
            Ok(m) => {
                write_json(model_path(&cfg.output_dir, kind), &m)?;
                models.push(m);
            }
            Err(e) => {
                warn!("{kind}: {e}");
                errors.push(ImageError {
                    image_id: format!("model:{kind}"),
                    error: e.to_string(),
                });
                failures.push((kind, e.to_string()));
            }
        }
    }
    let report = render_fit_report(&models, &failures, records.len(), cfg.denom);
    let path = cfg.out(FIT_REPORT);
    fs::write(&path, report).map_err(|e| Error::io(&path, e))?;
    Ok(errors)
}

/// `reference:<id>` selects a bundled published model, anything else is a
/// path to a model JSON.
pub fn load_model(source: &str) -> Result<LinearModel> {
    if let Some(id) = source.strip_prefix("reference:") {
        return crate::stats::reference_model(id);
    }
    let text = fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub predicted_dice_raw: f64,
    pub predicted_dice_clamped: f64,
}

/// Applies `model` to every record and writes `predictions.csv`. Any
/// convention or predictor mismatch aborts.
pub fn cmd_predict(
    model: &LinearModel,
    records: &[ImageRecord],
    out_path: impl AsRef<Path>,
) -> Result<Vec<PredictionRow>> {
    let rows: Vec<PredictionRow> = records
        .iter()
        .map(|r| {
            predict_dice(model, r).map(|p| PredictionRow {
                image_id: r.image_id.clone(),
                predicted_dice_raw: p.raw,
                predicted_dice_clamped: p.clamped,
            })
        })
        .collect::<Result<_>>()?;
    let out_path = out_path.as_ref();
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(out_path)?;
    if rows.is_empty() {
        w.write_record(["image_id", "predicted_dice_raw", "predicted_dice_clamped"])?;
    }
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(rows)
}

/// RMSE of raw predictions against the records' Dice, for records that have one.
pub fn prediction_rmse(rows: &[PredictionRow], records: &[ImageRecord]) -> Result<Option<f64>> {
    let truth: BTreeMap<&str, f64> = records
        .iter()
        .filter_map(|r| r.dice.map(|d| (r.image_id.as_str(), d)))
        .collect();
    let (pred, actual): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| {
            truth
                .get(r.image_id.as_str())
                .map(|&d| (r.predicted_dice_raw, d))
        })
        .unzip();
    if pred.is_empty() {
        return Ok(None);
    }
    rmse(&pred, &actual).map(Some)
}

pub fn heatmap_path(dir: &Path, image_id: &str, region: Region) -> PathBuf {
    dir.join(format!("{image_id}_heat_{}.png", region.name()))
}

/// Four heatmaps per image (overall and each region-masked map) on a shared
/// per-image scale. Needs `<id>_unc.runc` from `aggregate`.
pub fn cmd_render(cfg: &RunConfig) -> Result<Vec<ImageError>> {
    let manifest = prepare(cfg)?;
    let results = for_each_image(&manifest, cfg, |entry| {
        let path = unc_path(&cfg.output_dir, &entry.image_id);
        if !path.is_file() {
            return Err(Error::Manifest(format!(
                "missing uncertainty map {}",
                path.display()
            )));
        }
        let map = UncertaintyMap::from_tensor(&read_tensor(&path)?)?;
        let (_, regions) = entry_regions(&manifest, entry, cfg, map.shape())?;
        let vmax = map.max_value().max(VMAX_FLOOR);
        for region in Region::ALL {
            let masked = match regions.mask(region) {
                Some(mask) => map.masked(mask)?,
                None => map.clone(),
            };
            write_heatmap(
                &masked,
                heatmap_path(&cfg.output_dir, &entry.image_id, region),
                vmax,
            )?;
        }
        Ok(())
    })?;
    let (_, errors) = split_results(results);
    Ok(errors)
}
