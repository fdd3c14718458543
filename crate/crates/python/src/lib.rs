//! Python bindings: arrays cross the boundary as numpy arrays. Masks are
//! `uint8` arrays where any nonzero value counts as foreground.

use std::collections::BTreeMap;

use numpy::ndarray::{Array2, Array3};
use numpy::{
    IntoPyArray, PyArray2, PyArray3, PyReadonlyArray1, PyReadonlyArray2, PyReadonlyArray3,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use roi_unc_core::mc_agg::{self, PredictionStack, UncertaintyMap};
use roi_unc_core::metrics::{self, ConfusionCounts, Statistic};
use roi_unc_core::regions::{self, Denominator, RegionMasks};
use roi_unc_core::stats::{self, ImageRecord, ModelKind, Predictor};
use roi_unc_core::synth::{self, PhantomSpec};
use roi_unc_core::tensor_io::{self, Mask2, RgbImage, Tensor3};
use roi_unc_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor_from(arr: &PyReadonlyArray3<'_, f32>) -> PyResult<Tensor3> {
    let view = arr.as_array();
    let (t, h, w) = view.dim();
    Tensor3::new([t, h, w], view.iter().copied().collect()).map_err(py_err)
}

fn stack_from(arr: &PyReadonlyArray3<'_, f32>) -> PyResult<PredictionStack> {
    PredictionStack::new(tensor_from(arr)?).map_err(py_err)
}

fn mask_from(arr: &PyReadonlyArray2<'_, u8>) -> PyResult<Mask2> {
    let view = arr.as_array();
    let (h, w) = view.dim();
    Mask2::new(h, w, view.iter().map(|&v| u8::from(v != 0)).collect()).map_err(py_err)
}

fn map_from(arr: &PyReadonlyArray2<'_, f64>) -> PyResult<UncertaintyMap> {
    let view = arr.as_array();
    let (h, w) = view.dim();
    UncertaintyMap::from_values(h, w, view.iter().copied().collect()).map_err(py_err)
}

fn mask_to_py<'py>(py: Python<'py>, m: &Mask2) -> Bound<'py, PyArray2<u8>> {
    Array2::from_shape_vec((m.height(), m.width()), m.data().to_vec())
        .expect("mask shape")
        .into_pyarray(py)
}

fn map_to_py<'py>(py: Python<'py>, m: &UncertaintyMap) -> Bound<'py, PyArray2<f64>> {
    let (h, w) = m.shape();
    Array2::from_shape_vec((h, w), m.values().to_vec())
        .expect("map shape")
        .into_pyarray(py)
}

fn tensor_to_py<'py>(py: Python<'py>, t: Tensor3) -> Bound<'py, PyArray3<f32>> {
    let [a, h, w] = t.shape();
    Array3::from_shape_vec((a, h, w), t.into_data())
        .expect("tensor shape")
        .into_pyarray(py)
}

fn rgb_to_py<'py>(py: Python<'py>, img: RgbImage) -> Bound<'py, PyArray3<u8>> {
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw())
        .expect("rgb shape")
        .into_pyarray(py)
}

fn parse_denom(denom: &str) -> PyResult<Denominator> {
    denom.parse().map_err(py_err)
}

fn regions_dict<'py>(py: Python<'py>, r: &RegionMasks) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tissue", mask_to_py(py, &r.tissue))?;
    d.set_item("tumor", mask_to_py(py, &r.tumor))?;
    d.set_item("non_tumor", mask_to_py(py, &r.non_tumor))?;
    d.set_item("non_tissue", mask_to_py(py, &r.non_tissue))?;
    Ok(d)
}

fn counts_dict<'py>(py: Python<'py>, c: &ConfusionCounts) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tp", c.tp)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    d.set_item("tn", c.tn)?;
    Ok(d)
}

#[pyfunction]
fn read_tensor<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray3<f32>>> {
    Ok(tensor_to_py(
        py,
        tensor_io::read_tensor(path).map_err(py_err)?,
    ))
}

#[pyfunction]
fn write_tensor(path: &str, array: PyReadonlyArray3<'_, f32>) -> PyResult<()> {
    tensor_io::write_tensor(path, &tensor_from(&array)?).map_err(py_err)
}

#[pyfunction]
fn read_mask<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray2<u8>>> {
    Ok(mask_to_py(py, &tensor_io::read_mask(path).map_err(py_err)?))
}

#[pyfunction]
fn write_mask(path: &str, mask: PyReadonlyArray2<'_, u8>) -> PyResult<()> {
    tensor_io::write_mask(path, &mask_from(&mask)?).map_err(py_err)
}

#[pyfunction]
fn percentile(samples: Vec<f64>, p: f64) -> PyResult<f64> {
    mc_agg::percentile(&samples, p).map_err(py_err)
}

/// `(T, H, W)` float32 probabilities to a `(H, W)` uint8 segmentation.
#[pyfunction]
#[pyo3(signature = (stack, binarize_iters = true, threshold = mc_agg::DEFAULT_THRESHOLD))]
fn aggregate_prediction<'py>(
    py: Python<'py>,
    stack: PyReadonlyArray3<'py, f32>,
    binarize_iters: bool,
    threshold: f64,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let stack = stack_from(&stack)?;
    let mask = mc_agg::aggregate_prediction(&stack, binarize_iters, threshold).map_err(py_err)?;
    Ok(mask_to_py(py, &mask))
}

#[pyfunction]
#[pyo3(signature = (stack, p_hi = mc_agg::DEFAULT_P_HI, p_lo = mc_agg::DEFAULT_P_LO))]
fn uncertainty_map<'py>(
    py: Python<'py>,
    stack: PyReadonlyArray3<'py, f32>,
    p_hi: f64,
    p_lo: f64,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let stack = stack_from(&stack)?;
    let map = py
        .detach(|| mc_agg::uncertainty_map(&stack, p_hi, p_lo))
        .map_err(py_err)?;
    Ok(map_to_py(py, &map))
}

/// `(H, W, 3)` uint8 RGB to a tissue mask.
#[pyfunction]
#[pyo3(signature = (rgb, white_threshold = regions::DEFAULT_WHITE_THRESHOLD))]
fn binarize_tissue<'py>(
    py: Python<'py>,
    rgb: PyReadonlyArray3<'py, u8>,
    white_threshold: u8,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let view = rgb.as_array();
    let (h, w, c) = view.dim();
    if c != 3 {
        return Err(py_err(Error::ChannelCount {
            expected: 3,
            found: c.min(255) as u8,
        }));
    }
    let img = RgbImage::from_raw(w as u32, h as u32, view.iter().copied().collect())
        .ok_or_else(|| PyValueError::new_err("rgb buffer does not match its shape"))?;
    Ok(mask_to_py(
        py,
        &regions::binarize_tissue(&img, white_threshold),
    ))
}

#[pyfunction]
fn derive_regions<'py>(
    py: Python<'py>,
    tissue: PyReadonlyArray2<'py, u8>,
    gt: PyReadonlyArray2<'py, u8>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = regions::derive_regions(&mask_from(&tissue)?, &mask_from(&gt)?).map_err(py_err)?;
    regions_dict(py, &r)
}

/// Mean uncertainty inside `region`; `None` when the region is empty.
#[pyfunction]
#[pyo3(signature = (map, region, denom = "region_pixels"))]
fn region_uncertainty(
    map: PyReadonlyArray2<'_, f64>,
    region: PyReadonlyArray2<'_, u8>,
    denom: &str,
) -> PyResult<Option<f64>> {
    let r =
        regions::region_uncertainty(&map_from(&map)?, &mask_from(&region)?, parse_denom(denom)?)
            .map_err(py_err)?;
    Ok((!r.is_empty()).then_some(r.value))
}

/// Overall and per-region means as `{"x0", "x1", "x2", "x3"}`.
#[pyfunction]
#[pyo3(signature = (map, tissue, gt, denom = "region_pixels"))]
fn region_uncertainties<'py>(
    py: Python<'py>,
    map: PyReadonlyArray2<'py, f64>,
    tissue: PyReadonlyArray2<'py, u8>,
    gt: PyReadonlyArray2<'py, u8>,
    denom: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let regions =
        regions::derive_regions(&mask_from(&tissue)?, &mask_from(&gt)?).map_err(py_err)?;
    let r = regions::compute_region_uncertainties(&map_from(&map)?, &regions, parse_denom(denom)?)
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("x0", r.overall)?;
    d.set_item("x1", r.tumor)?;
    d.set_item("x2", r.non_tumor)?;
    d.set_item("x3", r.non_tissue)?;
    Ok(d)
}

#[pyfunction]
fn confusion<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray2<'py, u8>,
    gt: PyReadonlyArray2<'py, u8>,
) -> PyResult<Bound<'py, PyDict>> {
    let c = metrics::confusion(&mask_from(&pred)?, &mask_from(&gt)?).map_err(py_err)?;
    counts_dict(py, &c)
}

#[pyfunction]
fn dice(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    let c = metrics::confusion(&mask_from(&pred)?, &mask_from(&gt)?).map_err(py_err)?;
    Ok(metrics::dice(&c))
}

#[pyfunction]
fn tpr_fpr(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<(f64, f64)> {
    let c = metrics::confusion(&mask_from(&pred)?, &mask_from(&gt)?).map_err(py_err)?;
    Ok(metrics::tpr_fpr(&c))
}

/// AUROC of flat scores against flat labels (nonzero = positive).
#[pyfunction]
fn auroc(scores: PyReadonlyArray1<'_, f64>, labels: PyReadonlyArray1<'_, u8>) -> PyResult<f64> {
    let scores: Vec<f64> = scores.as_array().to_vec();
    let labels: Vec<bool> = labels.as_array().iter().map(|&v| v != 0).collect();
    metrics::auroc_labels(&scores, &labels).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (values, n_boot = metrics::DEFAULT_N_BOOT, level = metrics::DEFAULT_LEVEL, seed = 0))]
fn bootstrap_ci(
    py: Python<'_>,
    values: Vec<f64>,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    py.detach(|| metrics::bootstrap_ci(&values, n_boot, level, Statistic::Median, seed))
        .map_err(py_err)
}

/// `(rho, p)`.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let s = stats::spearman(&x, &y).map_err(py_err)?;
    Ok((s.rho, s.p))
}

#[pyfunction]
fn rmse(predicted: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    stats::rmse(&predicted, &actual).map_err(py_err)
}

/// A fitted or published linear Dice model.
#[pyclass(name = "LinearModel", module = "roi_unc", frozen, skip_from_py_object)]
struct PyLinearModel {
    inner: stats::LinearModel,
}

#[pymethods]
impl PyLinearModel {
    /// A bundled published model, e.g. `"tumor_containing/overall_eq3"`.
    #[staticmethod]
    fn reference(id: &str) -> PyResult<Self> {
        Ok(Self {
            inner: stats::reference_model(id).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn reference_ids() -> Vec<String> {
        stats::reference_models()
            .into_iter()
            .map(|r| r.id)
            .collect()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn coefficients(&self) -> BTreeMap<&'static str, f64> {
        self.inner
            .coefficients
            .iter()
            .map(|(p, v)| (p.name(), *v))
            .collect()
    }

    #[getter]
    fn rmse(&self) -> f64 {
        self.inner.rmse
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn spearman(&self) -> BTreeMap<&'static str, (f64, f64)> {
        self.inner
            .spearman
            .iter()
            .map(|(p, s)| (p.name(), (s.rho, s.p)))
            .collect()
    }

    /// `(raw, clamped)` for one image's mean uncertainties.
    #[pyo3(signature = (x0 = None, x1 = None, x2 = None, x3 = None, denom = "region_pixels"))]
    fn predict(
        &self,
        x0: Option<f64>,
        x1: Option<f64>,
        x2: Option<f64>,
        x3: Option<f64>,
        denom: &str,
    ) -> PyResult<(f64, f64)> {
        let record = ImageRecord {
            image_id: String::new(),
            dice: None,
            x0: x0.unwrap_or(f64::NAN),
            x1: x1.unwrap_or(f64::NAN),
            x2: x2.unwrap_or(f64::NAN),
            x3: x3.unwrap_or(f64::NAN),
            empty: [false; 4],
            denom: parse_denom(denom)?,
        };
        let p = stats::predict_dice(&self.inner, &record).map_err(py_err)?;
        Ok((p.raw, p.clamped))
    }

    fn __repr__(&self) -> String {
        let terms: Vec<String> = self
            .inner
            .coefficients
            .iter()
            .map(|(p, v)| format!("{v:+.4}*{p}"))
            .collect();
        format!(
            "LinearModel({}: {:.4} {})",
            self.inner.kind,
            self.inner.intercept,
            terms.join(" ")
        )
    }
}

/// Fits `kind` on per-image Dice and region uncertainties. Predictor lists
/// must match `dice` in length; `empty` flags regions with no pixels.
#[pyfunction]
#[pyo3(signature = (kind, dice, x0 = None, x1 = None, x2 = None, x3 = None, empty = None, denom = "region_pixels"))]
#[allow(clippy::too_many_arguments)]
fn fit_ols(
    kind: &str,
    dice: Vec<f64>,
    x0: Option<Vec<f64>>,
    x1: Option<Vec<f64>>,
    x2: Option<Vec<f64>>,
    x3: Option<Vec<f64>>,
    empty: Option<Vec<[bool; 4]>>,
    denom: &str,
) -> PyResult<PyLinearModel> {
    let kind: ModelKind = kind.parse().map_err(py_err)?;
    let denom = parse_denom(denom)?;
    let n = dice.len();
    let cols = [x0, x1, x2, x3];
    for (p, col) in Predictor::ALL.iter().zip(&cols) {
        if let Some(c) = col {
            if c.len() != n {
                return Err(PyValueError::new_err(format!(
                    "{p} has {} values for {n} images",
                    c.len()
                )));
            }
        }
    }
    if let Some(e) = &empty {
        if e.len() != n {
            return Err(PyValueError::new_err(format!(
                "empty has {} rows for {n} images",
                e.len()
            )));
        }
    }
    let value = |j: usize, i: usize| cols[j].as_ref().map_or(f64::NAN, |c| c[i]);
    let records: Vec<ImageRecord> = (0..n)
        .map(|i| ImageRecord {
            image_id: format!("{i}"),
            dice: Some(dice[i]),
            x0: value(0, i),
            x1: value(1, i),
            x2: value(2, i),
            x3: value(3, i),
            empty: empty.as_ref().map_or([false; 4], |e| e[i]),
            denom,
        })
        .collect();
    Ok(PyLinearModel {
        inner: stats::fit_ols(&records, kind).map_err(py_err)?,
    })
}

/// `(H, W)` map to an `(H, W, 3)` uint8 blue-white-red image.
#[pyfunction]
fn render_heatmap<'py>(
    py: Python<'py>,
    map: PyReadonlyArray2<'py, f64>,
    vmax: f64,
) -> PyResult<Bound<'py, PyArray3<u8>>> {
    let img = tensor_io::render_heatmap(&map_from(&map)?, vmax).map_err(py_err)?;
    Ok(rgb_to_py(py, img))
}

/// One synthetic phantom: `{"rgb", "gt", "stack"}`.
#[pyfunction]
#[pyo3(signature = (seed, height, width, alpha, sigma_tumor, sigma_non_tumor, sigma_non_tissue, tumor_free = false, boundary_band = 1))]
#[allow(clippy::too_many_arguments)]
fn generate_phantom<'py>(
    py: Python<'py>,
    seed: u64,
    height: usize,
    width: usize,
    alpha: usize,
    sigma_tumor: f64,
    sigma_non_tumor: f64,
    sigma_non_tissue: f64,
    tumor_free: bool,
    boundary_band: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut spec = PhantomSpec::standard(seed, height, width, alpha).with_sigmas(
        sigma_tumor,
        sigma_non_tumor,
        sigma_non_tissue,
    );
    spec.boundary_band = boundary_band;
    if tumor_free {
        spec = spec.tumor_free();
    }
    let (truth, stack) = py
        .detach(|| synth::generate_phantom(&spec))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("gt", mask_to_py(py, &truth.gt))?;
    d.set_item("rgb", rgb_to_py(py, truth.rgb))?;
    d.set_item("stack", tensor_to_py(py, stack.into_tensor()))?;
    Ok(d)
}

#[pymodule]
fn roi_unc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearModel>()?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(read_mask, m)?)?;
    m.add_function(wrap_pyfunction!(write_mask, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_prediction, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_map, m)?)?;
    m.add_function(wrap_pyfunction!(binarize_tissue, m)?)?;
    m.add_function(wrap_pyfunction!(derive_regions, m)?)?;
    m.add_function(wrap_pyfunction!(region_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(region_uncertainties, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(tpr_fpr, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(render_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    Ok(())
}
