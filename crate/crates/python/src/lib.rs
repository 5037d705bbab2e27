//! Python bindings: images, the preprocessing chain, augmentation, the
//! classifier and the metrics report.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ct_classify::augment::{apply_augmentation, derive_rng, AugmentationSpec, SplitRatios};
use ct_classify::dataset::CLASS_NAMES;
use ct_classify::imaging::{self, ClaheParams, GrayImage};
use ct_classify::metrics::{confusion_matrix, render_report, MetricsReport};
use ct_classify::nn::{build_paper_model, count_params, Model};
use ct_classify::train::{load_checkpoint, predict, save_checkpoint};

fn py_err(e: ct_classify::Error) -> PyErr {
    match e {
        ct_classify::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// 8-bit grayscale image, row-major.
#[pyclass(name = "Image", module = "ct_classify_py", frozen)]
struct PyImage(GrayImage);

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: &[u8]) -> PyResult<Self> {
        GrayImage::from_pixels(height, width, data.to_vec())
            .map(PyImage)
            .map_err(py_err)
    }

    /// Loads a PNG or JPEG file as grayscale.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        imaging::load_grayscale(path).map(PyImage).map_err(py_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.pixels())
    }

    fn get(&self, row: usize, col: usize) -> PyResult<u8> {
        if row >= self.0.height() || col >= self.0.width() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.0.get(row, col))
    }

    fn save_png(&self, path: &str) -> PyResult<()> {
        self.0.save_png(path).map_err(py_err)
    }

    fn resize(&self, height: usize, width: usize) -> PyResult<Self> {
        imaging::resize_bilinear(&self.0, height, width)
            .map(PyImage)
            .map_err(py_err)
    }

    #[pyo3(signature = (tiles_m = 8, tiles_n = 8, clip = 0.01, bins = 256))]
    fn clahe(&self, tiles_m: usize, tiles_n: usize, clip: f64, bins: usize) -> PyResult<Self> {
        let params = ClaheParams {
            tiles_m,
            tiles_n,
            clip,
            bins,
            ..ClaheParams::default()
        };
        imaging::clahe(&self.0, &params)
            .map(PyImage)
            .map_err(py_err)
    }

    fn median(&self) -> Self {
        PyImage(imaging::median_filter_3x3(&self.0))
    }

    /// Resize to `size`×`size`, CLAHE with default parameters, median filter.
    #[pyo3(signature = (size = 224))]
    fn preprocess(&self, size: usize) -> PyResult<Self> {
        imaging::preprocess(&self.0, size, &ClaheParams::default())
            .map(PyImage)
            .map_err(py_err)
    }

    /// One augmented copy from the default augmentation settings, drawn from
    /// random stream `stream` of `seed`.
    #[pyo3(signature = (seed, stream = 0))]
    fn augment(&self, seed: u64, stream: u64) -> Self {
        let spec = AugmentationSpec::default();
        PyImage(apply_augmentation(
            &self.0,
            &spec,
            &mut derive_rng(seed, stream),
        ))
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.height(), self.0.width())
    }
}

/// The CNN classifier.
#[pyclass(name = "Model", module = "ct_classify_py", frozen)]
struct PyModel(Model<f32>);

#[pymethods]
impl PyModel {
    /// The four-block classifier with seeded Glorot-uniform initialisation.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn paper(seed: u64) -> Self {
        PyModel(build_paper_model(seed))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_checkpoint(path).map(PyModel).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        count_params(&self.0)
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.0.input_shape().to_vec()
    }

    fn layer_param_counts(&self) -> Vec<usize> {
        self.0.layer_param_counts()
    }

    fn output_shapes(&self) -> Vec<Vec<usize>> {
        self.0.output_shapes()
    }

    fn layers(&self) -> Vec<String> {
        self.0.specs().iter().map(|s| s.to_string()).collect()
    }

    /// Class probabilities for a preprocessed image.
    fn predict(&self, image: &PyImage) -> PyResult<Vec<f32>> {
        predict(&self.0, &image.0, 1.0 / 255.0)
            .map(|t| t.into_data())
            .map_err(py_err)
    }

    /// Most probable class name and the probabilities.
    fn classify(&self, image: &PyImage) -> PyResult<(String, Vec<f32>)> {
        let probs = self.predict(image)?;
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
        let name = CLASS_NAMES.get(best).copied().unwrap_or("unknown");
        Ok((name.to_string(), probs))
    }
}

/// Row-major k×k counts: `matrix[actual][predicted]`.
#[pyfunction]
#[pyo3(signature = (y_true, y_pred, k = 3))]
fn confusion(y_true: Vec<usize>, y_pred: Vec<usize>, k: usize) -> PyResult<Vec<Vec<u64>>> {
    let cm = confusion_matrix(&y_true, &y_pred, k).map_err(py_err)?;
    Ok(cm.counts().chunks(k).map(|r| r.to_vec()).collect())
}

/// The text metrics report for label/prediction lists.
#[pyfunction]
#[pyo3(signature = (y_true, y_pred, class_names = None))]
fn report(
    y_true: Vec<usize>,
    y_pred: Vec<usize>,
    class_names: Option<Vec<String>>,
) -> PyResult<String> {
    let names = class_names.unwrap_or_else(|| CLASS_NAMES.iter().map(|s| s.to_string()).collect());
    let cm = confusion_matrix(&y_true, &y_pred, names.len()).map_err(py_err)?;
    let report = MetricsReport::new(cm, &names, None).map_err(py_err)?;
    Ok(render_report(&report))
}

/// Precision, sensitivity, specificity and F1 of one class.
type ClassRates = (f64, f64, f64, f64);

/// Accuracy and per-class rates as floats.
#[pyfunction]
#[pyo3(signature = (y_true, y_pred, k = 3))]
fn metrics(y_true: Vec<usize>, y_pred: Vec<usize>, k: usize) -> PyResult<(f64, Vec<ClassRates>)> {
    let cm = confusion_matrix(&y_true, &y_pred, k).map_err(py_err)?;
    let names: Vec<String> = (0..k).map(|i| i.to_string()).collect();
    let r = MetricsReport::new(cm, &names, None).map_err(py_err)?;
    let per = r
        .per_class
        .iter()
        .map(|m| {
            (
                m.precision.value(),
                m.sensitivity.value(),
                m.specificity.value(),
                m.f1.value(),
            )
        })
        .collect();
    Ok((r.accuracy(), per))
}

/// Train/val/test sizes for `n` items under the given ratios.
#[pyfunction]
#[pyo3(signature = (n, train = 0.7, val = 0.15, test = 0.15))]
fn apportion(n: usize, train: f64, val: f64, test: f64) -> PyResult<(usize, usize, usize)> {
    let ratios = SplitRatios { train, val, test };
    ratios.validate().map_err(py_err)?;
    let [a, b, c] = ratios.apportion(n);
    Ok((a, b, c))
}

#[pymodule]
fn ct_classify_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CLASS_NAMES", CLASS_NAMES.to_vec())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(apportion, m)?)?;
    Ok(())
}
