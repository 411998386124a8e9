//! Python bindings for the voxsem toolkit.
//!
//! Volumes cross the boundary as flat lists in the crate's storage order
//! (channel-major, then x-major with z fastest) plus a `GridSpec`; images
//! are row-major with the channel axis outermost.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use voxsem_core::camera::CameraModel as CoreCamera;
use voxsem_core::check;
use voxsem_core::error::Error as CoreError;
use voxsem_core::fcm;
use voxsem_core::grid::{ClassTable, FeatureVolume, GridSpec as CoreSpec, LabelVolume, MaskVolume};
use voxsem_core::io::{load_volume as core_load, save_volume as core_save, VgridVolume};
use voxsem_core::loss;
use voxsem_core::metrics;
use voxsem_core::project;
use voxsem_core::scenes;
use voxsem_core::tsdf;

fn err(e: CoreError) -> PyErr {
    match e {
        CoreError::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Voxel-grid geometry: dimensions, voxel edge length, world origin.
#[pyclass(name = "GridSpec", skip_from_py_object)]
#[derive(Clone)]
struct PyGridSpec {
    inner: CoreSpec,
}

#[pymethods]
impl PyGridSpec {
    #[new]
    #[pyo3(signature = (dims, voxel_size, origin = (0.0, 0.0, 0.0)))]
    fn new(dims: (usize, usize, usize), voxel_size: f32, origin: (f32, f32, f32)) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSpec::new([dims.0, dims.1, dims.2], voxel_size, [origin.0, origin.1, origin.2])
                .map_err(err)?,
        })
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [x, y, z] = self.inner.dims;
        (x, y, z)
    }

    #[getter]
    fn voxel_size(&self) -> f32 {
        self.inner.voxel_size
    }

    #[getter]
    fn origin(&self) -> (f32, f32, f32) {
        let [x, y, z] = self.inner.origin;
        (x, y, z)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// World coordinates of a voxel center.
    fn voxel_to_world(&self, index: (usize, usize, usize)) -> PyResult<(f64, f64, f64)> {
        let w = self
            .inner
            .voxel_to_world([index.0, index.1, index.2])
            .map_err(err)?;
        Ok((w[0], w[1], w[2]))
    }

    /// Voxel containing a world point, or None when outside the grid.
    fn world_to_voxel(&self, point: (f64, f64, f64)) -> Option<(usize, usize, usize)> {
        self.inner
            .world_to_voxel([point.0, point.1, point.2])
            .map(|[x, y, z]| (x, y, z))
    }
}

/// Pinhole camera: world-from-camera rotation (row-major, 9 values) and
/// camera position in world coordinates.
#[pyclass(name = "CameraModel", skip_from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: CoreCamera,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, height, width, rotation = None, translation = (0.0, 0.0, 0.0)))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        height: usize,
        width: usize,
        rotation: Option<[f64; 9]>,
        translation: (f64, f64, f64),
    ) -> PyResult<Self> {
        let r = rotation.unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let inner = CoreCamera::new(
            fx,
            fy,
            cx,
            cy,
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            [translation.0, translation.1, translation.2],
            (height, width),
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    fn back_project(&self, u: f64, v: f64, depth: f64) -> (f64, f64, f64) {
        let p = self.inner.back_project(u, v, depth);
        (p[0], p[1], p[2])
    }

    /// Continuous pixel coordinates and camera depth, or None behind the
    /// camera.
    fn project(&self, point: (f64, f64, f64)) -> Option<(f64, f64, f64)> {
        self.inner.project([point.0, point.1, point.2])
    }
}

/// One synthetic scene with its ground truth and derived volumes.
#[pyclass(name = "SceneSample")]
struct PySceneSample {
    inner: scenes::SceneSample,
}

#[pymethods]
impl PySceneSample {
    #[getter]
    fn spec(&self) -> PyGridSpec {
        PyGridSpec {
            inner: *self.inner.gt.spec(),
        }
    }

    #[getter]
    fn gt(&self) -> Vec<u8> {
        self.inner.gt.values().to_vec()
    }

    /// Depth image as (values, height, width); meters, 0 = invalid.
    #[getter]
    fn depth(&self) -> (Vec<f32>, usize, usize) {
        (
            self.inner.depth.values().to_vec(),
            self.inner.depth.height(),
            self.inner.depth.width(),
        )
    }

    #[getter]
    fn tsdf(&self) -> Vec<f32> {
        self.inner.tsdf.values().to_vec()
    }

    /// Visibility codes: 0 free, 1 surface, 2 occluded, 3 outside.
    #[getter]
    fn visibility(&self) -> Vec<u8> {
        self.inner
            .tsdf
            .visibility()
            .values()
            .iter()
            .map(|v| v.code())
            .collect()
    }

    /// Projected feature volume (channel-major) and its channel count.
    #[getter]
    fn rf1(&self) -> (Vec<f32>, usize) {
        (self.inner.rf1.data().to_vec(), self.inner.rf1.channels())
    }

    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.inner.counts.values().to_vec()
    }

    #[getter]
    fn feat(&self) -> (Vec<f32>, usize, usize, usize) {
        (
            self.inner.feat.data().to_vec(),
            self.inner.feat.channels(),
            self.inner.feat.height(),
            self.inner.feat.width(),
        )
    }

    #[getter]
    fn camera(&self) -> PyCamera {
        PyCamera {
            inner: self.inner.cam.clone(),
        }
    }

    #[getter]
    fn object_classes(&self) -> Vec<usize> {
        self.inner.object_classes.iter().map(|&c| c as usize).collect()
    }
}

/// The 12 class names; index 0 is empty space.
#[pyfunction]
fn class_names() -> Vec<String> {
    ClassTable::NAMES.iter().map(|s| s.to_string()).collect()
}

/// Generate one toy synthetic scene (16^3 grid at 0.1 m).
#[pyfunction]
#[pyo3(signature = (seed, objects = (1, 3)))]
fn make_scene(seed: u64, objects: (usize, usize)) -> PyResult<PySceneSample> {
    let mut spec = scenes::SceneSpec::toy();
    spec.object_count = objects;
    Ok(PySceneSample {
        inner: scenes::make_scene(&spec, seed).map_err(err)?,
    })
}

fn labels_of(spec: &PyGridSpec, values: Vec<u8>) -> PyResult<LabelVolume> {
    LabelVolume::new(spec.inner, values).map_err(err)
}

fn mask_of(spec: &PyGridSpec, values: Vec<bool>) -> PyResult<MaskVolume> {
    MaskVolume::new(spec.inner, values).map_err(err)
}

fn visibility_of(spec: &PyGridSpec, codes: Vec<u8>) -> PyResult<tsdf::VisibilityVolume> {
    let data = codes
        .into_iter()
        .map(tsdf::Visibility::from_code)
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    tsdf::VisibilityVolume::new(spec.inner, data).map_err(err)
}

/// Flipped-TSDF encoding of a depth image: returns (values, visibility
/// codes), both in volume storage order.
#[pyfunction]
fn tsdf_encode(
    depth: Vec<f32>,
    height: usize,
    width: usize,
    cam: &PyCamera,
    spec: &PyGridSpec,
    truncation: f32,
) -> PyResult<(Vec<f32>, Vec<u8>)> {
    let depth = tsdf::DepthImage::new(height, width, depth).map_err(err)?;
    let volume = tsdf::tsdf_encode(&depth, &cam.inner, &spec.inner, truncation).map_err(err)?;
    let vis = volume.visibility().values().iter().map(|v| v.code()).collect();
    Ok((volume.values().to_vec(), vis))
}

/// Exhaustive all-pairs reference for the TSDF distance stage.
#[pyfunction]
fn tsdf_oracle(
    surface: Vec<bool>,
    visibility: Vec<u8>,
    spec: &PyGridSpec,
    truncation: f32,
) -> PyResult<Vec<f32>> {
    let mask = mask_of(spec, surface)?;
    let vis = visibility_of(spec, visibility)?;
    Ok(tsdf::tsdf_oracle(&mask, &vis, truncation)
        .map_err(err)?
        .values()
        .to_vec())
}

/// Scatter a feature image into the grid; returns (features, counts).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn project_features(
    feat: Vec<f32>,
    channels: usize,
    depth: Vec<f32>,
    height: usize,
    width: usize,
    cam: &PyCamera,
    spec: &PyGridSpec,
) -> PyResult<(Vec<f32>, Vec<u32>)> {
    let feat = project::FeatureImage::new(channels, height, width, feat).map_err(err)?;
    let depth = tsdf::DepthImage::new(height, width, depth).map_err(err)?;
    let (volume, counts) =
        project::project_features(&feat, &depth, &cam.inner, &spec.inner).map_err(err)?;
    Ok((volume.data().to_vec(), counts.values().to_vec()))
}

/// Classwise mean-fill of occluded voxels from visible surfaces.
#[pyfunction]
fn complete_features(
    features: Vec<f32>,
    channels: usize,
    spec: &PyGridSpec,
    class_map: Vec<u8>,
    visible: Vec<bool>,
    occluded: Vec<bool>,
) -> PyResult<Vec<f32>> {
    let volume = FeatureVolume::new(spec.inner, channels, features).map_err(err)?;
    let ctx = fcm::CompletionContext::new(
        labels_of(spec, class_map)?,
        mask_of(spec, visible)?,
        mask_of(spec, occluded)?,
    )
    .map_err(err)?;
    Ok(fcm::complete_features(&volume, &ctx)
        .map_err(err)?
        .data()
        .to_vec())
}

/// Natural-log entropy of a probability vector.
#[pyfunction]
fn entropy(p: Vec<f64>) -> PyResult<f64> {
    loss::entropy(&p).map_err(err)
}

/// Cross-entropy over labeled voxels: (value, gradient w.r.t. logits).
#[pyfunction]
#[pyo3(signature = (logits, num_classes, spec, gt, class_weights = None))]
fn cross_entropy_loss(
    logits: Vec<f64>,
    num_classes: usize,
    spec: &PyGridSpec,
    gt: Vec<u8>,
    class_weights: Option<Vec<f64>>,
) -> PyResult<(f64, Vec<f64>)> {
    let probs = loss::ProbVolume::from_logits(spec.inner, num_classes, logits).map_err(err)?;
    let gt = labels_of(spec, gt)?;
    let weights = class_weights.unwrap_or_else(|| vec![1.0; num_classes]);
    let report = loss::cross_entropy_loss(&probs, &gt, &weights).map_err(err)?;
    Ok((report.value, report.grad_logits))
}

/// Classwise entropy loss: (value, gradient, selected classes).
#[pyfunction]
fn classwise_entropy_loss(
    logits: Vec<f64>,
    num_classes: usize,
    spec: &PyGridSpec,
    gt: Vec<u8>,
) -> PyResult<(f64, Vec<f64>, Vec<usize>)> {
    let probs = loss::ProbVolume::from_logits(spec.inner, num_classes, logits).map_err(err)?;
    let gt = labels_of(spec, gt)?;
    let report = loss::classwise_entropy_loss(&probs, &gt).map_err(err)?;
    Ok((report.value, report.grad_logits, report.selected_classes))
}

/// Per-class IoU over the 11 semantic classes and their mean.
#[pyfunction]
fn ssc_iou(
    pred: Vec<u8>,
    gt: Vec<u8>,
    visibility: Vec<u8>,
    spec: &PyGridSpec,
) -> PyResult<(Vec<f64>, f64)> {
    let pred = labels_of(spec, pred)?;
    let gt = labels_of(spec, gt)?;
    let vis = visibility_of(spec, visibility)?;
    let mask = metrics::EvalMask::from_parts(&vis, &gt).map_err(err)?;
    let r = metrics::ssc_iou(&pred, &gt, &mask).map_err(err)?;
    Ok((r.per_class, r.mean))
}

/// Binary scene-completion metrics on occluded voxels:
/// (precision, recall, IoU).
#[pyfunction]
fn sc_metrics(
    pred: Vec<u8>,
    gt: Vec<u8>,
    visibility: Vec<u8>,
    spec: &PyGridSpec,
) -> PyResult<(f64, f64, f64)> {
    let pred = labels_of(spec, pred)?;
    let occupancy = MaskVolume::new(
        spec.inner,
        pred.values().iter().map(|&v| v != 0).collect(),
    )
    .map_err(err)?;
    let gt = labels_of(spec, gt)?;
    let vis = visibility_of(spec, visibility)?;
    let mask = metrics::EvalMask::from_parts(&vis, &gt).map_err(err)?;
    let m = metrics::sc_metrics(&occupancy, &gt, &mask).map_err(err)?;
    Ok((m.precision, m.recall, m.iou))
}

/// Arithmetic mean of per-class IoU values.
#[pyfunction]
fn mean_iou(per_class: Vec<f64>) -> f64 {
    metrics::mean_iou(&per_class)
}

/// `1 / (1/precision + 1/recall - 1)`.
#[pyfunction]
fn iou_from_precision_recall(precision: f64, recall: f64) -> f64 {
    metrics::iou_from_precision_recall(precision, recall)
}

/// Histogram of class-`c` probabilities over ground-truth-`c` voxels.
#[pyfunction]
fn prob_histogram(
    probs: Vec<f64>,
    num_classes: usize,
    spec: &PyGridSpec,
    gt: Vec<u8>,
    class: usize,
    bins: usize,
) -> PyResult<Vec<u64>> {
    let probs = loss::ProbVolume::from_probs(spec.inner, num_classes, probs).map_err(err)?;
    let gt = labels_of(spec, gt)?;
    metrics::prob_histogram(&probs, &gt, class, bins).map_err(err)
}

/// Mean per-class agreement with the modal prediction.
#[pyfunction]
fn consistency_score(pred: Vec<u8>, gt: Vec<u8>, spec: &PyGridSpec) -> PyResult<f64> {
    let pred = labels_of(spec, pred)?;
    let gt = labels_of(spec, gt)?;
    Ok(metrics::consistency_score(&pred, &gt).map_err(err)?.mean)
}

/// Majority-vote label downsampling; returns (labels, new spec).
#[pyfunction]
fn downsample_labels(
    labels: Vec<u8>,
    spec: &PyGridSpec,
    factor: usize,
) -> PyResult<(Vec<u8>, PyGridSpec)> {
    let volume = labels_of(spec, labels)?;
    let down = volume.downsample(factor).map_err(err)?;
    Ok((
        down.values().to_vec(),
        PyGridSpec { inner: *down.spec() },
    ))
}

/// Poly learning-rate schedule `base_lr * (1 - iter/max_iter)^0.9`.
#[pyfunction]
fn poly_lr(base_lr: f64, iteration: usize, max_iteration: usize) -> PyResult<f64> {
    voxsem_core::autodiff::poly_lr(base_lr, iteration, max_iteration).map_err(err)
}

/// Finite-difference check of both losses on one random instance:
/// (cross-entropy error, classwise-entropy error).
#[pyfunction]
fn gradcheck_losses(seed: u64, classes: usize, voxels: usize) -> (f64, f64) {
    let (probs, gt) = check::random_loss_instance(seed, classes, voxels);
    (
        check::cross_entropy_fd_error(&probs, &gt),
        check::classwise_entropy_fd_error(&probs, &gt),
    )
}

/// Finite-difference check of every autodiff primitive.
#[pyfunction]
fn gradcheck_primitives(seed: u64) -> Vec<(String, f64)> {
    check::primitive_gradcheck(seed)
}

/// Save a label volume as a VGRID file.
#[pyfunction]
fn save_label_volume(path: &str, spec: &PyGridSpec, labels: Vec<u8>) -> PyResult<()> {
    let volume = labels_of(spec, labels)?;
    core_save(
        std::path::Path::new(path),
        &VgridVolume::from_labels(&volume),
    )
    .map_err(err)
}

/// Load any VGRID file: (kind, channels, spec, floats, bytes); exactly one
/// of the two payload lists is non-empty.
#[pyfunction]
fn load_volume(path: &str) -> PyResult<(u8, usize, PyGridSpec, Vec<f32>, Vec<u8>)> {
    let v = core_load(std::path::Path::new(path)).map_err(err)?;
    let kind = v.kind();
    let channels = v.channels();
    let spec = PyGridSpec { inner: *v.spec() };
    let (floats, bytes) = match v {
        VgridVolume::Label { data, .. } => (Vec::new(), data),
        VgridVolume::Feature { data, .. }
        | VgridVolume::Tsdf { data, .. }
        | VgridVolume::Prob { data, .. } => (data, Vec::new()),
    };
    Ok((kind, channels, spec, floats, bytes))
}

#[pymodule]
fn voxsem(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PySceneSample>()?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(make_scene, m)?)?;
    m.add_function(wrap_pyfunction!(tsdf_encode, m)?)?;
    m.add_function(wrap_pyfunction!(tsdf_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(project_features, m)?)?;
    m.add_function(wrap_pyfunction!(complete_features, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_loss, m)?)?;
    m.add_function(wrap_pyfunction!(classwise_entropy_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ssc_iou, m)?)?;
    m.add_function(wrap_pyfunction!(sc_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(mean_iou, m)?)?;
    m.add_function(wrap_pyfunction!(iou_from_precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(prob_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_score, m)?)?;
    m.add_function(wrap_pyfunction!(downsample_labels, m)?)?;
    m.add_function(wrap_pyfunction!(poly_lr, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_losses, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_primitives, m)?)?;
    m.add_function(wrap_pyfunction!(save_label_volume, m)?)?;
    m.add_function(wrap_pyfunction!(load_volume, m)?)?;
    Ok(())
}
