//! Python bindings: phantoms, slicing, training, rendering and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};
use serde_json::Value;
use slicesplat::data::{
    load_volume, make_axial_stack, make_phantom, make_random_sweep, sample_slice, save_volume, split_dataset,
};
use slicesplat::gradients::{grad_check as run_grad_check, random_check_scene, GradCheckOptions};
use slicesplat::metrics::{evaluate_views, psnr as psnr_images, ssim as ssim_images};
use slicesplat::rasterizer::{chi_square_3 as chi2_quantile, RenderOptions};
use slicesplat::trainer::{self, TrainConfig, TrainContext, ViewDefaults};
use slicesplat::{ExecMode, ProbePose, SliceImage, SliceSpec};

fn to_py_err(e: slicesplat::Error) -> PyErr {
    match e {
        slicesplat::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// Rigid probe → world transform.
#[pyclass(name = "Pose", module = "slicesplat", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct Pose(ProbePose);

#[pymethods]
impl Pose {
    /// Euler angles in degrees (x applied first, z last) and a translation in mm.
    #[new]
    #[pyo3(signature = (rx=0.0, ry=0.0, rz=0.0, t=(0.0, 0.0, 0.0)))]
    fn new(rx: f64, ry: f64, rz: f64, t: (f64, f64, f64)) -> Self {
        Pose(ProbePose::from_euler_zyx_deg(rx, ry, rz, [t.0, t.1, t.2]))
    }

    /// From 9 row-major rotation entries followed by the translation.
    #[staticmethod]
    fn from_matrix(values: Vec<f64>) -> PyResult<Self> {
        let raw: [f64; 12] = values
            .try_into()
            .map_err(|v: Vec<f64>| PyValueError::new_err(format!("need 12 values, got {}", v.len())))?;
        ProbePose::from_row_major(&raw).map(Pose).map_err(to_py_err)
    }

    #[staticmethod]
    fn axial(z: f64) -> Self {
        Pose(ProbePose::axial(z))
    }

    #[staticmethod]
    fn coronal(y: f64) -> Self {
        Pose(ProbePose::coronal(y))
    }

    #[staticmethod]
    fn sagittal(x: f64) -> Self {
        Pose(ProbePose::sagittal(x))
    }

    fn matrix(&self) -> Vec<f64> {
        self.0.to_row_major().to_vec()
    }

    fn euler_deg(&self) -> (f64, f64, f64) {
        let [x, y, z] = self.0.to_euler_zyx_deg();
        (x, y, z)
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.0.translation();
        (t[0], t[1], t[2])
    }

    fn inverse(&self) -> Self {
        Pose(self.0.inverse())
    }

    /// `self ∘ other`: applies `other` first.
    fn compose(&self, other: &Pose) -> Self {
        Pose(self.0.compose(&other.0))
    }

    fn transform_point(&self, p: (f64, f64, f64)) -> (f64, f64, f64) {
        let q = self.0.transform_point(&[p.0, p.1, p.2]);
        (q[0], q[1], q[2])
    }

    fn __repr__(&self) -> String {
        let (rx, ry, rz) = self.euler_deg();
        let t = self.translation();
        format!("Pose(rx={rx:.4}, ry={ry:.4}, rz={rz:.4}, t=({:.4}, {:.4}, {:.4}))", t.0, t.1, t.2)
    }
}

/// A 2-D image on a probe plane.
#[pyclass(name = "Slice", module = "slicesplat", frozen)]
struct Slice(SliceImage);

#[pymethods]
impl Slice {
    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing
    }

    #[getter]
    fn pose(&self) -> Pose {
        Pose(self.0.pose)
    }

    /// Row-major intensities in [0, 1].
    #[getter]
    fn pixels(&self) -> Vec<f32> {
        self.0.pixels.clone()
    }

    fn get(&self, u: usize, v: usize) -> PyResult<f32> {
        if u >= self.0.width || v >= self.0.height {
            return Err(PyValueError::new_err(format!("pixel ({u}, {v}) is outside the image")));
        }
        Ok(self.0.get(u, v))
    }

    /// Little-endian float32 pixel bytes.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        let bytes: Vec<u8> = self.0.pixels.iter().flat_map(|p| p.to_le_bytes()).collect();
        PyBytes::new(py, &bytes)
    }

    fn ssim(&self, other: &Slice) -> PyResult<f64> {
        ssim_images(&self.0, &other.0).map_err(to_py_err)
    }

    fn psnr(&self, other: &Slice) -> PyResult<f64> {
        psnr_images(&self.0, &other.0).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Slice({}×{}, spacing={} mm)", self.0.width, self.0.height, self.0.spacing)
    }
}

fn spec_for(width: usize, height: usize, spacing: f64, pose: &Pose) -> PyResult<SliceSpec> {
    SliceSpec::new(width, height, spacing, pose.0).map_err(to_py_err)
}

/// Scalar volume centred at the origin with isotropic spacing.
#[pyclass(name = "Volume", module = "slicesplat", frozen)]
struct Volume(slicesplat::Volume);

#[pymethods]
impl Volume {
    /// `kind` is "shells", "blobs" or "checker"; `dims` is one edge or (depth, height, width).
    #[staticmethod]
    #[pyo3(signature = (kind, dims, spacing=0.6, seed=0))]
    fn phantom(py: Python<'_>, kind: &str, dims: Vec<usize>, spacing: f64, seed: u64) -> PyResult<Self> {
        let kind = kind.parse().map_err(to_py_err)?;
        let dims = match dims[..] {
            [n] => [n; 3],
            [d, h, w] => [d, h, w],
            _ => return Err(PyValueError::new_err("dims must have 1 or 3 entries")),
        };
        py.detach(|| make_phantom(kind, dims, spacing, seed)).map(Volume).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_volume(&path).map(Volume).map_err(to_py_err)
    }

    /// Writes `<path>.raw` and `<path>.json`.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_volume(&self.0, &path).map_err(to_py_err)
    }

    /// (depth, height, width)
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [d, h, w] = self.0.dims;
        (d, h, w)
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing
    }

    /// Flat voxel values, depth-major.
    #[getter]
    fn voxels(&self) -> Vec<f32> {
        self.0.voxels.clone()
    }

    fn world_bounds(&self) -> ((f64, f64, f64), (f64, f64, f64)) {
        let (lo, hi) = self.0.world_bounds();
        ((lo[0], lo[1], lo[2]), (hi[0], hi[1], hi[2]))
    }

    /// Trilinear ground-truth slice; size defaults to an axial plane's.
    #[pyo3(signature = (pose, width=None, height=None, spacing=None))]
    fn sample(&self, py: Python<'_>, pose: &Pose, width: Option<usize>, height: Option<usize>, spacing: Option<f64>) -> PyResult<Slice> {
        let spec = spec_for(
            width.unwrap_or(self.0.width()),
            height.unwrap_or(self.0.height()),
            spacing.unwrap_or(self.0.spacing),
            pose,
        )?;
        Ok(Slice(py.detach(|| sample_slice(&self.0, &spec))))
    }

    fn __repr__(&self) -> String {
        let [d, h, w] = self.0.dims;
        format!("Volume({d}×{h}×{w}, spacing={} mm)", self.0.spacing)
    }
}

/// A trained Gaussian cloud with its training metadata.
#[pyclass(name = "Checkpoint", module = "slicesplat", frozen)]
struct Checkpoint(trainer::Checkpoint);

impl Checkpoint {
    fn render_options(&self) -> RenderOptions {
        RenderOptions::new(self.0.meta.config.p_mass, ExecMode::Deterministic)
    }
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        trainer::load_checkpoint(&path).map(Checkpoint).map_err(to_py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&self.0, &path).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.0.cloud.len()
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.0.meta.iteration
    }

    #[getter]
    fn world_bounds(&self) -> ((f64, f64, f64), (f64, f64, f64)) {
        let [lo, hi] = self.0.meta.world_bounds_mm;
        ((lo[0], lo[1], lo[2]), (hi[0], hi[1], hi[2]))
    }

    /// Training configuration as a dict.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &self.0.meta.config)
    }

    /// World-space means in mm.
    fn means(&self) -> Vec<(f32, f32, f32)> {
        self.0.cloud.means.iter().map(|m| (m[0], m[1], m[2])).collect()
    }

    fn opacities(&self) -> Vec<f32> {
        (0..self.0.cloud.len()).map(|i| self.0.cloud.alpha(i)).collect()
    }

    fn intensities(&self) -> Vec<f32> {
        (0..self.0.cloud.len()).map(|i| self.0.cloud.intensity(i)).collect()
    }

    /// Renders the slice at `pose`; size defaults to the training view.
    #[pyo3(signature = (pose, width=None, height=None, spacing=None))]
    fn render(&self, py: Python<'_>, pose: &Pose, width: Option<usize>, height: Option<usize>, spacing: Option<f64>) -> PyResult<Slice> {
        let d = &self.0.meta.default_view;
        let spec = spec_for(width.unwrap_or(d.width), height.unwrap_or(d.height), spacing.unwrap_or(d.spacing), pose)?;
        let opts = self.render_options();
        py.detach(|| slicesplat::render_slice(&self.0.cloud, &spec, &opts))
            .map(Slice)
            .map_err(to_py_err)
    }

    /// SSIM/PSNR of axial, coronal and sagittal views against `volume`.
    #[pyo3(signature = (volume, n_per_axis=16))]
    fn evaluate<'py>(&self, py: Python<'py>, volume: &Volume, n_per_axis: usize) -> PyResult<Bound<'py, PyAny>> {
        let opts = self.render_options();
        let report = py
            .detach(|| evaluate_views(&self.0.cloud, &volume.0, n_per_axis, &opts))
            .map_err(to_py_err)?;
        serialize_to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint({} Gaussians, iteration {})", self.0.cloud.len(), self.0.meta.iteration)
    }
}

/// Fits a cloud to slices of `volume`: an axial stack by default, or a
/// random sweep of `sweep` frames. With `train_fraction`, returns the
/// checkpoint and the held-out slices.
#[pyfunction]
#[pyo3(signature = (
    volume, *, n_slices=None, perturb_deg=0.0, sweep=None, max_tilt_deg=30.0, train_fraction=None,
    preset="desk", n_gaussians=None, iterations=None, seed=0,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    volume: &Volume,
    n_slices: Option<usize>,
    perturb_deg: f64,
    sweep: Option<usize>,
    max_tilt_deg: f64,
    train_fraction: Option<f64>,
    preset: &str,
    n_gaussians: Option<usize>,
    iterations: Option<usize>,
    seed: u64,
) -> PyResult<(Checkpoint, Vec<Slice>)> {
    let vol = &volume.0;
    let mut config = TrainConfig::preset(preset).map_err(to_py_err)?;
    config.seed = seed;
    if let Some(n) = n_gaussians {
        config.n_gaussians = n;
    }
    if let Some(n) = iterations {
        config.iterations = n;
    }
    let result = py.detach(|| -> slicesplat::Result<_> {
        let ds = match sweep {
            Some(n) => make_random_sweep(vol, n, max_tilt_deg, seed)?,
            None => make_axial_stack(vol, n_slices.unwrap_or(vol.depth()), perturb_deg, seed)?,
        };
        let ds = match train_fraction {
            Some(f) => split_dataset(&ds, f, seed)?,
            None => ds,
        };
        let ctx = TrainContext {
            bounds: Some(vol.world_bounds()),
            ..Default::default()
        };
        let out = trainer::train(&ds, &config, &ctx, |_| {})?;
        let view = ViewDefaults {
            width: vol.width(),
            height: vol.height(),
            spacing: vol.spacing,
        };
        Ok((out.checkpoint(&config, view), ds.test()))
    });
    let (ckpt, test) = result.map_err(to_py_err)?;
    Ok((Checkpoint(ckpt), test.into_iter().map(Slice).collect()))
}

/// Compares the analytic gradients with central differences on a random
/// scene; returns the worst relative error per parameter group.
#[pyfunction]
#[pyo3(signature = (seed=0, n_gaussians=20, size=16, p_mass=0.9999))]
fn grad_check(py: Python<'_>, seed: u64, n_gaussians: usize, size: usize, p_mass: f64) -> PyResult<Bound<'_, PyDict>> {
    let report = py
        .detach(|| {
            let (cloud, spec) = random_check_scene(seed, n_gaussians, size)?;
            let opts = GradCheckOptions {
                p_mass,
                seed,
                ..GradCheckOptions::default()
            };
            run_grad_check(&cloud, &spec, &opts)
        })
        .map_err(to_py_err)?;
    let dict = PyDict::new(py);
    for (name, g) in report.groups() {
        dict.set_item(name, g.max_rel)?;
    }
    Ok(dict)
}

/// Squared Mahalanobis radius enclosing probability mass `p` in 3-D.
#[pyfunction]
fn chi_square_3(p: f64) -> PyResult<f64> {
    chi2_quantile(p).map_err(to_py_err)
}

#[pymodule]
#[pyo3(name = "slicesplat")]
fn slicesplat_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pose>()?;
    m.add_class::<Slice>()?;
    m.add_class::<Volume>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_3, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
