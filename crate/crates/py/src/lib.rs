//! Python bindings: metric perturbations, test functions, charges and the
//! scenario runner.

use ahmass::charges::{
    charge_adm, charge_surface, mass_vector, sphere_rule, ChargeOptions, ChargeResult, CutoffFamily, CutoffProfile,
    IntegrandForm, TestFunction,
};
use ahmass::chartlab::{apply_chart_change, make_kottler, make_wang_metric, ChartChange, GaugeDirection, GaugeField, GaugeProfile};
use ahmass::cli::{run, scenario_table, summary_json, RunConfig};
use ahmass::eigenfunctions::{self as eig, BoundaryFunction, KernelQuadratureSpec};
use ahmass::fd::FdStep;
use ahmass::geometry::{self, lorentz, LapseFunction, LorentzKind, LorentzMap, Point};
use ahmass::tensorcalc::{scal_deviation, MetricPerturbation};
use ahmass::Error;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) | Error::Unsupported(_) | Error::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => PyArithmeticError::new_err(e.to_string()),
    }
}

fn boundary(c: f64, a: Option<Vec<f64>>, l_max: Option<usize>, coeffs: Option<Vec<f64>>) -> PyResult<BoundaryFunction> {
    match (a, l_max, coeffs) {
        (None, None, None) => Ok(BoundaryFunction::Constant(c)),
        (Some(a), None, None) => Ok(BoundaryFunction::Affine { c, a }),
        (None, Some(l_max), Some(coeffs)) => Ok(BoundaryFunction::Harmonics { l_max, coeffs }),
        _ => Err(PyValueError::new_err("give either `a` or both `l_max` and `coeffs`")),
    }
}

fn profile(name: &str) -> PyResult<CutoffProfile> {
    match name {
        "quintic" => Ok(CutoffProfile::Quintic),
        "septic" => Ok(CutoffProfile::Septic),
        _ => Err(PyValueError::new_err(format!("unknown cutoff profile {name:?}"))),
    }
}

fn form(name: Option<&str>) -> PyResult<Option<IntegrandForm>> {
    match name {
        None => Ok(None),
        Some("standard") => Ok(Some(IntegrandForm::Standard)),
        Some("hessian") => Ok(Some(IntegrandForm::Hessian)),
        Some(f) => Err(PyValueError::new_err(format!("unknown integrand form {f:?}"))),
    }
}

/// Numerical settings shared by the charge methods.
struct Settings {
    sphere_order: usize,
    cutoffs: CutoffFamily,
    opts: ChargeOptions,
}

fn settings(sphere_order: usize, k_min: u32, k_max: u32, cutoff: &str, integrand: Option<&str>) -> PyResult<Settings> {
    Ok(Settings {
        sphere_order,
        cutoffs: CutoffFamily::range(profile(cutoff)?, k_min, k_max).map_err(py_err)?,
        opts: ChargeOptions { form: form(integrand)?, ..ChargeOptions::default() },
    })
}

#[pyclass(name = "ChargeResult", module = "ahmass", frozen)]
struct PyChargeResult {
    inner: ChargeResult,
}

#[pymethods]
impl PyChargeResult {
    /// `[(k, p_k), ...]` through the cutoff schedule.
    #[getter]
    fn samples(&self) -> Vec<(f64, f64)> {
        self.inner.samples.clone()
    }

    #[getter]
    fn extrapolated(&self) -> f64 {
        self.inner.extrapolated
    }

    #[getter]
    fn error_estimate(&self) -> f64 {
        self.inner.error_estimate
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn __repr__(&self) -> String {
        format!(
            "ChargeResult(extrapolated={}, error_estimate={:e}, converged={})",
            self.inner.extrapolated, self.inner.error_estimate, self.inner.converged
        )
    }
}

#[pyclass(name = "MassVector", module = "ahmass", frozen)]
struct PyMassVector {
    p: Vec<f64>,
    results: Vec<ChargeResult>,
}

#[pymethods]
impl PyMassVector {
    #[getter]
    fn p(&self) -> Vec<f64> {
        self.p.clone()
    }

    #[getter]
    fn results(&self) -> Vec<PyChargeResult> {
        self.results.iter().map(|r| PyChargeResult { inner: r.clone() }).collect()
    }

    /// `(p^0)^2 - |p|^2`
    fn minkowski_square(&self) -> f64 {
        self.p[0] * self.p[0] - self.p[1..].iter().map(|c| c * c).sum::<f64>()
    }

    fn __repr__(&self) -> String {
        format!("MassVector(p={:?})", self.p)
    }
}

/// A lapse function `sum a_mu V^mu`.
#[pyclass(name = "Lapse", module = "ahmass", frozen)]
struct PyLapse {
    inner: LapseFunction,
}

#[pymethods]
impl PyLapse {
    #[new]
    fn new(coeffs: Vec<f64>) -> PyResult<Self> {
        Ok(PyLapse { inner: LapseFunction::new(coeffs).map_err(py_err)? })
    }

    #[staticmethod]
    fn basis(n: usize, mu: usize) -> PyResult<Self> {
        if mu > n {
            return Err(PyValueError::new_err("mu must be at most n"));
        }
        Ok(PyLapse { inner: LapseFunction::basis(n, mu) })
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs.clone()
    }

    /// Value at a ball point.
    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        Point::ball(&x).map_err(py_err)?;
        Ok(self.inner.value_ball(&x))
    }
}

/// Solution of `Laplacian V = n V` with boundary data `v0`.
#[pyclass(name = "Eigenfunction", module = "ahmass", frozen)]
struct PyEigenfunction {
    inner: eig::Eigenfunction,
}

#[pymethods]
impl PyEigenfunction {
    #[new]
    #[pyo3(signature = (n, c=1.0, a=None, l_max=None, coeffs=None, radial_order=48, angular_order=16))]
    fn new(
        n: usize,
        c: f64,
        a: Option<Vec<f64>>,
        l_max: Option<usize>,
        coeffs: Option<Vec<f64>>,
        radial_order: usize,
        angular_order: usize,
    ) -> PyResult<Self> {
        let spec = KernelQuadratureSpec { radial_order, angular_order };
        let inner = eig::Eigenfunction::new(n, boundary(c, a, l_max, coeffs)?, spec).map_err(py_err)?;
        Ok(PyEigenfunction { inner })
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.solve(&Point::ball(&x).map_err(py_err)?).map_err(py_err)
    }

    /// `(value, orthonormal gradient, Hess V - V b)` at a ball point.
    fn jet(&self, x: Vec<f64>) -> PyResult<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        Point::ball(&x).map_err(py_err)?;
        let j = self.inner.jet_ball(&x, true);
        let d = j.deficit.expect("requested");
        let rows = (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect();
        Ok((j.value, j.gradient.as_slice().to_vec(), rows))
    }

    fn kernel_mass(&self) -> f64 {
        self.inner.kernel_mass()
    }
}

/// A metric perturbation `e = g - b` of hyperbolic space.
#[pyclass(name = "Perturbation", module = "ahmass", frozen)]
struct PyPerturbation {
    inner: MetricPerturbation,
}

impl PyPerturbation {
    fn change(&self, change: ChartChange) -> PyResult<PyPerturbation> {
        let inner = apply_chart_change(&self.inner, &change, FdStep::default()).map_err(py_err)?;
        Ok(PyPerturbation { inner })
    }
}

#[pymethods]
impl PyPerturbation {
    /// Wang-type metric with mass aspect `c + a.x` (or a harmonic expansion).
    #[staticmethod]
    #[pyo3(signature = (n, c=1.0, a=None, l_max=None, coeffs=None))]
    fn wang(n: usize, c: f64, a: Option<Vec<f64>>, l_max: Option<usize>, coeffs: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = make_wang_metric(n, boundary(c, a, l_max, coeffs)?).map_err(py_err)?;
        Ok(PyPerturbation { inner })
    }

    #[staticmethod]
    fn kottler(n: usize, m0: f64) -> PyResult<Self> {
        Ok(PyPerturbation { inner: make_kottler(n, m0).map_err(py_err)? })
    }

    #[staticmethod]
    fn zero(n: usize) -> PyResult<Self> {
        geometry::Dimension::new(n).map_err(py_err)?;
        Ok(PyPerturbation { inner: MetricPerturbation::zero(n) })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    /// Orthonormal-frame components at a ball point.
    fn eval(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Point::ball(&x).map_err(py_err)?;
        let m = self.inner.eval_on(&x);
        Ok((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }

    /// `Scal(b + e) + n(n-1)` at a ball point.
    fn scal_deviation(&self, x: Vec<f64>) -> PyResult<f64> {
        scal_deviation(&self.inner, &Point::ball(&x).map_err(py_err)?, FdStep::default()).map_err(py_err)
    }

    /// Pullback under a rotation in the plane of axes `a`, `b` (1-based).
    fn rotate(&self, a: usize, b: usize, angle: f64) -> PyResult<PyPerturbation> {
        let m = lorentz(self.inner.n, LorentzKind::Rotation { a, b, angle }).map_err(py_err)?;
        self.change(ChartChange::Isometry(m))
    }

    fn boost(&self, axis: usize, rapidity: f64) -> PyResult<PyPerturbation> {
        let m = lorentz(self.inner.n, LorentzKind::Boost { axis, rapidity }).map_err(py_err)?;
        self.change(ChartChange::Isometry(m))
    }

    /// Pullback under `exp(zeta)` with `|zeta| = amplitude exp(-rate r)`
    /// beyond `r0`; `plane=None` gives a radial field, `(a, b)` a rotation.
    #[pyo3(signature = (amplitude, rate=2.0, r0=2.0, plane=None))]
    fn gauge(&self, amplitude: f64, rate: f64, r0: f64, plane: Option<(usize, usize)>) -> PyResult<PyPerturbation> {
        let direction = match plane {
            None => GaugeDirection::Radial,
            Some((a, b)) => GaugeDirection::Rotation { a, b },
        };
        let n = self.inner.n;
        let g = GaugeField::new(n, GaugeProfile::Decaying { amplitude, rate, r0 }, direction).map_err(py_err)?;
        self.change(ChartChange::gauge(LorentzMap::identity(n), &g))
    }

    /// `p(e, V)` for a lapse function, through cutoffs and extrapolation.
    #[pyo3(signature = (v, sphere_order=12, k_min=4, k_max=10, cutoff="quintic", integrand=None))]
    fn charge(
        &self,
        v: &PyLapse,
        sphere_order: usize,
        k_min: u32,
        k_max: u32,
        cutoff: &str,
        integrand: Option<&str>,
    ) -> PyResult<PyChargeResult> {
        let s = settings(sphere_order, k_min, k_max, cutoff, integrand)?;
        let rule = sphere_rule(self.inner.n, s.sphere_order).map_err(py_err)?;
        let r = charge_adm(&self.inner, &TestFunction::Lapse(v.inner.clone()), &s.cutoffs, &rule, &s.opts)
            .map_err(py_err)?;
        Ok(PyChargeResult { inner: r })
    }

    /// `P(e, V)` for an eigenfunction.
    #[pyo3(signature = (v, sphere_order=12, k_min=4, k_max=10, cutoff="quintic"))]
    fn eigen_charge(&self, v: &PyEigenfunction, sphere_order: usize, k_min: u32, k_max: u32, cutoff: &str) -> PyResult<PyChargeResult> {
        let s = settings(sphere_order, k_min, k_max, cutoff, None)?;
        let rule = sphere_rule(self.inner.n, s.sphere_order).map_err(py_err)?;
        let r = charge_adm(&self.inner, &TestFunction::Eigen(v.inner.clone()), &s.cutoffs, &rule, &s.opts)
            .map_err(py_err)?;
        Ok(PyChargeResult { inner: r })
    }

    /// Flux of the charge integrand through the sphere of radius `r`.
    #[pyo3(signature = (v, r, sphere_order=12))]
    fn surface_charge(&self, v: &PyLapse, r: f64, sphere_order: usize) -> PyResult<f64> {
        let rule = sphere_rule(self.inner.n, sphere_order).map_err(py_err)?;
        charge_surface(&self.inner, &TestFunction::Lapse(v.inner.clone()), r, &rule, FdStep::default()).map_err(py_err)
    }

    #[pyo3(signature = (sphere_order=12, k_min=4, k_max=10, cutoff="quintic", integrand=None))]
    fn mass_vector(
        &self,
        sphere_order: usize,
        k_min: u32,
        k_max: u32,
        cutoff: &str,
        integrand: Option<&str>,
    ) -> PyResult<PyMassVector> {
        let s = settings(sphere_order, k_min, k_max, cutoff, integrand)?;
        let rule = sphere_rule(self.inner.n, s.sphere_order).map_err(py_err)?;
        let mv = mass_vector(&self.inner, &s.cutoffs, &rule, &s.opts).map_err(py_err)?;
        Ok(PyMassVector { p: mv.p, results: mv.results })
    }

    fn __repr__(&self) -> String {
        format!("Perturbation(n={}, meta={:?})", self.inner.n, self.inner.meta)
    }
}

#[pyfunction]
fn integral_i(n: usize, beta: f64) -> PyResult<f64> {
    eig::integral_i(n, beta).map_err(py_err)
}

#[pyfunction]
fn integral_j(n: usize, alpha: f64, beta: f64) -> PyResult<f64> {
    eig::integral_j(n, alpha, beta).map_err(py_err)
}

#[pyfunction]
fn asymptotic_prefactor(n: usize) -> f64 {
    eig::asymptotic_prefactor(n)
}

/// Hyperbolic distance between two ball points.
#[pyfunction]
fn distance(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    let (p, q) = (Point::ball(&x).map_err(py_err)?, Point::ball(&y).map_err(py_err)?);
    geometry::distance(&p, &q).map_err(py_err)
}

/// `exp_x(v)` for a ball point and ball-coordinate vector.
#[pyfunction]
fn exp_ball(x: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<f64>> {
    geometry::exp_ball(&x, &v).map_err(py_err)
}

/// Runs a JSON config and returns the summary JSON.
#[pyfunction]
fn run_config(config: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(summary_json(&run(&cfg).map_err(py_err)?))
}

#[pyfunction]
fn list_scenarios() -> String {
    scenario_table()
}

#[pymodule(name = "ahmass")]
fn ahmass_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyPerturbation>()?;
    m.add_class::<PyLapse>()?;
    m.add_class::<PyEigenfunction>()?;
    m.add_class::<PyChargeResult>()?;
    m.add_class::<PyMassVector>()?;
    m.add_function(wrap_pyfunction!(integral_i, m)?)?;
    m.add_function(wrap_pyfunction!(integral_j, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_prefactor, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(exp_ball, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    Ok(())
}
