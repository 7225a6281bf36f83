//! Python bindings: cocycles, detection, spectra and the roughness constants.
//!
//! Matrices cross the boundary as lists of rows. Base points are floats for
//! rotation drivers and integers for index drivers.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dichotomy::admissibility::{detect_dichotomy, DetectConfig};
use dichotomy::dynamics::{BaseDriver, Cocycle as CoreCocycle, Generator, State};
use dichotomy::green::{convolve, DichotomyData, GreenTable};
use dichotomy::roughness::{perturbed_projector as core_perturbed_projector, roughness_constants as core_roughness, IterationConfig, PerturbationSpec};
use dichotomy::spectrum::{build_return_cocycle, kac_check, lyapunov_qr, met_dichotomy, MetConfig, ReturnSet};
use dichotomy::weighted::WindowedSequence;

create_exception!(dichotomy_py, NumericalError, PyRuntimeError, "A numerical certificate or iteration failed.");

fn to_py(e: dichotomy::Error) -> PyErr {
    if e.is_numeric() {
        NumericalError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 || rows.iter().any(|x| x.len() != c) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A linear cocycle over an invertible base map.
#[pyclass(module = "dichotomy_py", frozen)]
pub struct Cocycle {
    inner: CoreCocycle,
}

impl Cocycle {
    fn build(driver: BaseDriver, generator: Generator) -> PyResult<Self> {
        Ok(Cocycle {
            inner: CoreCocycle::new(driver, generator).map_err(to_py)?,
        })
    }

    fn state(&self, omega: f64) -> PyResult<State> {
        let s = match self.inner.driver() {
            BaseDriver::Rotation { .. } => State::Phase(omega),
            _ if omega.fract() == 0.0 => State::Index(omega as i64),
            _ => return Err(PyValueError::new_err(format!("base point {omega} must be an integer here"))),
        };
        self.inner.driver().check_state(&s).map_err(to_py)?;
        Ok(s)
    }
}

#[pymethods]
impl Cocycle {
    /// The three-dimensional staircase cocycle over the golden rotation.
    #[staticmethod]
    #[pyo3(signature = (i_max = Generator::DEFAULT_I_MAX))]
    fn remark42(i_max: u32) -> PyResult<Self> {
        Self::build(BaseDriver::golden_rotation(), Generator::Staircase { i_max })
    }

    /// A constant matrix over the golden rotation.
    #[staticmethod]
    fn constant(matrix: Vec<Vec<f64>>) -> PyResult<Self> {
        Self::build(BaseDriver::golden_rotation(), Generator::Constant(to_matrix(&matrix)?))
    }

    #[staticmethod]
    fn constant_diag(entries: Vec<f64>) -> PyResult<Self> {
        Self::build(BaseDriver::golden_rotation(), Generator::constant_diag(&entries))
    }

    /// A deterministic sequence `A(start + j) = blocks[j mod len]` on the integers.
    #[staticmethod]
    #[pyo3(signature = (blocks, start = 0))]
    fn table(blocks: Vec<Vec<Vec<f64>>>, start: i64) -> PyResult<Self> {
        let blocks = blocks.iter().map(|b| to_matrix(b)).collect::<PyResult<_>>()?;
        Self::build(BaseDriver::IntegerShift, Generator::Table { start, blocks })
    }

    /// `diag(e^{-(rate + delta cos n)}, e^{rate + delta cos n})` on the integers.
    #[staticmethod]
    fn modulated_diag(rate: f64, delta: f64) -> PyResult<Self> {
        Self::build(BaseDriver::IntegerShift, Generator::ModulatedDiag { rate, delta })
    }

    /// `A + sum_i xi_i E_i` with the same driver as `base`.
    #[staticmethod]
    fn perturbed(base: &Cocycle, directions: Vec<Vec<Vec<f64>>>, xi: Vec<f64>) -> PyResult<Self> {
        let directions = directions.iter().map(|b| to_matrix(b)).collect::<PyResult<_>>()?;
        Self::build(
            base.inner.driver().clone(),
            Generator::Perturbed {
                base: Box::new(base.inner.generator().clone()),
                directions,
                xi,
            },
        )
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `A(omega)`.
    fn matrix(&self, omega: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.matrix(&self.state(omega)?)))
    }

    /// `Phi(n, omega)` for `n >= 0`.
    fn evolve(&self, omega: f64, n: i64) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.evolve(&self.state(omega)?, n).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("Cocycle(dim={}, driver={:?})", self.inner.dim(), self.inner.driver())
    }
}

/// Projections `P(n)`, bounds `K(n)` and the rate `alpha` on a window `|n| <= M`.
#[pyclass(module = "dichotomy_py", frozen)]
pub struct Dichotomy {
    inner: DichotomyData,
    temperedness: Option<f64>,
}

#[pymethods]
impl Dichotomy {
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn half_width(&self) -> i64 {
        self.inner.half_width()
    }

    #[getter]
    fn k_samples(&self) -> Vec<f64> {
        self.inner.k_samples().to_vec()
    }

    #[getter]
    fn temperedness(&self) -> Option<f64> {
        self.temperedness
    }

    fn projector(&self, n: i64) -> PyResult<Vec<Vec<f64>>> {
        self.in_window(n)?;
        Ok(to_rows(self.inner.proj(n)))
    }

    fn k(&self, n: i64) -> PyResult<f64> {
        self.in_window(n)?;
        Ok(self.inner.k(n))
    }

    /// Idempotence and equivariance defects and the largest Green bound slack.
    fn defects<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = self.inner.defects().map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("idempotence", d.idempotence)?;
        out.set_item("equivariance", d.equivariance)?;
        out.set_item("decay_slack", d.decay_slack)?;
        Ok(out)
    }

    /// `G(n, k)` on the window.
    fn green(&self, n: i64, k: i64) -> PyResult<Vec<Vec<f64>>> {
        self.in_window(n)?;
        self.in_window(k)?;
        let table = GreenTable::build(&self.inner).map_err(to_py)?;
        Ok(to_rows(table.get(n, k)))
    }

    /// `x(n) = sum_k G(n, k) f(k)` for `f` given on every `|n| <= M`.
    fn convolve(&self, f: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.half_width();
        if f.len() != (2 * m + 1) as usize {
            return Err(PyValueError::new_err(format!("need {} vectors, got {}", 2 * m + 1, f.len())));
        }
        let seq = WindowedSequence::new(-m, f.into_iter().map(DVector::from_vec).collect()).map_err(to_py)?;
        let table = GreenTable::build(&self.inner).map_err(to_py)?;
        let sol = convolve(&self.inner, &table, &seq).map_err(to_py)?;
        Ok(sol.x.values().iter().map(|v| v.iter().copied().collect()).collect())
    }
}

impl Dichotomy {
    fn in_window(&self, n: i64) -> PyResult<()> {
        let m = self.inner.half_width();
        if n.abs() > m {
            return Err(PyValueError::new_err(format!("index {n} outside the window [-{m}, {m}]")));
        }
        Ok(())
    }
}

/// Detects a dichotomy along the orbit of `omega` from windowed solves of half width `window`.
#[pyfunction]
#[pyo3(signature = (cocycle, omega, window, beta, half_width = None))]
fn detect(cocycle: &Cocycle, omega: f64, window: i64, beta: f64, half_width: Option<i64>) -> PyResult<Dichotomy> {
    let mut cfg = DetectConfig::new(window, beta);
    cfg.data_half_width = half_width;
    let det = detect_dichotomy(&cocycle.inner, &cocycle.state(omega)?, &cfg).map_err(to_py)?;
    Ok(Dichotomy {
        inner: det.data,
        temperedness: det.temperedness,
    })
}

/// Dichotomy from the Lyapunov spectrum over `n_steps` steps.
#[pyfunction]
fn met(cocycle: &Cocycle, omega: f64, n_steps: u64, half_width: i64) -> PyResult<Dichotomy> {
    let md = met_dichotomy(&cocycle.inner, &cocycle.state(omega)?, &MetConfig::new(n_steps, half_width)).map_err(to_py)?;
    Ok(Dichotomy {
        inner: md.data,
        temperedness: md.temperedness,
    })
}

/// Lyapunov exponents in decreasing order.
#[pyfunction]
fn lyapunov(cocycle: &Cocycle, omega: f64, n_steps: u64) -> PyResult<Vec<f64>> {
    Ok(lyapunov_qr(&cocycle.inner, &cocycle.state(omega)?, n_steps).map_err(to_py)?.exponents)
}

#[pyfunction]
fn gamma(alpha: f64, beta: f64) -> PyResult<f64> {
    dichotomy::green::gamma(alpha, beta).map_err(to_py)
}

#[pyfunction]
fn gamma_tilde(alpha: f64, beta: f64) -> PyResult<f64> {
    dichotomy::green::gamma_tilde(alpha, beta).map_err(to_py)
}

#[pyfunction]
fn gamma_sharp(alpha: f64, beta: f64) -> PyResult<f64> {
    dichotomy::green::gamma_sharp(alpha, beta).map_err(to_py)
}

/// Every constant of the roughness estimate for rate `alpha` and perturbation size `rho`.
#[pyfunction]
fn roughness_constants<'py>(py: Python<'py>, alpha: f64, rho: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = core_roughness(alpha, rho).map_err(to_py)?;
    let out = PyDict::new(py);
    for (k, v) in [
        ("alpha", c.alpha),
        ("rho", c.rho),
        ("beta_star", c.beta_star),
        ("contraction", c.contraction),
        ("alpha_tilde", c.alpha_tilde),
        ("kappa", c.kappa),
        ("varrho", c.varrho),
        ("d1", c.d1),
        ("d2", c.d2),
        ("beta_tilde", c.beta_tilde),
    ] {
        out.set_item(k, v)?;
    }
    Ok(out)
}

/// Constants of the induced-cocycle decay for a bound `L >= 1`.
#[pyfunction]
fn return_constants<'py>(py: Python<'py>, l: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = dichotomy::spectrum::return_constants(l).map_err(to_py)?;
    let out = PyDict::new(py);
    for (k, v) in [
        ("l", c.l),
        ("h1", c.h1),
        ("h2", c.h2),
        ("n0", c.n0),
        ("nu", c.nu),
        ("q", c.q),
        ("n0_prime", c.n0_prime),
        ("nu_prime", c.nu_prime),
        ("q_prime", c.q_prime),
    ] {
        out.set_item(k, v)?;
    }
    Ok(out)
}

/// The perturbed projector at the base point of `dich` for `A + sum_i xi_i E_i`.
#[pyfunction]
fn perturbed_projector(dich: &Dichotomy, directions: Vec<Vec<Vec<f64>>>, xi: Vec<f64>, rho: f64) -> PyResult<Vec<Vec<f64>>> {
    let directions = directions.iter().map(|b| to_matrix(b)).collect::<PyResult<_>>()?;
    let pert = PerturbationSpec::new(directions, rho, 1.0, 1.0).map_err(to_py)?;
    let cfg = IterationConfig::at_beta_star(dich.inner.alpha, rho).map_err(to_py)?;
    Ok(to_rows(&core_perturbed_projector(&dich.inner, &pert, &xi, &cfg).map_err(to_py)?))
}

/// Cumulative return times of `omega` to `[lo, hi)` and the Kac ratio `P(F) * mean return time`.
#[pyfunction]
#[pyo3(signature = (cocycle, omega, lo, hi, n_returns, samples = 100_000, seed = 0))]
fn returns<'py>(
    py: Python<'py>,
    cocycle: &Cocycle,
    omega: f64,
    lo: f64,
    hi: f64,
    n_returns: usize,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let set = ReturnSet::Interval { lo, hi };
    let p_hat = set.estimate_measure(cocycle.inner.driver(), samples, seed).map_err(to_py)?;
    let cap = 100 * n_returns as u64 + 1000;
    let rc = build_return_cocycle(&cocycle.inner, &set, &cocycle.state(omega)?, n_returns, cap, p_hat).map_err(to_py)?;
    let kac = kac_check(&rc);
    let out = PyDict::new(py);
    out.set_item("return_times", rc.return_times.clone())?;
    out.set_item("p_hat", p_hat)?;
    out.set_item("mean_return", kac.mean_return)?;
    out.set_item("kac_ratio", kac.kac_ratio)?;
    Ok(out)
}

#[pymodule]
fn dichotomy_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<Cocycle>()?;
    m.add_class::<Dichotomy>()?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(met, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_tilde, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_sharp, m)?)?;
    m.add_function(wrap_pyfunction!(roughness_constants, m)?)?;
    m.add_function(wrap_pyfunction!(return_constants, m)?)?;
    m.add_function(wrap_pyfunction!(perturbed_projector, m)?)?;
    m.add_function(wrap_pyfunction!(returns, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = to_matrix(&rows).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(to_rows(&m), rows);
    }

    #[test]
    fn base_points_follow_the_driver() {
        let rot = Cocycle::remark42(20).unwrap();
        assert_eq!(rot.state(0.25).unwrap(), State::Phase(0.25));
        let shift = Cocycle::modulated_diag(1.0, 0.3).unwrap();
        assert_eq!(shift.state(3.0).unwrap(), State::Index(3));
    }
}
