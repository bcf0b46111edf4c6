//! Python bindings: mesh specification, level solver, stored wavefunctions and
//! quadrupole transition quantities.

use perimesh::coordinates::MassSet;
use perimesh::eigensolver::{assign_vibrational, solve_block, EigenRequest, MeshWavefunction};
use perimesh::hamiltonian::{MeshGeometry, StateLabel};
use perimesh::laguerre_mesh::{self, MeshSpec};
use perimesh::transitions::{self, PhysicalConstants, QuadrupoleGrid, StrengthOptions};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;
use std::sync::Arc;

fn to_py(e: perimesh::Error) -> PyErr {
    match e {
        perimesh::Error::InvalidArgument(_) | perimesh::Error::TooManyStates { .. } | perimesh::Error::MeshMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Node counts and scale factors of the perimetric mesh.
#[pyclass(name = "MeshSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeshSpec {
    inner: MeshSpec,
}

#[pymethods]
impl PyMeshSpec {
    #[new]
    #[pyo3(signature = (n_xy=40, n_z=20, h_xy=0.14, h_z=0.4))]
    fn new(n_xy: usize, n_z: usize, h_xy: f64, h_z: f64) -> PyResult<Self> {
        Ok(PyMeshSpec { inner: MeshSpec::new(n_xy, n_z, h_xy, h_z).map_err(to_py)? })
    }

    #[getter]
    fn n_xy(&self) -> usize {
        self.inner.n_xy
    }

    #[getter]
    fn n_z(&self) -> usize {
        self.inner.n_z
    }

    #[getter]
    fn h_xy(&self) -> f64 {
        self.inner.h_xy
    }

    #[getter]
    fn h_z(&self) -> f64 {
        self.inner.h_z
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!("MeshSpec(n_xy={}, n_z={}, h_xy={}, h_z={})", s.n_xy, s.n_z, s.h_xy, s.h_z)
    }
}

/// One computed level with its expansion coefficients.
#[pyclass(name = "Wavefunction", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyWavefunction {
    inner: MeshWavefunction,
}

#[pymethods]
impl PyWavefunction {
    #[getter]
    fn l(&self) -> u32 {
        self.inner.label.l
    }

    #[getter]
    fn v(&self) -> u32 {
        self.inner.v
    }

    #[getter]
    fn k_max(&self) -> u32 {
        self.inner.label.k_max
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.inner.energy
    }

    #[getter]
    fn quasibound(&self) -> bool {
        self.inner.quasibound
    }

    #[getter]
    fn mesh(&self) -> PyMeshSpec {
        PyMeshSpec { inner: self.inner.spec }
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coeffs.clone()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyWavefunction { inner: MeshWavefunction::load(&path).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Wavefunction(L={}, v={}, energy={:.15})", self.inner.label.l, self.inner.v, self.inner.energy)
    }
}

/// Lowest `n_states` natural-parity levels of angular momentum `l`.
#[pyfunction]
#[pyo3(signature = (l, n_states, mesh, m_p=perimesh::coordinates::PROTON_MASS, k_max_cap=2))]
fn solve_levels(
    py: Python<'_>,
    l: u32,
    n_states: usize,
    mesh: &PyMeshSpec,
    m_p: f64,
    k_max_cap: u32,
) -> PyResult<Vec<PyWavefunction>> {
    let spec = mesh.inner;
    let wfs = py
        .detach(|| -> perimesh::Result<Vec<MeshWavefunction>> {
            let masses = MassSet::new(m_p)?;
            let geom = Arc::new(MeshGeometry::new(spec, masses)?);
            let label = StateLabel::natural(l, k_max_cap);
            let res = solve_block(&label, &geom, &EigenRequest::new(n_states))?;
            Ok(assign_vibrational(&res, &label, &spec, &masses))
        })
        .map_err(to_py)?;
    Ok(wfs.into_iter().map(|inner| PyWavefunction { inner }).collect())
}

/// Zeros of the Laguerre polynomial of degree `n`.
#[pyfunction]
fn laguerre_zeros(n: usize) -> PyResult<Vec<f64>> {
    laguerre_mesh::laguerre_zeros(n).map_err(to_py)
}

/// Clebsch-Gordan coefficient `(j1 m1 j2 m2 | j3 m3)` for integer angular momenta.
#[pyfunction]
fn clebsch_gordan(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> PyResult<f64> {
    transitions::clebsch_gordan(j1, j2, j3, m1, m2, m3).map_err(to_py)
}

/// Reduced quadrupole strength between two levels and whether selection rules forbid it.
#[pyfunction]
#[pyo3(signature = (initial, final_, kappa_max=2))]
fn reduced_strength(initial: &PyWavefunction, final_: &PyWavefunction, kappa_max: u32) -> PyResult<(f64, bool)> {
    let grid = QuadrupoleGrid::new(initial.inner.spec, MassSet::new(initial.inner.m_p).map_err(to_py)?).map_err(to_py)?;
    let opts = StrengthOptions { kappa_max, ..Default::default() };
    let s = grid.strength(&initial.inner, &final_.inner, &opts).map_err(to_py)?;
    Ok((s.s, s.forbidden))
}

/// Oscillator strength of a quadrupole line; negative for emission.
#[pyfunction]
fn oscillator_strength(s: f64, e_i: f64, e_f: f64, l_i: u32) -> f64 {
    transitions::oscillator_strength(s, e_i, e_f, l_i, &PhysicalConstants::default())
}

/// Quadrupole transition probability per second for `e_f < e_i`.
#[pyfunction]
fn transition_probability(s: f64, e_i: f64, e_f: f64, l_i: u32) -> PyResult<f64> {
    transitions::transition_probability(s, e_i, e_f, l_i, &PhysicalConstants::default()).map_err(to_py)
}

#[pymodule]
fn perimesh_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMeshSpec>()?;
    m.add_class::<PyWavefunction>()?;
    m.add_function(wrap_pyfunction!(solve_levels, m)?)?;
    m.add_function(wrap_pyfunction!(laguerre_zeros, m)?)?;
    m.add_function(wrap_pyfunction!(clebsch_gordan, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_strength, m)?)?;
    m.add_function(wrap_pyfunction!(oscillator_strength, m)?)?;
    m.add_function(wrap_pyfunction!(transition_probability, m)?)?;
    Ok(())
}
