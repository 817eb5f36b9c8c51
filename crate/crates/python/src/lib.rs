//! Python bindings. Rationals cross the boundary as strings such as `"3/5"`;
//! reports come back as plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use monoshift_core as core;
use core::dist::{FiniteDistribution, JointMass};
use core::rational::{format_rational, parse_rational, Rational};

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rational(text: &str) -> PyResult<Rational> {
    parse_rational(text).map_err(err)
}

fn joint_dict(j: &JointMass) -> Vec<(usize, usize, String)> {
    j.atoms().map(|(a, b, m)| (a, b, format_rational(m))).collect()
}

/// A distribution on `{0, …, N−1}` with the usual order.
#[pyclass(name = "Distribution", frozen)]
struct PyDistribution(FiniteDistribution);

#[pymethods]
impl PyDistribution {
    /// From masses given as strings (`"1/3"`, `"0.25"`) or one comma list.
    #[new]
    fn new(masses: Vec<String>) -> PyResult<Self> {
        let d = match masses.as_slice() {
            [one] => FiniteDistribution::parse(one),
            many => many.iter().map(|m| parse_rational(m)).collect::<Result<Vec<_>, _>>().and_then(FiniteDistribution::from_masses),
        };
        d.map(PyDistribution).map_err(err)
    }

    #[getter]
    fn masses(&self) -> Vec<String> {
        self.0.masses().iter().map(format_rational).collect()
    }

    fn entropy(&self) -> f64 {
        core::dist::entropy(&self.0)
    }

    fn dominates(&self, other: &PyDistribution) -> PyResult<bool> {
        core::dist::dominates(&self.0, &other.0).map_err(err)
    }

    /// Quantile coupling as `(a, b, mass)` triples.
    fn quantile_coupling(&self, other: &PyDistribution) -> PyResult<Vec<(usize, usize, String)>> {
        core::dist::quantile_coupling(&self.0, &other.0).map(|j| joint_dict(&j)).map_err(err)
    }

    /// Whether a monotone coupling exists, by max-flow, with a witness.
    fn strassen(&self, other: &PyDistribution) -> PyResult<(bool, Option<Vec<(usize, usize, String)>>)> {
        let r = core::flow::strassen_check(&self.0, &other.0).map_err(err)?;
        Ok((r.feasible, r.witness.as_ref().map(joint_dict)))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Distribution([{}])", self.masses().join(", "))
    }
}

/// A joint law `ρ` on `A × B`, written `"a,b:mass; …"`.
#[pyclass(name = "PairLaw", frozen)]
struct PyPairLaw(core::star::PairLaw);

#[pymethods]
impl PyPairLaw {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        core::star::PairLaw::parse(text).map(PyPairLaw).map_err(err)
    }

    #[staticmethod]
    fn random(left: usize, right: usize, denominator: u32, rng: &mut PyRng) -> PyResult<Self> {
        core::star::random_pair_law(left, right, denominator, &mut rng.0).map(PyPairLaw).map_err(err)
    }

    fn atoms(&self) -> Vec<(usize, usize, String)> {
        joint_dict(self.0.joint())
    }

    fn is_deterministic(&self) -> bool {
        self.0.is_deterministic()
    }

    /// Exact star-coupling with `other`: parts and atoms.
    fn star_couple<'py>(&self, py: Python<'py>, other: &PyPairLaw) -> PyResult<Bound<'py, PyAny>> {
        let s = core::star::star_couple(&self.0, &other.0).map_err(err)?;
        to_py(py, &s.to_record())
    }

    /// Projections, independence and fine-split audit of the star-coupling.
    fn star_audit<'py>(&self, py: Python<'py>, other: &PyPairLaw) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &core::star::star_audit(&self.0, &other.0).map_err(err)?)
    }

    /// Exact law of one replacement step with `k_init` and `k_block` copies.
    fn replacement<'py>(&self, py: Python<'py>, k_init: usize, k_block: usize) -> PyResult<Bound<'py, PyAny>> {
        use core::star::{star_couple_with_replacement, GroupedPairLaw};
        let z0 = GroupedPairLaw::product(&self.0, k_init).map_err(err)?;
        let z1 = GroupedPairLaw::product(&self.0, k_block).map_err(err)?;
        to_py(py, &star_couple_with_replacement(&z0, &z1).map_err(err)?.to_record())
    }

    /// Non-desirable mass bound at stages `0..=stages`.
    fn presmb_bounds<'py>(&self, py: Python<'py>, k_init: usize, k_block: usize, stages: usize) -> PyResult<Bound<'py, PyAny>> {
        use core::star::{iterated_star_with_replacement, GroupedPairLaw};
        let z0 = GroupedPairLaw::product(&self.0, k_init).map_err(err)?;
        let zb = GroupedPairLaw::product(&self.0, k_block).map_err(err)?;
        let chain = iterated_star_with_replacement(&z0, &vec![zb; stages]).map_err(err)?;
        let ctx = core::deljunco::GoodnessContext::new(&self.0, k_init, k_block, None).map_err(err)?;
        let bounds = (0..=stages).map(|j| core::deljunco::presmb_bound(&chain, &ctx, j)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        to_py(py, &bounds)
    }

    fn __repr__(&self) -> String {
        let atoms: Vec<String> = self.atoms().into_iter().map(|(a, b, m)| format!("{a},{b}:{m}")).collect();
        format!("PairLaw({:?})", atoms.join(";"))
    }
}

/// A seeded ChaCha20 stream.
#[pyclass(name = "Rng")]
struct PyRng(core::rng::RngStream);

#[pymethods]
impl PyRng {
    #[new]
    #[pyo3(signature = (seed, stream = 0))]
    fn new(seed: u64, stream: u64) -> Self {
        PyRng(core::rng::RngStream::new(seed, stream))
    }

    fn substream(&self, index: u64) -> Self {
        PyRng(self.0.substream(index))
    }

    fn uniform(&mut self) -> f64 {
        self.0.uniform_f64()
    }
}

/// Filler-set domination audit for words of length `n`.
#[pyfunction]
fn filler_audit<'py>(py: Python<'py>, n: usize, p: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &core::markers::filler_audit(n, &rational(p)?).map_err(err)?)
}

/// Marker/filler tags of a 0/1 string: `M`, `F`, or `?` where unresolved.
#[pyfunction]
fn hat_map(bits: &str) -> PyResult<String> {
    let symbols = bits
        .chars()
        .map(|c| c.to_digit(2).map(|d| d as u8).ok_or_else(|| PyValueError::new_err(format!("not a bit: {c:?}"))))
        .collect::<PyResult<Vec<u8>>>()?;
    let w = core::markers::BinaryWindow::new(0, symbols).map_err(err)?;
    core::markers::hat_map(&w).map(|h| h.pattern()).map_err(err)
}

/// Law of the length-`k` tag pattern under `mu` or `nu`.
#[pyfunction]
fn hat_pattern_distribution(k: usize, p: &str, side: &str) -> PyResult<Vec<(String, String)>> {
    let side = match side {
        "mu" => core::markers::Side::Mu,
        "nu" => core::markers::Side::Nu,
        other => return Err(PyValueError::new_err(format!("side must be 'mu' or 'nu', got {other:?}"))),
    };
    let law = core::markers::hat_pattern_distribution(k, &rational(p)?, side).map_err(err)?;
    Ok(law.into_iter().map(|(k, m)| (k, format_rational(&m))).collect())
}

fn digits(text: &str) -> PyResult<Vec<u8>> {
    text.chars()
        .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(|| PyValueError::new_err(format!("not a digit: {c:?}"))))
        .collect()
}

/// Meshalkin map of a window of symbols `0..=4`; `None` where unmatched.
#[pyfunction]
fn meshalkin_forward(symbols: &str) -> PyResult<Vec<Option<u8>>> {
    core::meshalkin::forward_window(&digits(symbols)?, core::meshalkin::ParityCode::new(2).map_err(err)?).map_err(err)
}

/// Inverse map on a fully matched output window.
#[pyfunction]
fn meshalkin_inverse(symbols: &str) -> PyResult<Vec<u32>> {
    let x = core::meshalkin::meshalkin_inverse_full(&digits(symbols)?, core::meshalkin::ParityCode::new(2).map_err(err)?).map_err(err)?;
    Ok(x.into_iter().map(u32::from).collect())
}

/// Statistical check of the image law from the default input measure.
#[pyfunction]
#[pyo3(signature = (seed, samples = None))]
fn meshalkin_verify<'py>(py: Python<'py>, seed: u64, samples: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = core::meshalkin::VerifyConfig::default();
    if let Some(n) = samples {
        cfg.samples = n;
    }
    let code = core::meshalkin::ParityCode::new(2).map_err(err)?;
    to_py(py, &core::meshalkin::verify_pushforward(code, &cfg, &core::rng::RngStream::new(seed, 0)).map_err(err)?)
}

/// Desk-mode star-modification plan.
#[pyclass(name = "DeskPlan", frozen)]
struct PyDeskPlan(core::perturb::StarModPlan);

#[pymethods]
impl PyDeskPlan {
    #[new]
    #[pyo3(signature = (p, k_mark, k_rmark, k_block, types, k_init = 1, window_len = 2048, ell_star = 3))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        p: &str,
        k_mark: usize,
        k_rmark: usize,
        k_block: usize,
        types: Vec<String>,
        k_init: usize,
        window_len: usize,
        ell_star: usize,
    ) -> PyResult<Self> {
        let types = types.iter().map(|t| t.parse()).collect::<Result<Vec<_>, core::Error>>().map_err(err)?;
        core::perturb::StarModPlan::desk(&rational(p)?, k_mark, k_rmark, k_block, types, k_init, window_len, ell_star)
            .map(PyDeskPlan)
            .map_err(err)
    }

    /// Star-modifies `samples` windows and tallies every invariant.
    fn run<'py>(&self, py: Python<'py>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &core::perturb::run_desk(&self.0, samples, &core::rng::RngStream::new(seed, 0)).map_err(err)?)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }
}

/// Runs the parameter schedule for `(p, eps)`.
#[pyfunction]
#[pyo3(signature = (p, eps, seed = 0))]
fn build_plan<'py>(py: Python<'py>, p: &str, eps: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = core::perturb::ScheduleConfig { seed, ..Default::default() };
    let report = py.detach(|| core::perturb::build_plan(&rational(p)?, eps, &cfg).map_err(err))?;
    to_py(py, &report)
}

#[pyfunction]
fn onemark_check<'py>(py: Python<'py>, p: &PyDistribution, q: &PyDistribution, i: usize, j: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &core::reductions::onemark_check(&p.0, &q.0, i, j).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (p, q, indices, n_max = 3))]
fn twomark_check<'py>(
    py: Python<'py>,
    p: &PyDistribution,
    q: &PyDistribution,
    indices: (usize, usize, usize, usize),
    n_max: usize,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &core::reductions::twomark_check(&p.0, &q.0, indices, n_max).map_err(err)?)
}

#[pymodule]
fn monoshift(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyPairLaw>()?;
    m.add_class::<PyRng>()?;
    m.add_class::<PyDeskPlan>()?;
    m.add_function(wrap_pyfunction!(filler_audit, m)?)?;
    m.add_function(wrap_pyfunction!(hat_map, m)?)?;
    m.add_function(wrap_pyfunction!(hat_pattern_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(meshalkin_forward, m)?)?;
    m.add_function(wrap_pyfunction!(meshalkin_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(meshalkin_verify, m)?)?;
    m.add_function(wrap_pyfunction!(build_plan, m)?)?;
    m.add_function(wrap_pyfunction!(onemark_check, m)?)?;
    m.add_function(wrap_pyfunction!(twomark_check, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
