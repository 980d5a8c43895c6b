use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn with_module(code: &str) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let module = wrap_pymodule!(pymiagrid::pymiagrid)(py);
        let globals = PyDict::new(py);
        globals.set_item("mg", module)?;
        py.run(&std::ffi::CString::new(code).unwrap(), Some(&globals), None)
    })
}

#[test]
fn statistics_round_trip_through_python() {
    with_module(
        r#"
lo, hi = mg.clopper_pearson(5, 10)
assert abs(lo - 0.1871) < 1e-3 and abs(hi - 0.8129) < 1e-3
assert mg.by_adjust([1.0]) == [1.0]
assert abs(mg.account_epsilon(1.0, 1, 1.0, 1e-5) - 5.2983) < 1e-3
assert mg.dp_tpr_bound(1.0, 1, 1.0, 0.5) >= 0.5
stat, p = mg.paired_permutation_test([3.0, 2.0], [1.0, 1.0])
assert p == 0.25
"#,
    )
    .unwrap();
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(
        r#"
for bad in (lambda: mg.Experiment.from_toml("shots = 0"), lambda: mg.by_adjust([2.0])):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
assert issubclass(mg.IntegrityError, Exception)
"#,
    )
    .unwrap();
}
