use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(script: &str, check: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(res_svm::res_svm)(py);
        let globals = PyDict::new(py);
        globals.set_item("res_svm", m).unwrap();
        let code = std::ffi::CString::new(script).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python script failed");
        }
        check(py, &globals);
    });
}

fn get<'py, T: for<'a> pyo3::FromPyObject<'a, 'py>>(g: &Bound<'py, PyDict>, key: &str) -> T
where
    for<'a> <T as pyo3::FromPyObject<'a, 'py>>::Error: std::fmt::Debug,
{
    g.get_item(key).unwrap().unwrap().extract::<T>().unwrap()
}

#[test]
fn hessian_update_matches_rank_two_formula() {
    with_module(
        r#"
h = res_svm.HessianApprox(2, 0.1)
updated = h.update([1.0, 0.0], [2.0, 0.0])
b = h.matrix()
d = h.descent_direction(0.0, [1.0, 1.0])
"#,
        |_, g| {
            assert!(get::<bool>(g, "updated"));
            let b: Vec<Vec<f64>> = get(g, "b");
            // r_tilde = (1.9, 0), v'r_tilde = 1.9, Bv = (1, 0): B+ = I + diag(1.9 - 1, 0) + 0.1 I
            assert!((b[0][0] - 2.0).abs() < 1e-12);
            assert!((b[1][1] - 1.1).abs() < 1e-12);
            assert!(b[0][1].abs() < 1e-15);
            let d: Vec<f64> = get(g, "d");
            assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 1.0 / 1.1).abs() < 1e-12);
        },
    );
}

#[test]
fn train_runs_and_reduces_objective() {
    with_module(
        r#"
data = res_svm.TrainingSet.generate(4, 1000, seed=3)
cfg = res_svm.ResConfig(max_iters=200, seed=3)
out = res_svm.train(cfg, data, "res", 10)
traj = out.trajectory
first, last = traj.objective[0], traj.final_objective()
acc = data.accuracy(out.w)
n = len(data)
"#,
        |_, g| {
            let first: f64 = get(g, "first");
            let last: f64 = get(g, "last");
            assert!((first - 1.0).abs() < 1e-12, "F(0) = mean (1 - 0)^2 = 1");
            assert!(last < 0.2);
            assert!(get::<f64>(g, "acc") > 0.9);
            assert_eq!(get::<usize>(g, "n"), 1000);
        },
    );
}

#[test]
fn config_roundtrips_through_dict_and_rejects_bad_values() {
    with_module(
        r#"
cfg = res_svm.ResConfig.sgd_default()
d = cfg.to_dict()
back = res_svm.ResConfig.from_dict(d)
same = back.to_dict() == d
batch = back.batch_size
try:
    res_svm.ResConfig(delta=-1.0)
    rejected = False
except ValueError:
    rejected = True
try:
    res_svm.ResConfig(bogus=1)
    unknown_rejected = False
except ValueError:
    unknown_rejected = True
"#,
        |_, g| {
            assert!(get::<bool>(g, "same"));
            assert_eq!(get::<usize>(g, "batch"), 1);
            assert!(get::<bool>(g, "rejected"));
            assert!(get::<bool>(g, "unknown_rejected"));
        },
    );
}

#[test]
fn scalar_helpers() {
    with_module(
        r#"
c1 = res_svm.clairvoyant_accuracy(1)
ok = res_svm.check_rate_condition(3e-2, 100.0, 1e-4)
lv = res_svm.loss_value([1.0, 0.0], 1, [0.5, 0.0])
lg = res_svm.loss_gradient([1.0, 0.0], -1, [0.5, 0.0], "log")
"#,
        |_, g| {
            assert!((get::<f64>(g, "c1") - 0.8).abs() < 1e-15);
            assert!(!get::<bool>(g, "ok"));
            assert!((get::<f64>(g, "lv") - 0.25).abs() < 1e-15);
            let lg: Vec<f64> = get(g, "lg");
            let p = 1.0 / (1.0 + (-0.5f64).exp());
            assert!((lg[0] - p).abs() < 1e-14 && lg[1] == 0.0);
        },
    );
}
