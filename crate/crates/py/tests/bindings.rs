use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(egomocap_py::egomocap_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("em", m).unwrap();
        py.run(code, Some(&globals), None).unwrap();
    });
}

#[test]
fn weight_and_camera() {
    with_module(
        c"
assert abs(em.weight(100, 0.05) - 0.9933) < 1e-4
cam = em.FisheyeCamera.equidistant(100.0, 256, 6)
assert cam.validate(500, 0.1)['passed']
u, v = cam.project([0.0, 0.0, 1.0])
assert abs(u - 128.0) < 1e-9 and abs(v - 128.0) < 1e-9
",
    );
}

#[test]
fn metrics_and_motion() {
    with_module(
        c"
seqs = em.gen_motion(2, seed=1, length=5)
f = seqs[0].frames[2]
assert len(f) == 57
assert em.mpjpe([[0.003, 0.004, 0.0]], [[0.0, 0.0, 0.0]]) == 5.0
assert em.ba_mpjpe(f, f) < 1e-9
s = em.MotionSequence.from_json(seqs[1].to_json())
assert s.frames == seqs[1].frames
",
    );
}

#[test]
fn errors_raise_python_exceptions() {
    with_module(
        c"
try:
    em.MotionSequence([[[0.0, 0.0, 0.0]]], 30.0)
    raise SystemExit('short frame accepted')
except em.EgomocapError as e:
    assert '57' in str(e) or 'joints' in str(e)
",
    );
}
