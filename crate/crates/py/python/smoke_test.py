"""Smoke test for the egomocap Python bindings.

Build the extension first, e.g.

    cargo build --release -p egomocap-py --features extension-module
    cp target/release/libegomocap_py.so crates/py/python/egomocap_py.so

then run `python3 crates/py/python/smoke_test.py` from the workspace root.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import egomocap_py as em  # noqa: E402


def main():
    assert abs(em.weight(100, 0.05) - 0.9933) < 1e-4

    cam = em.FisheyeCamera.equidistant(100.0, 256, 6)
    report = cam.validate(1000, 0.1)
    assert report["passed"], report
    px = cam.project([0.2, -0.1, 1.0])
    back = cam.unproject(px, math.sqrt(0.05 + 1.0))
    assert all(abs(a - b) < 1e-4 for a, b in zip(back, [0.2, -0.1, 1.0]))

    joints = [cam.unproject((100.0 + 10 * i, 120.0), 0.8 + 0.05 * i) for i in range(4)]
    data, flags = em.render_heatmap(joints, cam, (32, 32, 32), 2.0, (0.1, 2.0))
    assert all(flags)
    dec = em.decode_heatmap(data, cam)
    err = max(math.dist(a, b) for a, b in zip(dec["xyz"], joints))
    assert err < 0.05, err

    seqs = em.gen_motion(3, seed=4, length=24, families=["walk", "hand"])
    assert len(seqs) == 3 and len(seqs[0]) == 24
    gt = seqs[0].frames[0]
    assert em.mpjpe(gt, gt) == 0.0
    shifted = [[p[0] * 2 + 1, p[1] * 2, p[2] * 2] for p in gt]
    assert em.pa_mpjpe(shifted, gt) < 1e-6

    model, losses = em.train_denoiser(seqs, seed=1, layers=1, width=32, heads=2, ffn=32, epochs=2, batch_size=2)
    assert len(losses) == 2 and all(math.isfinite(l) for l in losses)
    noisy = em.MotionSequence(seqs[1].frames, 30.0, [[0.05] * 57 for _ in range(24)])
    out = model.refine(noisy, seed=3, t_start=20)
    assert len(out) == 24

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "cam.json")
        code = em.run_cli(["camera", "make-equidistant", "--focal", "100", "--size", "256", "-o", path])
        assert code == 0
        assert em.run_cli(["camera", "validate", path, "--tol-px", "0.5"]) == 0
        assert em.run_cli(["prior", "refine"]) == 2

    try:
        em.FisheyeCamera.equidistant(-1.0, 256, 6)
    except em.EgomocapError:
        pass
    else:
        raise AssertionError("negative focal length accepted")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
