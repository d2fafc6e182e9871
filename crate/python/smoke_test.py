"""Smoke test for the pnp_pbcd_py extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o target/wheels
    pip install target/wheels/pnp_pbcd_py-*.whl
"""

import math
import os
import sys
import tempfile

import pnp_pbcd_py as pp


def check(cond, msg):
    if not cond:
        print(f"FAIL {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    cube, truth = pp.synth((30, 30, 20), 3, anomalies=8, magnitude=0.8, noise=0.03, seed=2)
    check(cube.dims == (30, 30, 20), "synth dims")
    check(sum(truth) == 8, "synth mask count")

    m3 = cube.unfold(3)
    back = pp.Tensor3.fold(m3, 3, cube.dims)
    check(back.data() == cube.data(), "unfold/fold round trip")

    pen = pp.SparsityPenalty.relaxed_lp()
    check(pen.prox(1.0, 0.5) == 0.0, "relaxed lp prox zeroes small input")
    g = pp.SparsityPenalty.l1().group_prox(0.5, [3.0, 4.0])
    check(all(abs(a - b) < 1e-12 for a, b in zip(g, [2.7, 3.6])), "l1 group prox radial shrink")

    q, deficient = pp.project_stiefel([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    check(not deficient and abs(q[0][0] - 1.0) < 1e-12 and abs(q[1][1] - 1.0) < 1e-12, "stiefel projection")

    det = pp.detect(cube, 3, max_iter=100)
    check(all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(det.objective, det.objective[1:])),
          f"objective non-increasing over {det.iterations} iterations")
    check(math.isnan(det.residuals[0][0]), "initial residual row is NaN")
    auc = pp.roc_auc(det.scores, truth, (30, 30))
    check(auc >= 0.95, f"PnP AUC {auc:.6f}")
    check(abs(auc - pp.mann_whitney_auc(det.scores, truth, (30, 30))) < 1e-12, "trapezoid AUC equals Mann-Whitney")

    rx, _ = pp.rx_scores(cube)
    print(f"     RX AUC {pp.roc_auc(rx, truth, (30, 30)):.6f}")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "scene.hsi")
        pp.save_hsi(path, cube)
        check(pp.load_hsi(path).data() == cube.data(), "hsi file round trip")

    try:
        pp.Tensor3((2, 2, 2), [0.0] * 7)
        check(False, "bad shape rejected")
    except ValueError:
        check(True, "bad shape rejected")


if __name__ == "__main__":
    main()
