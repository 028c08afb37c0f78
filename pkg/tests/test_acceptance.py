"""Acceptance criteria 1-9, each checked at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line. Under pytest the lines
are repeated in the terminal summary; running this file directly prints them too.
"""

import math
import sys
import tempfile
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from lowrank_detect import linref
from lowrank_detect.detector import Component, DetectConfig, detect
from lowrank_detect.metrics import bce_loss, evaluate, iou, object_metrics, roc_auc
from lowrank_detect.rpca import RpcaConfig, admm_solve, default_lambda, weighted_lambda
from lowrank_detect.scene import PsfSpec, airy_amplitude, airy_profile, airy_psf, bessel_j1, motion_blur_kernel
from lowrank_detect.tensor import fold, soft_threshold, svt, unfold
from oracles import low_rank_plus_sparse, matrix_rpca
from pipelines import run_all
from scenes import benchmark_scene, pooled, starfield_only
from test_scene import J1_ROOT, series_j1


# lines collected here are echoed in the pytest terminal summary (see conftest)
RESULTS = []


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


# -- criterion 1 --------------------------------------------------------------

def criterion_1():
    shape = (30, 30, 10)
    cfg = RpcaConfig(lam=1.5 * weighted_lambda(shape, (1, 1, 1)), mode_weights=(1, 1, 1))
    ok = 0
    worst = 0.0
    t0 = time.perf_counter()
    for seed in range(20):
        L0, S0 = low_rank_plus_sparse(seed, shape, 1 + seed % 3)
        res = admm_solve(L0 + S0, cfg)
        err = np.linalg.norm(res.L - L0) / np.linalg.norm(L0)
        # support: entries above 1e-3 of the smallest spike magnitude
        supp = np.array_equal(np.abs(res.S) > 5e-3, S0 != 0)
        ok += err <= 1e-3 and supp
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    return ok >= 19 and dt <= 60, f"recovered {ok}/20, worst rel err {worst:.2e}, {dt:.1f} s"


# -- criterion 2 --------------------------------------------------------------

def criterion_2():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng([seed, 2])
        mode = int(rng.integers(3))
        L0, S0 = low_rank_plus_sparse(100 + seed, (20, 20, 5), 1 + seed % 2)
        x = L0 + S0
        lam = 2 * default_lambda(x.shape, [mode])
        w = [0.0, 0.0, 0.0]
        w[mode] = 1.0
        # a slow penalty schedule lets both methods reach the optimum, not just feasibility;
        # the 5-row unfolding has a flat objective and needs it
        r = admm_solve(x, RpcaConfig(lam=lam, mode_weights=tuple(w), rho=1.001, tol=1e-12, max_iter=50000))
        L_ref, _ = matrix_rpca(unfold(x, mode), lam, rho=1.002, tol=1e-13, max_iter=100000)
        worst = max(worst, np.linalg.norm(unfold(r.L, mode) - L_ref) / np.linalg.norm(L_ref))
    return worst <= 1e-6, f"worst rel Frobenius gap {worst:.2e} over 10 instances"


# -- criterion 3 --------------------------------------------------------------

def prox_grid(x, tau):
    """argmin_z tau|z| + (z - x)^2 / 2 by a coarse grid, then a fine grid around the best point."""
    def best(grid):
        return grid[np.argmin(tau * np.abs(grid) + 0.5 * (grid - x) ** 2)]
    z = best(np.linspace(-5, 5, 100_001))
    return best(np.linspace(z - 2e-4, z + 2e-4, 400_001))


def criterion_3():
    rng = np.random.default_rng(3)
    st_err = max(abs(soft_threshold(x, t) - prox_grid(x, t))
                 for x, t in zip(rng.uniform(-3, 3, 50), rng.uniform(0, 1.5, 50)))
    svt_err = 0.0
    exact = True
    for _ in range(200):
        nd = int(rng.integers(1, 6))
        shape = tuple(int(n) for n in rng.integers(1, 7, nd))
        t = rng.normal(size=shape)
        for mode in range(nd):
            exact &= np.array_equal(fold(unfold(t, mode), mode, shape), t)
        m = rng.normal(size=(int(rng.integers(1, 12)), int(rng.integers(1, 12))))
        svt_err = max(svt_err, np.linalg.norm(svt(m, 0) - m) / np.linalg.norm(m))
    ok = st_err <= 1e-6 and svt_err <= 1e-8 and exact
    return ok, f"soft-threshold gap {st_err:.1e}, svt(m,0) rel err {svt_err:.1e}, fold/unfold exact={exact}"


# -- criterion 4 --------------------------------------------------------------

def criterion_4():
    cfg = DetectConfig(tau=0.5)
    masks, confs, gts = [], [], []
    t0 = time.perf_counter()
    for seed in range(10):
        _, video, gt = benchmark_scene(seed)
        res = detect(video, cfg)
        masks.append(res.mask)
        confs.append(res.confidence)
        gts.append(gt.masks)
    dt = time.perf_counter() - t0
    rep = evaluate(pooled(masks), pooled(gts), confidence=pooled(confs))
    fa = rep.fa * 1e5
    ok = rep.pd >= 0.9 and fa <= 50 and rep.auc >= 0.95 and dt <= 300
    return ok, f"mode={cfg.mode} Pd {rep.pd:.4f}, Fa {fa:.2f}e-5, AUC {rep.auc:.4f}, {dt:.0f} s"


# -- criterion 5 --------------------------------------------------------------

def criterion_5():
    cfg = DetectConfig(mode="fused")
    counts = [len(detect(starfield_only(seed)[1], cfg).components) for seed in range(5)]
    return sum(counts) == 0, f"false-alarm components per seed {counts}"


# -- criterion 6 --------------------------------------------------------------

def criterion_6():
    spec = PsfSpec()
    raw = airy_psf(spec, normalize=False)
    centre = raw[spec.radius, spec.radius] == 1.0 and airy_profile(0.0, spec) == 1.0
    r0 = J1_ROOT * spec.wavelength * spec.focal_length / (math.pi * spec.aperture)
    ring = brentq(lambda r: airy_amplitude(r, spec), 0.5 * r0, 1.2 * r0, xtol=1e-20, rtol=1e-14)
    ring_err = abs(ring - r0) / r0
    kernels = [airy_psf(PsfSpec(radius=r)) for r in (2, 5, 9)]
    kernels += [motion_blur_kernel(n, a) for n in (1, 2.5, 4, 7.3) for a in (0.0, 0.4, 1.2)]
    sum_err = max(abs(k.sum() - 1) for k in kernels)
    xs = np.linspace(0, 20, 2001)
    j1_err = float(np.abs(bessel_j1(xs) - np.array([series_j1(x) for x in xs])).max())
    ok = centre and ring_err <= 1e-6 and sum_err <= 1e-12 and j1_err <= 1e-8
    return ok, (f"centre=1 {centre}, dark ring rel err {ring_err:.1e}, "
                f"kernel sum err {sum_err:.1e}, J1 err {j1_err:.1e}")


# -- criterion 7 --------------------------------------------------------------

def criterion_7():
    w = linref.init_weights(0)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        x, y = rng.normal(size=(2, 1, 1, 8, 16, 16))
        a, b = rng.uniform(-3, 3, 2)
        worst = max(worst, linref.linearity_residual(lambda z: linref.pipeline(z, w), x, y, a, b))
    out = linref.pipeline(rng.normal(size=(1, 1, 8, 320, 416)), w)[0]
    shape_ok = out.shape == (w.channels, 8, 80, 104)
    counts = [int(np.count_nonzero(linref.gate(out, tau))) for tau in np.linspace(0.02, 0.98, 20)]
    mono = all(a >= b for a, b in zip(counts, counts[1:]))
    ok = worst <= 1e-5 and shape_ok and mono
    return ok, f"linearity residual {worst:.1e}, output shape {out.shape}, gate counts monotone={mono}"


# -- criterion 8 --------------------------------------------------------------

def criterion_8():
    gt = np.zeros((32, 32, 4), dtype=bool)
    gt[10:12, 10:12] = True
    gt[25, 5] = True
    _, auc_perfect = roc_auc(gt.astype(float), gt)
    aucs = []
    for seed in range(10):
        r = np.random.default_rng(seed)
        aucs.append(roc_auc(r.random(gt.shape), gt)[1])
    auc_rand = float(np.mean(aucs))
    bce_err = abs(bce_loss(np.array([0.5]), np.array([1])) - math.log(2))
    empty = np.zeros((8, 8), dtype=bool)
    iou_ok = iou(gt, gt) == 1.0 and iou(empty, empty) == 1.0 and iou(gt, ~gt) == 0.0
    comps = [((1.0, 1.0), 0)]
    f1_ok = object_metrics([], [], 3.0)[2] == 1.0
    f1_ok &= object_metrics(_comps(comps), _comps(comps))[2] == 1.0
    f1_ok &= object_metrics([], _comps(comps))[2] == 0.0
    ok = auc_perfect == 1.0 and 0.45 <= auc_rand <= 0.55 and bce_err <= 1e-9 and iou_ok and f1_ok
    return ok, (f"AUC perfect {auc_perfect}, mean random AUC {auc_rand:.3f}, "
                f"BCE err {bce_err:.1e}, IoU exact {iou_ok}, F1 exact {f1_ok}")


def _comps(specs):
    return [Component(pixels=np.array([c], dtype=int), centroid=c, frame=f) for c, f in specs]


# -- criterion 9 --------------------------------------------------------------

def criterion_9():
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        one, four = run_all(a, 1), run_all(b, 4)
    diff = sorted(k for k in one.keys() | four.keys() if one.get(k) != four.get(k))
    return not diff and len(one) > 0, f"{len(one)} output files, differing: {diff or 'none'}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("n", range(1, 10))
def test_criterion(n):
    ok, detail = CRITERIA[n - 1]()
    assert report(n, ok, detail), detail


if __name__ == "__main__":
    results = [report(n, *fn()) for n, fn in enumerate(CRITERIA, 1)]
    sys.exit(0 if all(results) else 1)
