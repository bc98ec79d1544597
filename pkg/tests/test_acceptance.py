"""Acceptance gate: one PASS/FAIL line per criterion, printed in the terminal summary.

The CIFAR-10 criteria read the six binary batch files from the directory in
``DDCNN_CIFAR10_DIR`` (default ``data/cifar-10-batches-bin`` under the repo).
"""

import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from ddcnn.architectures import ScalingRule, cnn3d_global, coarse_input_width, vgg3_global
from ddcnn.data import split, synth2d, synth3d
from ddcnn.decomposition import DomainShape, coverage_map, extract_patch, plan_type_a, plan_type_b, stitch
from ddcnn.engine import conv_forward, maxpool_forward, run_suite
from ddcnn.exceptions import ShapeError
from ddcnn.experiment import ExperimentConfig, emit_timing, read_timing, run_many, timing_report
from ddcnn.pipeline import (
    assemble_coarse_dataset,
    fit_cnn_dnn,
    local_accuracy_stats,
    train_coarse,
    train_locals_parallel,
)
from ddcnn.training import TrainingConfig, evaluate
from oracles import naive_conv, naive_maxpool

RESULTS = {}
CIFAR_DIR = Path(os.environ.get("DDCNN_CIFAR10_DIR", Path(__file__).parent.parent / "data" / "cifar-10-batches-bin"))


def record(criterion, ok, detail):
    RESULTS[criterion] = (bool(ok), detail)
    assert ok, f"criterion {criterion}: {detail}"


# 1 ------------------------------------------------------------------------

def test_c1_gradients():
    t0 = time.perf_counter()
    results = run_suite(points=20, seed=0, h=1e-6, tol=1e-4)
    secs = time.perf_counter() - t0
    worst = max(w for _, w, _ in results)
    failed = [k for k, _, ok in results if not ok]
    record(1, not failed and secs < 60,
           f"{len(results)} layer kinds x 20 points, worst rel. error {worst:.2e}, {secs:.1f}s"
           + (f", failing {failed}" if failed else ""))


# 2 ------------------------------------------------------------------------

def _conv_cases():
    rng = np.random.default_rng(0)
    for H, W in itertools.product(range(1, 9), repeat=2):
        for kh, kw in itertools.product((1, 2, 3), repeat=2):
            for stride, padding in itertools.product((1, 2), ("none", "same")):
                yield rng, (H, W), (kh, kw), stride, padding, 2, 2
    for D in range(1, 9):
        for stride, padding in itertools.product((1, 2), ("none", "same")):
            yield rng, (D, 4, 3), (3, 2, 1), stride, padding, 1, 2
            yield rng, (3, D, 8), (2, 3, 3), stride, padding, 2, 1


def test_c2_kernel_oracles():
    t0 = time.perf_counter()
    worst, cases, errors_agree = 0.0, 0, True
    for rng, spatial, ksize, stride, padding, cin, cout in _conv_cases():
        x = rng.normal(size=(1, *spatial, cin))
        k = rng.normal(size=(*ksize, cin, cout))
        b = rng.normal(size=cout)
        fits = padding == "same" or all(kk <= s for kk, s in zip(ksize, spatial))
        if not fits:
            try:
                conv_forward(x, k, b, stride, padding)
                errors_agree = False
            except ShapeError:
                pass
            continue
        diff = np.abs(conv_forward(x, k, b, stride, padding) - naive_conv(x, k, b, stride, padding)).max()
        worst = max(worst, float(diff))
        cases += 1
    pools = 0
    rng = np.random.default_rng(1)
    for spatial in [*itertools.product(range(1, 9), repeat=2), *itertools.product((1, 2, 5, 8), repeat=3)]:
        for w in (1, 2, 3):
            if w > min(spatial):
                continue
            x = rng.normal(size=(2, *spatial, 2))
            worst = max(worst, float(np.abs(maxpool_forward(x, w)[0] - naive_maxpool(x, w)).max()))
            pools += 1
    secs = time.perf_counter() - t0
    record(2, worst <= 1e-12 and errors_agree,
           f"{cases} conv + {pools} maxpool cases, max abs diff {worst:.1e}, {secs:.1f}s")


# 3 ------------------------------------------------------------------------

def _random_plan_args(rng):
    d = int(rng.integers(2, 4))
    spatial = tuple(int(v) for v in rng.integers(4, 41 if d == 2 else 17, size=d))
    p = tuple(int(rng.integers(1, min(5, n) + 1)) for n in spatial)
    max_delta = min(n // q for n, q in zip(spatial, p)) - 1
    delta = int(rng.integers(0, max_delta + 1)) if rng.random() < 0.6 else 0
    return DomainShape(spatial, int(rng.integers(1, 3))), p, delta


def _check_plan(plan, rng):
    sample = rng.normal(size=plan.domain.shape)
    cov = coverage_map(plan)
    ok = cov.min() >= 1
    if plan.variant == "type-a" and plan.delta == 0:
        ok &= bool((cov == 1).all())
    ok &= np.array_equal(stitch([extract_patch(sample, b) for b in plan.patches], plan), sample)
    return ok


def test_c3_decomposition_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad = []
    for i in range(200):
        domain, p, delta = _random_plan_args(rng)
        plan = plan_type_a(domain, p, delta)
        if not _check_plan(plan, rng) or plan_type_a(domain, p, delta).patches != plan.patches:
            bad.append((domain, p, delta))
    n_b = 0
    for h, w in itertools.product(range(3, 61, 3), repeat=2):
        plan = plan_type_b(DomainShape((h, w)))
        n_b += 1
        if not _check_plan(plan, rng) or plan_type_b(DomainShape((h, w))).patches != plan.patches:
            bad.append(((h, w), "type-b"))
    secs = time.perf_counter() - t0
    record(3, not bad and secs < 10, f"200 type-A + {n_b} type-B plans, {len(bad)} violations, {secs:.2f}s")


# 4 ------------------------------------------------------------------------

def test_c4_parallel_independence():
    t0 = time.perf_counter()
    tr, va = split(synth2d(160, 4, (16, 16), seed=4), 0.75, 4)
    spec = vgg3_global((16, 16, 1), 4)
    plan = plan_type_a(tr.domain, (2, 2), 0)
    cfg = TrainingConfig(epochs=3)
    seeds = [11, 12, 13, 14]
    serial = train_locals_parallel(spec, plan, None, tr.as_tuple(), va.as_tuple(), cfg, seeds, workers=1)
    parallel = train_locals_parallel(spec, plan, None, tr.as_tuple(), va.as_tuple(), cfg, seeds, workers=4)
    same = all(a.params[k].tobytes() == b.params[k].tobytes() and a.history == b.history
               for a, b in zip(serial.locals, parallel.locals) for k in a.params)
    secs = time.perf_counter() - t0
    record(4, same and secs < 120, f"N=4, 1 vs 4 workers bitwise identical: {same}, {secs:.1f}s")


# 5, 6 -----------------------------------------------------------------------

def _cifar_config(delta):
    return ExperimentConfig.from_text(f"""
seed = 0
output = /tmp/ddcnn-acceptance/cifar10_delta{delta}
dataset.name = cifar10
dataset.path = {CIFAR_DIR}
dataset.train_size = 5000
dataset.val_size = 1000
decomposition.p = 2 2
decomposition.delta = {delta}
local.epochs = 20
coarse.epochs = 20
global.epochs = 20
""")


@pytest.fixture(scope="module")
def cifar_reports():
    files = ["data_batch_%d.bin" % i for i in range(1, 6)] + ["test_batch.bin"]
    missing = [f for f in files if not (CIFAR_DIR / f).is_file()]
    if missing:
        return None, f"CIFAR-10 binary batches not found in {CIFAR_DIR} (missing {', '.join(missing)})"
    t0 = time.perf_counter()
    reports = run_many([_cifar_config(0), _cifar_config(4)], write=False)
    return reports, f"{time.perf_counter() - t0:.0f}s, seed 0"


def test_c5_cifar_table(cifar_reports):
    reports, info = cifar_reports
    if reports is None:
        record(5, False, info)
    r0, r4 = reports
    rows = []
    ok = True
    for r in reports:
        m = r.metrics
        a = m.cnn_dnn_acc[1] >= m.local_val.avg
        b = abs(m.cnn_dnn_acc[1] - m.global_acc[1]) <= 0.10
        ok &= a and b
        rows.append(f"{r.label}: global {m.global_acc[1]:.4f} local avg {m.local_val.avg:.4f} "
                    f"cnn-dnn {m.cnn_dnn_acc[1]:.4f}")
    c = r4.metrics.local_val.avg >= r0.metrics.local_val.avg
    record(5, ok and c, "; ".join(rows) + f"; overlap helps locals: {c}; {info}")


def test_c6_speedup(cifar_reports):
    reports, info = cifar_reports
    if reports is None:
        record(6, False, info)
    factors = [r.metrics.speedup for r in reports]
    record(6, all(f >= 1.5 for f in factors), "speedups " + ", ".join(f"{f:.2f}" for f in factors))


# 7 ------------------------------------------------------------------------

def test_c7_3d_pipeline():
    t0 = time.perf_counter()
    ds = synth3d(200, (64, 64, 32), seed=0)
    means = ds.X.mean(axis=(1, 2, 3, 4))
    separability = max(((means > t) == ds.y).mean() for t in np.unique(means))
    tr, va = split(ds, 0.7, 0)
    plan = plan_type_a(tr.domain, (2, 2, 1), 0)
    cfg = TrainingConfig(epochs=30, batch_size=2, patience=15)
    pipe, _, _ = fit_cnn_dnn(cnn3d_global(tr.X.shape[1:]), plan, tr.as_tuple(), va.as_tuple(), cfg, cfg,
                             "ct", ScalingRule(4), seed=0)
    acc = evaluate(pipe, *va.as_tuple())
    local = local_accuracy_stats(pipe.ensemble, *va.as_tuple())
    secs = time.perf_counter() - t0
    record(7, separability > 0.95 and acc >= 0.85 and acc >= local.avg and secs <= 1800,
           f"threshold oracle {separability:.3f}, cnn-dnn val {acc:.4f}, local avg {local.avg:.4f}, {secs:.0f}s")


# 8 ------------------------------------------------------------------------

WIDTH_CASES = [
    ((4, 10), (8, 8), "type-a", (2, 2)),
    ((9, 5), (12, 12), "type-a", (3, 3)),
    ((16, 38), (16, 16), "type-a", (4, 4)),
    ((13, 5), (12, 12), "type-b", None),
    ((32, 2), (16, 16, 16), "type-a", (4, 4, 2)),
]


def test_c8_coarse_width_law():
    rng = np.random.default_rng(8)
    rows, ok = [], True
    for (N, K), spatial, variant, p in WIDTH_CASES:
        n = 2 * K if K > 2 else 8
        X = rng.random((n, *spatial, 1)).astype(np.float32)
        y = np.arange(n) % K
        domain = DomainShape(spatial)
        plan = plan_type_b(domain) if variant == "type-b" else plan_type_a(domain, p, 0)
        spec = cnn3d_global((*spatial, 1)) if len(spatial) == 3 else vgg3_global((*spatial, 1), K)
        cfg = TrainingConfig(epochs=1, batch_size=4)
        ens = train_locals_parallel(spec, plan, None, (X, y), None, cfg, list(range(plan.n)))
        bundles = assemble_coarse_dataset(ens, X)
        coarse = train_coarse((bundles, y), None, plan.n, K, "ct" if K == 2 else "plain", cfg)
        width_ok = plan.n == N and bundles.shape[1] == coarse_input_width(N, K) == (N if K == 2 else N * K)
        ok &= width_ok and coarse.predict_proba(bundles).shape[0] == n
        rows.append(f"(N={N},K={K}) width {bundles.shape[1]}")
    record(8, ok, ", ".join(rows))


# 9 ------------------------------------------------------------------------

TIMING_CASES = [
    ("2D p=2", 61.59, 13.66, 4.21, 3.45),
    ("3D 2x2x1", 825.85, 53.41, 24.95, 10.64),
    ("3D 4x4x1", 825.85, 29.16, 23.21, 15.93),
    ("3D 4x4x2", 825.85, 15.08, 21.03, 22.87),
]


def test_c9_reporting_fidelity():
    rows, ok = [], True
    for label, g, l, c, stated in TIMING_CASES:
        got = read_timing(emit_timing(timing_report(g, l, c)))["speedup"]
        hit = abs(got - stated) <= 0.01
        ok &= hit
        rows.append(f"{label} {got:.2f} vs {stated} {'ok' if hit else 'MISMATCH'}")
    record(9, ok, "; ".join(rows))
