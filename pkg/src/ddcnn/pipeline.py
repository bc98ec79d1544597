"""Two-level CNN-DNN pipeline.

Local subnetworks are trained independently on the patches of a
decomposition plan; their inference-mode class probabilities, concatenated
in plan order, form the input rows of a dense coarse network that makes the
final decision.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .architectures import ScalingRule, coarse_dnn_spec, coarse_input_width, scale_to_local
from .decomposition import DecompositionPlan, extract_patch
from .exceptions import DDCNNError, ShapeError
from .training import TrainedModel, TrainingConfig, evaluate, labels_from_output, train_model

log = logging.getLogger(__name__)


@dataclass
class LocalEnsemble:
    plan: DecompositionPlan
    locals: list
    seconds: list

    def __post_init__(self):
        if len(self.locals) != self.plan.n:
            raise ShapeError(f"{len(self.locals)} local models for a plan with N={self.plan.n}")
        for i, (model, box) in enumerate(zip(self.locals, self.plan.patches)):
            if tuple(model.spec.input_shape[:-1]) != box.size:
                raise ShapeError(f"local {i} input {model.spec.input_shape} != patch size {box.size}")

    @property
    def n_classes(self):
        return self.locals[0].spec.n_classes

    @property
    def max_seconds(self):
        return max(self.seconds)


class LocalTrainingError(DDCNNError):
    def __init__(self, index, cause):
        # args carry both fields so the error survives pickling across workers
        super().__init__(index, cause)
        self.index = index
        self.cause = cause

    def __str__(self):
        return f"local subnetwork {self.index} failed: {self.cause}"


def _patched(X, box):
    return extract_patch(np.asarray(X), box)


def _train_one(args):
    index, spec, box, train, val, config, seed = args
    try:
        Xp = _patched(train[0], box)
        valp = None if val is None else (_patched(val[0], box), val[1])
        t0 = time.perf_counter()
        model = train_model(spec, (Xp, train[1]), valp, config, seed)
        return index, model, time.perf_counter() - t0
    except Exception as exc:  # surfaced with its patch index by the caller
        raise LocalTrainingError(index, exc) from exc


def local_specs(global_spec, plan, rule=None):
    rule = rule or ScalingRule.for_plan(plan)
    return [scale_to_local(global_spec, box, rule) for box in plan.patches]


def local_seeds(seed, n):
    return [seed + i for i in range(n)]


def train_locals_parallel(global_spec, plan, rule, train, val, config, seeds, workers=1):
    """Train one narrowed copy of ``global_spec`` per patch, fully independently.

    ``train`` and ``val`` are ``(X, y)`` on the full domain. Up to
    ``min(N, workers)`` processes run concurrently; results do not depend on
    the worker count. Per-local wall time covers the training call only.
    """
    if len(seeds) != plan.n:
        raise ShapeError(f"{len(seeds)} seeds for a plan with N={plan.n}")
    specs = local_specs(global_spec, plan, rule)
    jobs = [(i, specs[i], box, train, val, config, seeds[i]) for i, box in enumerate(plan.patches)]
    workers = max(1, min(plan.n, workers or 1))
    results = [None] * plan.n
    if workers == 1:
        for job in jobs:
            i, model, secs = _train_one(job)
            results[i] = (model, secs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, model, secs in pool.map(_train_one, jobs):
                results[i] = (model, secs)
    for i, (_, secs) in enumerate(results):
        log.info("local %d/%d trained in %.2fs", i + 1, plan.n, secs)
    return LocalEnsemble(plan, [r[0] for r in results], [r[1] for r in results])


def assemble_coarse_dataset(ensemble, X, y=None):
    """Concatenate every local model's inference output in plan order.

    Returns the bundle matrix ``[n, N*K]`` (or ``[n, N]`` for binary locals),
    plus the labels if ``y`` was given.
    """
    X = np.asarray(X)
    if tuple(X.shape[1:]) != ensemble.plan.domain.shape:
        raise ShapeError(f"samples of shape {X.shape[1:]} do not match domain {ensemble.plan.domain.shape}")
    cols = [model.predict_proba(_patched(X, box)) for model, box in zip(ensemble.locals, ensemble.plan.patches)]
    bundles = np.concatenate(cols, axis=1)
    return bundles if y is None else (bundles, np.asarray(y))


def train_coarse(bundles_train, bundles_val, N, K, variant="plain", config=None, seed=0):
    """Fit the coarse aggregation net on ``(bundles, labels)`` pairs."""
    spec = coarse_dnn_spec(N, K, variant)
    width = coarse_input_width(N, K)
    if bundles_train[0].shape[1] != width:
        raise ShapeError(f"bundle width {bundles_train[0].shape[1]} != coarse input width {width}")
    return train_model(spec, bundles_train, bundles_val, config, seed)


def predict_cnn_dnn(ensemble, coarse, X):
    """Final class distribution (``[n, K]``, or ``[n, 1]`` sigmoid for binary)."""
    return coarse.predict_proba(assemble_coarse_dataset(ensemble, X))


@dataclass
class CNNDNNPipeline:
    """A trained ensemble and its coarse net, usable wherever a model predicts."""

    ensemble: LocalEnsemble
    coarse: TrainedModel

    def predict_proba(self, X):
        return predict_cnn_dnn(self.ensemble, self.coarse, X)

    def predict(self, X):
        return labels_from_output(self.predict_proba(X), self.coarse.spec.binary)


@dataclass(frozen=True)
class AccuracyStats:
    avg: float
    min: float
    max: float

    @classmethod
    def of(cls, values):
        values = [float(v) for v in values]
        return cls(float(np.mean(values)), min(values), max(values))


def local_accuracies(ensemble, X, y):
    return [evaluate(model, _patched(X, box), y) for model, box in zip(ensemble.locals, ensemble.plan.patches)]


def local_accuracy_stats(ensemble, X, y):
    """``(avg, min, max)`` of the local accuracies against the global labels."""
    return AccuracyStats.of(local_accuracies(ensemble, X, y))


@dataclass
class RunMetrics:
    global_acc: tuple[float, float] | None = None  # (train, validation)
    local_train: AccuracyStats | None = None
    local_val: AccuracyStats | None = None
    cnn_dnn_acc: tuple[float, float] | None = None
    global_seconds: float = float("nan")
    local_seconds: list = field(default_factory=list)
    coarse_seconds: float = float("nan")

    @property
    def max_local_seconds(self):
        return max(self.local_seconds) if self.local_seconds else float("nan")

    @property
    def pipeline_seconds(self):
        return self.max_local_seconds + self.coarse_seconds

    @property
    def speedup(self):
        return speedup_factor(self.global_seconds, self.max_local_seconds, self.coarse_seconds)


def speedup_factor(global_seconds, max_local_seconds, coarse_seconds):
    """Global training time over (slowest local + coarse) training time."""
    return global_seconds / (max_local_seconds + coarse_seconds)


def default_workers():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def fit_cnn_dnn(global_spec, plan, train, val, local_config=None, coarse_config=None,
                coarse_variant="plain", rule=None, seed=0, workers=1):
    """Local phase then coarse phase; returns ``(pipeline, local_seconds, coarse_seconds)``."""
    local_config = local_config or TrainingConfig()
    ensemble = train_locals_parallel(global_spec, plan, rule, train, val, local_config,
                                     local_seeds(seed, plan.n), workers)
    btr = assemble_coarse_dataset(ensemble, *train)
    bva = None if val is None else assemble_coarse_dataset(ensemble, *val)
    t0 = time.perf_counter()
    coarse = train_coarse(btr, bva, plan.n, global_spec.n_classes, coarse_variant, coarse_config, seed + plan.n)
    coarse_seconds = time.perf_counter() - t0
    return CNNDNNPipeline(ensemble, coarse), ensemble.seconds, coarse_seconds
