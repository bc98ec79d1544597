import numpy as np
import pytest

from ddcnn.architectures import ScalingRule, coarse_input_width, vgg3_global
from ddcnn.data import split, synth2d
from ddcnn.decomposition import DomainShape, PatchBox, DecompositionPlan, plan_type_a
from ddcnn.exceptions import ShapeError
from ddcnn.pipeline import (
    AccuracyStats,
    CNNDNNPipeline,
    LocalEnsemble,
    LocalTrainingError,
    RunMetrics,
    assemble_coarse_dataset,
    fit_cnn_dnn,
    local_accuracy_stats,
    speedup_factor,
    train_coarse,
    train_locals_parallel,
)
from ddcnn.training import TrainingConfig, evaluate, train_model

FAST = TrainingConfig(epochs=6)


@pytest.fixture(scope="module")
def quadrant_run():
    tr, va = split(synth2d(240, 4, (16, 16), seed=0), 0.75, 0)
    spec = vgg3_global((16, 16, 1), 4)
    plan = plan_type_a(tr.domain, (2, 2), 0)
    pipe, local_s, coarse_s = fit_cnn_dnn(spec, plan, tr.as_tuple(), va.as_tuple(), FAST,
                                          TrainingConfig(epochs=30), seed=0)
    return tr, va, pipe


def test_every_local_learns_its_quadrant(quadrant_run):
    _, va, pipe = quadrant_run
    stats = local_accuracy_stats(pipe.ensemble, *va.as_tuple())
    assert stats.min > 0.9


def test_cnn_dnn_at_least_local_average(quadrant_run):
    _, va, pipe = quadrant_run
    assert evaluate(pipe, *va.as_tuple()) >= local_accuracy_stats(pipe.ensemble, *va.as_tuple()).avg


def test_bundle_structure(quadrant_run):
    _, va, pipe = quadrant_run
    bundles = assemble_coarse_dataset(pipe.ensemble, va.X)
    assert bundles.shape == (len(va), coarse_input_width(4, 4))
    np.testing.assert_allclose(bundles.reshape(len(va), 4, 4).sum(axis=2), 1, atol=1e-6)
    np.testing.assert_allclose(pipe.predict_proba(va.X).sum(axis=1), 1, atol=1e-6)
    with pytest.raises(ShapeError):
        assemble_coarse_dataset(pipe.ensemble, va.X[:, :8])


def test_serial_equals_parallel():
    tr, va = split(synth2d(64, 4, (16, 16), seed=1), 0.75, 0)
    spec = vgg3_global((16, 16, 1), 4)
    plan = plan_type_a(tr.domain, (2, 2), 0)
    cfg = TrainingConfig(epochs=2)
    seeds = [7, 8, 9, 10]
    a = train_locals_parallel(spec, plan, None, tr.as_tuple(), va.as_tuple(), cfg, seeds, workers=1)
    b = train_locals_parallel(spec, plan, None, tr.as_tuple(), va.as_tuple(), cfg, seeds, workers=2)
    for ma, mb in zip(a.locals, b.locals):
        assert all(ma.params[k].tobytes() == mb.params[k].tobytes() for k in ma.params)


def test_single_patch_equals_plain_training():
    tr, va = split(synth2d(48, 2, (8, 8), seed=2), 0.75, 0)
    spec = vgg3_global((8, 8, 1), 2)
    plan = plan_type_a(tr.domain, (1, 1), 0)
    ens = train_locals_parallel(spec, plan, ScalingRule(1), tr.as_tuple(), None, TrainingConfig(epochs=2), [4])
    ref = train_model(spec, tr.as_tuple(), None, TrainingConfig(epochs=2), 4)
    assert ens.locals[0].spec.layers == spec.layers
    assert all(ens.locals[0].params[k].tobytes() == ref.params[k].tobytes() for k in ref.params)


def test_local_failure_names_the_patch():
    tr, _ = split(synth2d(40, 2, (16, 16), seed=3), 0.75, 0)
    X = tr.X.copy()
    X[:, 8:, 8:] = np.nan
    plan = plan_type_a(tr.domain, (2, 2), 0)
    with pytest.raises(LocalTrainingError) as info:
        train_locals_parallel(vgg3_global((16, 16, 1), 2), plan, None, (X, tr.y), None,
                              TrainingConfig(epochs=1), [0, 1, 2, 3])
    assert info.value.index == 3


def test_coarse_learns_from_one_informative_slice():
    rng = np.random.default_rng(4)
    K, N, n = 4, 3, 400
    y = rng.integers(0, K, n)
    bundles = np.full((n, N, K), 1 / K)
    bundles[:, 0] = np.eye(K)[y] * 0.9 + 0.1 / K
    X = bundles.reshape(n, N * K).astype(np.float32)
    coarse = train_coarse((X[:300], y[:300]), (X[300:], y[300:]), N, K, "plain", TrainingConfig(epochs=40), 0)
    assert evaluate(coarse, X[300:], y[300:]) == 1.0


def test_untrained_coarse_is_near_chance():
    rng = np.random.default_rng(5)
    K, N, n = 4, 2, 800
    y = np.repeat(np.arange(K), n // K)
    X = rng.dirichlet(np.ones(K), size=(n, N)).reshape(n, N * K).astype(np.float32)
    coarse = train_coarse((X, y), None, N, K, "plain", TrainingConfig(epochs=0), 0)
    assert abs(evaluate(coarse, X, y) - 1 / K) <= 0.05


def test_stats_and_speedup():
    assert AccuracyStats.of([0.4, 0.6]) == AccuracyStats(0.5, 0.4, 0.6)
    one = AccuracyStats.of([0.7])
    assert one.avg == one.min == one.max == 0.7
    m = RunMetrics(global_seconds=61.59, local_seconds=[10.0, 13.66], coarse_seconds=4.21)
    assert m.speedup == speedup_factor(61.59, 13.66, 4.21) == 61.59 / (13.66 + 4.21)


def test_ensemble_validates_sizes(quadrant_run):
    _, _, pipe = quadrant_run
    other = DecompositionPlan(DomainShape((16, 16), 1), "type-a", [PatchBox((0, 0), (16, 16))])
    with pytest.raises(ShapeError):
        LocalEnsemble(other, pipe.ensemble.locals[:1], [0.0])
