"""scikit-learn style wrappers around the global CNN and the CNN-DNN pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .architectures import ScalingRule, cnn3d_global, scale_to_local, vgg3_global
from .decomposition import DomainShape, extract_patch, make_plan
from .exceptions import ParameterError, ShapeError
from .pipeline import assemble_coarse_dataset, fit_cnn_dnn, local_accuracies
from .training import TrainingConfig, evaluate, train_model


def check_samples(X, domain=None):
    """Validate a batch of channels-last samples ``[n, *spatial, C]``."""
    X = check_array(X, allow_nd=True, dtype=[np.float32, np.float64], ensure_min_features=1)
    if X.ndim < 3:
        raise ShapeError(f"expected [n, *spatial, channels] samples, got shape {X.shape}")
    if domain is not None and tuple(X.shape[1:]) != tuple(domain):
        raise ShapeError(f"samples of shape {X.shape[1:]} do not match the fitted domain {tuple(domain)}")
    return X


def _encode(y):
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    if len(classes) < 2:
        raise ParameterError("need at least two classes to fit a classifier")
    return classes, codes


def _proba_matrix(out):
    """``[n, K]`` probabilities; a single sigmoid column becomes ``[1 - p, p]``."""
    out = np.asarray(out, dtype=np.float64)
    if out.shape[1] == 1:
        return np.hstack([1 - out, out])
    return out


def _global_spec(architecture, shape, K, width_divisor):
    if architecture == "vgg3":
        spec = vgg3_global(shape, K)
    elif architecture == "cnn3d":
        if K != 2:
            raise ParameterError("cnn3d is a binary architecture")
        spec = cnn3d_global(shape)
    else:
        raise ParameterError(f"unknown architecture {architecture!r}")
    if width_divisor > 1:
        spec = scale_to_local(spec, shape[:-1], ScalingRule(width_divisor))
    return spec


class PatchExtractor(TransformerMixin, BaseEstimator):
    """Cut every sample into the patches of a type-A or type-B plan.

    ``transform`` returns one array ``[n, *patch, C]`` per patch, in plan
    order; patch sizes differ when the grid does not divide the domain.
    """

    def __init__(self, variant="type-a", p=2, delta=0):
        self.variant = variant
        self.p = p
        self.delta = delta

    def fit(self, X, y=None):
        X = check_samples(X)
        domain = DomainShape.from_shape(X.shape[1:])
        p = (self.p,) * domain.ndim if np.isscalar(self.p) else tuple(self.p)
        self.plan_ = make_plan(domain, self.variant, p, self.delta)
        self.n_patches_ = self.plan_.n
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        X = check_samples(X, self.plan_.domain.shape)
        return [extract_patch(X, box) for box in self.plan_.patches]


class CNNClassifier(ClassifierMixin, BaseEstimator):
    """The undecomposed baseline network trained on whole samples."""

    def __init__(self, architecture="vgg3", width_divisor=1, config=None, random_state=0):
        self.architecture = architecture
        self.width_divisor = width_divisor
        self.config = config
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X = check_samples(X)
        self.classes_, codes = _encode(y)
        spec = _global_spec(self.architecture, X.shape[1:], len(self.classes_), self.width_divisor)
        val = None
        if eval_set is not None:
            Xv = check_samples(eval_set[0], X.shape[1:])
            val = (Xv, np.searchsorted(self.classes_, eval_set[1]))
        self.model_ = train_model(spec, (X, codes), val, self.config or TrainingConfig(), self.random_state)
        self.train_seconds_ = self.model_.train_seconds
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_samples(X, self.model_.spec.input_shape)
        return _proba_matrix(self.model_.predict_proba(X))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.model_.predict(check_samples(X, self.model_.spec.input_shape))]


class CNNDNNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Local patch CNNs plus a coarse dense net over their probability bundle.

    ``transform`` yields the bundle matrix fed to the coarse net. The local
    width divisor defaults to the per-dimension split factor of the plan.
    """

    def __init__(self, architecture="vgg3", variant="type-a", p=2, delta=0, width_divisor=None,
                 global_width_divisor=1, coarse_variant="plain", local_config=None, coarse_config=None,
                 random_state=0, n_workers=1):
        self.architecture = architecture
        self.variant = variant
        self.p = p
        self.delta = delta
        self.width_divisor = width_divisor
        self.global_width_divisor = global_width_divisor
        self.coarse_variant = coarse_variant
        self.local_config = local_config
        self.coarse_config = coarse_config
        self.random_state = random_state
        self.n_workers = n_workers

    def fit(self, X, y, eval_set=None):
        X = check_samples(X)
        self.classes_, codes = _encode(y)
        K = len(self.classes_)
        extractor = PatchExtractor(self.variant, self.p, self.delta).fit(X)
        self.plan_ = extractor.plan_
        rule = ScalingRule(self.width_divisor) if self.width_divisor else ScalingRule.for_plan(self.plan_)
        spec = _global_spec(self.architecture, X.shape[1:], K, self.global_width_divisor)
        val = None
        if eval_set is not None:
            val = (check_samples(eval_set[0], X.shape[1:]), np.searchsorted(self.classes_, eval_set[1]))
        self.pipeline_, self.local_seconds_, self.coarse_seconds_ = fit_cnn_dnn(
            spec, self.plan_, (X, codes), val, self.local_config, self.coarse_config,
            self.coarse_variant, rule, self.random_state, self.n_workers)
        self.width_divisor_ = rule.divisor
        return self

    def transform(self, X):
        check_is_fitted(self, "pipeline_")
        return assemble_coarse_dataset(self.pipeline_.ensemble, check_samples(X, self.plan_.domain.shape))

    def predict_proba(self, X):
        check_is_fitted(self, "pipeline_")
        return _proba_matrix(self.pipeline_.predict_proba(check_samples(X, self.plan_.domain.shape)))

    def predict(self, X):
        check_is_fitted(self, "pipeline_")
        return self.classes_[self.pipeline_.predict(check_samples(X, self.plan_.domain.shape))]

    def local_scores(self, X, y):
        """Accuracy of each local net on its own patch, against the global labels."""
        check_is_fitted(self, "pipeline_")
        X = check_samples(X, self.plan_.domain.shape)
        return local_accuracies(self.pipeline_.ensemble, X, np.searchsorted(self.classes_, y))

    def coarse_score(self, X, y):
        check_is_fitted(self, "pipeline_")
        return evaluate(self.pipeline_, check_samples(X, self.plan_.domain.shape), np.searchsorted(self.classes_, y))
