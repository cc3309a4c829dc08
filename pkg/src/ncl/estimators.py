"""scikit-learn style wrappers: a contrastive encoder transformer and a probe classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autograd as ag
from .encoder import EncoderConfig, encode
from .evaluation import ProbeConfig, fit_probe
from .exceptions import DataError, ShapeError
from .training import TrainConfig, pretrain, representations


def check_windows(X, static=None, n_channels=None, n_static=None):
    """Validate a (B, t_h, C) window batch and its (B, S) statics -> float64 arrays."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError("windows", X.shape, (None, None, n_channels))
    if n_channels is not None and X.shape[2] != n_channels:
        raise ShapeError("windows", X.shape, (None, None, n_channels))
    if not np.isfinite(X).all():
        raise DataError("windows contain NaN or inf; preprocess first")
    if static is None:
        static = np.zeros((len(X), n_static or 0))
    static = check_array(static, ensure_min_features=0, ensure_all_finite=True)
    if len(static) != len(X):
        raise ShapeError("static", static.shape, (len(X), n_static))
    if n_static is not None and static.shape[1] != n_static:
        raise ShapeError("static", static.shape, (len(X), n_static))
    return X, static


class NCLEncoder(TransformerMixin, BaseEstimator):
    """Contrastively pretrained encoder.

    ``fit`` takes preprocessed ``PatientStay`` objects and trains on the
    train split; ``transform`` maps window batches (or stays) to unit-norm
    representations. Any ``TrainConfig`` field not exposed here can be passed
    through ``train_options``.
    """

    def __init__(self, method="ncl_w", preset="mimic", alpha=None, w=None, steps=2000, batch_size=128,
                 queue_size=4096, tau=0.1, filters=64, dilations=(1, 2, 4, 8, 16), embed_dim=64,
                 seed=0, train_options=None):
        self.method = method
        self.preset = preset
        self.alpha = alpha
        self.w = w
        self.steps = steps
        self.batch_size = batch_size
        self.queue_size = queue_size
        self.tau = tau
        self.filters = filters
        self.dilations = dilations
        self.embed_dim = embed_dim
        self.seed = seed
        self.train_options = train_options

    def _train_config(self):
        enc = EncoderConfig(filters=self.filters, dilations=list(self.dilations), embed_dim=self.embed_dim)
        return TrainConfig(
            method=self.method, preset=self.preset, alpha=self.alpha, w=self.w, steps=self.steps,
            batch_size=self.batch_size, queue_size=self.queue_size, tau=self.tau, seed=self.seed,
            encoder=enc, **(self.train_options or {}),
        )

    def fit(self, X, y=None):
        stays = list(X)
        if not stays:
            raise DataError("fit needs at least one stay")
        cfg = self._train_config()
        self.config_ = cfg
        self.params_, self.header_, self.history_ = pretrain(stays, cfg)
        self.n_channels_ = self.header_["n_channels"]
        self.n_static_ = self.header_["n_static"]
        return self

    def transform(self, X, static=None):
        check_is_fitted(self, "params_")
        if isinstance(X, (list, tuple)) and X and hasattr(X[0], "series"):
            Z, _ = representations(list(X), self.params_, self.header_, self.config_.encoder)
            return Z
        X, static = check_windows(X, static, self.n_channels_, self.n_static_)
        with ag.no_grad():
            return encode(X, static, self.params_, self.config_.encoder).data


class ProbeClassifier(ClassifierMixin, BaseEstimator):
    """Linear or one-hidden-layer softmax head trained on frozen representations."""

    def __init__(self, head="linear", lr=1e-4, batch_size=256, max_epochs=100, patience=10, seed=0):
        self.head = head
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_array(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ShapeError("probe.fit", X.shape, y.shape)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if X_val is not None:
            X_val = check_array(X_val)
            y_val = np.searchsorted(self.classes_, np.asarray(y_val))
        cfg = ProbeConfig(self.head, self.lr, self.batch_size, self.max_epochs, self.patience, self.seed)
        self.probe_ = fit_probe(X, y_idx, X_val, y_val, cfg, n_classes=len(self.classes_))
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "probe_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError("probe.predict", X.shape, (None, self.n_features_in_))
        return self.probe_.predict_proba(X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
