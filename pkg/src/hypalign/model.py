"""Estimator-style facade over the training pipeline.

``HyperbolicAligner`` follows the scikit-learn conventions (bare ``__init__``
that only stores hyperparameters, ``fit`` / ``transform``, ``get_params``),
so it composes with the usual tooling. ``fit`` consumes a
:class:`~hypalign.data.PairDataset` (or a data directory containing a
manifest); ``transform`` maps raw token stacks to points on the hyperboloid.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import TrainConfig
from .data import PairDataset
from .errors import UsageError
from .trainer import evaluate_model, train


def _validate_tokens(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None, :, :]
    if X.ndim != 3:
        raise UsageError("expected token stacks of shape (N, L, D) or (L, D)")
    if not np.all(np.isfinite(X)):
        raise UsageError("token stacks must be finite")
    return X


class HyperbolicAligner(BaseEstimator, TransformerMixin):
    """Joint hyperbolic embedding of paired text / point-cloud feature sequences.

    Parameters mirror :class:`~hypalign.config.TrainConfig`; see its docstring
    for defaults and meaning.
    """

    def __init__(self, epochs=100, batch_size=32, lr=2e-3, beta1=0.91,
                 beta2=0.9993, eps=1e-8, weight_decay=0.01,
                 warmup_fraction=0.10, tau=0.07, lam=0.2, K=0.1, d=64,
                 heads=4, layers=2, seed=0, c_init=1.0, shared_encoder=False):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_fraction = warmup_fraction
        self.tau = tau
        self.lam = lam
        self.K = K
        self.d = d
        self.heads = heads
        self.layers = layers
        self.seed = seed
        self.c_init = c_init
        self.shared_encoder = shared_encoder

    def _train_config(self) -> TrainConfig:
        names = [f.name for f in dataclasses.fields(TrainConfig)]
        return TrainConfig(**{n: getattr(self, n) for n in names})

    def fit(self, X, y=None, log_path=None):
        """Train on a PairDataset or a directory holding manifest + features."""
        if isinstance(X, (str, Path)):
            X = PairDataset.load(X)
        if not isinstance(X, PairDataset):
            raise UsageError("fit expects a PairDataset or a data directory")
        self.model_, self.opt_, self.metrics_ = train(X, self._train_config(),
                                                      log_path=log_path)
        self.curvature_ = self.model_.c
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("HyperbolicAligner is not fitted yet")

    def transform(self, X, modality: str = "text") -> np.ndarray:
        """Embed token stacks (N, L, D_in) as hyperboloid points (N, d+1)."""
        self._check_fitted()
        if modality not in ("text", "pointcloud"):
            raise UsageError(f"unknown modality {modality!r}")
        X = _validate_tokens(X)
        if X.shape[-1] != self.model_.d_in:
            raise UsageError(
                f"expected feature width {self.model_.d_in}, got {X.shape[-1]}")
        return self.model_.embed(X, modality)

    def evaluate(self, X, ks=(1, 5, 10)) -> dict:
        """Retrieval metrics (R@K both ways, Rsum, containment) on a dataset."""
        self._check_fitted()
        if isinstance(X, (str, Path)):
            X = PairDataset.load(X)
        return evaluate_model(self.model_, X, ks=ks)
