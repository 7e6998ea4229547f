"""Contribution-aware hyperbolic aggregation.

Scaled tokens are lifted onto the hyperboloid together with their Euclidean
mean (the anchor); a softmax over negative Lorentzian leaf-to-anchor
distances yields contribution weights, and the weighted Euclidean sum is
lifted again to give the root embedding. The softmax uses raw negative
distances: no temperature belongs here, only the contrastive loss has one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tensor
from .errors import UsageError
from .geometry import Curvature, LorentzPoint


@dataclass
class ModalityScale:
    """Learnable per-modality feature scale alpha, stored as log(alpha)."""

    log_alpha: Tensor

    @staticmethod
    def init(d: int) -> "ModalityScale":
        # alpha starts at 1/sqrt(d) to keep lifted norms moderate
        return ModalityScale(Tensor(np.log(1.0 / np.sqrt(d)), requires_grad=True))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))


@dataclass(frozen=True)
class RootEmbedding:
    """Lifted, contribution-weighted global representation of one instance."""

    point: LorentzPoint
    modality: str


def aggregate_batch(Z: Tensor, scale: ModalityScale, c: Tensor):
    """Aggregate a batch of token matrices (B, L, d) into root points (B, d+1).

    Returns (roots, weights) with weights shaped (B, L). Fully differentiable,
    including through alpha and the curvature.
    """
    if Z.ndim != 3:
        raise UsageError(f"aggregate_batch: expected (B, L, d), got {Z.shape}")
    alpha = ad.exp(scale.log_alpha)
    Zs = Z * alpha
    anchor_feat = ad.tmean(Zs, axis=1, keepdims=True)          # (B, 1, d)
    anchor = geo.exp_map_origin_t(anchor_feat, c)              # (B, 1, d+1)
    leaves = geo.exp_map_origin_t(Zs, c)                       # (B, L, d+1)
    dists = geo.lorentz_distance_t(leaves, anchor, c)          # (B, L)
    weights = ad.softmax(-dists, axis=-1)
    z_star = ad.tsum(ad.reshape(weights, weights.shape + (1,)) * Zs, axis=1)
    roots = geo.exp_map_origin_t(z_star, c)                    # (B, d+1)
    return roots, weights


def aggregate(Z: np.ndarray, scale: ModalityScale, curvature: Curvature,
              modality: str = "text"):
    """Single-instance wrapper: (L, d) tokens -> (RootEmbedding, weights)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise UsageError("aggregate: Z must be a non-empty L x d matrix")
    if not np.all(np.isfinite(Z)):
        raise UsageError("aggregate: Z must be finite")
    roots, weights = aggregate_batch(Tensor(Z[None, :, :]), scale,
                                     ad.constant(curvature.c))
    point = LorentzPoint(roots.data[0], curvature)
    return RootEmbedding(point, modality), weights.data[0]
