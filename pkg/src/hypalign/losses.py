"""Dual geometric objective: multi-positive Lorentzian contrastive loss plus
the entailment-cone ordering loss, combined as L_cont + lambda * L_ord.

The contrastive term is a symmetric InfoNCE variant whose numerator sums
over every positive in the batch; the ordering term is a hinge on the
exterior angle minus the cone half-aperture, applied to positive pairs only.
The cone is anchored at the text embedding, so the ordering term is
deliberately asymmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tensor, constant
from .errors import UsageError


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    lam: float = 0.2
    K: float = 0.1

    def __post_init__(self):
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise UsageError("LossConfig: tau must be finite and > 0")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise UsageError("LossConfig: lambda must be finite and >= 0")
        if not (self.K > 0 and np.isfinite(self.K)):
            raise UsageError("LossConfig: K must be finite and > 0")


@dataclass
class BatchPairing:
    """Many-to-many positive structure for one batch.

    ``positives[i]`` lists the point-cloud indices matched to text ``i``;
    the transpose sets are derived and kept consistent.
    """

    B: int
    positives: list[list[int]]
    transpose: list[list[int]] = field(init=False)

    def __post_init__(self):
        if len(self.positives) != self.B:
            raise UsageError("BatchPairing: need one positive set per text index")
        transpose: list[list[int]] = [[] for _ in range(self.B)]
        for i, P in enumerate(self.positives):
            if len(P) == 0:
                raise UsageError(f"BatchPairing: empty positive set for index {i}")
            for j in P:
                if not (0 <= j < self.B):
                    raise UsageError(f"BatchPairing: index {j} out of range")
                transpose[j].append(i)
        for j in range(self.B):
            if not transpose[j]:
                raise UsageError(
                    f"BatchPairing: point cloud {j} has no positive text")
        self.transpose = transpose

    @staticmethod
    def from_groups(group_ids) -> "BatchPairing":
        """Items share a group id iff they are mutual positives."""
        ids = list(group_ids)
        B = len(ids)
        positives = [[j for j in range(B) if ids[j] == ids[i]] for i in range(B)]
        return BatchPairing(B, positives)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.B, self.B))
        for i, P in enumerate(self.positives):
            m[i, P] = 1.0
        return m

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, P in enumerate(self.positives) for j in P]


def similarity_matrix(H_t: Tensor, H_p: Tensor, tau: float, c: Tensor) -> Tensor:
    """s(i, j) = -d_H(h_t_i, h_p_j) / tau over all batch pairs; (B, B)."""
    if H_t.shape != H_p.shape:
        raise UsageError("similarity_matrix: batch shapes must match")
    ht = ad.reshape(H_t, (H_t.shape[0], 1, H_t.shape[1]))
    hp = ad.reshape(H_p, (1, H_p.shape[0], H_p.shape[1]))
    d = geo.lorentz_distance_t(ht, hp, c)
    return -d * (1.0 / tau)


def contrastive_loss(S: Tensor, pairing: BatchPairing) -> Tensor:
    """Symmetric multi-positive InfoNCE on a precomputed similarity matrix."""
    if S.shape != (pairing.B, pairing.B):
        raise UsageError("contrastive_loss: similarity matrix shape mismatch")
    mask = pairing.mask()

    def direction(Sd: Tensor, m: np.ndarray) -> Tensor:
        pos = ad.logsumexp(Sd, axis=-1, mask=m)
        den = ad.logsumexp(Sd, axis=-1)
        return -ad.tmean(pos - den)

    l_tp = direction(S, mask)
    l_pt = direction(ad.transpose(S), mask.T)
    return (l_tp + l_pt) * 0.5


def ordering_loss(H_t: Tensor, H_p: Tensor, pairing: BatchPairing, K: float,
                  c: Tensor) -> Tensor:
    """Mean hinge max(0, theta - phi) over positive pairs; degenerate pairs
    (coincident points, axis at origin) contribute exactly zero."""
    pairs = pairing.pairs()
    ti = np.array([i for i, _ in pairs])
    pj = np.array([j for _, j in pairs])
    ht = H_t[ti]
    hp = H_p[pj]
    theta, mask = geo.exterior_angle_t(ht, hp, c)
    phi = geo.half_aperture_t(ht, K, c)
    hinge = ad.relu(theta - phi) * constant(mask)
    return ad.tmean(hinge)


def total_loss(H_t: Tensor, H_p: Tensor, pairing: BatchPairing,
               cfg: LossConfig, c: Tensor):
    """Returns (total, contrastive, ordering) as tensors."""
    S = similarity_matrix(H_t, H_p, cfg.tau, c)
    l_cont = contrastive_loss(S, pairing)
    l_ord = ordering_loss(H_t, H_p, pairing, cfg.K, c)
    return l_cont + l_ord * cfg.lam, l_cont, l_ord
