"""Retrieval evaluation (R@K both directions, Rsum) and cone diagnostics.

Galleries are ranked by ascending Lorentzian distance with ties broken by
ascending gallery index; R@K counts a query as a hit if any of its positives
appears in the top K. All values are reported in percent, so Rsum over
K = {1, 5, 10} in both directions lies in [0, 600].
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import geometry as geo
from .autodiff import constant
from .errors import UsageError
from .losses import BatchPairing

THREADS_ENV = "H2ARN_THREADS"


def _max_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}")
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def distance_matrix(H_a: np.ndarray, H_b: np.ndarray, c: float) -> np.ndarray:
    """Pairwise Lorentzian distances between two stacks of hyperboloid points.

    Chunked over queries; the chunk pool size is capped by H2ARN_THREADS.
    """
    H_a = np.asarray(H_a, dtype=np.float64)
    H_b = np.asarray(H_b, dtype=np.float64)
    if H_a.ndim != 2 or H_b.ndim != 2 or H_a.shape[1] != H_b.shape[1]:
        raise UsageError("distance_matrix: expected (N, d+1) stacks of equal width")
    ct = constant(c)
    out = np.empty((H_a.shape[0], H_b.shape[0]))

    def fill(lo, hi):
        block = geo.lorentz_distance_t(
            constant(H_a[lo:hi, None, :]), constant(H_b[None, :, :]), ct)
        out[lo:hi] = block.data

    chunk = max(1, -(-H_a.shape[0] // _max_workers()))
    spans = [(lo, min(lo + chunk, H_a.shape[0]))
             for lo in range(0, H_a.shape[0], chunk)]
    if len(spans) == 1:
        fill(*spans[0])
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(lambda s: fill(*s), spans))
    return out


def recall_at_k(dist: np.ndarray, positives: list[list[int]],
                ks: tuple[int, ...]) -> dict[int, float]:
    """R@K (percent) from a query-by-gallery distance matrix."""
    if dist.shape[1] == 0:
        raise UsageError("recall_at_k: empty gallery")
    order = np.argsort(dist, axis=1, kind="stable")  # stable = index-ascending ties
    out = {}
    for k in ks:
        hits = 0
        for i, P in enumerate(positives):
            top = order[i, :k]
            if np.isin(top, P).any():
                hits += 1
        out[k] = 100.0 * hits / dist.shape[0]
    return out


def evaluate(H_t: np.ndarray, H_p: np.ndarray, pairing: BatchPairing,
             c: float, ks: tuple[int, ...] = (1, 5, 10)) -> dict:
    """Both retrieval directions plus Rsum over the requested cutoffs."""
    if H_p.shape[0] == 0:
        raise UsageError("evaluate: empty gallery")
    dist = distance_matrix(H_t, H_p, c)
    t2p = recall_at_k(dist, pairing.positives, ks)
    p2t = recall_at_k(dist.T, pairing.transpose, ks)
    rsum = sum(t2p.values()) + sum(p2t.values())
    return {"text_to_pc": t2p, "pc_to_text": p2t, "rsum": rsum}


def containment_rate(H_t: np.ndarray, H_p: np.ndarray, pairing: BatchPairing,
                     K: float, c: float) -> float:
    """Fraction of positive pairs whose exterior angle is within the aperture.

    Degenerate pairs (coincident points, axis at the origin) count as
    contained, mirroring their zero contribution to the ordering loss.
    """
    pairs = pairing.pairs()
    ti = np.array([i for i, _ in pairs])
    pj = np.array([j for _, j in pairs])
    ct = constant(c)
    theta, mask = geo.exterior_angle_t(constant(H_t[ti]), constant(H_p[pj]), ct)
    phi = geo.half_aperture_t(constant(H_t[ti]), K, ct)
    inside = (theta.data <= phi.data) | (mask == 0.0)
    return float(np.mean(inside))
