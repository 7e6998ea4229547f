import math

import numpy as np
import pytest

from hypalign import autodiff as ad
from hypalign.aggregation import ModalityScale, aggregate, aggregate_batch
from hypalign.autodiff import Tensor, constant, grad_check
from hypalign.errors import SaturationError, UsageError
from hypalign.geometry import Curvature, lorentz_distance_t

C1 = Curvature.from_c(1.0)


def unit_scale():
    return ModalityScale(Tensor(0.0))  # alpha = 1


def test_singleton_sequence():
    z = np.array([[0.3, -0.2]])
    root, w = aggregate(z, unit_scale(), C1)
    assert np.allclose(w, [1.0])
    n = np.linalg.norm(z[0])
    assert root.point.coords[-1] == pytest.approx(math.cosh(n), abs=1e-12)


def test_identical_rows_collapse_to_uniform_weights():
    z = np.tile(np.array([0.5, 0.1, -0.3]), (4, 1))
    root, w = aggregate(z, unit_scale(), C1)
    assert np.array_equal(w, np.full(4, 0.25))
    # z* equals the (scaled) common row
    expected = np.array([0.5, 0.1, -0.3])
    n = np.linalg.norm(expected)
    assert np.allclose(root.point.coords[:-1], math.sinh(n) / n * expected)


# straight-line oracle values for rows (1,0), (0,1), (10,10), alpha=1, c=1,
# computed by direct evaluation of lift -> distance -> softmax
GOLDEN_WEIGHTS = np.array([0.49593445, 0.49593445, 0.0081311])
GOLDEN_ZSTAR = np.array([0.57724546, 0.57724546])


def straight_line_oracle(rows):
    def lift(v):
        n = np.linalg.norm(v)
        if n == 0:
            return np.concatenate([v, [1.0]])
        return np.concatenate([math.sinh(n) / n * v, [math.cosh(n)]])

    anchor = lift(rows.mean(axis=0))

    def dist(u, v):
        inner = u[:-1] @ v[:-1] - u[-1] * v[-1]
        return math.acosh(max(-inner, 1.0))

    d = np.array([dist(lift(r), anchor) for r in rows])
    e = np.exp(-(d - d.min()))
    w = e / e.sum()
    return w, (w[:, None] * rows).sum(axis=0)


def test_outlier_row_gets_smallest_weight_golden():
    rows = np.array([[1.0, 0.0], [0.0, 1.0], [10.0, 10.0]])
    root, w = aggregate(rows, unit_scale(), C1)
    w_oracle, zstar_oracle = straight_line_oracle(rows)
    assert np.allclose(w, w_oracle, atol=1e-12)
    assert np.allclose(w, GOLDEN_WEIGHTS, atol=1e-7)
    assert np.argmin(w) == 2
    assert np.allclose(root.point.coords[:-1],
                       math.sinh(np.linalg.norm(zstar_oracle))
                       / np.linalg.norm(zstar_oracle) * zstar_oracle, atol=1e-10)
    assert np.allclose(zstar_oracle, GOLDEN_ZSTAR, atol=1e-7)


def test_weights_sum_to_one_and_positive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        L = rng.integers(1, 9)
        z = rng.normal(size=(L, 5))
        _, w = aggregate(z, unit_scale(), C1)
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w > 0.0)


def test_convexity_bound_on_aggregate_norm():
    rng = np.random.default_rng(1)
    for _ in range(50):
        z = rng.normal(size=(6, 4)) * 2.0
        root, w = aggregate(z, unit_scale(), C1)
        zstar = (w[:, None] * z).sum(axis=0)
        assert np.linalg.norm(zstar) <= np.linalg.norm(z, axis=1).max() + 1e-12


def test_alpha_scales_features_before_lift():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(3, 4))
    scale = ModalityScale(Tensor(np.log(0.5)))
    root_half, _ = aggregate(z, scale, C1)
    root_direct, _ = aggregate(0.5 * z, unit_scale(), C1)
    assert np.allclose(root_half.point.coords, root_direct.point.coords,
                       atol=1e-12)


def test_saturation_propagates():
    z = np.full((2, 4), 40.0)
    with pytest.raises(SaturationError):
        aggregate(z, unit_scale(), C1)


def test_input_validation():
    with pytest.raises(UsageError):
        aggregate(np.empty((0, 3)), unit_scale(), C1)
    with pytest.raises(UsageError):
        aggregate_batch(Tensor(np.ones((2, 3))), unit_scale(), constant(1.0))


def test_gradcheck_through_aggregate_including_scales():
    rng = np.random.default_rng(3)
    z = Tensor(rng.normal(size=(2, 4, 3)) * 0.5, requires_grad=True)
    log_alpha = Tensor(np.log(0.7), requires_grad=True)
    log_c = Tensor(0.1, requires_grad=True)
    scale = ModalityScale(log_alpha)

    def f():
        c = ad.exp(log_c)
        roots, _ = aggregate_batch(z, scale, c)
        o = ad.concat([constant(np.zeros((1, 3))),
                       ad.reshape(1.0 / ad.sqrt(c), (1, 1))], axis=-1)
        return ad.tsum(lorentz_distance_t(roots, o, c))

    assert grad_check(f, [z, log_alpha, log_c]) < 1e-4
