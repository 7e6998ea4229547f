import math

import numpy as np
import pytest

from hypalign import autodiff as ad
from hypalign import geometry as geo
from hypalign.autodiff import Tensor, constant, grad_check
from hypalign.errors import UsageError
from hypalign.geometry import Curvature, LorentzPoint
from hypalign.losses import (BatchPairing, LossConfig, contrastive_loss,
                             ordering_loss, similarity_matrix, total_loss)

C1 = constant(1.0)


def lift_batch(vs, c=C1):
    return geo.exp_map_origin_t(constant(np.asarray(vs, dtype=float)), c)


def radial(r, dim=3):
    coords = np.zeros(dim + 1)
    coords[0] = r
    coords[-1] = math.sqrt(1.0 + r * r)
    return coords


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------

def test_pairing_transpose_consistency():
    p = BatchPairing(3, [[0, 1], [1], [2]])
    assert p.transpose == [[0], [0, 1], [2]]
    for i, P in enumerate(p.positives):
        for j in P:
            assert i in p.transpose[j]


def test_pairing_rejects_empty_and_out_of_range():
    with pytest.raises(UsageError):
        BatchPairing(2, [[0], []])
    with pytest.raises(UsageError):
        BatchPairing(2, [[0], [5]])
    with pytest.raises(UsageError):
        BatchPairing(2, [[0], [0]])  # pc 1 has no positive text


def test_pairing_from_groups():
    p = BatchPairing.from_groups(["a", "b", "a"])
    assert p.positives == [[0, 2], [1], [0, 2]]


def test_loss_config_validation():
    with pytest.raises(UsageError):
        LossConfig(tau=0.0)
    with pytest.raises(UsageError):
        LossConfig(lam=-0.1)
    with pytest.raises(UsageError):
        LossConfig(K=0.0)


# ---------------------------------------------------------------------------
# similarity matrix
# ---------------------------------------------------------------------------

def test_similarity_zero_on_identical_points_and_row_max():
    rng = np.random.default_rng(0)
    vs = rng.normal(size=(3, 4)) * 0.5
    H = lift_batch(vs)
    S = similarity_matrix(H, H, 0.07, C1)
    assert np.allclose(np.diag(S.data), 0.0, atol=1e-7)
    assert np.all(S.data <= 1e-12)
    assert np.allclose(S.data.max(axis=1), 0.0, atol=1e-7)


def test_similarity_scales_inversely_with_tau():
    rng = np.random.default_rng(1)
    H_t = lift_batch(rng.normal(size=(4, 3)))
    H_p = lift_batch(rng.normal(size=(4, 3)))
    S1 = similarity_matrix(H_t, H_p, 0.1, C1)
    S2 = similarity_matrix(H_t, H_p, 0.2, C1)
    assert np.allclose(S2.data, S1.data / 2.0, atol=1e-12)


def test_similarity_matches_elementwise_distances():
    rng = np.random.default_rng(2)
    vt = rng.normal(size=(2, 3))
    vp = rng.normal(size=(2, 3))
    H_t, H_p = lift_batch(vt), lift_batch(vp)
    S = similarity_matrix(H_t, H_p, 0.07, C1)
    cv = Curvature.from_c(1.0)
    for i in range(2):
        for j in range(2):
            d = geo.lorentz_distance(LorentzPoint(H_t.data[i], cv),
                                     LorentzPoint(H_p.data[j], cv))
            assert S.data[i, j] == pytest.approx(-d / 0.07, abs=1e-10)


# ---------------------------------------------------------------------------
# contrastive loss
# ---------------------------------------------------------------------------

def brute_force_contrastive(S, pairing):
    """Direct summation, no log-sum-exp stabilization."""
    B = pairing.B

    def direction(M, positives):
        total = 0.0
        for i in range(B):
            num = sum(math.exp(M[i, j]) for j in positives[i])
            den = sum(math.exp(M[i, k]) for k in range(B))
            total += math.log(num / den)
        return -total / B

    return 0.5 * (direction(S, pairing.positives)
                  + direction(S.T, pairing.transpose))


def test_single_pair_batch_loss_is_zero():
    S = Tensor(np.array([[-1.7]]))
    assert contrastive_loss(S, BatchPairing(1, [[0]])).item() == pytest.approx(0.0)


def test_all_positive_batch_loss_is_zero():
    rng = np.random.default_rng(3)
    S = Tensor(rng.normal(size=(4, 4)))
    pairing = BatchPairing(4, [[0, 1, 2, 3]] * 4)
    assert contrastive_loss(S, pairing).item() == pytest.approx(0.0, abs=1e-12)


def random_pairing(rng, B):
    while True:
        groups = rng.integers(0, max(1, B - 1), size=B)
        try:
            return BatchPairing.from_groups(groups.tolist())
        except UsageError:
            continue


def test_contrastive_matches_brute_force_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        B = int(rng.integers(1, 9))
        S = rng.normal(size=(B, B)) * 3.0
        pairing = random_pairing(rng, B)
        got = contrastive_loss(Tensor(S), pairing).item()
        expect = brute_force_contrastive(S, pairing)
        assert got == pytest.approx(expect, abs=1e-10)
        assert got >= -1e-12


def test_reduces_to_infonce_when_single_positive():
    rng = np.random.default_rng(5)
    B = 6
    S = rng.normal(size=(B, B))
    pairing = BatchPairing(B, [[i] for i in range(B)])
    got = contrastive_loss(Tensor(S), pairing).item()
    # independent InfoNCE: softmax cross-entropy with diagonal targets
    def infonce(M):
        p = np.exp(M - M.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        return -np.mean(np.log(np.diag(p)))
    expect = 0.5 * (infonce(S) + infonce(S.T))
    assert got == pytest.approx(expect, abs=1e-12)


def test_contrastive_shape_mismatch():
    with pytest.raises(UsageError):
        contrastive_loss(Tensor(np.zeros((2, 2))), BatchPairing(3, [[0]] * 3))


# ---------------------------------------------------------------------------
# ordering loss
# ---------------------------------------------------------------------------

def test_in_cone_pairs_give_zero_loss():
    # radial descendants lie on the cone axis: theta ~ 0 < phi
    H_t = Tensor(np.stack([radial(0.4), radial(0.3)]))
    H_p = Tensor(np.stack([radial(0.9), radial(0.8)]))
    pairing = BatchPairing(2, [[0], [1]])
    assert ordering_loss(H_t, H_p, pairing, 0.1, C1).item() == pytest.approx(0.0, abs=1e-9)


def test_antipodal_pair_pays_theta_minus_phi():
    ht = radial(0.4)          # phi = arcsin(0.2/0.4) = pi/6
    hp = radial(0.9)
    hp[:-1] *= -1.0
    loss = ordering_loss(Tensor(ht[None]), Tensor(hp[None]),
                         BatchPairing(1, [[0]]), 0.1, C1)
    assert loss.item() == pytest.approx(math.pi - math.pi / 6, abs=1e-6)


def test_degenerate_pairs_contribute_zero():
    p = radial(0.4)
    # coincident points and an origin axis both mask to zero
    loss = ordering_loss(Tensor(p[None]), Tensor(p[None]),
                         BatchPairing(1, [[0]]), 0.1, C1)
    assert loss.item() == 0.0
    o = np.array([0.0, 0.0, 0.0, 1.0])
    loss = ordering_loss(Tensor(o[None]), Tensor(p[None]),
                         BatchPairing(1, [[0]]), 0.1, C1)
    assert loss.item() == 0.0


def sweep_losses(angles, ht, r=0.9):
    pairing = BatchPairing(1, [[0]])
    out = []
    for a in angles:
        hp = np.array([r * math.cos(a), r * math.sin(a), 0.0,
                       math.sqrt(1.0 + r * r)])
        out.append(ordering_loss(Tensor(ht[None]), Tensor(hp[None]),
                                 pairing, 0.1, C1).item())
    return np.array(out)


def test_continuity_across_cone_boundary():
    # rotate h_p in the plane of the cone axis, sweeping theta through phi
    ht = radial(0.4)
    coarse = np.linspace(0.0, math.pi, 2001)
    losses = sweep_losses(coarse, ht)
    first = np.argmax(losses > 0)
    assert 0 < first < len(coarse) - 1
    # refine around the boundary: a continuous hinge has jumps bounded by
    # the (unit-order) slope times the step, so 1e-7 steps stay under 1e-6
    lo, hi = coarse[first - 1], coarse[first + 1]
    fine = np.linspace(lo, hi, int((hi - lo) / 1e-7) + 2)
    fine_losses = sweep_losses(fine, ht)
    assert np.abs(np.diff(fine_losses)).max() < 1e-6
    # loss approaches 0 from above at the boundary
    active = fine_losses[fine_losses > 0]
    assert active.min() < 1e-6


def test_ordering_is_asymmetric_in_arguments():
    ht = radial(0.4)
    hp = np.array([0.9 * math.cos(2.0), 0.9 * math.sin(2.0), 0.0,
                   math.sqrt(1.81)])
    pairing = BatchPairing(1, [[0]])
    a = ordering_loss(Tensor(ht[None]), Tensor(hp[None]), pairing, 0.1, C1).item()
    b = ordering_loss(Tensor(hp[None]), Tensor(ht[None]), pairing, 0.1, C1).item()
    assert a != pytest.approx(b, abs=1e-9)


# ---------------------------------------------------------------------------
# total loss
# ---------------------------------------------------------------------------

def test_total_loss_lambda_zero_is_contrastive():
    rng = np.random.default_rng(6)
    H_t = lift_batch(rng.normal(size=(3, 4)))
    H_p = lift_batch(rng.normal(size=(3, 4)))
    pairing = BatchPairing(3, [[0], [1], [2]])
    cfg = LossConfig(lam=0.0)
    total, cont, _ = total_loss(H_t, H_p, pairing, cfg, C1)
    assert total.item() == pytest.approx(cont.item(), abs=1e-15)


def test_total_loss_recombination():
    rng = np.random.default_rng(7)
    H_t = lift_batch(rng.normal(size=(4, 3)))
    H_p = lift_batch(rng.normal(size=(4, 3)))
    pairing = BatchPairing.from_groups([0, 0, 1, 2])
    cfg = LossConfig()
    total, cont, order = total_loss(H_t, H_p, pairing, cfg, C1)
    assert total.item() == pytest.approx(cont.item() + 0.2 * order.item(),
                                         abs=1e-12)


def test_total_loss_nonnegative_random_batches():
    rng = np.random.default_rng(8)
    for _ in range(100):
        B = int(rng.integers(1, 6))
        H_t = lift_batch(rng.normal(size=(B, 3)))
        H_p = lift_batch(rng.normal(size=(B, 3)))
        pairing = random_pairing(rng, B)
        total, cont, order = total_loss(H_t, H_p, pairing, LossConfig(), C1)
        assert total.item() >= -1e-12
        assert cont.item() >= -1e-12 and order.item() >= -1e-12


def test_total_loss_deterministic():
    rng = np.random.default_rng(9)
    vt, vp = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    pairing = BatchPairing.from_groups([0, 1, 1])

    def run():
        total, _, _ = total_loss(lift_batch(vt), lift_batch(vp), pairing,
                                 LossConfig(), C1)
        return total.item()

    assert run() == run()


def test_total_loss_gradcheck_including_curvature():
    rng = np.random.default_rng(10)
    vt = Tensor(rng.normal(size=(4, 5)) * 0.5, requires_grad=True)
    vp = Tensor(rng.normal(size=(4, 5)) * 0.5, requires_grad=True)
    log_c = Tensor(0.15, requires_grad=True)
    pairing = BatchPairing.from_groups([0, 0, 1, 2])
    cfg = LossConfig()

    def f():
        c = ad.exp(log_c)
        H_t = geo.exp_map_origin_t(vt, c)
        H_p = geo.exp_map_origin_t(vp, c)
        return total_loss(H_t, H_p, pairing, cfg, c)[0]

    assert grad_check(f, [vt, vp, log_c]) < 1e-4
