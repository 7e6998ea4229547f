"""Lorentz-model hyperbolic primitives, numerically stabilized.

Points live on the upper sheet of the two-sheeted hyperboloid of curvature
-c embedded in (d+1)-dimensional Minkowski space. Coordinate convention:
spatial part first, time component last, so the origin is (0, ..., 0, 1/sqrt(c)).

Two layers are provided:

* batched, differentiable functions over :class:`~hypalign.autodiff.Tensor`
  values of shape (..., d+1), used by the model and losses;
* small value-level wrappers (:class:`Curvature`, :class:`LorentzPoint`,
  :class:`TangentVector`) that validate the manifold invariants eagerly.

All functions are pure; concurrent invocation is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant
from .errors import SaturationError, UsageError

# stabilization constants; these are not model parameters and carry no gradient
ASIN_EPS = 1e-7          # lower clamp of the aperture arcsin argument
DEN_EPS = 1e-12          # guard on the exterior-angle denominator
ORIGIN_EPS = 1e-9        # spatial radius below which cone geometry degenerates
LIFT_OVERFLOW_GUARD = 50.0  # max sqrt(c)*|v| before the lift saturates
POINT_RTOL = 1e-9        # componentwise relative tolerance for point equality
INVARIANT_ATOL = 1e-9


# ---------------------------------------------------------------------------
# smooth even primitives: sinh(sqrt(s))/sqrt(s) and cosh(sqrt(s)) as
# functions of s = (sqrt(c)*|v|)^2, analytic at s = 0
# ---------------------------------------------------------------------------

def _sinhc_sqrt_fwd(s):
    small = s < 1e-8
    r = np.sqrt(np.where(small, 1.0, s))
    main = np.where(small, 1.0, np.sinh(r) / r)
    series = 1.0 + s / 6.0 + s * s / 120.0
    return np.where(small, series, main)


def _sinhc_sqrt_dfwd(s):
    small = s < 1e-6
    r = np.sqrt(np.where(small, 1.0, s))
    main = np.where(small, 0.0, (r * np.cosh(r) - np.sinh(r)) / (2.0 * r ** 3))
    series = 1.0 / 6.0 + s / 60.0 + s * s / 1680.0
    return np.where(small, series, main)


def _cosh_sqrt_fwd(s):
    small = s < 1e-8
    r = np.sqrt(np.where(small, 1.0, s))
    main = np.where(small, 1.0, np.cosh(r))
    series = 1.0 + s / 2.0 + s * s / 24.0
    return np.where(small, series, main)


def _cosh_sqrt_dfwd(s):
    return 0.5 * _sinhc_sqrt_fwd(s)


def sinhc_sqrt(s: Tensor) -> Tensor:
    """sinh(sqrt(s))/sqrt(s), smooth through s=0."""
    return ad.custom_elementwise("sinhc_sqrt", s, _sinhc_sqrt_fwd, _sinhc_sqrt_dfwd)


def cosh_sqrt(s: Tensor) -> Tensor:
    """cosh(sqrt(s)), smooth through s=0."""
    return ad.custom_elementwise("cosh_sqrt", s, _cosh_sqrt_fwd, _cosh_sqrt_dfwd)


# ---------------------------------------------------------------------------
# batched differentiable core (time component last)
# ---------------------------------------------------------------------------

def lorentz_inner(u: Tensor, v: Tensor) -> Tensor:
    """Minkowski bilinear form: Euclidean product of spatial parts minus
    the product of time components. Shapes broadcast over leading axes."""
    if u.shape[-1] != v.shape[-1]:
        raise UsageError(
            f"lorentz_inner: length mismatch {u.shape[-1]} vs {v.shape[-1]}")
    if u.shape[-1] < 2:
        raise UsageError("lorentz_inner: vectors must have length >= 2")
    spatial = ad.tsum(u[..., :-1] * v[..., :-1], axis=-1)
    return spatial - u[..., -1] * v[..., -1]


def lorentz_distance_t(u: Tensor, v: Tensor, c: Tensor) -> Tensor:
    """Geodesic distance arccosh(-c<u,v>_L)/sqrt(c), clamped below at 1.

    Evaluated through -c<u,v>_L = 1 + c*<u-v,u-v>_L/2, which avoids the
    catastrophic cancellation of the raw inner product for nearby points and
    is exactly 1 (distance 0) for identical coordinates.
    """
    diff = u - v
    x = ad.clamp(1.0 + c * lorentz_inner(diff, diff) * 0.5, lo=1.0)
    return ad.arccosh(x) / ad.sqrt(c)


def exp_map_origin_t(v: Tensor, c: Tensor) -> Tensor:
    """Lift a Euclidean feature (..., d) onto the hyperboloid (..., d+1).

    Spatial part sinh(sqrt(c)|v|)/(sqrt(c)|v|) * sqrt(c)... reduces to
    sinh(r)/r * v with r = sqrt(c)|v|; time part cosh(r)/sqrt(c). The |v|=0
    limit is handled analytically by the sinhc/cosh primitives.
    """
    s = c * ad.tsum(ad.square(v), axis=-1, keepdims=True)
    if np.any(s.data > LIFT_OVERFLOW_GUARD ** 2):
        worst = math.sqrt(float(np.max(s.data)))
        raise SaturationError(
            f"lift argument sqrt(c)*|v| = {worst:.3g} exceeds the overflow "
            f"guard {LIFT_OVERFLOW_GUARD}; rescale the features (shrink alpha)")
    spatial = sinhc_sqrt(s) * v
    time = cosh_sqrt(s[..., 0]) / ad.sqrt(c)
    return ad.concat([spatial, ad.reshape(time, time.shape + (1,))], axis=-1)


def exp_map_t(base: Tensor, v: Tensor, c: Tensor) -> Tensor:
    """General exponential map: cosh(sqrt(c)|v|_L) base + sinhc * v.

    ``v`` must be tangent at ``base`` (spacelike), shape (..., d+1).
    """
    q = ad.clamp(lorentz_inner(v, v), lo=0.0)  # |v|_L^2, >= 0 for tangents
    s = c * q
    if np.any(s.data > LIFT_OVERFLOW_GUARD ** 2):
        raise SaturationError("exp_map argument exceeds the overflow guard")
    coef_b = cosh_sqrt(s)
    coef_v = sinhc_sqrt(s)
    return ad.reshape(coef_b, coef_b.shape + (1,)) * base + \
        ad.reshape(coef_v, coef_v.shape + (1,)) * v


def spatial_norm(u: Tensor) -> Tensor:
    """Euclidean norm of the spatial part of hyperboloid points (..., d+1)."""
    return ad.euclidean_norm(u[..., :-1], axis=-1)


def half_aperture_t(h: Tensor, K: float, c: Tensor) -> Tensor:
    """Entailment-cone half-aperture arcsin(2K/(sqrt(c)|h_spatial|)).

    Small radii clamp the argument to 1 (aperture pi/2): points near the
    origin are maximally general and their cone is a half-space.
    """
    if K <= 0:
        raise UsageError("half_aperture: K must be > 0")
    r = ad.clamp(spatial_norm(h), lo=1e-30)
    arg = ad.clamp(constant(2.0 * K) / (ad.sqrt(c) * r), lo=ASIN_EPS, hi=1.0)
    return ad.arcsin(arg)


def exterior_angle_t(h_t: Tensor, h_p: Tensor, c: Tensor):
    """Exterior angle at h_t between the cone axis and h_p, plus a validity mask.

    Returns (theta, mask) where mask is a constant 0/1 array flagging
    non-degenerate pairs; callers multiply the ordering hinge by it so that
    coincident points or near-origin axes contribute zero loss and gradient.
    """
    inner = lorentz_inner(h_t, h_p)
    ci = c * inner
    r = spatial_norm(h_t)
    num = h_p[..., -1] + c * h_t[..., -1] * inner
    den_sq = ad.clamp(ad.square(ci) - 1.0, lo=DEN_EPS)
    den = ad.clamp(r, lo=1e-30) * ad.sqrt(den_sq)
    arg = ad.clamp(num / den, lo=-1.0, hi=1.0)
    theta = ad.arccos(arg)
    mask = ((r.data >= ORIGIN_EPS) &
            (ci.data * ci.data - 1.0 >= DEN_EPS)).astype(np.float64)
    return theta, mask


# ---------------------------------------------------------------------------
# value-level wrappers with eager invariant checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Curvature:
    """Positive curvature magnitude c stored as log(c)."""

    log_c: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.log_c) or not math.isfinite(math.exp(self.log_c)):
            raise UsageError("Curvature: exp(log_c) must be finite and positive")

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @staticmethod
    def from_c(c: float) -> "Curvature":
        if not (c > 0 and math.isfinite(c)):
            raise UsageError("Curvature: c must be finite and > 0")
        return Curvature(math.log(c))


@dataclass(frozen=True)
class LorentzPoint:
    """A point on the curvature -c hyperboloid; validates on construction."""

    coords: np.ndarray
    curvature: Curvature

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 1 or coords.size < 2:
            raise UsageError("LorentzPoint: coords must be a vector of length >= 2")
        c = self.curvature.c
        inner = float(np.dot(coords[:-1], coords[:-1]) - coords[-1] ** 2)
        # the raw bilinear form loses ~ulp(t^2) to cancellation for far
        # points, so the absolute tolerance is widened by a few ulps of t^2
        tol = INVARIANT_ATOL + 8e-15 * c * coords[-1] ** 2
        if abs(c * inner + 1.0) > tol:
            raise UsageError(
                f"LorentzPoint: c*<u,u>_L = {c * inner:.12g}, expected -1")
        if coords[-1] <= 0:
            raise UsageError("LorentzPoint: time component must be positive")
        expected_time = math.sqrt(1.0 / c + float(np.dot(coords[:-1], coords[:-1])))
        if abs(coords[-1] - expected_time) > max(INVARIANT_ATOL, 1e-9 * expected_time):
            raise UsageError("LorentzPoint: time component inconsistent with "
                             "the hyperboloid constraint")

    @property
    def dim(self) -> int:
        return self.coords.size - 1

    @property
    def spatial(self) -> np.ndarray:
        return self.coords[:-1]

    @property
    def time(self) -> float:
        return float(self.coords[-1])

    def isclose(self, other: "LorentzPoint") -> bool:
        return bool(np.allclose(self.coords, other.coords,
                                rtol=POINT_RTOL, atol=POINT_RTOL))


@dataclass(frozen=True)
class TangentVector:
    """A vector Lorentz-orthogonal to its base point."""

    base: LorentzPoint
    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=np.float64)
        object.__setattr__(self, "vec", vec)
        if vec.shape != self.base.coords.shape:
            raise UsageError("TangentVector: vec must match the base dimension")
        inner = float(np.dot(vec[:-1], self.base.coords[:-1])
                      - vec[-1] * self.base.coords[-1])
        scale = max(1.0, float(np.abs(vec).max()), float(np.abs(self.base.coords).max()))
        if abs(inner) > 1e-9 * scale * scale:
            raise UsageError(f"TangentVector: <v,base>_L = {inner:.3g}, expected 0")


def origin(dim: int, curvature: Curvature) -> LorentzPoint:
    coords = np.zeros(dim + 1)
    coords[-1] = 1.0 / math.sqrt(curvature.c)
    return LorentzPoint(coords, curvature)


def lorentz_inner_np(u: np.ndarray, v: np.ndarray) -> float:
    """Value-level Minkowski inner product of two raw coordinate vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise UsageError("lorentz_inner: length mismatch")
    if u.size < 2:
        raise UsageError("lorentz_inner: vectors must have length >= 2")
    return float(np.dot(u[:-1], v[:-1]) - u[-1] * v[-1])


def _check_compatible(u: LorentzPoint, v: LorentzPoint) -> None:
    if u.curvature != v.curvature:
        raise UsageError("points have different curvatures")
    if u.dim != v.dim:
        raise UsageError("points have different dimensions")


def lorentz_distance(u: LorentzPoint, v: LorentzPoint) -> float:
    _check_compatible(u, v)
    c = u.curvature.c
    diff = u.coords - v.coords
    x = max(1.0 + 0.5 * c * lorentz_inner_np(diff, diff), 1.0)
    return math.acosh(x) / math.sqrt(c)


def exp_map(base: LorentzPoint, v: TangentVector) -> LorentzPoint:
    if v.base is not base and not v.base.isclose(base):
        raise UsageError("exp_map: tangent vector is not based at `base`")
    if not np.all(np.isfinite(v.vec)):
        raise UsageError("exp_map: non-finite tangent vector")
    c = base.curvature.c
    out = exp_map_t(constant(base.coords), constant(v.vec), constant(c))
    coords = out.data.copy()
    # re-derive the time coordinate from the constraint: the extrinsic
    # formula loses a few hundred ulps at far bases to cancellation
    coords[-1] = math.sqrt(1.0 / c + float(np.dot(coords[:-1], coords[:-1])))
    return LorentzPoint(coords, base.curvature)


def exp_map_origin(v: np.ndarray, curvature: Curvature) -> LorentzPoint:
    """Lift a Euclidean vector of length d to the hyperboloid (a.k.a. lift)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise UsageError("exp_map_origin: non-finite input")
    out = exp_map_origin_t(constant(v), constant(curvature.c))
    return LorentzPoint(out.data, curvature)


lift = exp_map_origin


def half_aperture(h: LorentzPoint, K: float) -> float:
    return float(half_aperture_t(constant(h.coords), K,
                                 constant(h.curvature.c)).data)


def exterior_angle(h_t: LorentzPoint, h_p: LorentzPoint) -> float:
    """Exterior angle for a non-degenerate pair; raises on degenerate geometry."""
    _check_compatible(h_t, h_p)
    theta, mask = exterior_angle_t(constant(h_t.coords), constant(h_p.coords),
                                   constant(h_t.curvature.c))
    if float(mask) == 0.0:
        raise UsageError("exterior_angle: degenerate geometry "
                         "(axis at origin or coincident points)")
    return float(theta.data)
