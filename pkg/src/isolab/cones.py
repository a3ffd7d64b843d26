"""Exact geometry and isoperimetry of circular cones and product wedges.

The circular cone of half-angle theta around the first coordinate axis,

    S = {x in R^d : x . e1 >= |x| cos(theta)},

is closed and convex, has nonempty interior for theta in (0, pi/2), and its
boundary is smooth away from the origin.  Everything here is closed-form;
the voxel estimators elsewhere in the package are validated against it.

For d = 2 the product S x R is a dihedral wedge in R^3 of opening 2*theta.
Perimeter-minimizing sets of prescribed volume in such a wedge are ball
sectors centered on the edge, which gives the exact profile implemented in
:func:`wedge_profile_exact`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ConeSpec:
    """Circular convex cone around e1 in R^d with half-angle in (0, pi/2)."""

    base_dim: int = 2
    half_angle: float = math.pi / 4

    def __post_init__(self):
        if int(self.base_dim) != self.base_dim or self.base_dim < 2:
            raise ValidationError(f"base_dim must be an integer >= 2, got {self.base_dim}")
        if not (0.0 < self.half_angle < math.pi / 2):
            raise ValidationError(
                f"half_angle must lie strictly inside (0, pi/2), got {self.half_angle}"
            )

    @property
    def cos_theta(self) -> float:
        return math.cos(self.half_angle)

    @property
    def sin_theta(self) -> float:
        return math.sin(self.half_angle)

    @property
    def tan_theta(self) -> float:
        return math.tan(self.half_angle)

    def to_json_dict(self) -> dict:
        return {"base_dim": self.base_dim, "half_angle_rad": self.half_angle}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ConeSpec":
        return cls(base_dim=int(d["base_dim"]), half_angle=float(d["half_angle_rad"]))


@dataclass(frozen=True)
class SectionSpec:
    """The cone truncated at height h > 0: S_h = S & {x . e1 >= h} = h * S_1."""

    cone: ConeSpec
    height: float

    def __post_init__(self):
        if not (self.height > 0.0 and math.isfinite(self.height)):
            raise ValidationError(f"section height must be > 0, got {self.height}")


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != dim:
        raise ValidationError(f"expected points in R^{dim}, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("point coordinates must be finite")
    return pts, scalar


def cone_contains(cone: ConeSpec, x) -> np.ndarray | bool:
    """Membership x . e1 >= |x| cos(theta); vectorized over rows of x."""
    pts, scalar = _as_points(x, cone.base_dim)
    axial = pts[:, 0]
    norm = np.linalg.norm(pts, axis=-1)
    inside = axial >= norm * cone.cos_theta
    return bool(inside[0]) if scalar else inside


def cone_wall_clearance(cone: ConeSpec, x) -> np.ndarray | float:
    """Signed distance to the lateral cone boundary (positive inside).

    Exact for every point of the cone; for outside points with positive
    axial coordinate it is the (negative) distance to the nearest boundary
    ray, which is all the wall-band classification needs.
    """
    pts, scalar = _as_points(x, cone.base_dim)
    axial = pts[:, 0]
    radial = np.linalg.norm(pts[:, 1:], axis=-1)
    dist = axial * cone.sin_theta - radial * cone.cos_theta
    return float(dist[0]) if scalar else dist


def cone_A1(cone: ConeSpec) -> float:
    """sup over the cone minus the apex of |x| / (x . e1), equal to 1/cos(theta)."""
    return 1.0 / cone.cos_theta


def cone_face_walls(cone: ConeSpec, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-face (signed clearance, inward unit normal) for the cone boundary.

    For a planar cone the boundary splits into two rays, each its own wall,
    so that both normals are available near the apex.  For d >= 3 the
    lateral boundary is one smooth wall with a rotational normal.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = x[:, 0]
    s, c = cone.sin_theta, cone.cos_theta
    n = x.shape[0]
    if cone.base_dim == 2:
        y = x[:, 1]
        n_plus = np.broadcast_to(np.array([s, -c]), (n, 2))
        n_minus = np.broadcast_to(np.array([s, c]), (n, 2))
        return [(a * s - y * c, n_plus), (a * s + y * c, n_minus)]
    perp = x[:, 1:]
    r = np.linalg.norm(perp, axis=1)
    hat = np.zeros_like(perp)
    nz = r > 0.0
    hat[nz] = perp[nz] / r[nz, None]
    hat[~nz, 0] = 1.0  # arbitrary azimuth on the axis
    normal = np.concatenate([np.full((n, 1), s), -c * hat], axis=1)
    return [(a * s - r * c, normal)]


def section_contains(section: SectionSpec, x) -> np.ndarray | bool:
    """Membership in S_h: inside the cone and x . e1 >= h."""
    pts, scalar = _as_points(x, section.cone.base_dim)
    inside = cone_contains(section.cone, pts) & (pts[:, 0] >= section.height)
    return bool(inside[0]) if scalar else inside


def dihedral_profile_exact(opening: float, v) -> np.ndarray | float:
    """Exact isoperimetric profile of a dihedral wedge in R^3 of given opening.

    The minimizer for volume v is the ball sector of radius r with
    (2*opening/3) r^3 = v centered on the edge; its spherical (relative)
    boundary measures 2*opening*r^2, i.e. (2*opening)^(1/3) (3v)^(2/3).
    opening = pi recovers the half-space, opening = 2*pi the full space.
    """
    if not (0.0 < opening <= 2.0 * math.pi):
        raise ValidationError(f"opening must be in (0, 2*pi], got {opening}")
    vv = np.asarray(v, dtype=float)
    if np.any(vv <= 0.0):
        raise ValidationError("volume must be > 0")
    out = (2.0 * opening) ** (1.0 / 3.0) * (3.0 * vv) ** (2.0 / 3.0)
    return float(out) if np.isscalar(v) else out


def wedge_profile_exact(cone: ConeSpec, v) -> np.ndarray | float:
    """I(v) = (4 theta)^(1/3) (3 v)^(2/3) for the wedge S x R, S planar."""
    if cone.base_dim != 2:
        raise ValidationError("wedge profile requires a planar cone (base_dim = 2)")
    return dihedral_profile_exact(2.0 * cone.half_angle, v)


def halfspace_profile_exact(v) -> np.ndarray | float:
    """Half-space profile (2 pi)^(1/3) (3 v)^(2/3): half-balls on the wall."""
    return dihedral_profile_exact(math.pi, v)


def ball_profile_exact(v) -> np.ndarray | float:
    """Free-space profile (36 pi)^(1/3) v^(2/3): round balls."""
    return dihedral_profile_exact(2.0 * math.pi, v)


@dataclass(frozen=True)
class ScalingReport:
    """Deviation of I(v) / v^((N-1)/N) from constancy across a profile."""

    ambient_dim: int
    mean_ratio: float
    max_rel_deviation: float
    n_samples: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_deviation <= tol


def cone_scaling_check(volumes, perimeters, ambient_dim: int) -> ScalingReport:
    """How far a sampled profile is from the exact cone power law.

    On a metric cone of dimension N the profile is I(1) v^((N-1)/N), so the
    ratio I(v)/v^((N-1)/N) is constant.  Reports the max relative deviation
    of the sampled ratios from their mean.
    """
    v = np.asarray(volumes, dtype=float)
    per = np.asarray(perimeters, dtype=float)
    if v.shape != per.shape or v.ndim != 1 or v.size < 2:
        raise ValidationError("need at least 2 profile samples of matching shape")
    if np.any(v <= 0.0):
        raise ValidationError("volumes must be > 0")
    ratios = per / v ** ((ambient_dim - 1.0) / ambient_dim)
    mean = float(np.mean(ratios))
    dev = float(np.max(np.abs(ratios - mean)) / abs(mean)) if mean != 0.0 else math.inf
    return ScalingReport(
        ambient_dim=ambient_dim,
        mean_ratio=mean,
        max_rel_deviation=dev,
        n_samples=int(v.size),
    )


def sample_cone_points(cone: ConeSpec, n: int, rng: np.random.Generator,
                       radius: float = 1.0) -> np.ndarray:
    """Uniform-ish random points of the cone inside a ball, by rejection."""
    out = np.empty((0, cone.base_dim))
    while out.shape[0] < n:
        batch = rng.normal(size=(4 * n, cone.base_dim))
        batch *= radius * rng.random((4 * n, 1)) ** (1.0 / cone.base_dim) / np.linalg.norm(
            batch, axis=1, keepdims=True
        )
        keep = batch[cone_contains(cone, batch)]
        out = np.concatenate([out, keep])
    return out[:n]
