"""Convex ambient domains, slab windows, and voxel discretization.

The central object is the convex body

    C = (S x R)  &  {(x, t) : x . e1 >= phi(t)}

built from a circular cone S in R^d and a profile curve phi, together with
the reference domains used to test it: the wedge S x R itself, cylinders
over truncated cone sections, half-spaces, free space, and bodies with an
affine graph wall.  All of them expose vectorized membership and a signed
distance to their walls, which is what the voxel measures need.

Candidate sets live on regular grids over compact slab windows
B_rho(0) x [t0, t0 + R]; a cell is occupied when its center belongs to the
domain.  Grids carry a ring of padding cells that can never be occupied,
so finite-difference stencils never touch array edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cones import ConeSpec, cone_A1, cone_contains, cone_face_walls, cone_wall_clearance
from .errors import PhiDomainError, ValidationError
from .phi import PhiCurve

_PAD_CELLS = 4


@dataclass(frozen=True)
class Window:
    """Compact slab B_rho(0) x [t0, t0 + extent] confining competitors."""

    t0: float
    extent: float
    radial_bound: float

    def __post_init__(self):
        if not (self.extent > 0.0 and math.isfinite(self.extent)):
            raise ValidationError(f"window extent must be > 0, got {self.extent}")
        if not (self.radial_bound > 0.0 and math.isfinite(self.radial_bound)):
            raise ValidationError(f"radial bound must be > 0, got {self.radial_bound}")

    @property
    def t1(self) -> float:
        return self.t0 + self.extent


def _lifted_cone_walls(cone: ConeSpec, flat: np.ndarray):
    """Cone face walls of S, lifted to S x R (zero t-component normals)."""
    out = []
    for clear, nrm in cone_face_walls(cone, flat[:, :-1]):
        lifted = np.concatenate([nrm, np.zeros((flat.shape[0], 1))], axis=1)
        out.append((clear, lifted))
    return out


class Domain:
    """Convex ambient space with walls; subclasses fill in the geometry."""

    ambient_dim: int = 3
    label: str = "domain"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def wall_clearance(self, pts: np.ndarray, exact: bool = False) -> np.ndarray:
        """Min over walls of the signed distance (positive inside)."""
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        walls = self.wall_list(flat, exact=exact)
        if not walls:
            out = np.full(flat.shape[0], np.inf)
        else:
            out = np.minimum.reduce([c for c, _ in walls])
        return out.reshape(pts.shape[:-1])

    def wall_list(self, flat: np.ndarray,
                  exact: bool = False) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per wall: (signed clearance, inward unit normal) at each point.

        Takes flat (n, N) points.  Clearances are exact near the wall,
        which is all the band classification needs.
        """
        raise NotImplementedError

    def bounding_box(self, window: Window) -> tuple[np.ndarray, np.ndarray]:
        d = self.ambient_dim - 1
        rho = window.radial_bound
        lo = np.array([-rho] * d + [window.t0])
        hi = np.array([rho] * d + [window.t1])
        return lo, hi

    def seed_anchors(self, window: Window, n: int) -> list[tuple[str, np.ndarray]]:
        raise NotImplementedError

    def _axis_ts(self, window: Window, n: int) -> np.ndarray:
        return window.t0 + window.extent * (np.arange(n) + 0.5) / n


class FreeSpace(Domain):
    """All of R^N; no walls, every boundary is genuine perimeter."""

    def __init__(self, ambient_dim: int = 3):
        self.ambient_dim = ambient_dim
        self.label = "freespace"

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.ones(pts.shape[:-1], dtype=bool)

    def wall_list(self, flat, exact: bool = False):
        return []

    def seed_anchors(self, window, n):
        lo, hi = self.bounding_box(window)
        return [("free_ball", 0.5 * (lo + hi))]


class HalfSpace(Domain):
    """{x . e1 >= level}; the flat wall makes half-balls optimal."""

    def __init__(self, level: float = 0.0, ambient_dim: int = 3):
        self.level = float(level)
        self.ambient_dim = ambient_dim
        self.label = "halfspace"

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts[..., 0] >= self.level

    def wall_list(self, flat, exact: bool = False):
        e1 = np.zeros(self.ambient_dim)
        e1[0] = 1.0
        return [(flat[:, 0] - self.level, np.broadcast_to(e1, flat.shape))]

    def bounding_box(self, window):
        lo, hi = super().bounding_box(window)
        lo[0] = max(lo[0], self.level)
        return lo, hi

    def seed_anchors(self, window, n):
        ts = self._axis_ts(window, n)
        return [("wall_cap", np.array([self.level, 0.0, t])) for t in ts]


class Wedge(Domain):
    """The product cone S x R: a dihedral wedge with its edge along t."""

    def __init__(self, cone: ConeSpec):
        self.cone = cone
        self.ambient_dim = cone.base_dim + 1
        self.label = "wedge"

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        return cone_contains(self.cone, flat[:, :-1]).reshape(pts.shape[:-1])

    def wall_list(self, flat, exact: bool = False):
        return _lifted_cone_walls(self.cone, flat)

    def bounding_box(self, window):
        lo, hi = super().bounding_box(window)
        lo[0] = 0.0
        r = window.radial_bound * self.cone.sin_theta
        lo[1:-1] = -r
        hi[1:-1] = r
        return lo, hi

    def seed_anchors(self, window, n):
        ts = self._axis_ts(window, n)
        return [("edge_ball_sector", np.array([0.0, 0.0, t])) for t in ts]


class SectorCylinder(Domain):
    """Cylinder S_h x R over the truncated section S & {x . e1 >= h}."""

    def __init__(self, cone: ConeSpec, height: float):
        if not (height > 0.0):
            raise ValidationError(f"cylinder height must be > 0, got {height}")
        self.cone = cone
        self.height = float(height)
        self.ambient_dim = cone.base_dim + 1
        self.label = "cylinder"

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        ok = cone_contains(self.cone, flat[:, :-1]) & (flat[:, 0] >= self.height)
        return ok.reshape(pts.shape[:-1])

    def wall_list(self, flat, exact: bool = False):
        e1 = np.zeros(self.ambient_dim)
        e1[0] = 1.0
        cut = (flat[:, 0] - self.height, np.broadcast_to(e1, flat.shape))
        return _lifted_cone_walls(self.cone, flat) + [cut]

    def bounding_box(self, window):
        lo, hi = super().bounding_box(window)
        lo[0] = self.height
        r = window.radial_bound * self.cone.sin_theta
        lo[1:-1] = -r
        hi[1:-1] = r
        return lo, hi

    def seed_anchors(self, window, n):
        ts = self._axis_ts(window, max(1, n // 3))
        h = self.height
        y = h * self.cone.tan_theta
        anchors = []
        for t in ts:
            anchors.append(("edge_ball_sector", np.array([h, y, t])))
            anchors.append(("edge_ball_sector", np.array([h, -y, t])))
            anchors.append(("wall_cap", np.array([h, 0.0, t])))
        return anchors


class AffineSlice(Domain):
    """(S x R) cut by the slanted plane {x . e1 >= alpha - slope (t - t_ref)}.

    The local model of the body C over a window: the graph wall frozen to
    its tangent.  slope = 0 recovers the cylinder over S_alpha.
    """

    def __init__(self, cone: ConeSpec, alpha: float, slope: float, t_ref: float = 0.0):
        if not (alpha > 0.0):
            raise ValidationError(f"alpha must be > 0, got {alpha}")
        if slope < 0.0:
            raise ValidationError(f"slope must be >= 0, got {slope}")
        self.cone = cone
        self.alpha = float(alpha)
        self.slope = float(slope)
        self.t_ref = float(t_ref)
        self.ambient_dim = cone.base_dim + 1
        self.label = "affine_slice"

    def _level(self, t):
        return self.alpha - self.slope * (np.asarray(t, dtype=float) - self.t_ref)

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        ok = cone_contains(self.cone, flat[:, :-1]) & (flat[:, 0] >= self._level(flat[:, -1]))
        return ok.reshape(pts.shape[:-1])

    def wall_list(self, flat, exact: bool = False):
        denom = math.sqrt(1.0 + self.slope ** 2)
        clear = (flat[:, 0] - self._level(flat[:, -1])) / denom
        nrm = np.zeros(self.ambient_dim)
        nrm[0] = 1.0 / denom
        nrm[-1] = self.slope / denom
        plane = (clear, np.broadcast_to(nrm, flat.shape))
        return _lifted_cone_walls(self.cone, flat) + [plane]

    def bounding_box(self, window):
        lo, hi = super().bounding_box(window)
        lo[0] = max(0.0, min(self._level(window.t0), self._level(window.t1)))
        r = window.radial_bound * self.cone.sin_theta
        lo[1:-1] = -r
        hi[1:-1] = r
        return lo, hi

    def seed_anchors(self, window, n):
        ts = self._axis_ts(window, max(1, n // 3))
        tan = self.cone.tan_theta
        anchors = []
        for t in ts:
            lv = float(self._level(t))
            if lv > 0.0:
                anchors.append(("edge_ball_sector", np.array([lv, lv * tan, t])))
                anchors.append(("edge_ball_sector", np.array([lv, -lv * tan, t])))
                anchors.append(("wall_cap", np.array([lv, 0.0, t])))
            else:
                anchors.append(("edge_ball_sector", np.array([0.0, 0.0, t])))
        return anchors


class BodyC(Domain):
    """The tapering convex body cut from the wedge by the graph of phi."""

    def __init__(self, cone: ConeSpec, curve: PhiCurve):
        self.cone = cone
        self.curve = curve
        self.ambient_dim = cone.base_dim + 1
        self.label = "body"

    @property
    def A1(self) -> float:
        return cone_A1(self.cone)

    def tip(self) -> np.ndarray:
        """Tip of the affine cone: (0, -phi(0)/phi'(0))."""
        if not (self.curve.dphi0 < 0.0):
            raise ValidationError("degenerate affine cone: phi'(0) must be < 0")
        out = np.zeros(self.ambient_dim)
        out[-1] = -self.curve.phi0 / self.curve.dphi0
        return out

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        lvl = np.asarray(self.curve.phi_at(flat[:, -1]))
        ok = cone_contains(self.cone, flat[:, :-1]) & (flat[:, 0] >= lvl)
        return ok.reshape(pts.shape[:-1])

    def _graph_clearance_fast(self, a, t):
        # first-order distance to the graph wall; exact up to a curvature
        # correction O(phi'' g^2), far below cell size near the wall
        lvl = np.asarray(self.curve.phi_at(t))
        slope = np.asarray(self.curve.dphi_at(t))
        return (a - lvl) / np.sqrt(1.0 + slope ** 2)

    def _graph_normal(self, t):
        slope = np.asarray(self.curve.dphi_at(t))
        denom = np.sqrt(1.0 + slope ** 2)
        n = np.zeros((len(np.atleast_1d(slope)), self.ambient_dim))
        n[:, 0] = 1.0 / denom
        n[:, -1] = -slope / denom
        return n

    def _graph_clearance_exact(self, a, t):
        curve = self.curve
        lvl = np.asarray(curve.phi_at(t))
        g = a - lvl
        delta = np.abs(g) + 1e-15
        lo = np.maximum(t - delta, curve.t_min)
        hi = np.minimum(t + delta, curve.t_max)
        m = 33
        frac = np.linspace(0.0, 1.0, m)
        ss = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
        d2 = (a[:, None] - curve.phi_at(ss)) ** 2 + (t[:, None] - ss) ** 2
        k = np.argmin(d2, axis=1)
        step = (hi - lo) / (m - 1)
        s_lo = np.clip(ss[np.arange(len(k)), k] - step, lo, hi)
        s_hi = np.clip(ss[np.arange(len(k)), k] + step, lo, hi)
        invphi = (math.sqrt(5.0) - 1.0) / 2.0

        def f(s):
            return (a - curve.phi_at(s)) ** 2 + (t - s) ** 2

        x1 = s_hi - invphi * (s_hi - s_lo)
        x2 = s_lo + invphi * (s_hi - s_lo)
        f1, f2 = f(x1), f(x2)
        for _ in range(48):
            take_lo = f1 < f2
            s_hi = np.where(take_lo, x2, s_hi)
            s_lo = np.where(take_lo, s_lo, x1)
            x1_new = np.where(take_lo, s_hi - invphi * (s_hi - s_lo), x2)
            x2_new = np.where(take_lo, x1, s_lo + invphi * (s_hi - s_lo))
            fresh = f(np.where(take_lo, x1_new, x2_new))
            f1, f2 = np.where(take_lo, fresh, f2), np.where(take_lo, f1, fresh)
            x1, x2 = x1_new, x2_new
        dist = np.sqrt(f(0.5 * (s_lo + s_hi)))
        return np.sign(g) * dist

    def wall_list(self, flat, exact: bool = False):
        if exact:
            graph = self._graph_clearance_exact(flat[:, 0], flat[:, -1])
        else:
            graph = self._graph_clearance_fast(flat[:, 0], flat[:, -1])
        wall = (graph, self._graph_normal(flat[:, -1]))
        return _lifted_cone_walls(self.cone, flat) + [wall]

    def bounding_box(self, window):
        lo, hi = super().bounding_box(window)
        lo[0] = 0.0
        r = window.radial_bound * self.cone.sin_theta
        lo[1:-1] = -r
        hi[1:-1] = r
        return lo, hi

    def seed_anchors(self, window, n):
        ts = self._axis_ts(window, max(1, n // 3))
        tan = self.cone.tan_theta
        anchors = []
        for t in ts:
            lv = float(self.curve.phi_at(t))
            anchors.append(("edge_ball_sector", np.array([lv, lv * tan, t])))
            anchors.append(("edge_ball_sector", np.array([lv, -lv * tan, t])))
            anchors.append(("wall_cap", np.array([lv, 0.0, t])))
        return anchors


def body_contains(body: BodyC, p) -> bool | np.ndarray:
    """Exact conjunction of cone membership and x . e1 >= phi(t)."""
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 1
    out = body.contains(np.atleast_2d(p))
    return bool(out[0]) if scalar else out


def affine_cone_contains(body: BodyC, p) -> bool | np.ndarray:
    """Membership in (S x R) & {x . e1 >= phi(0) + t phi'(0)}."""
    if not (body.curve.dphi0 < 0.0):
        raise ValidationError("degenerate affine cone: phi'(0) must be < 0")
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 1
    pts = np.atleast_2d(p)
    lvl = body.curve.phi0 + pts[:, -1] * body.curve.dphi0
    ok = cone_contains(body.cone, pts[:, :-1]) & (pts[:, 0] >= lvl)
    return bool(ok[0]) if scalar else ok


def asymptotic_cone_contains(body: BodyC, p) -> bool | np.ndarray:
    """Membership in (S x R) & {x . e1 >= phi'(0) t}: the scaling limit."""
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 1
    pts = np.atleast_2d(p)
    lvl = pts[:, -1] * body.curve.dphi0
    ok = cone_contains(body.cone, pts[:, :-1]) & (pts[:, 0] >= lvl)
    return bool(ok[0]) if scalar else ok


def wall_distance(domain: Domain, p) -> float:
    """Distance from an interior point to the domain walls (exact search)."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.shape[0] != domain.ambient_dim:
        raise ValidationError(f"expected a point in R^{domain.ambient_dim}")
    if not bool(np.atleast_1d(domain.contains(p[None, :]))[0]):
        raise ValidationError("point is outside the domain")
    return float(np.atleast_1d(domain.wall_clearance(p[None, :], exact=True))[0])


class VoxelGrid:
    """Regular lattice over a window with cached domain masks.

    Cell centers sit at origin + (index + 1/2) * spacing.  A ring of
    ``pad`` cells around the window can never be occupied, so smoothing
    kernels and difference stencils never reach the array edge.
    """

    def __init__(self, domain: Domain, window: Window, spacing: float,
                 pad: int = _PAD_CELLS):
        if not (spacing > 0.0):
            raise ValidationError(f"spacing must be > 0, got {spacing}")
        if spacing > window.extent / 8.0:
            raise ValidationError(
                f"spacing {spacing} too coarse for window extent {window.extent}"
            )
        self.domain = domain
        self.window = window
        self.spacing = float(spacing)
        self.pad = int(pad)
        lo, hi = domain.bounding_box(window)
        n_inner = np.maximum(1, np.ceil((hi - lo) / spacing - 1e-9).astype(int))
        self.dims = tuple(int(k) for k in (n_inner + 2 * pad))
        self.origin = lo - pad * spacing
        self.axes = [
            self.origin[d] + (np.arange(self.dims[d]) + 0.5) * spacing
            for d in range(len(self.dims))
        ]
        self._body_mask = None
        self._band_frames: dict[float, tuple] = {}
        self._clearance = None

    @property
    def ambient_dim(self) -> int:
        return len(self.dims)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.ambient_dim

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    def points(self, slices: tuple[slice, ...] | None = None) -> np.ndarray:
        axes = self.axes if slices is None else [ax[s] for ax, s in zip(self.axes, slices)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def body_mask(self) -> np.ndarray:
        if self._body_mask is None:
            pts = self.points()
            inside = self.domain.contains(pts)
            w = self.window
            radial = np.linalg.norm(pts[:, :-1], axis=1) <= w.radial_bound
            slab = (pts[:, -1] >= w.t0) & (pts[:, -1] <= w.t1)
            self._body_mask = (inside & radial & slab).reshape(self.dims)
        return self._body_mask

    def wall_clearance_grid(self) -> np.ndarray:
        if self._clearance is None:
            self._clearance = self.domain.wall_clearance(self.points()).reshape(self.dims)
        return self._clearance

    def wall_band_frame(self, band: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wall band mask plus up to two orthonormal wall normals per cell.

        Cells within ``band`` of several walls (corner lines, the wedge
        edge) carry both normals so interface mass can be split into wall
        and genuine components.  Arrays are dense; normals are zero
        off-band.
        """
        key = round(float(band), 12)
        if key not in self._band_frames:
            N = self.ambient_dim
            flat = self.points()
            walls = self.domain.wall_list(flat) if self.domain is not None else []
            mask = np.zeros(len(flat), dtype=bool)
            n1 = np.zeros((len(flat), N))
            n2 = np.zeros((len(flat), N))
            have = np.zeros(len(flat), dtype=np.int8)
            for clear, nrm in walls:
                near = np.abs(clear) <= band
                mask |= near
                first = near & (have == 0)
                n1[first] = nrm[first]
                have[first] = 1
                second = near & (have == 1) & ~first
                if second.any():
                    resid = nrm[second] - (
                        np.sum(nrm[second] * n1[second], axis=1, keepdims=True)
                        * n1[second]
                    )
                    rn = np.linalg.norm(resid, axis=1)
                    ok = rn > 1e-9
                    idx2 = np.flatnonzero(second)[ok]
                    n2[idx2] = resid[ok] / rn[ok, None]
                    have[idx2] = 2
            self._band_frames[key] = (
                mask.reshape(self.dims),
                n1.reshape(self.dims + (N,)),
                n2.reshape(self.dims + (N,)),
            )
        return self._band_frames[key]

    def wall_band_mask(self, band: float) -> np.ndarray:
        """Cells whose center lies within ``band`` of a domain wall."""
        return self.wall_band_frame(band)[0]

    def index_of(self, pts: np.ndarray) -> np.ndarray:
        """Nearest cell index of each point (clipped into the grid)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.floor((pts - self.origin[None, :]) / self.spacing).astype(int)
        return np.clip(idx, 0, np.asarray(self.dims)[None, :] - 1)


@dataclass(eq=False)
class VoxelSet:
    """Dense occupancy over a grid; occupied centers lie in the domain."""

    grid: VoxelGrid
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != tuple(self.grid.dims):
            raise ValidationError(
                f"occupancy shape {occ.shape} does not match grid dims {self.grid.dims}"
            )
        if np.any(occ & ~self.grid.body_mask):
            raise ValidationError("occupied cell centers must lie inside the domain")
        self.occupancy = occ

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def volume(self) -> float:
        return self.count * self.grid.cell_volume

    def copy(self) -> "VoxelSet":
        return VoxelSet(self.grid, self.occupancy.copy())

    def bbox_slices(self, margin: int = 0) -> tuple[slice, ...]:
        """Tight index box around the occupied cells, grown by ``margin``."""
        if self.count == 0:
            return tuple(slice(0, 1) for _ in self.grid.dims)
        idx = np.nonzero(self.occupancy)
        out = []
        for d, ax in enumerate(idx):
            lo = max(0, int(ax.min()) - margin)
            hi = min(self.grid.dims[d], int(ax.max()) + 1 + margin)
            out.append(slice(lo, hi))
        return tuple(out)


def voxelize(domain: Domain, window: Window, spacing: float,
             pad: int = _PAD_CELLS) -> VoxelGrid:
    """Grid covering the window; raises if it misses the domain entirely."""
    if isinstance(domain, BodyC):
        slack = (pad + 1) * spacing
        if (window.t0 - slack < domain.curve.t_min
                or window.t1 + slack > domain.curve.t_max):
            raise PhiDomainError(
                "window leaves the stored profile range; solve phi on a longer interval"
            )
    grid = VoxelGrid(domain, window, spacing, pad)
    if not grid.body_mask.any():
        raise ValidationError("window has empty intersection with the domain")
    return grid


def full_set(grid: VoxelGrid) -> VoxelSet:
    """The whole windowed chunk of the domain as a voxel set."""
    return VoxelSet(grid, grid.body_mask.copy())


def ball_set(grid: VoxelGrid, center, radius: float) -> VoxelSet:
    """Cells of the domain within ``radius`` of ``center``."""
    center = np.asarray(center, dtype=float)
    occ = np.zeros(grid.dims, dtype=bool)
    lo_idx = grid.index_of((center - radius - 2 * grid.spacing)[None, :])[0]
    hi_idx = grid.index_of((center + radius + 2 * grid.spacing)[None, :])[0]
    slices = tuple(slice(l, h + 1) for l, h in zip(lo_idx, hi_idx))
    pts = grid.points(slices)
    d2 = np.sum((pts - center[None, :]) ** 2, axis=1)
    shape = tuple(s.stop - s.start for s in slices)
    occ[slices] = (d2 <= radius * radius).reshape(shape)
    occ &= grid.body_mask
    return VoxelSet(grid, occ)


def _rle_encode(flat: np.ndarray) -> list[int]:
    runs = []
    current = False
    count = 0
    for v in flat:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current = not current
            count = 1
    runs.append(count)
    return runs


def _rle_decode(runs: list[int], size: int) -> np.ndarray:
    out = np.zeros(size, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if val:
            out[pos:pos + r] = True
        pos += r
        val = not val
    if pos != size:
        raise ValidationError(f"run-length data covers {pos} cells, expected {size}")
    return out


def save_voxelset(path, vset: VoxelSet, metadata: dict | None = None):
    """Textual export: header, run-length body and occupancy, JSON sidecar."""
    grid = vset.grid
    dims = "x".join(str(d) for d in grid.dims)
    origin = ",".join(repr(float(x)) for x in grid.origin)
    header = (
        f"voxelgrid N={grid.ambient_dim} dims={dims} "
        f"origin={origin} spacing={grid.spacing!r}"
    )
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        f.write("body " + " ".join(map(str, _rle_encode(grid.body_mask.ravel()))) + "\n")
        f.write("occ " + " ".join(map(str, _rle_encode(vset.occupancy.ravel()))) + "\n")
    meta = {
        "domain": grid.domain.label if grid.domain is not None else None,
        "window": {
            "t0": grid.window.t0,
            "extent": grid.window.extent,
            "radial_bound": grid.window.radial_bound,
        } if grid.window is not None else None,
        "pad": grid.pad,
    }
    meta.update(metadata or {})
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


class _RawGrid(VoxelGrid):
    """Grid reconstructed from a file: geometry only, no domain callbacks."""

    def __init__(self, origin, spacing, dims, body_mask):
        self.domain = None
        self.window = None
        self.spacing = float(spacing)
        self.pad = 0
        self.dims = tuple(int(d) for d in dims)
        self.origin = np.asarray(origin, dtype=float)
        self.axes = [
            self.origin[d] + (np.arange(self.dims[d]) + 0.5) * self.spacing
            for d in range(len(self.dims))
        ]
        self._body_mask = body_mask
        self._band_frames = {}
        self._clearance = None


def load_voxelset(path) -> VoxelSet:
    """Inverse of :func:`save_voxelset`; bit-exact round trip."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        body_line = f.readline().strip()
        occ_line = f.readline().strip()
    parts = dict(kv.split("=", 1) for kv in header.split()[1:])
    dims = tuple(int(x) for x in parts["dims"].split("x"))
    origin = np.array([float(x) for x in parts["origin"].split(",")])
    spacing = float(parts["spacing"])
    size = int(np.prod(dims))
    if not header.startswith("voxelgrid") or not body_line.startswith("body "):
        raise ValidationError(f"not a voxelgrid file: {path}")
    body = _rle_decode([int(x) for x in body_line.split()[1:]], size).reshape(dims)
    occ = _rle_decode([int(x) for x in occ_line.split()[1:]], size).reshape(dims)
    grid = _RawGrid(origin, spacing, dims, body)
    return VoxelSet(grid, occ)
