"""Convex domains: membership, closest boundary point, outward normal and
mirror reflection.

Each domain is encoded for the compiled kernels as an integer code plus a
float parameter vector. The Python methods call the same compiled helpers,
so the dynamics and the public API never disagree about the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numba as nb
import numpy as np

HALF_PLANE = 0
DISK = 1

# Mirror reflections attempted before falling back to projection.
MAX_REFLECTIONS = 4
# Relative tolerance for "is this point on the boundary" checks.
BOUNDARY_RTOL = 1e-9


class DegenerateProjection(ValueError):
    """The closest boundary point is not unique (point at the disk center)."""


# params layout
#   HALF_PLANE: [axis, offset]              D = {x : x[axis] >= offset}
#   DISK:       [radius, c_0, ..., c_{d-1}] D = {x : |x - c| <= radius}


@nb.njit(cache=True, nogil=True)
def _contains(code, params, x):
    if code == HALF_PLANE:
        return x[int(params[0])] >= params[1]
    r2 = 0.0
    for a in range(x.shape[0]):
        u = x[a] - params[1 + a]
        r2 += u * u
    return r2 <= params[0] * params[0]


@nb.njit(cache=True, nogil=True)
def _project(code, params, x, out):
    """Closest boundary point of ``x`` into ``out``. Returns False when the
    projection is degenerate."""
    if code == HALF_PLANE:
        for a in range(x.shape[0]):
            out[a] = x[a]
        out[int(params[0])] = params[1]
        return True
    d = x.shape[0]
    radius = params[0]
    # scale by the largest offset so tiny or huge offsets normalize cleanly
    m = 0.0
    for a in range(d):
        m = max(m, abs(x[a] - params[1 + a]))
    if m == 0.0:
        return False
    n2 = 0.0
    for a in range(d):
        u = (x[a] - params[1 + a]) / m
        n2 += u * u
    s = radius / math.sqrt(n2)
    # rounding may leave the scaled point a hair outside the closed disk
    while True:
        q2 = 0.0
        for a in range(d):
            out[a] = params[1 + a] + s * ((x[a] - params[1 + a]) / m)
            u = out[a] - params[1 + a]
            q2 += u * u
        if q2 <= radius * radius:
            return True
        s *= 1.0 - 1.1102230246251565e-16


@nb.njit(cache=True, nogil=True)
def _normal_at(code, params, b, out):
    d = b.shape[0]
    if code == HALF_PLANE:
        for a in range(d):
            out[a] = 0.0
        out[int(params[0])] = -1.0
        return
    r2 = 0.0
    for a in range(d):
        u = b[a] - params[1 + a]
        r2 += u * u
    r = math.sqrt(r2)
    for a in range(d):
        out[a] = (b[a] - params[1 + a]) / r


@nb.njit(cache=True, nogil=True)
def _mirror_once(code, params, x, proj, normal):
    """x <- x - 2 [(x - Px) . n] n, in place."""
    _project(code, params, x, proj)
    _normal_at(code, params, proj, normal)
    dot = 0.0
    for a in range(x.shape[0]):
        dot += (x[a] - proj[a]) * normal[a]
    for a in range(x.shape[0]):
        x[a] = x[a] - 2.0 * dot * normal[a]


@nb.njit(cache=True, nogil=True)
def _reflect_inplace(code, params, x, orig, proj, normal):
    """Symmetric reflection with the projection fallback. ``orig``, ``proj``
    and ``normal`` are scratch buffers of length d."""
    if _contains(code, params, x):
        return
    for a in range(x.shape[0]):
        orig[a] = x[a]
    for _ in range(MAX_REFLECTIONS):
        _mirror_once(code, params, x, proj, normal)
        if _contains(code, params, x):
            return
    _project(code, params, orig, x)


@nb.njit(cache=True, nogil=True)
def _clamp_inplace(code, params, x, proj):
    """Identity inside D, closest boundary point outside."""
    if _contains(code, params, x):
        return
    _project(code, params, x, proj)
    for a in range(x.shape[0]):
        x[a] = proj[a]


def _as_point(x: Any, dim: int) -> np.ndarray:
    p = np.asarray(x, dtype=np.float64)
    if p.shape != (dim,):
        raise ValueError(f"expected a point of dimension {dim}, got shape {p.shape}")
    return p


class ConvexDomain:
    """Base class; subclasses provide ``code``, ``params`` and ``dim``."""

    code: int
    dim: int

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def scale(self) -> float:
        return 1.0

    @property
    def tol_bdry(self) -> float:
        return BOUNDARY_RTOL * self.scale

    def contains(self, x) -> bool:
        return bool(_contains(self.code, self.params, _as_point(x, self.dim)))

    def project_boundary(self, x) -> np.ndarray:
        p = _as_point(x, self.dim)
        out = np.empty(self.dim)
        if not _project(self.code, self.params, p, out):
            raise DegenerateProjection("degenerate projection: point is at the disk center")
        return out

    def distance_to_boundary(self, x) -> float:
        p = _as_point(x, self.dim)
        return float(np.linalg.norm(p - self.project_boundary(p)))

    def outward_normal(self, b) -> np.ndarray:
        p = _as_point(b, self.dim)
        if self.distance_to_boundary(p) > self.tol_bdry:
            raise ValueError(f"point {p.tolist()} is not on the boundary (tol {self.tol_bdry:g})")
        out = np.empty(self.dim)
        _normal_at(self.code, self.params, p, out)
        return out

    def reflect(self, x) -> np.ndarray:
        p = _as_point(x, self.dim).copy()
        scratch = np.empty((3, self.dim))
        _reflect_inplace(self.code, self.params, p, scratch[0], scratch[1], scratch[2])
        return p

    def clamp(self, x) -> np.ndarray:
        """Identity on D, closest boundary point off D."""
        p = _as_point(x, self.dim).copy()
        _clamp_inplace(self.code, self.params, p, np.empty(self.dim))
        return p

    def contains_all(self, points) -> bool:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        return all(_contains(self.code, self.params, p) for p in pts)

    def contains_box(self, lower, upper) -> bool:
        """True iff the axis-aligned box [lower, upper] lies in D."""
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if self.code == HALF_PLANE:
            return bool(lo[int(self.params[0])] >= self.params[1])
        # the farthest point of a box from the center is a corner
        corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(self.dim, -1).T
        return self.contains_all(corners)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class HalfPlane(ConvexDomain):
    """{x : x[axis] >= offset}. The default is [0, inf) x R."""

    offset: float = 0.0
    axis: int = 0
    dim: int = 2
    code: int = field(default=HALF_PLANE, init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.axis < self.dim:
            raise ValueError(f"axis {self.axis} out of range for dimension {self.dim}")

    @property
    def params(self) -> np.ndarray:
        return np.array([float(self.axis), float(self.offset)])

    def to_dict(self) -> dict:
        return {"kind": "half_plane", "offset": self.offset, "axis": self.axis, "dim": self.dim}


@dataclass(frozen=True)
class Disk(ConvexDomain):
    """Closed ball |x - center| <= radius; a disk for two-dimensional centers."""

    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 0.2
    code: int = field(default=DISK, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.center)

    @property
    def scale(self) -> float:
        return self.radius

    @property
    def params(self) -> np.ndarray:
        return np.array([self.radius, *self.center])

    def to_dict(self) -> dict:
        return {"kind": "disk", "center": list(self.center), "radius": self.radius}


def domain_from_dict(obj: dict | str) -> ConvexDomain:
    if isinstance(obj, str):
        obj = {"kind": obj}
    obj = dict(obj)
    kind = obj.pop("kind", None)
    if kind == "half_plane":
        allowed = {"offset", "axis", "dim"}
        ctor: Any = HalfPlane
    elif kind == "disk":
        allowed = {"center", "radius"}
        ctor = Disk
    else:
        raise ValueError(f"unknown domain kind {kind!r}")
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown keys for {kind} domain: {sorted(unknown)}")
    if "center" in obj:
        obj["center"] = tuple(obj["center"])
    return ctor(**obj)
