"""Strictly convex planar domains, masked Cartesian grids and grid calculus.

Grid nodes sit at ``center + h * k`` for integer ``k``; a node is *interior* when
it lies strictly inside the domain.  Grid functions vanish at every other
node (zero Dirichlet extension).

The discrete gradient is a forward difference and is sampled on the interior
nodes *and* on the ring of exterior nodes that have an interior forward
neighbour, so every difference quotient of the zero-extended function that
touches the domain is kept.  Gradient arrays therefore have
``grid.num_gradient_nodes`` columns; the first ``grid.size`` of them are the
interior nodes in their usual order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import BandEmpty, DimensionMismatch, EmptyInterior, GridMismatch


@dataclass(frozen=True)
class ConvexDomain:
    """Disc, ellipse or superellipse ``sum |(x_i - c_i)/s_i|^p < 1``.

    A disc is the case ``p = 2`` with equal semi-axes, an ellipse is ``p = 2``.
    Every ``p > 1`` gives a strictly convex set.
    """

    kind: str
    center: tuple
    semi_axes: tuple
    exponent: float = 2.0

    def __post_init__(self):
        if self.kind not in ("disc", "ellipse", "superellipse"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if len(self.center) != len(self.semi_axes):
            raise DimensionMismatch("center and semi-axes differ in dimension")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")
        if self.exponent <= 1:
            raise ValueError("exponent must exceed 1 for strict convexity")

    @classmethod
    def disc(cls, center=(0.0, 0.0), radius=1.0):
        return cls("disc", tuple(map(float, center)), (float(radius),) * len(center))

    @classmethod
    def ellipse(cls, center, semi_axes):
        return cls("ellipse", tuple(map(float, center)), tuple(map(float, semi_axes)))

    @classmethod
    def superellipse(cls, center, semi_axes, exponent):
        return cls("superellipse", tuple(map(float, center)), tuple(map(float, semi_axes)), float(exponent))

    @classmethod
    def from_json(cls, doc: dict) -> "ConvexDomain":
        kind = doc.get("kind", "disc")
        center = doc.get("center", [0.0, 0.0])
        if kind == "disc":
            return cls.disc(center, doc.get("radius", 1.0))
        if kind == "ellipse":
            return cls.ellipse(center, doc["semi_axes"])
        if kind == "superellipse":
            return cls.superellipse(center, doc["semi_axes"], doc["exponent"])
        raise ValueError(f"unknown domain kind {kind!r}")

    def to_json(self) -> dict:
        if self.kind == "disc":
            return {"kind": "disc", "center": list(self.center), "radius": self.semi_axes[0]}
        out = {"kind": self.kind, "center": list(self.center), "semi_axes": list(self.semi_axes)}
        if self.kind == "superellipse":
            out["exponent"] = self.exponent
        return out

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def strictly_convex(self) -> bool:
        return True

    def is_unit_disc(self) -> bool:
        return (self.kind == "disc" and self.semi_axes[0] == 1.0
                and all(c == 0.0 for c in self.center))

    def level(self, x) -> np.ndarray:
        """Convex gauge: ``< 1`` inside, ``1`` on the boundary."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.abs((x - np.asarray(self.center)) / np.asarray(self.semi_axes))
        return np.sum(z ** self.exponent, axis=1)

    def contains(self, x) -> np.ndarray:
        return self.level(x) < 1.0

    @cached_property
    def _boundary_tree(self):
        if self.dim != 2:
            raise NotImplementedError("boundary sampling is implemented for n = 2")
        t = np.linspace(0.0, 2.0 * np.pi, 1 << 15, endpoint=False)
        c, s = np.cos(t), np.sin(t)
        p = self.exponent
        pts = np.column_stack([
            self.center[0] + self.semi_axes[0] * np.sign(c) * np.abs(c) ** (2.0 / p),
            self.center[1] + self.semi_axes[1] * np.sign(s) * np.abs(s) ** (2.0 / p),
        ])
        return cKDTree(pts)

    def boundary_distance(self, x) -> np.ndarray:
        """Euclidean distance to the boundary (exact for discs, sampled otherwise)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "disc":
            r = np.linalg.norm(x - np.asarray(self.center), axis=1)
            return np.abs(self.semi_axes[0] - r)
        return self._boundary_tree.query(x)[0]

    @property
    def diameter(self) -> float:
        if self.kind == "disc":
            return 2.0 * self.semi_axes[0]
        # centrally symmetric: diameter is twice the largest boundary radius
        pts = self._boundary_tree.data
        return 2.0 * float(np.max(np.linalg.norm(pts - np.asarray(self.center), axis=1)))

    @property
    def volume(self) -> float:
        if self.dim != 2:
            raise NotImplementedError
        p = self.exponent
        return 4.0 * self.semi_axes[0] * self.semi_axes[1] * math.gamma(1 + 1 / p) ** 2 / math.gamma(1 + 2 / p)


@dataclass(eq=False)
class ProblemGrid:
    """Uniform grid of width ``h`` restricted to a domain.

    ``index`` maps integer grid coordinates (offset by ``lower``) to the node
    number, ``-1`` marking exterior nodes.
    """

    domain: ConvexDomain
    h: float
    lower: np.ndarray  # integer coordinates of the first box node
    index: np.ndarray  # int array over the bounding box
    coords: np.ndarray  # (size, n) integer coordinates of interior nodes
    points: np.ndarray  # (size, n) physical positions
    ring_coords: np.ndarray  # (num_ring, n) exterior nodes with an interior forward neighbour
    forward: np.ndarray  # (n, num_gradient_nodes) interior index of x + h e_i or -1
    backward: np.ndarray  # (n, size) gradient-node index of x - h e_i

    @property
    def n(self) -> int:
        return self.domain.dim

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def num_gradient_nodes(self) -> int:
        return self.forward.shape[1]

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def bounding_box(self):
        lo = np.asarray(self.domain.center) + self.h * self.lower
        hi = lo + self.h * (np.asarray(self.index.shape) - 1)
        return lo, hi

    @cached_property
    def forward_take(self) -> np.ndarray:
        # ghost index -1 redirected to the zero column appended by zero_extended
        return np.where(self.forward < 0, self.size, self.forward)

    @cached_property
    def gradient_points(self) -> np.ndarray:
        ring = np.asarray(self.domain.center) + self.h * self.ring_coords
        return np.vstack([self.points, ring])

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        return self.domain.boundary_distance(self.points)

    def boundary_band(self, delta: float) -> np.ndarray:
        """Indices of interior nodes closer than ``delta`` to the boundary."""
        return np.flatnonzero(self.boundary_distance < delta)

    def node_values(self, func, N: Optional[int] = None) -> np.ndarray:
        """Evaluate ``func(x)`` on the interior nodes; returns shape ``(N, size)``."""
        vals = np.asarray(func(self.points), dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if N is not None and vals.shape[0] != N:
            raise DimensionMismatch(f"function has {vals.shape[0]} components, expected {N}")
        return vals


def build_grid(domain: ConvexDomain, h: float) -> ProblemGrid:
    """Enumerate the grid nodes strictly inside ``domain`` in lexicographic order."""
    if not h > 0:
        raise ValueError("mesh width must be positive")
    n = domain.dim
    center = np.asarray(domain.center)
    semi = np.asarray(domain.semi_axes)
    # one node of padding so every interior node's neighbours are in the box
    kmax = np.floor(semi / h).astype(int) + 1
    lower = -kmax
    axes = [np.arange(-k, k + 1) for k in kmax]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    box_shape = mesh.shape[:-1]
    flat = mesh.reshape(-1, n)
    inside = domain.contains(center + h * flat)
    if not inside.any():
        raise EmptyInterior(f"no grid node of width {h} lies inside the domain")
    coords = flat[inside]
    index = -np.ones(box_shape, dtype=np.int64)
    index[tuple((coords - lower).T)] = np.arange(coords.shape[0])

    def lookup(c):
        c = c - lower
        ok = np.all((c >= 0) & (c < np.asarray(box_shape)), axis=1)
        out = -np.ones(c.shape[0], dtype=np.int64)
        out[ok] = index[tuple(c[ok].T)]
        return out

    eye = np.eye(n, dtype=np.int64)
    ring = set()
    for i in range(n):
        behind = coords - eye[i]
        missing = lookup(behind) < 0
        ring.update(map(tuple, behind[missing]))
    ring_coords = np.array(sorted(ring), dtype=np.int64).reshape(-1, n)
    grad_coords = np.vstack([coords, ring_coords])
    ring_index = {c: coords.shape[0] + k for k, c in enumerate(map(tuple, ring_coords))}

    forward = np.stack([lookup(grad_coords + eye[i]) for i in range(n)])
    backward = np.empty((n, coords.shape[0]), dtype=np.int64)
    for i in range(n):
        behind = coords - eye[i]
        b = lookup(behind)
        for k in np.flatnonzero(b < 0):
            b[k] = ring_index[tuple(behind[k])]
        backward[i] = b

    return ProblemGrid(
        domain=domain, h=float(h), lower=lower, index=index, coords=coords,
        points=center + h * coords, ring_coords=ring_coords,
        forward=forward, backward=backward,
    )


@dataclass(eq=False)
class GridFunction:
    """``N`` scalar fields sampled on the interior nodes of ``grid``."""

    values: np.ndarray
    grid: ProblemGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.shape[1] != self.grid.size:
            raise GridMismatch(f"{v.shape[1]} samples for a grid of {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite entries")
        self.values = v

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, grid: ProblemGrid, N: int) -> "GridFunction":
        return cls(np.zeros((N, grid.size)), grid)

    @classmethod
    def from_callable(cls, grid: ProblemGrid, func, N: Optional[int] = None) -> "GridFunction":
        return cls(grid.node_values(func, N), grid)

    def __add__(self, other):
        _same_grid(self, other)
        return GridFunction(self.values + other.values, self.grid)

    def __sub__(self, other):
        _same_grid(self, other)
        return GridFunction(self.values - other.values, self.grid)

    def __mul__(self, scalar):
        return GridFunction(self.values * scalar, self.grid)

    __rmul__ = __mul__

    def project(self, basis) -> "GridFunction":
        """Nodewise orthogonal projection onto the row span of ``basis``."""
        basis = np.asarray(basis, dtype=float).reshape(-1, self.N)
        return GridFunction(basis.T @ (basis @ self.values), self.grid)


def _same_grid(u: GridFunction, v: GridFunction) -> None:
    if u.grid is not v.grid:
        raise GridMismatch("grid functions live on different grids")


def zero_extended(values: np.ndarray, grid: ProblemGrid) -> np.ndarray:
    """Append a zero column used as the ghost value for index ``-1``."""
    return np.concatenate([values, np.zeros(values.shape[:-1] + (1,))], axis=-1)


def gradient_values(values: np.ndarray, grid: ProblemGrid) -> np.ndarray:
    """Forward differences of ``(N, size)`` node values -> ``(N, n, num_gradient_nodes)``."""
    ext = zero_extended(values, grid)
    m = grid.size
    out = np.take(ext, grid.forward_take, axis=1)
    out[:, :, :m] -= values[:, None, :]
    out /= grid.h
    return out


def divergence_values(V: np.ndarray, grid: ProblemGrid) -> np.ndarray:
    """Backward-difference divergence, the negative adjoint of :func:`gradient_values`."""
    m = grid.size
    out = V[:, 0, :m] - np.take(V[:, 0], grid.backward[0], axis=1)
    for i in range(1, grid.n):
        out += V[:, i, :m]
        out -= np.take(V[:, i], grid.backward[i], axis=1)
    out /= grid.h
    return out


def gradient(u: GridFunction) -> np.ndarray:
    return gradient_values(u.values, u.grid)


def divergence(V: np.ndarray, grid: ProblemGrid) -> GridFunction:
    return GridFunction(divergence_values(V, grid), grid)


def quadrature(u: GridFunction) -> np.ndarray:
    """``h^n``-weighted sum over interior nodes, one value per component."""
    return u.grid.cell_volume * np.sum(u.values, axis=1)


def inner_product(u: GridFunction, v: GridFunction) -> float:
    _same_grid(u, v)
    return float(u.grid.cell_volume * np.sum(u.values * v.values))


def l2_norm(u: GridFunction) -> float:
    return math.sqrt(inner_product(u, u))


def gradient_l2_norm(G: np.ndarray, grid: ProblemGrid) -> float:
    return math.sqrt(grid.cell_volume * float(np.sum(G * G)))


def to_csv(u: GridFunction) -> str:
    """Rows ``x1,x2,u_1,...,u_N`` with a header line."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n = u.grid.n
    writer.writerow([f"x{i + 1}" for i in range(n)] + [f"u_{a + 1}" for a in range(u.N)])
    for x, vals in zip(u.grid.points, u.values.T):
        writer.writerow([repr(float(c)) for c in x] + [repr(float(v)) for v in vals])
    return buf.getvalue()


def from_csv(text: str, grid: ProblemGrid) -> GridFunction:
    """Read a CSV written by :func:`to_csv`; rows are matched to nodes by position."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    n = grid.n
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    idx = np.rint((data[:, :n] - np.asarray(grid.domain.center)) / grid.h).astype(np.int64) - grid.lower
    shape = np.asarray(grid.index.shape)
    if np.any(idx < 0) or np.any(idx >= shape):
        raise GridMismatch("CSV contains points outside the grid")
    nodes = grid.index[tuple(idx.T)]
    if np.any(nodes < 0) or len(np.unique(nodes)) != grid.size or len(nodes) != grid.size:
        raise GridMismatch("CSV rows do not match the interior nodes of the grid")
    values = np.zeros((data.shape[1] - n, grid.size))
    values[:, nodes] = data[:, n:].T
    return GridFunction(values, grid)
