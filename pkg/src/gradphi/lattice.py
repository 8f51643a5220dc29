"""Discrete geometry and calculus on Z^d.

Regions are finite vertex sets stored in row-major (lexicographic) order, so a
box-shaped region reshapes directly into a ``d``-dimensional grid with axis
``i`` indexing coordinate ``i``.  Bonds are stored once per unordered pair with
the canonical orientation ``x -> x + e_i``; an edge field holds one value per
bond and its value on the reversed edge is the negative of that value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Region",
    "Field",
    "EdgeField",
    "TriadicPartition",
    "cube",
    "cube_plus",
    "ball",
    "difference",
    "from_points",
    "boundary",
    "interior",
    "partition",
    "gradient",
    "divergence",
    "laplacian",
    "mean",
    "slope",
    "affine",
    "dump_field",
    "load_field",
]


class LatticeError(ValueError):
    """Raised for malformed regions or mismatched fields."""


def _lexsort_points(points: np.ndarray) -> np.ndarray:
    # np.lexsort sorts by the last key first; reverse so coordinate 0 is slowest.
    order = np.lexsort(points.T[::-1])
    return points[order]


@dataclass(frozen=True, eq=False)
class Region:
    """A finite subset of Z^d.

    Attributes:
        d: Lattice dimension.
        points: ``(K, d)`` integer array of vertices in row-major order.
        kind: One of ``cube``, ``cube_plus``, ``ball``, ``difference``, ``custom``.
        level: Triadic level for ``cube``/``cube_plus`` regions, else ``None``.
    """

    d: int
    points: np.ndarray
    kind: str = "custom"
    level: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise LatticeError(f"points must have shape (K, {self.d}), got {pts.shape}")
        if len(pts) == 0:
            raise LatticeError("empty region")
        pts = _lexsort_points(pts)
        if len(pts) > 1 and np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise LatticeError("duplicate vertices")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def size(self) -> int:
        return len(self.points)

    @cached_property
    def _box(self) -> tuple[np.ndarray, tuple[int, ...], np.ndarray]:
        lo = self.points.min(axis=0)
        shape = tuple(int(s) for s in self.points.max(axis=0) - lo + 1)
        table = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        table[np.ravel_multi_index(tuple((self.points - lo).T), shape)] = np.arange(self.size)
        return lo, shape, table

    @property
    def is_box(self) -> bool:
        _, shape, _ = self._box
        return int(np.prod(shape)) == self.size

    @property
    def box_shape(self) -> tuple[int, ...]:
        return self._box[1]

    def index_of(self, pts: np.ndarray) -> np.ndarray:
        """Indices of ``pts`` in this region, ``-1`` for points outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        lo, shape, table = self._box
        rel = pts - lo
        inside = np.all((rel >= 0) & (rel < np.asarray(shape)), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        if inside.any():
            flat = np.ravel_multi_index(tuple(rel[inside].T), shape)
            out[inside] = table[flat]
        return out

    def contains(self, pts) -> np.ndarray:
        return self.index_of(pts) >= 0

    @cached_property
    def _bond_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        tails, heads, axes = [], [], []
        for i in range(self.d):
            shifted = self.points.copy()
            shifted[:, i] += 1
            nb = self.index_of(shifted)
            ok = nb >= 0
            tails.append(np.nonzero(ok)[0])
            heads.append(nb[ok])
            axes.append(np.full(int(ok.sum()), i, dtype=np.int64))
        t, h, a = (np.concatenate(v) for v in (tails, heads, axes))
        for v in (t, h, a):
            v.setflags(write=False)
        return t, h, a

    @property
    def bond_tails(self) -> np.ndarray:
        return self._bond_arrays[0]

    @property
    def bond_heads(self) -> np.ndarray:
        return self._bond_arrays[1]

    @property
    def bond_axes(self) -> np.ndarray:
        return self._bond_arrays[2]

    @property
    def n_bonds(self) -> int:
        return len(self.bond_tails)

    @cached_property
    def axis_slices(self) -> tuple[slice, ...]:
        """Contiguous bond slices per axis (bonds are grouped by axis)."""
        counts = np.bincount(self.bond_axes, minlength=self.d)
        ends = np.cumsum(counts)
        return tuple(slice(int(e - c), int(e)) for c, e in zip(counts, ends))

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Signed incidence matrix ``D`` (bonds x vertices) with ``D @ f = grad f``."""
        nb = self.n_bonds
        rows = np.concatenate([np.arange(nb), np.arange(nb)])
        cols = np.concatenate([self.bond_heads, self.bond_tails])
        vals = np.concatenate([np.ones(nb), -np.ones(nb)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(nb, self.size))

    @cached_property
    def _incidence_t(self) -> sp.csr_matrix:
        return self.incidence.T.tocsr()

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for i in range(self.d):
            for step in (1, -1):
                shifted = self.points.copy()
                shifted[:, i] += step
                mask |= self.index_of(shifted) < 0
        mask.setflags(write=False)
        return mask

    @cached_property
    def interior_indices(self) -> np.ndarray:
        idx = np.nonzero(~self.boundary_mask)[0]
        idx.setflags(write=False)
        return idx

    # Array-level calculus; leading batch dimensions are allowed.
    def grad(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return values[..., self.bond_heads] - values[..., self.bond_tails]

    def div(self, edge_values: np.ndarray) -> np.ndarray:
        edge_values = np.asarray(edge_values, dtype=float)
        flat = edge_values.reshape(-1, self.n_bonds)
        out = -(self._incidence_t @ flat.T).T
        return np.asarray(out).reshape(edge_values.shape[:-1] + (self.size,))

    def laplace(self, values: np.ndarray) -> np.ndarray:
        return self.div(self.grad(values))

    def to_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape vertex values of a box region to its grid shape."""
        if not self.is_box:
            raise LatticeError("to_grid requires a box-shaped region")
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.box_shape)

    def __repr__(self) -> str:
        lvl = "" if self.level is None else f", level={self.level}"
        return f"Region(d={self.d}, size={self.size}, kind={self.kind!r}{lvl})"


def _box_points(lo: Sequence[int], hi: Sequence[int]) -> np.ndarray:
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def cube(d: int, n: int, origin: Sequence[int] | None = None) -> Region:
    """The triadic cube ``origin + Q_n`` of side ``3**n``.

    ``origin`` must lie in ``3**n Z^d``; it defaults to the origin.
    """
    if d < 1 or n < 0:
        raise LatticeError(f"invalid cube parameters d={d}, n={n}")
    if origin is None:
        return _centered_cube(d, n)
    z = np.asarray(origin, dtype=np.int64)
    if z.shape == (d,) and not np.any(z):
        return _centered_cube(d, n)
    return _make_cube(d, n, z)


@lru_cache(maxsize=32)
def _centered_cube(d: int, n: int) -> Region:
    # regions are immutable, so sharing one instance also shares its cached operators
    return _make_cube(d, n, np.zeros(d, dtype=np.int64))


def _make_cube(d: int, n: int, z: np.ndarray) -> Region:
    half = (3**n - 1) // 2
    if z.shape != (d,):
        raise LatticeError("origin has wrong dimension")
    if np.any(z % 3**n):
        raise LatticeError(f"origin {z.tolist()} is not in 3^{n} Z^d")
    return Region(d, _box_points(z - half, z + half), kind="cube", level=n)


def cube_plus(d: int, n: int) -> Region:
    """``Q_n`` with a one-vertex collar: the cube of side ``3**n + 2``."""
    if n < 0:
        raise LatticeError("n must be non-negative")
    half = (3**n + 1) // 2
    return Region(d, _box_points([-half] * d, [half] * d), kind="cube_plus", level=n)


def from_points(points: Iterable[Sequence[int]], d: int | None = None, kind: str = "custom") -> Region:
    pts = np.asarray(list(points), dtype=np.int64)
    if d is None:
        d = pts.shape[1]
    return Region(d, pts.reshape(-1, d), kind=kind)


def ball(x: Sequence[int], r: float, ambient: Region) -> Region:
    """Euclidean ball ``{y in ambient : |y - x| <= r}``."""
    if r < 1:
        raise LatticeError("ball radius must be >= 1")
    x = np.asarray(x, dtype=np.int64)
    if not ambient.contains(x)[0]:
        raise LatticeError(f"center {x.tolist()} is not in the ambient region")
    dist2 = np.sum((ambient.points - x) ** 2, axis=1)
    return Region(ambient.d, ambient.points[dist2 <= r * r + 1e-12], kind="ball")


def difference(a: Region, b: Region) -> Region:
    keep = ~b.contains(a.points)
    return Region(a.d, a.points[keep], kind="difference")


def boundary(r: Region) -> Region:
    return Region(r.d, r.points[r.boundary_mask], kind="custom")


def interior(r: Region) -> Region:
    """Vertices of ``r`` with all ``2d`` neighbours in ``r``; ``None`` if empty."""
    pts = r.points[~r.boundary_mask]
    if len(pts) == 0:
        return None
    if r.kind == "cube_plus":
        return Region(r.d, pts, kind="cube", level=r.level)
    return Region(r.d, pts, kind="custom")


@dataclass(frozen=True, eq=False)
class Field:
    """Real values on the vertices of a region."""

    region: Region
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.region.size,):
            raise LatticeError(f"field has {v.shape} values for a region of size {self.region.size}")
        object.__setattr__(self, "values", v)

    def is_zero_boundary(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values[self.region.boundary_mask]) <= atol))

    def is_mean_zero(self, rtol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.mean(np.abs(self.values))))
        return abs(float(np.mean(self.values))) <= rtol * scale


@dataclass(frozen=True, eq=False)
class EdgeField:
    """Antisymmetric edge function, one value per canonically oriented bond."""

    region: Region
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.region.n_bonds,):
            raise LatticeError(f"edge field has {v.shape} values for {self.region.n_bonds} bonds")
        object.__setattr__(self, "values", v)

    def at(self, x: Sequence[int], y: Sequence[int]) -> float:
        """Value on the directed edge ``x -> y``."""
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        step = y - x
        if np.sum(np.abs(step)) != 1:
            raise LatticeError("x and y are not nearest neighbours")
        axis = int(np.nonzero(step)[0][0])
        tail = x if step[axis] == 1 else y
        sign = 1.0 if step[axis] == 1 else -1.0
        ti = self.region.index_of(tail)[0]
        sl = self.region.axis_slices[axis]
        hits = np.nonzero(self.region.bond_tails[sl] == ti)[0]
        if ti < 0 or len(hits) == 0:
            raise LatticeError("edge is not inside the region")
        return sign * float(self.values[sl.start + hits[0]])


def _check_same(a: Region, b: Region):
    if a is not b and (a.d != b.d or a.size != b.size or not np.array_equal(a.points, b.points)):
        raise LatticeError("fields live on different regions")


def gradient(f: Field) -> EdgeField:
    return EdgeField(f.region, f.region.grad(f.values))


def divergence(g: EdgeField) -> Field:
    return Field(g.region, g.region.div(g.values))


def laplacian(f: Field) -> Field:
    return Field(f.region, f.region.laplace(f.values))


def mean(f: Field, U: Region | None = None) -> float:
    if U is None:
        return float(np.mean(f.values))
    idx = f.region.index_of(U.points)
    if np.any(idx < 0):
        raise LatticeError("U is not contained in the field's region")
    return float(np.mean(f.values[idx]))


def _bond_selector(region: Region, U: Region) -> np.ndarray:
    inside = U.contains(region.points)
    return inside[region.bond_tails] & inside[region.bond_heads]


def slope(g: EdgeField, U: Region | None = None) -> np.ndarray:
    """Vector ``s`` with ``p . s = |U|^-1 sum_{e in U} p(e) g(e)`` for every ``p``."""
    region = g.region
    if U is None:
        U = region
    if U.size == 0:
        raise LatticeError("empty U")
    sel = _bond_selector(region, U) if U is not region else np.ones(region.n_bonds, dtype=bool)
    out = np.zeros(region.d)
    np.add.at(out, region.bond_axes[sel], g.values[sel])
    return out / U.size


def affine(region: Region, p: Sequence[float], const: float = 0.0) -> Field:
    """The field ``x -> p . x + const``."""
    return Field(region, region.points @ np.asarray(p, dtype=float) + const)


def dump_field(f: Field, path: str | Path) -> None:
    """Write ``f`` as ``d n kind`` then one ``.17g`` value per line (row-major)."""
    r = f.region
    if r.kind not in ("cube", "cube_plus") or r.level is None:
        raise LatticeError("only cube and cube_plus fields can be dumped")
    lines = [f"{r.d} {r.level} {r.kind}"] + [format(v, ".17g") for v in f.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(path: str | Path) -> Field:
    lines = Path(path).read_text().split("\n")
    d, n, kind = lines[0].split()
    d, n = int(d), int(n)
    region = cube(d, n) if kind == "cube" else cube_plus(d, n)
    vals = np.array([float(s) for s in lines[1:] if s.strip()])
    return Field(region, vals)


@dataclass(frozen=True, eq=False)
class TriadicPartition:
    """Tiling of ``Q_n`` by the cells ``z + Q_m``, ``z`` in ``3^m Z^d ∩ Q_n``."""

    d: int
    m: int
    n: int
    region: Region = field(init=False)

    def __post_init__(self):
        if not 0 <= self.m < self.n:
            raise LatticeError("partition requires 0 <= m < n")
        object.__setattr__(self, "region", cube(self.d, self.n))

    @cached_property
    def centers(self) -> np.ndarray:
        """The points ``Z_{m,n}`` in row-major order."""
        s = 3**self.m
        half = (3 ** (self.n - self.m) - 1) // 2
        return _box_points([-half] * self.d, [half] * self.d) * s

    @property
    def n_cells(self) -> int:
        return len(self.centers)

    @cached_property
    def cell_of_vertex(self) -> np.ndarray:
        s = 3**self.m
        coarse = np.floor_divide(self.region.points + (s - 1) // 2, s)
        half = (3 ** (self.n - self.m) - 1) // 2
        side = 3 ** (self.n - self.m)
        return np.ravel_multi_index(tuple((coarse + half).T), (side,) * self.d)

    @cached_property
    def cells(self) -> tuple[Region, ...]:
        return tuple(cube(self.d, self.m, z) for z in self.centers)

    @cached_property
    def connecting_mask(self) -> np.ndarray:
        """Boolean mask over the bonds of ``Q_n`` selecting ``B_{m,n}``."""
        c = self.cell_of_vertex
        r = self.region
        return c[r.bond_tails] != c[r.bond_heads]

    @property
    def connecting_bonds(self) -> np.ndarray:
        return np.nonzero(self.connecting_mask)[0]

    def cell_vertex_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.cell_of_vertex == k)[0]


def partition(m: int, n: int, d: int = 2) -> TriadicPartition:
    return TriadicPartition(d, m, n)
