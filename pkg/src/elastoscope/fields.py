"""Structured-grid fields and finite-difference operators.

Every field is node-collocated on a rectangular grid.  Arrays are indexed
``values[i, j]`` with ``i`` running along x and ``j`` along y, so the flat
node number is ``i * ny + j``.

Derivatives use central differences at interior nodes and second-order
one-sided differences at boundary nodes (``numpy.gradient`` with
``edge_order=2``), which reproduces affine fields exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

SIDES = ("bottom", "top", "left", "right")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform node grid over ``[x0, x0 + lx] x [y0, y0 + ly]`` (cm).

    ``dirichlet_sides`` lists the sides belonging to Gamma_D; the remaining
    boundary nodes are Gamma_N.  A corner shared by a Dirichlet side and a
    Neumann side is labelled Dirichlet.
    """

    nx: int
    ny: int
    lx: float = 10.0
    ly: float = 10.0
    x0: float = 0.0
    y0: float = 0.0
    dirichlet_sides: tuple[str, ...] = SIDES

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("grid extents must be positive")
        bad = set(self.dirichlet_sides) - set(SIDES)
        if bad:
            raise ValueError(f"unknown boundary sides {sorted(bad)}")
        object.__setattr__(self, "dirichlet_sides", tuple(s for s in SIDES if s in self.dirichlet_sides))

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def side_mask(self, side: str) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        if side == "bottom":
            m[:, 0] = True
        elif side == "top":
            m[:, -1] = True
        elif side == "left":
            m[0, :] = True
        elif side == "right":
            m[-1, :] = True
        else:
            raise ValueError(side)
        return m

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    def dirichlet_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for s in self.dirichlet_sides:
            m |= self.side_mask(s)
        return m

    def neumann_mask(self) -> np.ndarray:
        return self.boundary_mask() & ~self.dirichlet_mask()

    def interior_mask(self, margin: float) -> np.ndarray:
        """Nodes whose distance to the boundary exceeds ``margin`` (cm)."""
        X, Y = self.mesh()
        d = np.minimum.reduce([X - self.x0, self.x0 + self.lx - X, Y - self.y0, self.y0 + self.ly - Y])
        return d > margin + 1e-12 * max(self.lx, self.ly)

    def trapezoid_weights(self) -> np.ndarray:
        """Nodal quadrature weights (lumped Q1 mass); they sum to lx * ly."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    def with_sides(self, sides: Iterable[str]) -> "Grid":
        return Grid(self.nx, self.ny, self.lx, self.ly, self.x0, self.y0, tuple(sides))

    def subgrid(self, i0: int, i1: int, j0: int, j1: int, sides: Iterable[str] = SIDES) -> "Grid":
        """Grid of the node block ``[i0, i1] x [j0, j1]`` (inclusive)."""
        if not (0 <= i0 < i1 < self.nx and 0 <= j0 < j1 < self.ny):
            raise ValueError("subgrid bounds out of range")
        return Grid(
            i1 - i0 + 1, j1 - j0 + 1,
            (i1 - i0) * self.hx, (j1 - j0) * self.hy,
            self.x0 + i0 * self.hx, self.y0 + j0 * self.hy,
            tuple(sides),
        )

    def same_geometry(self, other: "Grid") -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(
            [self.lx, self.ly, self.x0, self.y0], [other.lx, other.ly, other.x0, other.y0]
        )


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, value: complex) -> "ScalarField":
        return cls(grid, np.full(grid.shape, value, dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * _vals(other))

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape + (2,):
            raise ValueError(f"vector field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (2,), dtype=complex))

    @classmethod
    def constant(cls, grid: Grid, value) -> "VectorField":
        return cls(grid, np.broadcast_to(np.asarray(value, dtype=complex), grid.shape + (2,)))

    @classmethod
    def from_components(cls, grid: Grid, c1, c2) -> "VectorField":
        return cls(grid, np.stack(np.broadcast_arrays(np.asarray(c1), np.asarray(c2)), axis=-1))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        X, Y = grid.mesh()
        c1, c2 = fn(X, Y)
        return cls.from_components(grid, np.broadcast_to(c1, grid.shape), np.broadcast_to(c2, grid.shape))

    def component(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., k])

    def __add__(self, other):
        return VectorField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return VectorField(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return VectorField(self.grid, self.values * other.values[..., None])
        return VectorField(self.grid, self.values * other)

    __rmul__ = __mul__

    def conj(self) -> "VectorField":
        return VectorField(self.grid, self.values.conj())


@dataclass(frozen=True)
class TensorField:
    """Symmetric 2x2 tensor per node, stored as ``(xx, xy, yy)``."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape + (3,):
            raise ValueError(f"tensor field shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls, grid: Grid) -> "TensorField":
        v = np.zeros(grid.shape + (3,), dtype=complex)
        v[..., 0] = v[..., 2] = 1.0
        return cls(grid, v)

    @classmethod
    def from_matrix(cls, grid: Grid, m: np.ndarray) -> "TensorField":
        """Symmetrize a full ``(nx, ny, 2, 2)`` matrix field."""
        return cls(grid, np.stack([m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]], axis=-1))

    def entry(self, a: int, b: int) -> np.ndarray:
        if a == b:
            return self.values[..., 0 if a == 0 else 2]
        return self.values[..., 1]

    def matrix(self) -> np.ndarray:
        v = self.values
        return np.stack([np.stack([v[..., 0], v[..., 1]], -1), np.stack([v[..., 1], v[..., 2]], -1)], -2)

    def column(self, j: int) -> VectorField:
        return VectorField.from_components(self.grid, self.entry(0, j), self.entry(1, j))

    def conj(self) -> "TensorField":
        return TensorField(self.grid, self.values.conj())

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return TensorField(self.grid, self.values * other.values[..., None])
        return TensorField(self.grid, self.values * other)

    __rmul__ = __mul__

    def apply_normal(self, normal) -> VectorField:
        n1, n2 = normal
        return VectorField.from_components(
            self.grid,
            self.values[..., 0] * n1 + self.values[..., 1] * n2,
            self.values[..., 1] * n1 + self.values[..., 2] * n2,
        )


def _vals(x):
    return x.values if isinstance(x, (ScalarField, VectorField, TensorField)) else x


def _check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if not g.same_geometry(f.grid):
            raise ValueError("fields live on different grids")


# --- differential operators --------------------------------------------------


def _d(a: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    h = grid.hx if axis == 0 else grid.hy
    return np.gradient(a, h, axis=axis, edge_order=2)


def gradient(s: ScalarField) -> VectorField:
    g = s.grid
    return VectorField.from_components(g, _d(s.values, g, 0), _d(s.values, g, 1))


def jacobian(u: VectorField) -> np.ndarray:
    """Full displacement gradient ``J[..., a, b] = d u_a / d x_b``."""
    g = u.grid
    out = np.empty(g.shape + (2, 2), dtype=complex)
    for a in range(2):
        out[..., a, 0] = _d(u.values[..., a], g, 0)
        out[..., a, 1] = _d(u.values[..., a], g, 1)
    return out


def sym_gradient(u: VectorField) -> TensorField:
    return TensorField.from_matrix(u.grid, jacobian(u))


def divergence(u: VectorField) -> ScalarField:
    g = u.grid
    return ScalarField(g, _d(u.values[..., 0], g, 0) + _d(u.values[..., 1], g, 1))


def tensor_divergence(T: TensorField) -> VectorField:
    """Columnwise divergence ``(div T)_j = sum_i d_i T_ij``."""
    g = T.grid
    m = T.matrix()
    return VectorField.from_components(g, _d(m[..., 0, 0], g, 0) + _d(m[..., 1, 0], g, 1),
                                       _d(m[..., 0, 1], g, 0) + _d(m[..., 1, 1], g, 1))


def curl2d_scalar(w: ScalarField) -> VectorField:
    """``(d_y w, -d_x w)``."""
    g = w.grid
    return VectorField.from_components(g, _d(w.values, g, 1), -_d(w.values, g, 0))


def curl2d_vector(F: VectorField) -> ScalarField:
    """``d_x F_2 - d_y F_1``."""
    g = F.grid
    return ScalarField(g, _d(F.values[..., 1], g, 0) - _d(F.values[..., 0], g, 1))


def tensor_contract(A: TensorField, B: TensorField) -> ScalarField:
    """Pointwise ``sum_ij A_ij B_ij`` (no conjugation)."""
    _check_same_grid(A, B)
    a, b = A.values, B.values
    return ScalarField(A.grid, a[..., 0] * b[..., 0] + 2.0 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2])


def _second_derivative(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    out = np.empty_like(a)
    # fourth-order central where the 5-point stencil fits, second order next to the edge
    out[2:-2] = (-a[:-4] + 16 * a[1:-3] - 30 * a[2:-2] + 16 * a[3:-1] - a[4:]) / (12 * h * h)
    out[1] = (a[0] - 2 * a[1] + a[2]) / (h * h)
    out[n - 2] = (a[n - 3] - 2 * a[n - 2] + a[n - 1]) / (h * h)
    if n >= 4:
        out[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / (h * h)
        out[n - 1] = (2 * a[n - 1] - 5 * a[n - 2] + 4 * a[n - 3] - a[n - 4]) / (h * h)
    else:
        out[0] = out[1]
        out[n - 1] = out[n - 2]
    return np.moveaxis(out, 0, axis)


def laplacian(s: ScalarField) -> ScalarField:
    """Scalar Laplacian, fourth-order accurate two or more nodes from the boundary.

    Nodes adjacent to the boundary use the 3-point stencil and boundary nodes
    the second-order one-sided 4-point stencil.
    """
    g = s.grid
    if min(g.nx, g.ny) < 5:
        raise ValueError("laplacian needs at least 5 nodes per axis")
    return ScalarField(g, _second_derivative(s.values, g.hx, 0) + _second_derivative(s.values, g.hy, 1))


# --- CSV serialization ---------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_field_csv(f: ScalarField | VectorField, path) -> None:
    """Write ``nx,ny,lx,ly,kind`` then one ``i,j,re,im[,re2,im2]`` line per node."""
    g = f.grid
    kind = "scalar" if isinstance(f, ScalarField) else "vector"
    buf = io.StringIO()
    buf.write(f"{g.nx},{g.ny},{_fmt(g.lx)},{_fmt(g.ly)},{kind}\n")
    for i in range(g.nx):
        for j in range(g.ny):
            if kind == "scalar":
                z = f.values[i, j]
                buf.write(f"{i},{j},{_fmt(z.real)},{_fmt(z.imag)}\n")
            else:
                z1, z2 = f.values[i, j]
                buf.write(f"{i},{j},{_fmt(z1.real)},{_fmt(z1.imag)},{_fmt(z2.real)},{_fmt(z2.imag)}\n")
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_field_csv(path, dirichlet_sides: Iterable[str] = SIDES) -> ScalarField | VectorField:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 5:
            raise ValueError(f"{path}:1: expected header nx,ny,lx,ly,kind")
        nx, ny, lx, ly, kind = int(header[0]), int(header[1]), float(header[2]), float(header[3]), header[4]
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = Grid(nx, ny, lx, ly, dirichlet_sides=tuple(dirichlet_sides))
    if kind not in ("scalar", "vector"):
        raise ValueError(f"{path}:1: unknown field kind {kind!r}")
    ncol = 4 if kind == "scalar" else 6
    if data.shape != (nx * ny, ncol):
        raise ValueError(f"{path}: expected {nx * ny} rows of {ncol} columns, got {data.shape}")
    i = data[:, 0].astype(int)
    j = data[:, 1].astype(int)
    if kind == "scalar":
        v = np.zeros(grid.shape, dtype=complex)
        v[i, j] = data[:, 2] + 1j * data[:, 3]
        return ScalarField(grid, v)
    v = np.zeros(grid.shape + (2,), dtype=complex)
    v[i, j, 0] = data[:, 2] + 1j * data[:, 3]
    v[i, j, 1] = data[:, 4] + 1j * data[:, 5]
    return VectorField(grid, v)
