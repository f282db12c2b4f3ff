"""Bilinear (Q1) finite elements on a structured grid.

Nodes of the finite-element space coincide with the grid nodes, so nodal
coefficient vectors are plain flattened field arrays.  Coefficients are
interpolated bilinearly to the 2x2 Gauss points; the same quadrature is used
for assembly and for the gradient densities in ``strain_density`` so that the
discrete adjoint gradient is exact for the discrete misfit.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .fields import Grid

_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# local node order: (0,0), (1,0), (0,1), (1,1) in (i, j) offsets
_OFFSETS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])


class Q1Space:
    def __init__(self, grid: Grid):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        hx, hy = grid.hx, grid.hy
        self.n = nx * ny

        ie, je = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
        ie, je = ie.ravel(), je.ravel()
        self.conn = np.stack([(ie + di) * ny + (je + dj) for di, dj in _OFFSETS], axis=1)
        self.n_el = self.conn.shape[0]

        xi, et = np.meshgrid(_GP, _GP, indexing="ij")
        xi, et = xi.ravel(), et.ravel()
        N, Dx, Dy = [], [], []
        for di, dj in _OFFSETS:
            fx = xi if di else 1 - xi
            fy = et if dj else 1 - et
            sx = 1.0 if di else -1.0
            sy = 1.0 if dj else -1.0
            N.append(fx * fy)
            Dx.append(sx * fy / hx)
            Dy.append(fx * sy / hy)
        # shape (Q, 4)
        self.N = np.array(N).T
        self.Dx = np.array(Dx).T
        self.Dy = np.array(Dy).T
        self.wq = np.full(len(xi), hx * hy / len(xi))

        self._rows = np.repeat(self.conn, 4, axis=1).ravel()
        self._cols = np.tile(self.conn, (1, 4)).ravel()

        self.mass = self.weighted(None, self.N, self.N)
        self.stiffness = self.weighted(None, self.Dx, self.Dx) + self.weighted(None, self.Dy, self.Dy)
        self.div_x = self.weighted(None, self.N, self.Dx)
        self.div_y = self.weighted(None, self.N, self.Dy)
        self.lumped = np.asarray(self.mass.sum(axis=1)).ravel()

    def coef_at_quad(self, c) -> np.ndarray:
        """Bilinear interpolation of a nodal coefficient to Gauss points, shape (n_el, Q)."""
        c = np.asarray(c).ravel()
        return c[self.conn] @ self.N.T

    def weighted(self, coef_q, X, Y) -> sp.csr_matrix:
        """Matrix of ``sum_q w_q coef(q) X_a(q) Y_b(q)`` with rows a (test) and columns b (trial)."""
        if coef_q is None:
            local = np.einsum("q,qa,qb->ab", self.wq, X, Y)
            data = np.broadcast_to(local, (self.n_el, 4, 4))
        else:
            data = np.einsum("eq,q,qa,qb->eab", coef_q, self.wq, X, Y)
        A = sp.coo_matrix((data.ravel(), (self._rows, self._cols)), shape=(self.n, self.n)).tocsr()
        A.sum_duplicates()
        return A

    def strain_blocks(self, c):
        """Blocks of ``int 2 c eps(u) : eps(w)`` as ((K11, K12), (K21, K22))."""
        cq = self.coef_at_quad(c)
        xx = self.weighted(cq, self.Dx, self.Dx)
        yy = self.weighted(cq, self.Dy, self.Dy)
        k12 = self.weighted(cq, self.Dy, self.Dx)
        k21 = self.weighted(cq, self.Dx, self.Dy)
        return (2 * xx + yy, k12), (k21, xx + 2 * yy)

    def strain_matrix(self, c) -> sp.csr_matrix:
        (a, b), (cc, d) = self.strain_blocks(c)
        return sp.bmat([[a, b], [cc, d]], format="csr")

    def _strain_at_quad(self, u):
        u = np.asarray(u).reshape(2, self.n)
        u1, u2 = u[0][self.conn], u[1][self.conn]
        exx = u1 @ self.Dx.T
        eyy = u2 @ self.Dy.T
        exy = 0.5 * (u1 @ self.Dy.T + u2 @ self.Dx.T)
        return exx, exy, eyy

    def strain_density(self, u, v) -> np.ndarray:
        """Nodal integrals ``G_n = int phi_n 2 eps(u) : eps(v)`` (no conjugation)."""
        a = self._strain_at_quad(u)
        b = self._strain_at_quad(v)
        prod = 2.0 * (a[0] * b[0] + 2.0 * a[1] * b[1] + a[2] * b[2])
        contrib = (prod * self.wq)[:, :, None] * self.N[None, :, :]
        out = np.zeros(self.n, dtype=complex)
        np.add.at(out, self.conn, contrib.sum(axis=1))
        return out

    def edge_load(self, flux: np.ndarray, side: str) -> np.ndarray:
        """Consistent 1D load ``int_side flux phi_n ds`` for nodal flux values."""
        g = self.grid
        nx, ny = g.nx, g.ny
        out = np.zeros(g.shape, dtype=complex)
        if side in ("bottom", "top"):
            j = 0 if side == "bottom" else ny - 1
            f, h = flux[:, j], g.hx
            load = np.zeros(nx, dtype=complex)
            load[:-1] += h / 6 * (2 * f[:-1] + f[1:])
            load[1:] += h / 6 * (f[:-1] + 2 * f[1:])
            out[:, j] = load
        else:
            i = 0 if side == "left" else nx - 1
            f, h = flux[i, :], g.hy
            load = np.zeros(ny, dtype=complex)
            load[:-1] += h / 6 * (2 * f[:-1] + f[1:])
            load[1:] += h / 6 * (f[:-1] + 2 * f[1:])
            out[i, :] = load
        return out.ravel()


@lru_cache(maxsize=16)
def q1_space(grid: Grid) -> Q1Space:
    return Q1Space(grid)
