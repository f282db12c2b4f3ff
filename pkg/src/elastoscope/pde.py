"""Forward, adjoint and Poisson solves on the structured grid.

The viscoelastic Stokes system

    2 div((mu + i omega eta) sym_grad u) + grad p + rho omega^2 u = b,   div u = 0,

is discretized with equal-order Q1 elements for ``(u, p)``.  Multiplying the
momentum equation by a test field ``w`` and integrating by parts gives

    int 2 c eps(u):eps(w) - rho omega^2 int u.w + int p div w = -int b.w,

where the boundary term is exactly the traction ``2 c eps(u) n + p n`` and is
dropped on Gamma_N.  The continuity row carries a pressure-Laplacian
stabilization ``-beta h^2 / |c_ref| int grad p . grad r`` (the sign is the
stabilizing one for the ``+grad p`` convention used here).

The assembled saddle-point matrix is complex symmetric, so the adjoint
(conjugated coefficient) system is solved with the conjugate transpose of the
same factorization.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .fem import Q1Space, q1_space
from .fields import Grid, ScalarField, TensorField, VectorField
from .linalg import ConstraintSet, Factorization, LinearSolveError, SolveReport
from .material import MaterialMap

logger = logging.getLogger(__name__)


class SolverError(LinearSolveError):
    """A forward, adjoint or Poisson solve did not produce a valid solution."""


class NearResonanceError(SolverError):
    """The residual stagnated above tolerance, typically close to a resonance."""


class CompatibilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DivergenceLoad:
    """Body force ``-2 div(coef sym_grad u)`` assembled in weak form.

    ``coef`` must vanish near the boundary for the weak and strong forms to
    agree; this is the load of the first-order sensitivity problem.
    """

    coef: ScalarField
    u: VectorField


@dataclass(frozen=True)
class ForwardProblem:
    grid: Grid
    material: MaterialMap
    omega: float
    rho: float = 1.0
    g: VectorField | None = None
    body_force: VectorField | DivergenceLoad | None = None
    beta: float = 0.1
    tol: float = 1e-10
    coef: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.material.grid.same_geometry(self.grid):
            raise ValueError("material grid differs from problem grid")
        if self.g is not None and not self.g.grid.same_geometry(self.grid):
            raise ValueError("boundary data grid differs from problem grid")

    @property
    def all_dirichlet(self) -> bool:
        return len(self.grid.dirichlet_sides) == 4

    def modulus(self) -> np.ndarray:
        if self.coef is not None:
            return np.asarray(self.coef, dtype=complex)
        return self.material.modulus(self.omega)

    def with_material(self, material: MaterialMap) -> "ForwardProblem":
        return ForwardProblem(self.grid, material, self.omega, self.rho, self.g, self.body_force,
                              self.beta, self.tol)


@dataclass(frozen=True)
class ForwardSolution:
    u: VectorField
    p: ScalarField
    report: SolveReport
    div_residual: float = 0.0
    flux_defect: float = 0.0


class StokesOperator:
    """Assembled and factorized saddle-point operator for one coefficient field.

    Dof layout: ``u1`` nodes, ``u2`` nodes, ``p`` nodes.  When every side is
    Dirichlet the pressure is determined up to a constant; one pressure dof is
    then constrained during the solve and the result shifted to zero weighted
    mean.  This is exact for compatible boundary data, which ``forward``
    enforces by projection.
    """

    def __init__(self, grid: Grid, coef: np.ndarray, omega: float, rho: float,
                 beta: float = 0.1, c_ref: float | None = None, tol: float = 1e-10):
        self.grid = grid
        self.space: Q1Space = q1_space(grid)
        self.omega = omega
        self.rho = rho
        self.tol = tol
        coef = np.asarray(coef, dtype=complex).reshape(grid.shape)
        self.coef = coef
        n = grid.n_nodes
        self.n = n
        sp_ = self.space
        if c_ref is None:
            c_ref = float(np.abs(coef).mean())
        self.c_ref = c_ref
        (k11, k12), (k21, k22) = sp_.strain_blocks(coef)
        # averaging consistent and lumped mass cancels the leading Q1 dispersion error
        self.mass = 0.5 * sp_.mass + 0.5 * sp.diags(sp_.lumped)
        m = rho * omega**2 * self.mass
        stab = (beta * grid.hx * grid.hy / c_ref) * sp_.stiffness
        blocks = [
            [k11 - m, k12, sp_.div_x.T],
            [k21, k22 - m, sp_.div_y.T],
            [sp_.div_x, sp_.div_y, -stab],
        ]
        self.pinned = len(grid.dirichlet_sides) == 4
        A = sp.bmat(blocks, format="csr")
        self.size = A.shape[0]
        self.A = A.astype(complex)

        dmask = grid.dirichlet_mask().ravel()
        dnodes = np.flatnonzero(dmask)
        self.dirichlet_nodes = dnodes
        self.dirichlet_dofs = np.concatenate([dnodes, dnodes + n])
        self.constrained = self.dirichlet_dofs
        if self.pinned:
            centre = (grid.nx // 2) * grid.ny + grid.ny // 2
            self.constrained = np.concatenate([self.dirichlet_dofs, [2 * n + centre]])
        Ac, _ = linalg.apply_constraints(
            self.A, np.zeros(self.size), ConstraintSet(self.constrained, np.zeros(self.constrained.size))
        )
        self.Ac = Ac
        try:
            self._lu = Factorization(Ac)
        except LinearSolveError as exc:
            raise SolverError(f"saddle-point factorization failed: {exc}") from exc

    # --- compatibility ------------------------------------------------------

    def flux_functional(self) -> np.ndarray:
        """Discrete outward flux weights on the Dirichlet velocity dofs."""
        sp_ = self.space
        ones = np.ones(self.n)
        m = np.concatenate([sp_.div_x.T @ ones, sp_.div_y.T @ ones])
        return m[self.dirichlet_dofs]

    def project_compatible(self, gvals: np.ndarray) -> tuple[np.ndarray, float]:
        """Remove the net-flux component of all-Dirichlet data; returns (data, relative defect)."""
        m = self.flux_functional()
        flux = m @ gvals
        scale = np.abs(m) @ np.abs(gvals)
        defect = float(abs(flux) / scale) if scale > 0 else 0.0
        return gvals - (flux / (m @ m)) * m, defect

    # --- solves ---------------------------------------------------------------

    def _solve(self, rhs: np.ndarray, adjoint: bool = False) -> tuple[np.ndarray, SolveReport]:
        x, rep = self._lu.solve(rhs, tol=self.tol, max_iter=3, adjoint=adjoint)
        if not rep.converged:
            raise NearResonanceError(
                f"residual stagnated at {rep.relative_residual:.3e} (tol {self.tol:.1e})", rep
            )
        return x, rep

    def split(self, x: np.ndarray) -> tuple[VectorField, ScalarField]:
        n = self.n
        g = self.grid
        u = VectorField.from_components(g, x[:n].reshape(g.shape), x[n:2 * n].reshape(g.shape))
        p = x[2 * n:3 * n]
        if self.pinned:
            w = self.space.lumped
            p = p - (w @ p) / w.sum()
        return u, ScalarField(g, p.reshape(g.shape))

    def divergence_residual(self, x: np.ndarray) -> float:
        sp_ = self.space
        n = self.n
        u1, u2, p = x[:n], x[n:2 * n], x[2 * n:3 * n]
        stab = self.A[2 * n:3 * n, 2 * n:3 * n]
        r = sp_.div_x @ u1 + sp_.div_y @ u2 + stab @ p
        scale = np.linalg.norm(sp_.div_x @ u1) + np.linalg.norm(sp_.div_y @ u2)
        return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0

    def load_vector(self, body_force) -> np.ndarray:
        n = self.n
        b = np.zeros(self.size, dtype=complex)
        if body_force is None:
            return b
        sp_ = self.space
        if isinstance(body_force, DivergenceLoad):
            u = body_force.u.values
            uvec = np.concatenate([u[..., 0].ravel(), u[..., 1].ravel()])
            b[:2 * n] = -(sp_.strain_matrix(body_force.coef.values) @ uvec)
        else:
            f = body_force.values
            b[:n] = -(self.mass @ f[..., 0].ravel())
            b[n:2 * n] = -(self.mass @ f[..., 1].ravel())
        return b

    def forward(self, g: VectorField | None, body_force=None) -> ForwardSolution:
        n = self.n
        gvals = np.zeros(self.dirichlet_dofs.size, dtype=complex)
        if g is not None:
            gv = g.values
            gvals = np.concatenate([gv[..., 0].ravel()[self.dirichlet_nodes], gv[..., 1].ravel()[self.dirichlet_nodes]])
        defect = 0.0
        if self.pinned and np.any(gvals):
            gvals, defect = self.project_compatible(gvals)
            if defect > 1e-6:
                warnings.warn(f"boundary data net flux {defect:.2e} removed", CompatibilityWarning, stacklevel=3)
        b = self.load_vector(body_force)
        vals = np.concatenate([gvals, np.zeros(self.constrained.size - gvals.size)])
        _, rhs = linalg.apply_constraints(self.A, b, ConstraintSet(self.constrained, vals))
        x, rep = self._solve(rhs)
        u, p = self.split(x)
        return ForwardSolution(u, p, rep, self.divergence_residual(x), defect)

    def adjoint(self, residual: VectorField, weights: np.ndarray | None = None) -> ForwardSolution:
        """Solve the conjugate-coefficient problem with source ``residual`` and v = 0 on Gamma_D.

        The source is loaded with nodal quadrature ``weights`` (trapezoid by
        default), the same rule that defines the discrete misfit.
        """
        n = self.n
        w = self.space.lumped if weights is None else np.asarray(weights).ravel()
        r = residual.values
        rhs = np.zeros(self.size, dtype=complex)
        rhs[:n] = -w * r[..., 0].ravel()
        rhs[n:2 * n] = -w * r[..., 1].ravel()
        rhs[self.constrained] = 0.0
        if not np.any(rhs):
            z = np.zeros(self.size, dtype=complex)
            u, p = self.split(z)
            return ForwardSolution(u, p, SolveReport(0, 0.0, True), 0.0)
        x, rep = self._solve(rhs, adjoint=True)
        v, q = self.split(x)
        return ForwardSolution(v, q, rep, 0.0)


def build_operator(prob: ForwardProblem, conjugate: bool = False) -> StokesOperator:
    coef = prob.modulus()
    if conjugate:
        coef = coef.conj()
    c_ref = abs(prob.material.background_modulus(prob.omega))
    return StokesOperator(prob.grid, coef, prob.omega, prob.rho, prob.beta, c_ref, prob.tol)


def solve_forward(prob: ForwardProblem) -> ForwardSolution:
    """Solve the viscoelastic Stokes problem ``(u, p)`` for ``prob``."""
    return build_operator(prob).forward(prob.g, prob.body_force)


def solve_adjoint(prob: ForwardProblem, residual: VectorField) -> ForwardSolution:
    """Adjoint field ``(v, q)``: coefficient ``mu - i omega eta``, source ``residual``, ``v = 0`` on Gamma_D."""
    if not residual.grid.same_geometry(prob.grid):
        raise ValueError("residual grid differs from problem grid")
    return build_operator(prob).adjoint(residual)


def solve_adjoint_direct(prob: ForwardProblem, residual: VectorField) -> ForwardSolution:
    """Same as ``solve_adjoint`` but assembles the conjugated operator explicitly.

    Independent of the factorization reuse in ``StokesOperator.adjoint``; used
    to cross-check it.
    """
    op = build_operator(prob, conjugate=True)
    n = op.n
    w = op.space.lumped
    r = residual.values
    rhs = np.zeros(op.size, dtype=complex)
    rhs[:n] = -w * r[..., 0].ravel()
    rhs[n:2 * n] = -w * r[..., 1].ravel()
    _, rhs = linalg.apply_constraints(op.A, rhs, ConstraintSet(op.constrained, np.zeros(op.constrained.size)))
    x, rep = op._solve(rhs)
    v, q = op.split(x)
    return ForwardSolution(v, q, rep, 0.0)


# --- Poisson ---------------------------------------------------------------------

_NORMALS = {"bottom": (0.0, -1.0), "top": (0.0, 1.0), "left": (-1.0, 0.0), "right": (1.0, 0.0)}


def solve_poisson_vector(rhs: VectorField, bc: str = "dirichlet", flux: TensorField | None = None,
                         tol: float = 1e-10) -> VectorField:
    """Componentwise ``Laplace f_j = rhs_j``.

    ``bc="dirichlet"`` imposes ``f = 0`` on the whole boundary.
    ``bc="neumann"`` imposes ``grad f_j . n = (flux n)_j``; the right-hand
    side is shifted by a constant so the pair is compatible and the returned
    components have zero (trapezoid) mean.
    """
    grid = rhs.grid
    if flux is not None and not flux.grid.same_geometry(grid):
        raise ValueError("flux grid differs from rhs grid")
    normal = None
    if flux is not None:
        normal = lambda j, nrm: flux.apply_normal(nrm).values[..., j]  # noqa: E731
    cols = _poisson(grid, [rhs.values[..., j] for j in range(2)], bc, normal, tol)
    return VectorField(grid, np.stack(cols, axis=-1))


def solve_poisson_scalar(rhs: ScalarField, bc: str = "dirichlet", flux: VectorField | None = None,
                         tol: float = 1e-10) -> ScalarField:
    """``Laplace s = rhs`` with ``s = 0`` or ``grad s . n = flux . n`` on the boundary."""
    grid = rhs.grid
    if flux is not None and not flux.grid.same_geometry(grid):
        raise ValueError("flux grid differs from rhs grid")
    normal = None
    if flux is not None:
        normal = lambda j, nrm: flux.values @ np.asarray(nrm)  # noqa: E731
    return ScalarField(grid, _poisson(grid, [rhs.values], bc, normal, tol)[0])


def gradient_projection(q: VectorField, tol: float = 1e-10) -> ScalarField:
    """Zero-mean ``p`` minimizing ``int |grad p - q|^2`` (the gradient part of ``q``).

    Weak form ``int grad p . grad phi = int q . grad phi`` on the Q1 space.
    """
    grid = q.grid
    sp_ = q1_space(grid.with_sides(()))
    K = sp_.stiffness.astype(complex)
    pin = ConstraintSet(np.array([(grid.nx // 2) * grid.ny + grid.ny // 2]), np.zeros(1))
    Kc, _ = linalg.apply_constraints(K, np.zeros(sp_.n), pin)
    load = sp_.div_x.T @ q.values[..., 0].ravel() + sp_.div_y.T @ q.values[..., 1].ravel()
    _, load = linalg.apply_constraints(K, load, pin)
    x = _checked(_factor(Kc), load, tol)
    x = x - (sp_.lumped @ x) / sp_.lumped.sum()
    return ScalarField(grid, x.reshape(grid.shape))


def _poisson(grid: Grid, rhs_list, bc: str, normal_flux, tol: float) -> list[np.ndarray]:
    sp_ = q1_space(grid.with_sides(()))
    K = sp_.stiffness.astype(complex)
    n = sp_.n
    out = []
    mass = 0.5 * sp_.mass + sp.diags(0.5 * sp_.lumped)
    if bc == "dirichlet":
        bnodes = np.flatnonzero(grid.boundary_mask().ravel())
        cons = ConstraintSet(bnodes, np.zeros(bnodes.size))
        Kc, _ = linalg.apply_constraints(K, np.zeros(n), cons)
        lu = _factor(Kc)
        for r in rhs_list:
            load = -(mass @ np.ravel(r))
            _, b = linalg.apply_constraints(K, load, cons)
            out.append(_checked(lu, b, tol).reshape(grid.shape))
    elif bc == "neumann":
        w = sp_.lumped
        area = w.sum()
        # compatible data: dropping one equation and fixing one value is exact up to the mean shift
        pin = ConstraintSet(np.array([(grid.nx // 2) * grid.ny + grid.ny // 2]), np.zeros(1))
        Kc, _ = linalg.apply_constraints(K, np.zeros(n), pin)
        lu = _factor(Kc)
        for j, r in enumerate(rhs_list):
            r = np.ravel(r)
            bflux = np.zeros(n, dtype=complex)
            if normal_flux is not None:
                for side, nrm in _NORMALS.items():
                    bflux += sp_.edge_load(normal_flux(j, nrm), side)
            kappa = (bflux.sum() - mass.dot(r).sum()) / area
            load = -(mass @ (r + kappa)) + bflux
            _, load = linalg.apply_constraints(K, load, pin)
            x = _checked(lu, load, tol)
            x = x - (w @ x) / area
            out.append(x.reshape(grid.shape))
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    return out


def _factor(A) -> Factorization:
    try:
        return Factorization(A)
    except LinearSolveError as exc:
        raise SolverError(f"Poisson factorization failed: {exc}") from exc


def _checked(lu: Factorization, b, tol):
    if not np.any(b):
        return np.zeros_like(b, dtype=complex)
    x, rep = lu.solve(b, tol=tol, max_iter=3)
    if not rep.converged:
        raise SolverError(f"Poisson solve residual {rep.relative_residual:.2e}", rep)
    return x
