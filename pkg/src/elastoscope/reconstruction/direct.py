"""Non-iterative modulus estimates used as initial guesses.

``algebraic_inversion`` is the pointwise Helmholtz-type ratio that assumes
local homogeneity.  ``hybrid_initial_guess`` splits the stress-like field
``c sym_grad u`` columnwise into a gradient part ``grad f_j`` and a rotational
part ``curl W_j`` and recovers ``c`` by contracting both with ``sym_grad u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fields import (
    ScalarField,
    TensorField,
    VectorField,
    curl2d_scalar,
    curl2d_vector,
    gradient,
    laplacian,
    sym_gradient,
    tensor_contract,
)
from ..material import MaterialMap
from ..pde import gradient_projection, solve_poisson_vector


@dataclass
class DivisionLog:
    """Records, for every masked division, the smallest denominator actually used and its floor."""

    entries: list = field(default_factory=list)

    def record(self, name: str, used_min: float, threshold: float) -> None:
        self.entries.append((name, used_min, threshold))

    def safe(self) -> bool:
        return all(used >= thr for _, used, thr in self.entries)


def _masked_ratio(num: np.ndarray, den: np.ndarray, den_size: np.ndarray, floor: float,
                  fill: complex, name: str, log: DivisionLog | None,
                  negligible: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """``num / den`` where ``den_size >= floor * max(den_size)``, ``fill`` elsewhere.

    ``negligible`` is an absolute level (round-off of the denominator) below
    which nothing is divided, whatever the relative floor says.
    """
    peak = float(den_size.max())
    thr = max(floor * peak, negligible)
    keep = (den_size >= thr) & (den_size > 0)
    out = np.full(den.shape, fill, dtype=complex)
    out[keep] = num[keep] / den[keep]
    if log is not None and keep.any():
        log.record(name, float(den_size[keep].min()), thr)
    return out, keep


def algebraic_inversion(u_m: VectorField, a=(1.0, 0.0), omega: float = 1.0, rho: float = 1.0,
                        floor: float = 1e-3, background: complex = 0.0,
                        log: DivisionLog | None = None) -> ScalarField:
    """Pointwise ``-rho omega^2 (a.u) / Laplace(a.u)``.

    Nodes where ``|Laplace(a.u)|`` falls below ``floor`` times its maximum get
    ``background``.  Invariant under complex scaling of ``u_m``.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (2,) or not np.any(a):
        raise ValueError("direction vector a must be a non-zero 2-vector")
    if floor <= 0:
        raise ValueError("floor must be positive")
    s = ScalarField(u_m.grid, u_m.values @ a)
    lap = laplacian(s).values
    h = min(u_m.grid.hx, u_m.grid.hy)
    negligible = 1e-10 * float(np.abs(s.values).max()) / h**2
    out, _ = _masked_ratio(-rho * omega**2 * s.values, lap, np.abs(lap), floor, background, "laplacian", log,
                           negligible)
    return ScalarField(u_m.grid, out)


def _grad_matrix(f: VectorField) -> TensorField:
    """Symmetric part of the matrix whose j-th column is ``grad f_j``."""
    g = f.grid
    m = np.empty(g.shape + (2, 2), dtype=complex)
    for j in range(2):
        m[..., :, j] = gradient(f.component(j)).values
    return TensorField.from_matrix(g, m)


def _curl_matrix(W: VectorField) -> TensorField:
    """Symmetric part of the matrix whose j-th column is ``curl W_j``."""
    g = W.grid
    m = np.empty(g.shape + (2, 2), dtype=complex)
    for j in range(2):
        m[..., :, j] = curl2d_scalar(W.component(j)).values
    return TensorField.from_matrix(g, m)


def rotational_potential(F: TensorField) -> VectorField:
    """``W`` with ``Laplace W_j = -curl F_j`` and ``W = 0`` on the boundary.

    With the 2D curl pair used here, ``curl(curl w) = -Laplace w``, so this is
    the rotational potential of the columnwise decomposition
    ``F_j = grad f_j + curl W_j``.
    """
    g = F.grid
    rhs = np.stack([-curl2d_vector(F.column(j)).values for j in range(2)], axis=-1)
    return solve_poisson_vector(VectorField(g, rhs), "dirichlet")


def estimate_pressure_gradient(u_m: VectorField, c, omega: float, rho: float) -> VectorField:
    """Gradient part of ``-(rho omega^2 u_m + c Laplace u_m + 2 sym_grad(u_m) grad c)``.

    For divergence-free ``u_m`` the bracket equals ``2 div(c sym_grad u_m)``,
    so where ``c`` is the true coefficient the residual is ``grad p`` of the
    Stokes system exactly.  Projecting it onto gradients gives a pressure
    estimate that needs no boundary values.
    """
    grid = u_m.grid
    c = c.values if isinstance(c, ScalarField) else np.broadcast_to(np.asarray(c, dtype=complex), grid.shape)
    lap = np.stack([laplacian(u_m.component(j)).values for j in range(2)], axis=-1)
    gc = gradient(ScalarField(grid, c)).values
    Em = sym_gradient(u_m).matrix()
    q = -(rho * omega**2 * u_m.values + c[..., None] * lap + 2.0 * np.einsum("...ij,...j->...i", Em, gc))
    return gradient(gradient_projection(VectorField(grid, q)))


@dataclass
class HybridParts:
    """Intermediate fields of one hybrid pass, kept for inspection."""

    f: VectorField
    gradient_term: ScalarField
    rotational_term: ScalarField
    algebraic: ScalarField
    mask: np.ndarray
    pressure_gradient: VectorField | None = None


def hybrid_initial_guess(u_m: VectorField, omega: float, rho: float, mu0: float, eta0: float,
                         a=(1.0, 0.0), floor: float = 1e-3, passes: int = 1, pressure: str = "estimate",
                         update_pressure: bool = False, log: DivisionLog | None = None, parts: list | None = None) -> ScalarField:
    """Hybrid one-step estimate of ``mu + i omega eta`` from interior data.

    The gradient potential solves ``Laplace f = -(rho omega^2 u_m + grad p) / 2``
    with Neumann data ``(mu0 + i omega eta0) sym_grad u_m n``.  With
    ``pressure="ignore"`` the pressure term is dropped; with ``"estimate"`` it
    comes from ``estimate_pressure_gradient`` using the background modulus
    (and, with ``update_pressure``, the previous estimate on later passes).
    Two rotational potentials are computed from ``c sym_grad u_m`` with ``c``
    taken from the gradient term alone and from the algebraic inversion, and
    their average enters the final contraction.  Each extra pass recomputes
    the rotational potential from the previous estimate.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    if pressure not in ("estimate", "ignore"):
        raise ValueError(f"pressure must be 'estimate' or 'ignore', not {pressure!r}")
    if passes < 1:
        raise ValueError("passes must be at least 1")
    grid = u_m.grid
    c0 = complex(mu0, omega * eta0)
    E = sym_gradient(u_m)
    Ebar = E.conj()
    e2 = tensor_contract(E, Ebar).values.real
    # squared strain below this is round-off of a strain-free field
    e2_negligible = (1e-10 * float(np.abs(u_m.values).max()) / min(grid.hx, grid.hy)) ** 2
    c_alg = algebraic_inversion(u_m, a, omega, rho, floor, c0, log).values

    estimate = np.full(grid.shape, c0)
    gp = None
    for k in range(passes):
        rhs = -0.5 * rho * omega**2 * u_m.values
        if pressure == "estimate":
            if gp is None or update_pressure:
                gp = estimate_pressure_gradient(u_m, estimate, omega, rho)
            rhs = rhs - 0.5 * gp.values
        f = solve_poisson_vector(VectorField(grid, rhs), "neumann", flux=E * c0)
        num_f = tensor_contract(_grad_matrix(f), Ebar).values
        term_f, keep = _masked_ratio(num_f, e2, e2, floor, 0.0, "strain", log, e2_negligible)
        if k == 0:
            c_grad = np.where(keep, term_f, c0)
            W = 0.5 * (rotational_potential(E * ScalarField(grid, c_grad)).values
                       + rotational_potential(E * ScalarField(grid, c_alg)).values)
        else:
            W = rotational_potential(E * ScalarField(grid, estimate)).values
        num_w = tensor_contract(_curl_matrix(VectorField(grid, W)), Ebar).values
        term_w, _ = _masked_ratio(num_w, e2, e2, floor, 0.0, "strain", log, e2_negligible)
        estimate = np.where(keep, term_f + term_w, c0)
        if parts is not None:
            parts.append(HybridParts(f, ScalarField(grid, term_f), ScalarField(grid, term_w),
                                     ScalarField(grid, c_alg), keep, gp))
    return ScalarField(grid, estimate)


def material_from_modulus(c: ScalarField | np.ndarray, omega: float, template: MaterialMap) -> MaterialMap:
    """Split ``mu + i omega eta`` into a feasible ``MaterialMap`` shaped like ``template``.

    Real and imaginary parts are clipped into the open box ``(c1, c2)`` on the
    interior region; the background is kept elsewhere.
    """
    c = c.values if isinstance(c, ScalarField) else np.asarray(c)
    return template.replace(c.real, c.imag / omega, project=True)
