"""Misfit, adjoint gradient and projected gradient descent for ``(mu, eta)``.

The misfit is ``J = 1/2 sum_n w_n |u_n - u_m,n|^2`` with trapezoid weights
``w``.  For a nodal perturbation ``dc = dmu + i omega deta`` the exact discrete
derivative is ``Re sum_n G_n dc_n`` with ``G_n = int phi_n 2 eps(u):eps(conj v)``,
where ``v`` solves the conjugate-coefficient adjoint problem.  Gradient
densities are ``Re G / w`` and ``Re(i omega G) / w`` so that the weighted sum
``sum w (d_mu dmu + d_eta deta)`` reproduces the directional derivative.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..fem import q1_space
from ..fields import Grid, ScalarField, VectorField
from ..material import MaterialMap
from ..pde import CompatibilityWarning, ForwardProblem, StokesOperator, build_operator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientPair:
    d_mu: np.ndarray
    d_eta: np.ndarray

    def dot(self, dmu, deta, weights) -> float:
        """Weighted pairing ``sum w (d_mu dmu + d_eta deta)``."""
        return float(np.sum(weights * (self.d_mu * dmu + self.d_eta * deta)))


def misfit(u: VectorField, u_m: VectorField, weights: np.ndarray | None = None) -> float:
    w = u.grid.trapezoid_weights() if weights is None else weights
    return 0.5 * float(np.sum(w[..., None] * np.abs(u.values - u_m.values) ** 2))


def frechet_gradient(u0: VectorField, v: VectorField, omega: float,
                     interior_mask: np.ndarray | None = None) -> GradientPair:
    """Gradient densities ``Re[2 eps(u0):eps(conj v)]`` and ``Re[2 i omega eps(u0):eps(conj v)]``."""
    grid = u0.grid
    space = q1_space(grid)
    uvec = np.concatenate([u0.values[..., 0].ravel(), u0.values[..., 1].ravel()])
    vvec = np.concatenate([v.values[..., 0].ravel(), v.values[..., 1].ravel()]).conj()
    G = (space.strain_density(uvec, vvec) / space.lumped).reshape(grid.shape)
    d_mu = G.real
    d_eta = (1j * omega * G).real
    if interior_mask is not None:
        d_mu = np.where(interior_mask, d_mu, 0.0)
        d_eta = np.where(interior_mask, d_eta, 0.0)
    return GradientPair(d_mu, d_eta)


class MisfitModel:
    """Evaluates ``J`` and its gradient for materials on a fixed problem template.

    ``problem`` supplies grid, boundary partition, frequency, density,
    boundary data and stabilization; its material is only used for the
    stabilization scale.
    """

    def __init__(self, problem: ForwardProblem, u_m: VectorField):
        if not u_m.grid.same_geometry(problem.grid):
            raise ValueError("data grid differs from problem grid")
        self.problem = problem
        self.u_m = u_m
        self.weights = problem.grid.trapezoid_weights()
        self.c_ref = abs(problem.material.background_modulus(problem.omega))
        self.n_solves = 0
        self.flux_defect = 0.0

    def _operator(self, material: MaterialMap) -> StokesOperator:
        p = self.problem
        self.n_solves += 1
        return StokesOperator(p.grid, material.modulus(p.omega), p.omega, p.rho, p.beta, self.c_ref, p.tol)

    def state(self, material: MaterialMap):
        op = self._operator(material)
        with warnings.catch_warnings():
            # the defect is recorded on the model instead
            warnings.simplefilter("ignore", CompatibilityWarning)
            sol = op.forward(self.problem.g)
        self.flux_defect = max(self.flux_defect, sol.flux_defect)
        return misfit(sol.u, self.u_m, self.weights), sol.u, op

    def value(self, material: MaterialMap) -> float:
        return self.state(material)[0]

    def value_and_gradient(self, material: MaterialMap):
        J, u, op = self.state(material)
        adj = op.adjoint(u - self.u_m, self.weights)
        grad = frechet_gradient(u, adj.u, self.problem.omega, material.interior_mask)
        return J, grad, u


# --- settings and trace ---------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSettings:
    """Projected steepest descent with Armijo backtracking.

    The descent direction is the gradient in variables scaled by the
    background values ``(mu0, eta0)``, optionally Gaussian-smoothed, and
    normalized so that a unit step changes no node by more than
    ``step_fraction`` of its background value.
    """

    epsilon: float = 1e-4
    max_iter: int = 200
    armijo_c: float = 1e-4
    shrink: float = 0.5
    delta_init: float = 1.0
    delta_min: float = 1e-12
    smoothing_sigma: float = 1.0
    step_fraction: float = 0.1
    misfit_rtol: float = 1e-12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if not (0 < self.shrink < 1):
            raise ValueError("shrink must lie in (0, 1)")
        if not (0 < self.delta_min <= self.delta_init):
            raise ValueError("need 0 < delta_min <= delta_init")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be non-negative")


TRACE_COLUMNS = ("iter", "J", "delta", "dmu_norm", "deta_norm", "err_mu", "err_eta")


@dataclass
class IterationRecord:
    iter: int
    J: float
    delta: float
    dmu_norm: float
    deta_norm: float
    err_mu: float = math.nan
    err_eta: float = math.nan


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    warnings: list[str] = field(default_factory=list)
    smoothing_sigma: float = 0.0
    n_solves: int = 0
    wall_time: float = 0.0

    @property
    def accepted(self) -> int:
        return max(0, len(self.records) - 1)

    @property
    def misfits(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    def is_monotone(self) -> bool:
        J = self.misfits
        return bool(np.all(np.diff(J) <= 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.iter] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _smooth(a: np.ndarray, sigma: float, mask: np.ndarray) -> np.ndarray:
    a = np.where(mask, a, 0.0)
    if sigma > 0:
        a = gaussian_filter(a, sigma, mode="constant")
    return np.where(mask, a, 0.0)


def _rel_change(new, old, mask) -> float:
    d = np.linalg.norm((new - old)[mask])
    n = np.linalg.norm(old[mask])
    return float(d / n) if n > 0 else float(d)


def _errors(material: MaterialMap, truth: MaterialMap | None, region) -> tuple[float, float]:
    if truth is None:
        return math.nan, math.nan
    from ..phantoms import relative_error

    return relative_error(material, truth, region)


def descend(model: MisfitModel, init: MaterialMap, settings: OptimizerSettings = OptimizerSettings(),
            truth: MaterialMap | None = None, error_region: np.ndarray | None = None,
            trace: IterationTrace | None = None) -> tuple[MaterialMap, IterationTrace]:
    """Projected gradient descent on ``model`` starting from ``init``."""
    t0 = time.perf_counter()
    trace = IterationTrace(smoothing_sigma=settings.smoothing_sigma) if trace is None else trace
    trace.smoothing_sigma = settings.smoothing_sigma
    mask = init.interior_mask
    if error_region is None and truth is not None:
        error_region = truth.interior_mask
    w = model.weights
    s_mu, s_eta = init.mu0, init.eta0
    data_scale = misfit(model.u_m, VectorField.zeros(model.u_m.grid), w)

    cur = init
    J, grad, _ = model.value_and_gradient(cur)
    trace.records.append(IterationRecord(0, J, 0.0, 0.0, 0.0, *_errors(cur, truth, error_region)))
    status = "max_iter"
    for it in range(1, settings.max_iter + 1):
        if J <= settings.misfit_rtol * data_scale:
            status = "misfit_below_tolerance"
            break
        dmu = -(s_mu**2) * _smooth(grad.d_mu, settings.smoothing_sigma, mask)
        deta = -(s_eta**2) * _smooth(grad.d_eta, settings.smoothing_sigma, mask)
        if grad.dot(dmu, deta, w) >= 0:
            # smoothing destroyed descent; fall back to the raw scaled gradient
            dmu, deta = -(s_mu**2) * grad.d_mu, -(s_eta**2) * grad.d_eta
        size = max(np.abs(dmu).max() / s_mu, np.abs(deta).max() / s_eta)
        if not size > 0:
            status = "zero_gradient"
            break
        dmu *= settings.step_fraction / size
        deta *= settings.step_fraction / size

        delta = settings.delta_init
        accepted = None
        while delta >= settings.delta_min:
            trial = cur.replace(cur.mu + delta * dmu, cur.eta + delta * deta)
            slope = grad.dot(trial.mu - cur.mu, trial.eta - cur.eta, w)
            if slope < 0:
                Jt = model.value(trial)
                if Jt <= J + settings.armijo_c * slope:
                    accepted = (trial, Jt)
                    break
            delta *= settings.shrink
        if accepted is None:
            status = "line_search_failed"
            break
        new, _ = accepted
        rmu = _rel_change(new.mu, cur.mu, mask)
        reta = _rel_change(new.eta, cur.eta, mask)
        cur = new
        J, grad, _ = model.value_and_gradient(cur)
        trace.records.append(IterationRecord(it, J, delta, rmu, reta, *_errors(cur, truth, error_region)))
        logger.debug("iter %d J=%.6e delta=%.3e dmu=%.2e deta=%.2e", it, J, delta, rmu, reta)
        if rmu <= settings.epsilon and reta <= settings.epsilon:
            status = "converged"
            break
    trace.status = status
    trace.n_solves += model.n_solves
    trace.wall_time += time.perf_counter() - t0
    if model.flux_defect > 1e-6:
        trace.warnings.append(f"boundary trace net flux {model.flux_defect:.3e} projected out")
    return cur, trace


def reconstruct(u_m: VectorField, init: MaterialMap, problem: ForwardProblem,
                settings: OptimizerSettings = OptimizerSettings(), truth: MaterialMap | None = None,
                error_region: np.ndarray | None = None) -> tuple[MaterialMap, IterationTrace]:
    """Global reconstruction of ``(mu, eta)`` from ``u_m`` on the whole domain."""
    model = MisfitModel(problem.with_material(init), u_m)
    return descend(model, init, settings, truth, error_region)


# --- localized problem ----------------------------------------------------------------------


@dataclass(frozen=True)
class Subdomain:
    """Inclusive node block ``[i0, i1] x [j0, j1]`` of the global grid."""

    i0: int
    i1: int
    j0: int
    j1: int

    def validate(self, grid: Grid) -> None:
        if not (0 <= self.i0 < self.i1 < grid.nx and 0 <= self.j0 < self.j1 < grid.ny):
            raise ValueError(f"subdomain {self} outside grid {grid.nx}x{grid.ny}")
        if self.i1 - self.i0 + 1 < 3 or self.j1 - self.j0 + 1 < 3:
            raise ValueError("subdomain needs at least 3 nodes per axis")

    def slices(self):
        return slice(self.i0, self.i1 + 1), slice(self.j0, self.j1 + 1)

    def mask(self, grid: Grid, interior_only: bool = True) -> np.ndarray:
        m = np.zeros(grid.shape, dtype=bool)
        if interior_only:
            m[self.i0 + 1:self.i1, self.j0 + 1:self.j1] = True
        else:
            m[self.slices()] = True
        return m


def local_problem(u_m: VectorField, sub: Subdomain, problem: ForwardProblem, material: MaterialMap):
    """All-Dirichlet problem on ``sub`` with boundary data ``u_m`` and its restricted data.

    The unknowns are the strictly interior nodes; the subdomain boundary
    carries the background modulus.
    """
    grid = problem.grid
    sub.validate(grid)
    sgrid = grid.subgrid(sub.i0, sub.i1, sub.j0, sub.j1)
    sl = sub.slices()
    um_loc = VectorField(sgrid, u_m.values[sl])
    mat_loc = material.restrict(sub.i0, sub.i1, sub.j0, sub.j1, sgrid)
    inner = np.zeros(sgrid.shape, dtype=bool)
    inner[1:-1, 1:-1] = True
    mat_loc = mat_loc.with_mask(inner)
    prob = ForwardProblem(sgrid, mat_loc, problem.omega, problem.rho, um_loc, beta=problem.beta, tol=problem.tol)
    return prob, um_loc, mat_loc


def reconstruct_local(u_m: VectorField, subdomain: Subdomain, init: MaterialMap, problem: ForwardProblem,
                      settings: OptimizerSettings = OptimizerSettings(), truth: MaterialMap | None = None,
                      ) -> tuple[MaterialMap, IterationTrace]:
    """Reconstruction restricted to ``subdomain`` with measured Dirichlet traces.

    The adjoint vanishes on the subdomain boundary.  Boundary data with a net
    flux are projected onto the compatible part and a warning is recorded.
    Only nodes strictly inside the subdomain (and inside the global interior
    region) are updated; the returned map equals ``init`` elsewhere.
    """
    prob, um_loc, mat_loc = local_problem(u_m, subdomain, problem, init)
    truth_loc = None
    if truth is not None:
        truth_loc = truth.restrict(subdomain.i0, subdomain.i1, subdomain.j0, subdomain.j1, prob.grid)
    model = MisfitModel(prob, um_loc)
    # the global background scale keeps the stabilization identical to the global problem
    model.c_ref = abs(problem.material.background_modulus(problem.omega))
    region = mat_loc.interior_mask if truth is not None else None
    local_out, trace = descend(model, mat_loc, settings, truth_loc, region)
    mu = np.array(init.mu)
    eta = np.array(init.eta)
    upd = np.zeros(init.grid.shape, dtype=bool)
    upd[subdomain.slices()] = local_out.interior_mask
    mu[subdomain.slices()] = np.where(local_out.interior_mask, local_out.mu, mu[subdomain.slices()])
    eta[subdomain.slices()] = np.where(local_out.interior_mask, local_out.eta, eta[subdomain.slices()])
    return init.replace(mu, eta, project=False), trace


def gradient_check(model: MisfitModel, material: MaterialMap, directions, t: float = 1e-4) -> np.ndarray:
    """Relative errors between adjoint and centred finite-difference directional derivatives.

    Each direction is a pair ``(dmu, deta)`` supported in the interior region.
    """
    _, grad, _ = model.value_and_gradient(material)
    w = model.weights
    # nodes sitting on the box bound must still be perturbable both ways
    material = material.with_bounds(0.0, 10.0 * material.c2)
    errs = []
    for dmu, deta in directions:
        plus = material.replace(material.mu + t * dmu, material.eta + t * deta, project=False)
        minus = material.replace(material.mu - t * dmu, material.eta - t * deta, project=False)
        fd = (model.value(plus) - model.value(minus)) / (2 * t)
        ad = grad.dot(dmu, deta, w)
        errs.append(abs(fd - ad) / max(abs(fd), abs(ad), 1e-300))
    return np.array(errs)


def random_directions(material: MaterialMap, count: int, seed: int = 0, n_bumps: int = 4,
                      width: float = 1.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Smooth random perturbations: sums of Gaussian bumps cut off outside the interior region.

    Amplitudes are scaled to 10% of the background values.
    """
    rng = np.random.default_rng(seed)
    grid = material.grid
    X, Y = grid.mesh()
    mask = material.interior_mask
    xs, ys = X[mask], Y[mask]
    out = []
    for _ in range(count):
        pair = []
        for scale in (material.mu0, material.eta0):
            f = np.zeros(grid.shape)
            for _ in range(n_bumps):
                k = rng.integers(xs.size)
                f += rng.standard_normal() * np.exp(-((X - xs[k]) ** 2 + (Y - ys[k]) ** 2) / (2 * width**2))
            f = np.where(mask, f, 0.0)
            f *= 0.1 * scale / max(np.abs(f).max(), 1e-300)
            pair.append(f)
        out.append(tuple(pair))
    return out
