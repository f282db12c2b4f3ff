"""Piecewise-constant viscoelastic phantoms, synthetic data, noise and error metrics.

The numeric values are chosen for this toolkit: a background shear modulus of
4e4 dyn/cm^2 with rho = 1 gives a shear speed of 200 cm/s, i.e. a wavelength of
about 2.86 cm at 70 Hz, and the background loss ratio omega*eta/mu is 0.15 at
that frequency.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import Grid, VectorField
from .material import MaterialMap, default_bounds
from .pde import ForwardProblem, ForwardSolution, solve_forward

MU_BG = 4.0e4
DRIVE_HZ = 70.0
ETA_BG = 0.15 * MU_BG / (2 * math.pi * DRIVE_HZ)
MARGIN = 1.0


@dataclass(frozen=True)
class Inclusion:
    shape: str
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    mu: float
    eta: float

    def contains(self, X, Y) -> np.ndarray:
        a, b = self.semi_axes
        return ((X - self.center[0]) / a) ** 2 + ((Y - self.center[1]) / b) ** 2 <= 1.0

    @property
    def area(self) -> float:
        return math.pi * self.semi_axes[0] * self.semi_axes[1]


@dataclass(frozen=True)
class Phantom:
    id: str
    mu_bg: float
    eta_bg: float
    inclusions: tuple[Inclusion, ...] = ()
    margin: float = MARGIN

    def sample(self, grid: Grid) -> MaterialMap:
        X, Y = grid.mesh()
        mu = np.full(grid.shape, self.mu_bg)
        eta = np.full(grid.shape, self.eta_bg)
        for inc in self.inclusions:
            inside = inc.contains(X, Y)
            mu[inside] = inc.mu
            eta[inside] = inc.eta
        peak = max([self.mu_bg] + [i.mu for i in self.inclusions] + [i.eta for i in self.inclusions])
        c1, c2 = default_bounds(self.mu_bg, self.eta_bg, peak)
        mask = grid.interior_mask(self.margin)
        if np.any((mu != self.mu_bg) & ~mask):
            raise ValueError(f"phantom {self.id} has inclusions outside the interior region")
        return MaterialMap(grid, mu, eta, self.mu_bg, self.eta_bg, mask, c1, c2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inclusions"] = [asdict(i) for i in self.inclusions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Phantom":
        incs = tuple(
            Inclusion(i["shape"], tuple(i["center"]), tuple(i["semi_axes"]), float(i["mu"]), float(i["eta"]))
            for i in d.get("inclusions", [])
        )
        return cls(d["id"], float(d["mu_bg"]), float(d["eta_bg"]), incs, float(d.get("margin", MARGIN)))


def _circle(cx, cy, r, mu_factor, eta_factor):
    return Inclusion("circle", (cx, cy), (r, r), mu_factor * MU_BG, eta_factor * ETA_BG)


def _ellipse(cx, cy, a, b, mu_factor, eta_factor):
    return Inclusion("ellipse", (cx, cy), (a, b), mu_factor * MU_BG, eta_factor * ETA_BG)


CATALOG: dict[str, Phantom] = {
    "homogeneous": Phantom("homogeneous", MU_BG, ETA_BG),
    "model1": Phantom("model1", MU_BG, ETA_BG, (_circle(5.0, 5.0, 1.5, 3.0, 2.0),)),
    "model2": Phantom("model2", MU_BG, ETA_BG, (
        _circle(3.5, 6.0, 1.2, 2.0, 1.5),
        _circle(6.5, 3.8, 1.0, 4.0, 3.0),
    )),
    "model3": Phantom("model3", MU_BG, ETA_BG, (
        _ellipse(3.4, 5.0, 1.5, 0.8, 2.5, 1.5),
        _ellipse(6.6, 5.0, 0.8, 1.6, 1.5, 3.0),
    )),
}


def get_phantom(pid: str) -> Phantom:
    try:
        return CATALOG[pid]
    except KeyError:
        raise ValueError(f"unknown phantom id {pid!r}; choose from {sorted(CATALOG)}") from None


def build_phantom(pid: str, grid: Grid) -> MaterialMap:
    return get_phantom(pid).sample(grid)


def save_catalog(path, catalog: dict[str, Phantom] | None = None) -> None:
    catalog = CATALOG if catalog is None else catalog
    with open(path, "w") as fh:
        json.dump({k: v.to_dict() for k, v in catalog.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_catalog(path) -> dict[str, Phantom]:
    with open(path) as fh:
        raw = json.load(fh)
    return {k: Phantom.from_dict(v) for k, v in raw.items()}


# --- synthetic data ---------------------------------------------------------------


@dataclass(frozen=True)
class Drive:
    """Excitation: ``g`` on the Dirichlet sides, traction-free elsewhere."""

    frequency: float = DRIVE_HZ
    rho: float = 1.0
    g: tuple[float, float] = (0.3, 0.3)
    dirichlet_sides: tuple[str, ...] = ("bottom",)
    beta: float = 0.1
    tol: float = 1e-10

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.frequency

    def problem(self, material: MaterialMap) -> ForwardProblem:
        grid = material.grid.with_sides(self.dirichlet_sides)
        material = MaterialMap(grid, material.mu, material.eta, material.mu0, material.eta0,
                               material.interior_mask, material.c1, material.c2)
        return ForwardProblem(grid, material, self.omega, self.rho, VectorField.constant(grid, self.g),
                              beta=self.beta, tol=self.tol)


def refine_grid(grid: Grid, factor: int) -> Grid:
    return Grid((grid.nx - 1) * factor + 1, (grid.ny - 1) * factor + 1, grid.lx, grid.ly,
                grid.x0, grid.y0, grid.dirichlet_sides)


def generate_data(phantom: Phantom | MaterialMap, grid: Grid | None = None, drive: Drive = Drive(),
                  refine: int = 1, return_solution: bool = False):
    """Simulated displacement ``u_m`` on ``grid``.

    With a ``Phantom`` and ``refine > 1`` the forward problem is solved on a
    grid ``refine`` times finer and restricted to the coarse nodes.
    """
    if isinstance(phantom, MaterialMap):
        if refine != 1:
            raise ValueError("refinement needs a Phantom description, not a sampled map")
        material = phantom
        grid = material.grid if grid is None else grid
    else:
        if grid is None:
            raise ValueError("grid required when generating from a Phantom")
        material = phantom.sample(refine_grid(grid, refine))
    sol = solve_forward(drive.problem(material))
    u = sol.u.values[::refine, ::refine]
    out = VectorField(grid.with_sides(drive.dirichlet_sides), u)
    return (out, sol) if return_solution else out


# --- noise ------------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    region: np.ndarray | None = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.level < 1):
            raise ValueError("noise level must lie in [0, 1)")


def add_noise(u_m: VectorField, spec: NoiseSpec) -> VectorField:
    """Add complex white noise scaled to ``level`` times the data RMS over ``region``."""
    if spec.level == 0:
        return u_m
    region = np.ones(u_m.grid.shape, dtype=bool) if spec.region is None else np.asarray(spec.region, dtype=bool)
    if region.shape != u_m.grid.shape:
        raise ValueError("noise region does not match the grid")
    rng = np.random.default_rng(spec.seed)
    rms = np.sqrt(np.mean(np.abs(u_m.values[region]) ** 2))
    z = (rng.standard_normal(u_m.values.shape) + 1j * rng.standard_normal(u_m.values.shape)) / np.sqrt(2)
    v = u_m.values.copy()
    v[region] += spec.level * rms * z[region]
    return VectorField(u_m.grid, v)


def quadrant_masks(grid: Grid) -> dict[str, np.ndarray]:
    """Node masks of the four quadrants.

    The top-right quadrant is open (``x > xc`` and ``y > yc``) so that the
    closed clean quadrants never share nodes with it.
    """
    X, Y = grid.mesh()
    xc = grid.x0 + grid.lx / 2
    yc = grid.y0 + grid.ly / 2
    eps = 1e-9 * max(grid.lx, grid.ly)
    right, top = X > xc + eps, Y > yc + eps
    return {
        "top_right": right & top,
        "top_left": (X <= xc + eps) & (Y >= yc - eps),
        "bottom_left": (X <= xc + eps) & (Y <= yc + eps),
        "bottom_right": (X >= xc - eps) & (Y <= yc + eps),
    }


def quadrant_bounds(grid: Grid, name: str) -> tuple[int, int, int, int]:
    """Inclusive node bounds ``(i0, i1, j0, j1)`` of a closed quadrant."""
    ic, jc = (grid.nx - 1) // 2, (grid.ny - 1) // 2
    return {
        "bottom_left": (0, ic, 0, jc),
        "bottom_right": (ic, grid.nx - 1, 0, jc),
        "top_left": (0, ic, jc, grid.ny - 1),
        "top_right": (ic, grid.nx - 1, jc, grid.ny - 1),
    }[name]


# --- metrics --------------------------------------------------------------------------------


def relative_error(rec: MaterialMap, truth: MaterialMap, region: np.ndarray | None = None) -> tuple[float, float]:
    """Discrete relative l2 errors ``(e_mu, e_eta)`` over ``region`` (default: whole grid)."""
    if rec.grid.shape != truth.grid.shape:
        raise ValueError("maps live on different grids")
    region = np.ones(truth.grid.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    out = []
    for r, t in ((rec.mu, truth.mu), (rec.eta, truth.eta)):
        nt = np.linalg.norm(t[region])
        if nt == 0:
            raise ValueError("truth has zero norm over the region")
        out.append(float(np.linalg.norm(r[region] - t[region]) / nt))
    return out[0], out[1]


def edge_response_width(image: np.ndarray, grid: Grid, center, radius: float, n_rays: int = 16,
                        inner: float = 0.5, outer: tuple[float, float] = (1.5, 2.5)) -> float:
    """Mean 10-90% rise distance (cm) across a circular inclusion boundary.

    Along each ray from ``center`` the plateau levels are the profile mean for
    ``r < inner * radius`` and for ``radius + outer[0] < r < radius + outer[1]``.
    A ray without contrast contributes the full sampled ray length.
    """
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator((grid.x, grid.y), np.asarray(image, dtype=float), bounds_error=False,
                                     fill_value=None)
    r = np.linspace(0.0, radius + outer[1], 400)
    widths = []
    for th in np.linspace(0, 2 * np.pi, n_rays, endpoint=False):
        pts = np.stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)], axis=1)
        prof = interp(pts)
        hi = prof[r < inner * radius].mean()
        lo = prof[(r > radius + outer[0]) & (r < radius + outer[1])].mean()
        span = hi - lo
        if span <= 0:
            widths.append(r[-1])
            continue
        level = (prof - lo) / span
        # outermost point still above 90%, first point beyond it below 10%
        above = np.flatnonzero(level >= 0.9)
        start = above[above < np.searchsorted(r, radius + outer[0])]
        if start.size == 0:
            widths.append(r[-1])
            continue
        k90 = start.max()
        below = np.flatnonzero(level[k90:] <= 0.1)
        if below.size == 0:
            widths.append(r[-1])
            continue
        k10 = k90 + below[0]
        widths.append(r[k10] - r[k90])
    return float(np.mean(widths))
