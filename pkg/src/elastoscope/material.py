from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid, ScalarField


class MaterialError(ValueError):
    pass


def default_bounds(mu0: float, eta0: float, peak: float | None = None) -> tuple[float, float]:
    """Box bounds ``(c1, c2)``: 5% of the smaller background value and 20x the largest modulus."""
    top = max(mu0, eta0) if peak is None else max(mu0, eta0, peak)
    return 0.05 * min(mu0, eta0), 20.0 * top


@dataclass(frozen=True)
class MaterialMap:
    """Shear modulus ``mu`` and shear viscosity ``eta`` sampled on grid nodes.

    Outside ``interior_mask`` both fields equal the known background
    ``(mu0, eta0)`` exactly; inside they lie strictly between ``c1`` and ``c2``.
    """

    grid: Grid
    mu: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    mu0: float
    eta0: float
    interior_mask: np.ndarray = field(repr=False)
    c1: float
    c2: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        eta = np.array(self.eta, dtype=float)
        mask = np.array(self.interior_mask, dtype=bool)
        for name, a in (("mu", mu), ("eta", eta), ("interior_mask", mask)):
            if a.shape != self.grid.shape:
                raise MaterialError(f"{name} has shape {a.shape}, grid is {self.grid.shape}")
        if not (0 <= self.c1 < self.c2):
            raise MaterialError(f"invalid bounds c1={self.c1}, c2={self.c2}")
        if not (self.c1 < self.mu0 < self.c2 and self.c1 < self.eta0 < self.c2):
            raise MaterialError("background outside (c1, c2)")
        out = ~mask
        if np.any(mu[out] != self.mu0) or np.any(eta[out] != self.eta0):
            raise MaterialError("material differs from background outside the interior region")
        for name, a in (("mu", mu), ("eta", eta)):
            if not np.all(np.isfinite(a)):
                raise MaterialError(f"{name} has non-finite values")
            if np.any(a[mask] <= self.c1) or np.any(a[mask] >= self.c2):
                raise MaterialError(f"{name} violates the box ({self.c1}, {self.c2}) on the interior region")
        for a in (mu, eta, mask):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "interior_mask", mask)

    @classmethod
    def homogeneous(cls, grid: Grid, mu0: float, eta0: float, margin: float = 1.0,
                    c1: float | None = None, c2: float | None = None) -> "MaterialMap":
        d1, d2 = default_bounds(mu0, eta0)
        return cls(grid, np.full(grid.shape, mu0), np.full(grid.shape, eta0), mu0, eta0,
                   grid.interior_mask(margin), d1 if c1 is None else c1, d2 if c2 is None else c2)

    def modulus(self, omega: float) -> np.ndarray:
        """Complex shear modulus ``mu + i omega eta`` per node."""
        return self.mu + 1j * omega * self.eta

    def modulus_field(self, omega: float) -> ScalarField:
        return ScalarField(self.grid, self.modulus(omega))

    def background_modulus(self, omega: float) -> complex:
        return complex(self.mu0, omega * self.eta0)

    def project(self, mu, eta) -> tuple[np.ndarray, np.ndarray]:
        """Clip into the open box on the interior region and restore the background outside."""
        lo = self.c1 + 1e-9 * (self.c2 - self.c1)
        hi = self.c2 - 1e-9 * (self.c2 - self.c1)
        mu = np.where(self.interior_mask, np.clip(mu, lo, hi), self.mu0)
        eta = np.where(self.interior_mask, np.clip(eta, lo, hi), self.eta0)
        return mu, eta

    def replace(self, mu=None, eta=None, *, project: bool = True) -> "MaterialMap":
        mu = self.mu if mu is None else np.asarray(mu, dtype=float)
        eta = self.eta if eta is None else np.asarray(eta, dtype=float)
        if project:
            mu, eta = self.project(mu, eta)
        return MaterialMap(self.grid, mu, eta, self.mu0, self.eta0, self.interior_mask, self.c1, self.c2)

    def with_bounds(self, c1: float, c2: float) -> "MaterialMap":
        return MaterialMap(self.grid, self.mu, self.eta, self.mu0, self.eta0, self.interior_mask, c1, c2)

    def with_mask(self, mask: np.ndarray) -> "MaterialMap":
        """Shrink the unknown region to ``mask & interior_mask``; values outside revert to background."""
        mask = np.asarray(mask, dtype=bool) & self.interior_mask
        mu = np.where(mask, self.mu, self.mu0)
        eta = np.where(mask, self.eta, self.eta0)
        return MaterialMap(self.grid, mu, eta, self.mu0, self.eta0, mask, self.c1, self.c2)

    def restrict(self, i0: int, i1: int, j0: int, j1: int, grid: Grid) -> "MaterialMap":
        s = (slice(i0, i1 + 1), slice(j0, j1 + 1))
        return MaterialMap(grid, self.mu[s], self.eta[s], self.mu0, self.eta0,
                           self.interior_mask[s], self.c1, self.c2)
