"""Acceptance criteria 1-9.

Each criterion is computed by a plain function returning a ``Result``; the
tests assert on it and print one ``PASS``/``FAIL`` line.  Criterion 9 reruns
criteria 1-8 and compares the CSV artifacts byte for byte.

Run directly (``python tests/test_acceptance.py``) for the summary alone.
"""

from __future__ import annotations

import tempfile
import time
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from elastoscope.fields import Grid, ScalarField, VectorField, write_field_csv
from elastoscope.material import MaterialMap
from elastoscope.pde import CompatibilityWarning, ForwardProblem, solve_forward
from elastoscope.phantoms import (
    ETA_BG,
    MU_BG,
    Drive,
    NoiseSpec,
    add_noise,
    build_phantom,
    edge_response_width,
    generate_data,
    get_phantom,
    quadrant_bounds,
    quadrant_masks,
    relative_error,
)
from elastoscope.reconstruction import (
    MisfitModel,
    OptimizerSettings,
    Subdomain,
    algebraic_inversion,
    gradient_check,
    hybrid_initial_guess,
    local_problem,
    material_from_modulus,
    random_directions,
    reconstruct,
    reconstruct_local,
)

HYBRID_PASSES = 5
MAX_ITER = 200
CLEAN_QUADRANTS = ("bottom_left", "bottom_right", "top_left")
SUMMARY: dict[int, str] = {}


@dataclass
class Result:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    csv: dict[str, bytes] = field(default_factory=dict, repr=False)

    def line(self) -> str:
        return f"criterion {self.number} [{'PASS' if self.passed else 'FAIL'}] {self.title}: {self.detail} ({self.seconds:.1f}s)"


def _report(res: Result) -> None:
    SUMMARY[res.number] = res.line()
    print(res.line())


def _csv_bytes(f: ScalarField | VectorField) -> bytes:
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "f.csv"
        write_field_csv(f, p)
        return p.read_bytes()


def _real(grid: Grid, a) -> ScalarField:
    return ScalarField(grid, np.asarray(a, dtype=complex))


def _material_csv(prefix: str, m: MaterialMap) -> dict[str, bytes]:
    return {f"{prefix}_mu": _csv_bytes(_real(m.grid, m.mu)), f"{prefix}_eta": _csv_bytes(_real(m.grid, m.eta))}


def _hybrid_material(u_m: VectorField, drive: Drive, template: MaterialMap) -> MaterialMap:
    c = hybrid_initial_guess(u_m, drive.omega, drive.rho, MU_BG, ETA_BG, passes=HYBRID_PASSES)
    return material_from_modulus(c, drive.omega, template)


def _plane_wave(grid: Grid, k: complex, direction=(1.0, 0.0)) -> VectorField:
    d = np.asarray(direction, dtype=float)
    a = np.array([-d[1], d[0]])
    return VectorField.from_function(
        grid, lambda X, Y: (a[0] * np.exp(1j * k * (d[0] * X + d[1] * Y)), a[1] * np.exp(1j * k * (d[0] * X + d[1] * Y)))
    )


# --- criteria ---------------------------------------------------------------------------------


def criterion_1() -> Result:
    t0 = time.perf_counter()
    g = Grid(33, 33)
    drive = Drive()
    truth = build_phantom("model1", g)
    u_m = generate_data(get_phantom("model1"), g, drive, refine=2)
    init = MaterialMap.homogeneous(g, MU_BG, ETA_BG).with_bounds(truth.c1, truth.c2)
    model = MisfitModel(drive.problem(init), u_m)
    e_glob = gradient_check(model, init, random_directions(init, 20, seed=0), t=1e-4)
    sub = Subdomain(*quadrant_bounds(g, "bottom_left"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CompatibilityWarning)
        prob, um_loc, mat_loc = local_problem(u_m, sub, drive.problem(init), init)
        e_loc = gradient_check(MisfitModel(prob, um_loc), mat_loc, random_directions(mat_loc, 20, seed=1), t=1e-4)
    dt = time.perf_counter() - t0
    worst = max(e_glob.max(), e_loc.max())
    csv = {"gradient_errors": ("\n".join(repr(float(e)) for e in np.concatenate([e_glob, e_loc])) + "\n").encode()}
    return Result(1, "gradient fidelity", bool(worst <= 1e-3 and dt <= 300),
                  f"max rel error global {e_glob.max():.2e}, local {e_loc.max():.2e} (<= 1e-3)", dt, csv)


def criterion_2() -> Result:
    t0 = time.perf_counter()
    k = np.pi / 10
    drive = Drive()
    om, rho = drive.omega, drive.rho
    c = complex(MU_BG, om * ETA_BG)

    def u_star(X, Y):
        return k * np.sin(k * X) * np.cos(k * Y), -k * np.cos(k * X) * np.sin(k * Y)

    def body(X, Y):
        # rho w^2 u + div(2 c sym_grad u) + grad p = b with p = cos(kx)
        u1, u2 = u_star(X, Y)
        s = rho * om**2 - 2 * c * k**2
        return s * u1 - k * np.sin(k * X), s * u2

    errs, csv = [], {}
    for n in (33, 65, 129):
        g = Grid(n, n)
        prob = ForwardProblem(g, MaterialMap.homogeneous(g, MU_BG, ETA_BG), om, rho,
                              VectorField.from_function(g, u_star), VectorField.from_function(g, body))
        sol = solve_forward(prob)
        errs.append(float(np.abs(sol.u.values - VectorField.from_function(g, u_star).values).max()))
        csv[f"mms_u_{n}"] = _csv_bytes(sol.u)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    dt = time.perf_counter() - t0
    return Result(2, "forward-solver order", bool(orders.min() >= 1.8 and dt <= 120),
                  f"max-norm errors {', '.join(f'{e:.2e}' for e in errs)}, orders "
                  f"{', '.join(f'{o:.2f}' for o in orders)} (>= 1.8)", dt, csv)


def measured_wavelength(u: VectorField, column: int) -> float:
    """Twice the mean spacing of zero crossings of ``Re u1`` along ``y`` at node column ``column``."""
    line = u.values[column, :, 0].real
    y = u.grid.y
    s = np.signbit(line)
    i = np.flatnonzero(s[1:] != s[:-1])
    z = y[i] - line[i] * (y[i + 1] - y[i]) / (line[i + 1] - line[i])
    return float(2 * np.mean(np.diff(z)))


def criterion_3() -> Result:
    t0 = time.perf_counter()
    g = Grid(129, 129)
    drive = Drive()
    u = generate_data(get_phantom("homogeneous"), g, drive)
    lam = measured_wavelength(u, g.nx // 2)
    ref = 2 * np.pi * np.sqrt(MU_BG / drive.rho) / drive.omega
    rel = abs(lam / ref - 1)
    dt = time.perf_counter() - t0
    return Result(3, "dispersion", bool(rel <= 0.05 and dt <= 60),
                  f"wavelength {lam:.4f} cm vs {ref:.4f} cm, rel {rel:.2%} (<= 5%)", dt,
                  {"homogeneous_u": _csv_bytes(u)})


def criterion_4() -> Result:
    t0 = time.perf_counter()
    g = Grid(129, 129)
    drive = Drive()
    k = 2 * np.pi / 2.86
    u = _plane_wave(g, k)
    c = algebraic_inversion(u, (0.0, 1.0), drive.omega, drive.rho)
    expect = drive.rho * drive.omega**2 / k**2
    m = g.interior_mask(1.0)
    rel = float(np.abs(c.values[m] / expect - 1).max())
    dt = time.perf_counter() - t0
    return Result(4, "algebraic inversion oracle", bool(rel <= 1e-3 and dt <= 60),
                  f"max rel error {rel:.2e} on interior nodes (<= 1e-3)", dt, {"plane_wave_c": _csv_bytes(c)})


def criterion_5() -> Result:
    t0 = time.perf_counter()
    drive = Drive()
    om = drive.omega
    c0 = complex(MU_BG, om * ETA_BG)
    # (a) homogeneous truth, forward-solved damped plane wave
    g = Grid(129, 129)
    k = om / np.sqrt(c0 / drive.rho)
    prob = ForwardProblem(g, MaterialMap.homogeneous(g, MU_BG, ETA_BG), om, drive.rho, _plane_wave(g, k))
    u = solve_forward(prob).u
    c = hybrid_initial_guess(u, om, drive.rho, MU_BG, ETA_BG, a=(0.0, 1.0), passes=HYBRID_PASSES)
    region = g.interior_mask(1.0)
    region[:2] = region[-2:] = False
    region[:, :2] = region[:, -2:] = False
    rel = float(np.abs(c.values[region] / c0 - 1).max())
    # (b) model1 edge-response widths
    g65 = Grid(65, 65)
    u_m = generate_data(get_phantom("model1"), g65, drive, refine=2)
    tmpl = MaterialMap.homogeneous(g65, MU_BG, ETA_BG)
    alg = material_from_modulus(algebraic_inversion(u_m, (1.0, 0.0), om, drive.rho, background=c0), om, tmpl)
    hyb = _hybrid_material(u_m, drive, tmpl)
    inc = get_phantom("model1").inclusions[0]
    w_alg = edge_response_width(alg.mu, g65, inc.center, inc.semi_axes[0])
    w_hyb = edge_response_width(hyb.mu, g65, inc.center, inc.semi_axes[0])
    dt = time.perf_counter() - t0
    ok_a, ok_b = rel <= 0.05, w_hyb < w_alg
    csv = {"homogeneous_c": _csv_bytes(c), **_material_csv("model1_algebraic", alg), **_material_csv("model1_hybrid", hyb)}
    return Result(5, "hybrid one-step", bool(ok_a and ok_b and dt <= 180),
                  f"(a) homogeneous max rel error {rel:.2%} (<= 5%) {'ok' if ok_a else 'FAILED'}; "
                  f"(b) edge width hybrid {w_hyb:.3f} cm vs algebraic {w_alg:.3f} cm (hybrid < algebraic) "
                  f"{'ok' if ok_b else 'FAILED'}", dt, csv)


@lru_cache(maxsize=None)
def _model1_setup(n: int = 65):
    g = Grid(n, n)
    drive = Drive()
    u_m = generate_data(get_phantom("model1"), g, drive, refine=2)
    truth = build_phantom("model1", g)
    return g, drive, u_m, truth


def _run_global(init_kind: str, u_m: VectorField | None = None):
    g, drive, clean, truth = _model1_setup()
    u_m = clean if u_m is None else u_m
    tmpl = MaterialMap.homogeneous(g, MU_BG, ETA_BG)
    init = _hybrid_material(u_m, drive, tmpl) if init_kind == "hybrid" else tmpl
    t0 = time.perf_counter()
    out, trace = reconstruct(u_m, init, drive.problem(init), OptimizerSettings(max_iter=MAX_ITER), truth)
    return init, out, trace, time.perf_counter() - t0


_GLOBAL_CACHE: dict[str, tuple] = {}


def _cached_global(kind: str):
    if kind not in _GLOBAL_CACHE:
        _GLOBAL_CACHE[kind] = _run_global(kind)
    return _GLOBAL_CACHE[kind]


def criterion_6(fresh: bool = False) -> Result:
    init, out, trace, dt = _run_global("hybrid") if fresh else _cached_global("hybrid")
    truth = _model1_setup()[3]
    m = truth.interior_mask
    e0 = relative_error(init, truth, m)[0]
    e1 = relative_error(out, truth, m)[0]
    J = trace.misfits
    ratio = J[0] / J[-1]
    ok = ratio >= 10 and e1 < e0 and trace.is_monotone() and dt <= 1800
    csv = {**_material_csv("hybrid_final", out), "hybrid_trace": trace.to_csv().encode()}
    return Result(6, "end-to-end reconstruction", bool(ok),
                  f"J reduced {ratio:.1f}x (>= 10), mu error {e0:.4f} -> {e1:.4f}, monotone {trace.is_monotone()}, "
                  f"{trace.accepted} iterations", dt, csv)


def criterion_7(fresh: bool = False) -> Result:
    t0 = time.perf_counter()
    hyb = _run_global("hybrid") if fresh else _cached_global("hybrid")
    con = _run_global("constant") if fresh else _cached_global("constant")
    truth = _model1_setup()[3]
    m = truth.interior_mask
    e_h = relative_error(hyb[1], truth, m)[0]
    e_c = relative_error(con[1], truth, m)[0]
    dt = time.perf_counter() - t0 if fresh else con[3]
    csv = {**_material_csv("constant_final", con[1]), "constant_trace": con[2].to_csv().encode()}
    return Result(7, "initial-guess sensitivity", bool(e_c > e_h),
                  f"final mu error constant init {e_c:.4f} > hybrid init {e_h:.4f} "
                  f"({MAX_ITER} iteration budget)", dt, csv)


def criterion_8() -> Result:
    t0 = time.perf_counter()
    g, drive, clean, truth = _model1_setup()
    u_m = add_noise(clean, NoiseSpec(0.03, quadrant_masks(g)["top_right"], seed=0))
    tmpl = MaterialMap.homogeneous(g, MU_BG, ETA_BG)
    init = _hybrid_material(u_m, drive, tmpl)
    settings = OptimizerSettings(max_iter=MAX_ITER)
    glob, _ = reconstruct(u_m, init, drive.problem(init), settings, truth)
    parts, ok, csv = [], True, _material_csv("noisy_global", glob)
    for name in CLEAN_QUADRANTS:
        sub = Subdomain(*quadrant_bounds(g, name))
        loc, _ = reconstruct_local(u_m, sub, init, drive.problem(init), settings, truth)
        region = sub.mask(g) & init.interior_mask
        e_loc = relative_error(loc, truth, region)[0]
        e_glob = relative_error(glob, truth, region)[0]
        ok &= e_loc < e_glob
        parts.append(f"{name} local {e_loc:.4f} vs global {e_glob:.4f}")
        csv.update(_material_csv(f"local_{name}", loc))
    dt = time.perf_counter() - t0
    return Result(8, "local reconstruction", bool(ok and dt <= 1800), "; ".join(parts), dt, csv)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8}


@lru_cache(maxsize=None)
def result(n: int) -> Result:
    return CRITERIA[n]()


def criterion_9() -> Result:
    t0 = time.perf_counter()
    mismatched = []
    n_files = 0
    for n, fn in CRITERIA.items():
        first = result(n).csv
        again = fn(fresh=True).csv if n in (6, 7) else fn().csv
        n_files += len(first)
        if first.keys() != again.keys():
            mismatched.append(f"{n}:keys")
        mismatched += [f"{n}:{k}" for k in first if first[k] != again.get(k)]
    dt = time.perf_counter() - t0
    detail = f"{n_files} CSV artifacts from criteria 1-8 byte-identical on rerun" if not mismatched \
        else f"differing artifacts: {', '.join(mismatched)}"
    return Result(9, "determinism", not mismatched, detail, dt)


# --- tests ------------------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_fast_criteria(n):
    res = result(n)
    _report(res)
    assert res.passed, res.line()


def test_criterion_5_hybrid():
    res = result(5)
    _report(res)
    assert res.passed, res.line()


@pytest.mark.slow
@pytest.mark.parametrize("n", [6, 7, 8])
def test_reconstruction_criteria(n):
    res = result(n)
    _report(res)
    assert res.passed, res.line()


@pytest.mark.slow
def test_criterion_9_determinism():
    res = criterion_9()
    _report(res)
    assert res.passed, res.line()


if __name__ == "__main__":
    import sys

    wanted = [int(a) for a in sys.argv[1:]] or [*CRITERIA, 9]
    for n in wanted:
        print((criterion_9() if n == 9 else result(n)).line(), flush=True)
