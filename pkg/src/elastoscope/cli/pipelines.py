"""Named experiment pipelines driven by a validated configuration."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..fields import Grid, VectorField, read_field_csv
from ..linalg import dump_matrix_market
from ..material import MaterialMap, default_bounds
from ..pde import CompatibilityWarning, build_operator
from ..phantoms import (
    ETA_BG,
    MU_BG,
    Drive,
    NoiseSpec,
    Phantom,
    add_noise,
    edge_response_width,
    generate_data,
    get_phantom,
    quadrant_bounds,
    quadrant_masks,
    refine_grid,
    relative_error,
)
from ..reconstruction import (
    DivisionLog,
    MisfitModel,
    OptimizerSettings,
    Subdomain,
    algebraic_inversion,
    gradient_check,
    hybrid_initial_guess,
    local_problem,
    material_from_modulus,
    misfit,
    random_directions,
    reconstruct,
    reconstruct_local,
)
from .artifacts import RunWriter

logger = logging.getLogger(__name__)


class AcceptanceFailure(RuntimeError):
    """A pipeline-level check (e.g. the gradient tolerance) did not hold."""


@dataclass
class Experiment:
    cfg: dict
    grid: Grid
    drive: Drive
    phantom: Phantom | None
    truth: MaterialMap | None
    u_m: VectorField
    mu0: float
    eta0: float
    seed: int

    @property
    def omega(self) -> float:
        return self.drive.omega

    @property
    def rho(self) -> float:
        return self.drive.rho

    def template(self, peak: float | None = None) -> MaterialMap:
        rc = self.cfg["reconstruction"]
        d1, d2 = default_bounds(self.mu0, self.eta0, peak)
        c1 = d1 if rc["c1"] is None else rc["c1"]
        c2 = d2 if rc["c2"] is None else rc["c2"]
        return MaterialMap.homogeneous(self.grid, self.mu0, self.eta0, rc["margin"], c1, c2)

    def settings(self) -> OptimizerSettings:
        return OptimizerSettings(**self.cfg["reconstruction"]["optimizer"])

    def problem(self, material: MaterialMap):
        return self.drive.problem(material)

    def errors(self, material: MaterialMap, region=None) -> tuple[float, float]:
        if self.truth is None:
            return float("nan"), float("nan")
        region = self.truth.interior_mask if region is None else region
        return relative_error(material, self.truth, region)


def build_experiment(cfg: dict) -> Experiment:
    fc, pde, lab, rc = cfg["field_core"], cfg["pde_solvers"], cfg["phantom_lab"], cfg["reconstruction"]
    seed = cfg["cli_harness"]["seed"]
    sides = tuple(pde["dirichlet_sides"])
    grid = Grid(fc["nx"], fc["ny"], fc["lx"], fc["ly"], dirichlet_sides=sides)
    drive = Drive(pde["frequency_hz"], pde["rho"], tuple(pde["g"]), sides,
                  cfg["linear_system"]["beta"], cfg["linear_system"]["tol"])
    phantom = get_phantom(lab["phantom"]) if lab["phantom"] is not None else None
    truth = phantom.sample(grid) if phantom is not None else None
    if lab["input_field"] is not None:
        f = read_field_csv(lab["input_field"], sides)
        if not isinstance(f, VectorField) or f.grid.shape != grid.shape:
            raise ValueError(f"{lab['input_field']}: expected a vector field on a {grid.nx}x{grid.ny} grid")
        u_m = VectorField(grid, f.values)
    else:
        u_m = generate_data(phantom, grid, drive, refine=lab["refine"])
    noise = lab["noise"]
    if noise["level"] > 0:
        region = None if noise["region"] == "all" else quadrant_masks(grid)[noise["region"]]
        nseed = seed if noise["seed"] is None else noise["seed"]
        u_m = add_noise(u_m, NoiseSpec(noise["level"], region, nseed))
    mu0 = rc["mu0"] if rc["mu0"] is not None else (phantom.mu_bg if phantom else MU_BG)
    eta0 = rc["eta0"] if rc["eta0"] is not None else (phantom.eta_bg if phantom else ETA_BG)
    return Experiment(cfg, grid, drive, phantom, truth, u_m, mu0, eta0, seed)


# --- shared steps -------------------------------------------------------------------------------


def initial_modulus(exp: Experiment, method: str, log: DivisionLog | None = None) -> np.ndarray | None:
    rc = exp.cfg["reconstruction"]
    c0 = complex(exp.mu0, exp.omega * exp.eta0)
    if method == "constant":
        return None
    if method == "algebraic":
        return algebraic_inversion(exp.u_m, tuple(rc["a"]), exp.omega, exp.rho, rc["floor"], c0, log).values
    return hybrid_initial_guess(exp.u_m, exp.omega, exp.rho, exp.mu0, exp.eta0, tuple(rc["a"]), rc["floor"],
                                rc["hybrid_passes"], rc["pressure"], log=log).values


def initial_material(exp: Experiment, method: str, log: DivisionLog | None = None) -> MaterialMap:
    c = initial_modulus(exp, method, log)
    if c is None:
        return exp.template()
    template = exp.template()
    peak = float(max(np.max(c.real[template.interior_mask]), np.max(c.imag[template.interior_mask]) / exp.omega))
    return material_from_modulus(c, exp.omega, exp.template(peak))


def _material_outputs(w: RunWriter, exp: Experiment, mat: MaterialMap, prefix: str) -> None:
    w.real_field(f"fields/{prefix}_mu.csv", exp.grid, mat.mu)
    w.real_field(f"fields/{prefix}_eta.csv", exp.grid, mat.eta)
    w.image(f"images/{prefix}_mu.pgm", mat.mu)
    w.image(f"images/{prefix}_eta.pgm", mat.eta)


def _edge_width(exp: Experiment, image: np.ndarray) -> float | None:
    if exp.phantom is None:
        return None
    for inc in exp.phantom.inclusions:
        if inc.shape == "circle":
            return edge_response_width(image, exp.grid, inc.center, inc.semi_axes[0])
    return None


def _report(sol) -> dict:
    r = sol.report
    return {"iterations": r.iterations, "relative_residual": r.relative_residual, "converged": r.converged,
            "method": r.method, "div_residual": sol.div_residual}


# --- pipelines ----------------------------------------------------------------------------------


def run_forward(exp: Experiment, w: RunWriter) -> None:
    if exp.phantom is None:
        raise ValueError("forward pipeline needs a phantom id")
    refine = exp.cfg["phantom_lab"]["refine"]
    fine = refine_grid(exp.grid, refine)
    material = exp.phantom.sample(fine)
    prob = exp.drive.problem(material)
    with w.timed("forward"):
        op = build_operator(prob)
        sol = op.forward(prob.g)
    if exp.cfg["linear_system"]["dump_matrix"]:
        dump_matrix_market(w.dir / "matrix.mtx", op.Ac)
        w.files.append({"path": "matrix.mtx", "kind": "mtx"})
    u = VectorField(exp.grid, sol.u.values[::refine, ::refine])
    p = sol.p.values[::refine, ::refine]
    w.reports["forward"] = _report(sol)
    w.field("fields/u.csv", u)
    w.real_field("fields/p_re.csv", exp.grid, p.real)
    w.real_field("fields/p_im.csv", exp.grid, p.imag)
    for k, name in enumerate(("u1", "u2")):
        w.image(f"images/{name}_re.pgm", u.values[..., k].real)
        w.image(f"images/{name}_im.pgm", u.values[..., k].imag)
    _material_outputs(w, exp, exp.truth, "truth")
    w.metrics.update({"div_residual": sol.div_residual, "max_abs_u": float(np.abs(u.values).max()),
                      "relative_residual": sol.report.relative_residual})


def run_direct(exp: Experiment, w: RunWriter, method: str) -> None:
    log = DivisionLog()
    with w.timed(method):
        mat = initial_material(exp, method, log)
    w.field("fields/u_m.csv", exp.u_m)
    _material_outputs(w, exp, mat, method)
    e_mu, e_eta = exp.errors(mat)
    w.metrics.update({"method": method, "err_mu": e_mu, "err_eta": e_eta, "iterations": 0,
                      "division_safe": log.safe(), "edge_width": _edge_width(exp, mat.mu)})


def run_adjoint(exp: Experiment, w: RunWriter) -> None:
    method = exp.cfg["reconstruction"]["init"]
    with w.timed("initial_guess"):
        init = initial_material(exp, method)
    _material_outputs(w, exp, init, "initial")
    with w.timed("reconstruct"):
        out, trace = reconstruct(exp.u_m, init, exp.problem(init), exp.settings(), exp.truth)
    _material_outputs(w, exp, out, "final")
    w.text("trace.csv", trace.to_csv())
    e0 = exp.errors(init)
    e1 = exp.errors(out)
    J = trace.misfits
    w.warnings.extend(trace.warnings)
    w.metrics.update({
        "method": f"adjoint/{method}", "init": method, "status": trace.status,
        "iterations": trace.accepted, "n_solves": trace.n_solves,
        "err_mu_initial": e0[0], "err_eta_initial": e0[1], "err_mu": e1[0], "err_eta": e1[1],
        "J_initial": float(J[0]), "J_final": float(J[-1]),
        "J_reduction": float(J[0] / J[-1]) if J[-1] > 0 else float("inf"),
        "monotone": trace.is_monotone(), "smoothing_sigma": trace.smoothing_sigma,
        "edge_width": _edge_width(exp, out.mu),
    })


def _subdomains(exp: Experiment) -> list[tuple[str, Subdomain]]:
    out = []
    for s in exp.cfg["reconstruction"]["subdomains"]:
        if isinstance(s, str):
            out.append((s, Subdomain(*quadrant_bounds(exp.grid, s))))
        else:
            out.append((f"block_{s['i0']}_{s['i1']}_{s['j0']}_{s['j1']}", Subdomain(s["i0"], s["i1"], s["j0"], s["j1"])))
    return out


def run_local(exp: Experiment, w: RunWriter) -> None:
    method = exp.cfg["reconstruction"]["init"]
    settings = exp.settings()
    with w.timed("initial_guess"):
        init = initial_material(exp, method)
    _material_outputs(w, exp, init, "initial")
    with w.timed("reconstruct_global"):
        glob, gtrace = reconstruct(exp.u_m, init, exp.problem(init), settings, exp.truth)
    _material_outputs(w, exp, glob, "global")
    w.text("trace_global.csv", gtrace.to_csv())
    per = {}
    combined_mu, combined_eta = np.array(glob.mu), np.array(glob.eta)
    for name, sub in _subdomains(exp):
        with w.timed(f"reconstruct_{name}"):
            loc, ltrace = reconstruct_local(exp.u_m, sub, init, exp.problem(init), settings, exp.truth)
        region = sub.mask(exp.grid) & init.interior_mask
        combined_mu[region] = loc.mu[region]
        combined_eta[region] = loc.eta[region]
        w.text(f"trace_{name}.csv", ltrace.to_csv())
        w.warnings.extend(f"{name}: {msg}" for msg in ltrace.warnings)
        e_loc = exp.errors(loc, region)
        e_glob = exp.errors(glob, region)
        e_init = exp.errors(init, region)
        per[name] = {"bounds": [sub.i0, sub.i1, sub.j0, sub.j1], "status": ltrace.status,
                     "iterations": ltrace.accepted, "err_mu_local": e_loc[0], "err_eta_local": e_loc[1],
                     "err_mu_global": e_glob[0], "err_eta_global": e_glob[1], "err_mu_initial": e_init[0],
                     "monotone": ltrace.is_monotone()}
    local_map = init.replace(combined_mu, combined_eta, project=False)
    _material_outputs(w, exp, local_map, "local")
    eg = exp.errors(glob)
    w.metrics.update({"method": f"local/{method}", "init": method, "subdomains": per,
                      "iterations": gtrace.accepted, "err_mu": eg[0], "err_eta": eg[1],
                      "global_status": gtrace.status})


def run_gradient_check(exp: Experiment, w: RunWriter) -> None:
    rc = exp.cfg["reconstruction"]
    gc = rc["gradient_check"]
    init = initial_material(exp, rc["init"])
    dirs = random_directions(init, gc["directions"], seed=exp.seed)
    with w.timed("global"):
        model = MisfitModel(exp.problem(init), exp.u_m)
        e_glob = gradient_check(model, init, dirs, gc["t"])
    name, sub = _subdomains(exp)[0]
    with w.timed("local"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CompatibilityWarning)
            prob, um_loc, mat_loc = local_problem(exp.u_m, sub, exp.problem(init), init)
            lmodel = MisfitModel(prob, um_loc)
            ldirs = random_directions(mat_loc, gc["directions"], seed=exp.seed + 1)
            e_loc = gradient_check(lmodel, mat_loc, ldirs, gc["t"])
    rows = ["formulation,direction,rel_error"]
    rows += [f"global,{k},{e!r}" for k, e in enumerate(e_glob.tolist())]
    rows += [f"local,{k},{e!r}" for k, e in enumerate(e_loc.tolist())]
    w.text("gradient_check.csv", "\n".join(rows) + "\n")
    worst = float(max(e_glob.max(), e_loc.max()))
    w.metrics.update({"max_rel_error_global": float(e_glob.max()), "max_rel_error_local": float(e_loc.max()),
                      "max_rel_error": worst, "tolerance": gc["tolerance"], "local_subdomain": name,
                      "J": misfit(model.state(init)[1], exp.u_m), "directions": gc["directions"], "t": gc["t"]})
    if not worst <= gc["tolerance"]:
        raise AcceptanceFailure(f"gradient check: max relative error {worst:.3e} exceeds {gc['tolerance']:.1e}")


PIPELINE_RUNNERS = {
    "forward": run_forward,
    "invert-algebraic": lambda e, w: run_direct(e, w, "algebraic"),
    "invert-hybrid": lambda e, w: run_direct(e, w, "hybrid"),
    "invert-adjoint": run_adjoint,
    "invert-local": run_local,
    "gradient-check": run_gradient_check,
}


def run_pipeline(cfg: dict, out_dir: Path | None = None) -> tuple[dict, RunWriter]:
    """Run the configured pipeline; exceptions propagate after the manifest is written."""
    out_dir = Path(cfg["cli_harness"]["output_dir"] if out_dir is None else out_dir)
    w = RunWriter(out_dir, cfg, cfg["cli_harness"]["images"])
    try:
        with w.timed("setup"):
            exp = build_experiment(cfg)
        PIPELINE_RUNNERS[cfg["cli_harness"]["pipeline"]](exp, w)
    except AcceptanceFailure as exc:
        w.finish(f"acceptance_failed: {exc}")
        raise
    except Exception as exc:
        w.finish(f"failed: {type(exc).__name__}: {exc}")
        raise
    return w.finish("ok"), w
