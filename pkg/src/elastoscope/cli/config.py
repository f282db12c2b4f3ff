"""Strict JSON experiment configuration.

One top-level block per module.  Unknown keys, wrong types and out-of-range
values raise ``ConfigError`` carrying the line of the offending key.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from pathlib import Path

PIPELINES = ("forward", "invert-algebraic", "invert-hybrid", "invert-adjoint", "invert-local", "gradient-check")
SIDES = ("bottom", "top", "left", "right")
QUADRANTS = ("bottom_left", "bottom_right", "top_left", "top_right")

DEFAULTS: dict = {
    "cli_harness": {"pipeline": "forward", "output_dir": "run", "seed": 0, "images": True},
    "field_core": {"nx": 65, "ny": 65, "lx": 10.0, "ly": 10.0},
    "linear_system": {"tol": 1e-10, "beta": 0.1, "dump_matrix": False},
    "pde_solvers": {"frequency_hz": 70.0, "rho": 1.0, "dirichlet_sides": ["bottom"], "g": [0.3, 0.3]},
    "phantom_lab": {
        "phantom": "model1",
        "input_field": None,
        "refine": 2,
        "noise": {"level": 0.0, "region": "all", "seed": None},
    },
    "reconstruction": {
        "init": "hybrid",
        "a": [1.0, 0.0],
        "floor": 1e-3,
        "hybrid_passes": 1,
        "pressure": "estimate",
        "margin": 1.0,
        "mu0": None,
        "eta0": None,
        "c1": None,
        "c2": None,
        "optimizer": {
            "epsilon": 1e-4,
            "max_iter": 200,
            "armijo_c": 1e-4,
            "shrink": 0.5,
            "delta_init": 1.0,
            "delta_min": 1e-12,
            "smoothing_sigma": 1.0,
            "step_fraction": 0.1,
        },
        "subdomains": ["bottom_left", "bottom_right", "top_left"],
        "gradient_check": {"directions": 20, "t": 1e-4, "tolerance": 1e-3},
    },
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line is not None else f"{source or '<config>'}: "
        super().__init__(where + message)


# --- key positions --------------------------------------------------------------------

_TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"|[{}\[\]:,]|[^\s{}\[\]:,"]+|\s+')


def key_lines(text: str) -> dict[tuple, int]:
    """Line number of every object key, addressed by its path of keys and array indices."""
    out: dict[tuple, int] = {}
    stack: list = []  # entries: ["obj", key] or ["arr", index]
    line = 1
    pending = None
    for m in _TOKEN.finditer(text):
        tok = m.group()
        if tok.isspace():
            line += tok.count("\n")
            continue
        if tok in "{[":
            if stack and stack[-1][0] == "arr" and stack[-1][1] < 0:
                stack[-1][1] = 0
            stack.append(["obj", None] if tok == "{" else ["arr", -1])
        elif tok in "}]":
            if stack:
                stack.pop()
        elif tok == ",":
            if stack and stack[-1][0] == "arr":
                stack[-1][1] += 1
        elif tok == ":":
            if pending is not None and stack:
                stack[-1][1] = pending[0]
                out[tuple(e[1] for e in stack)] = pending[1]
            pending = None
        elif tok.startswith('"') and stack and stack[-1][0] == "obj":
            pending = (json.loads(tok), line)
        elif stack and stack[-1][0] == "arr" and stack[-1][1] < 0:
            stack[-1][1] = 0
        line += tok.count("\n")
    return out


# --- validation ----------------------------------------------------------------------------


@dataclass
class _Ctx:
    lines: dict
    source: str | None

    def fail(self, path: tuple, message: str):
        line = None
        p = tuple(path)
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        raise ConfigError(f"{'.'.join(map(str, path))}: {message}" if path else message, line, self.source)


def _merge(defaults: dict, given: dict, path: tuple, ctx: _Ctx) -> dict:
    if not isinstance(given, dict):
        ctx.fail(path, "expected an object")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            ctx.fail(path + (key,), f"unknown key; expected one of {sorted(defaults)}")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, path + (key,), ctx)
        else:
            out[key] = val
    return out


def _num(ctx, cfg, path, lo=None, hi=None, integer=False, allow_none=False, lo_open=False):
    val = cfg
    for k in path:
        val = val[k]
    if val is None and allow_none:
        return
    ok_type = isinstance(val, int) if integer else isinstance(val, (int, float))
    if isinstance(val, bool) or not ok_type:
        ctx.fail(path, f"expected {'an integer' if integer else 'a number'}, got {val!r}")
    if lo is not None and (val <= lo if lo_open else val < lo):
        ctx.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {val!r}")
    if hi is not None and val > hi:
        ctx.fail(path, f"must be <= {hi}, got {val!r}")


def _choice(ctx, cfg, path, options, allow_none=False):
    val = cfg
    for k in path:
        val = val[k]
    if val is None and allow_none:
        return
    if val not in options:
        ctx.fail(path, f"must be one of {list(options)}, got {val!r}")


def _vec2(ctx, cfg, path, nonzero=False):
    val = cfg
    for k in path:
        val = val[k]
    if (not isinstance(val, list) or len(val) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)):
        ctx.fail(path, f"expected a list of two numbers, got {val!r}")
    if nonzero and not any(val):
        ctx.fail(path, "must be non-zero")


def validate(raw: dict, text: str = "", source: str | None = None, base_dir: Path | None = None) -> dict:
    ctx = _Ctx(key_lines(text) if text else {}, source)
    cfg = _merge(DEFAULTS, raw, (), ctx)

    _choice(ctx, cfg, ("cli_harness", "pipeline"), PIPELINES)
    if not isinstance(cfg["cli_harness"]["output_dir"], str) or not cfg["cli_harness"]["output_dir"]:
        ctx.fail(("cli_harness", "output_dir"), "expected a non-empty string")
    _num(ctx, cfg, ("cli_harness", "seed"), lo=0, integer=True)
    if not isinstance(cfg["cli_harness"]["images"], bool):
        ctx.fail(("cli_harness", "images"), "expected true or false")

    _num(ctx, cfg, ("field_core", "nx"), lo=5, integer=True)
    _num(ctx, cfg, ("field_core", "ny"), lo=5, integer=True)
    _num(ctx, cfg, ("field_core", "lx"), lo=0, lo_open=True)
    _num(ctx, cfg, ("field_core", "ly"), lo=0, lo_open=True)

    _num(ctx, cfg, ("linear_system", "tol"), lo=0, hi=1e-2, lo_open=True)
    _num(ctx, cfg, ("linear_system", "beta"), lo=0, lo_open=True)
    if not isinstance(cfg["linear_system"]["dump_matrix"], bool):
        ctx.fail(("linear_system", "dump_matrix"), "expected true or false")

    _num(ctx, cfg, ("pde_solvers", "frequency_hz"), lo=0, lo_open=True)
    _num(ctx, cfg, ("pde_solvers", "rho"), lo=0, lo_open=True)
    sides = cfg["pde_solvers"]["dirichlet_sides"]
    if not isinstance(sides, list) or not sides or any(s not in SIDES for s in sides) or len(set(sides)) != len(sides):
        ctx.fail(("pde_solvers", "dirichlet_sides"), f"expected a non-empty list of distinct sides from {list(SIDES)}")
    _vec2(ctx, cfg, ("pde_solvers", "g"))

    from ..phantoms import CATALOG

    lab = cfg["phantom_lab"]
    if lab["input_field"] is None:
        _choice(ctx, cfg, ("phantom_lab", "phantom"), sorted(CATALOG))
    else:
        if not isinstance(lab["input_field"], str):
            ctx.fail(("phantom_lab", "input_field"), "expected a path string or null")
        p = Path(lab["input_field"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            ctx.fail(("phantom_lab", "input_field"), f"file not found: {p}")
        lab["input_field"] = str(p)
        _choice(ctx, cfg, ("phantom_lab", "phantom"), sorted(CATALOG), allow_none=True)
    _num(ctx, cfg, ("phantom_lab", "refine"), lo=1, hi=8, integer=True)
    _num(ctx, cfg, ("phantom_lab", "noise", "level"), lo=0, hi=0.999999)
    _choice(ctx, cfg, ("phantom_lab", "noise", "region"), ("all",) + QUADRANTS)
    _num(ctx, cfg, ("phantom_lab", "noise", "seed"), lo=0, integer=True, allow_none=True)

    rec = ("reconstruction",)
    _choice(ctx, cfg, rec + ("init",), ("constant", "algebraic", "hybrid"))
    _vec2(ctx, cfg, rec + ("a",), nonzero=True)
    _num(ctx, cfg, rec + ("floor",), lo=0, hi=1, lo_open=True)
    _num(ctx, cfg, rec + ("hybrid_passes",), lo=1, hi=100, integer=True)
    _choice(ctx, cfg, rec + ("pressure",), ("estimate", "ignore"))
    _num(ctx, cfg, rec + ("margin",), lo=0, lo_open=True)
    _num(ctx, cfg, rec + ("mu0",), lo=0, lo_open=True, allow_none=True)
    _num(ctx, cfg, rec + ("eta0",), lo=0, lo_open=True, allow_none=True)
    _num(ctx, cfg, rec + ("c1",), lo=0, lo_open=True, allow_none=True)
    _num(ctx, cfg, rec + ("c2",), lo=0, lo_open=True, allow_none=True)
    c1, c2 = cfg["reconstruction"]["c1"], cfg["reconstruction"]["c2"]
    if c1 is not None and c2 is not None and not c1 < c2:
        ctx.fail(rec + ("c2",), "must exceed c1")
    opt = rec + ("optimizer",)
    _num(ctx, cfg, opt + ("epsilon",), lo=0, lo_open=True)
    _num(ctx, cfg, opt + ("max_iter",), lo=0, integer=True)
    _num(ctx, cfg, opt + ("armijo_c",), lo=0, hi=0.5, lo_open=True)
    _num(ctx, cfg, opt + ("shrink",), lo=0, hi=0.99, lo_open=True)
    _num(ctx, cfg, opt + ("delta_init",), lo=0, lo_open=True)
    _num(ctx, cfg, opt + ("delta_min",), lo=0, lo_open=True)
    if cfg["reconstruction"]["optimizer"]["delta_min"] > cfg["reconstruction"]["optimizer"]["delta_init"]:
        ctx.fail(opt + ("delta_min",), "must not exceed delta_init")
    _num(ctx, cfg, opt + ("smoothing_sigma",), lo=0)
    _num(ctx, cfg, opt + ("step_fraction",), lo=0, hi=1, lo_open=True)
    subs = cfg["reconstruction"]["subdomains"]
    if not isinstance(subs, list) or not subs:
        ctx.fail(rec + ("subdomains",), "expected a non-empty list")
    for k, s in enumerate(subs):
        if isinstance(s, str):
            if s not in QUADRANTS:
                ctx.fail(rec + ("subdomains", k), f"unknown quadrant {s!r}; expected one of {list(QUADRANTS)}")
        elif isinstance(s, dict):
            if set(s) != {"i0", "i1", "j0", "j1"}:
                ctx.fail(rec + ("subdomains", k), "node block needs exactly the keys i0, i1, j0, j1")
            for key in ("i0", "i1", "j0", "j1"):
                _num(ctx, cfg, rec + ("subdomains", k, key), lo=0, integer=True)
            nx, ny = cfg["field_core"]["nx"], cfg["field_core"]["ny"]
            if not (s["i1"] - s["i0"] >= 2 and s["j1"] - s["j0"] >= 2 and s["i1"] < nx and s["j1"] < ny):
                ctx.fail(rec + ("subdomains", k), "node block must lie in the grid with at least 3 nodes per axis")
        else:
            ctx.fail(rec + ("subdomains", k), "expected a quadrant name or a node block")
    gc = rec + ("gradient_check",)
    _num(ctx, cfg, gc + ("directions",), lo=1, integer=True)
    _num(ctx, cfg, gc + ("t",), lo=0, hi=1, lo_open=True)
    _num(ctx, cfg, gc + ("tolerance",), lo=0, lo_open=True)

    if lab["input_field"] is None and lab["phantom"] is None:
        ctx.fail(("phantom_lab", "phantom"), "either a phantom id or an input_field is required")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)


def parse_config(text: str, source: str | None = None, base_dir: Path | None = None) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, source) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", 1, source)
    return validate(raw, text, source, base_dir)
