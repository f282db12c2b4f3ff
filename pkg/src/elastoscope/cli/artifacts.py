"""Run directory writer: CSV fields, PGM images and a checksummed manifest."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from ..fields import ScalarField, VectorField, write_field_csv

MANIFEST = "manifest.json"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_pgm(path, image: np.ndarray) -> tuple[float, float]:
    """8-bit binary PGM, linear grayscale between the image min and max.

    ``image[i, j]`` is node ``(x_i, y_j)``; the top row of the file is the
    largest ``y``.  Returns the ``(min, max)`` used for scaling.
    """
    a = np.asarray(image, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros(a.shape) if hi <= lo else (a - lo) / (hi - lo)
    pix = np.round(255 * scaled).astype(np.uint8).T[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


class RunWriter:
    """Collects artifacts, timings and metrics for one run directory."""

    def __init__(self, out_dir, config: dict, images: bool = True):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.images_enabled = images
        self.files: list[dict] = []
        self.images: dict[str, dict] = {}
        self.timings: dict[str, float] = {}
        self.reports: dict[str, dict] = {}
        self.metrics: dict = {}
        self.warnings: list[str] = []
        self.status = "running"
        self._t0 = time.perf_counter()

    def _register(self, rel: str, kind: str) -> Path:
        path = self.dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files.append({"path": rel, "kind": kind})
        return path

    def field(self, rel: str, field: ScalarField | VectorField) -> None:
        write_field_csv(field, self._register(rel, "csv"))

    def real_field(self, rel: str, grid, values) -> None:
        self.field(rel, ScalarField(grid, np.asarray(values, dtype=complex)))

    def text(self, rel: str, content: str, kind: str = "csv") -> None:
        with open(self._register(rel, kind), "w", newline="") as fh:
            fh.write(content)

    def image(self, rel: str, values) -> None:
        if not self.images_enabled:
            return
        lo, hi = write_pgm(self._register(rel, "pgm"), values)
        self.images[rel] = {"min": lo, "max": hi}

    def timed(self, name: str):
        writer = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                writer.timings[name] = writer.timings.get(name, 0.0) + time.perf_counter() - self.t
                return False

        return _Timer()

    def finish(self, status: str) -> dict:
        self.status = status
        self.timings["total"] = time.perf_counter() - self._t0
        metrics_path = self._register("metrics.json", "json")
        with open(metrics_path, "w") as fh:
            json.dump(self.metrics, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        files = []
        for entry in self.files:
            p = self.dir / entry["path"]
            if p.exists():
                files.append({**entry, "sha256": sha256(p), "bytes": p.stat().st_size})
        manifest = {
            "status": status,
            "config": self.config,
            "files": files,
            "images": self.images,
            "timings": self.timings,
            "solver_reports": self.reports,
            "metrics": self.metrics,
            "warnings": self.warnings,
        }
        with open(self.dir / MANIFEST, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        return manifest


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise FileNotFoundError(f"{path}: {exc.strerror}") from None


def verify_manifest(run_dir) -> list[str]:
    """Names of listed files that are missing or whose checksum differs."""
    run_dir = Path(run_dir)
    bad = []
    for entry in load_manifest(run_dir)["files"]:
        p = run_dir / entry["path"]
        if not p.exists() or sha256(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad
