"""Error metrics against exact or reference solutions, flux diagnostics,
and study aggregation over runs."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import oracles
from .autodiff import Var
from .models import ModelSpec, forward
from .problems import PdeProblem, ProblemError, STRIP_HEIGHT, flux as flux_op
from .samplers import eval_grid

__all__ = [
    "EvaluationError",
    "relative_l2",
    "exact_solution_eval",
    "exact_flux_eval",
    "predict",
    "predict_flux",
    "flux_error",
    "interface_jump",
    "evaluate_model",
    "MetricRecord",
    "aggregate_study",
    "write_study_csv",
    "config_hash",
    "default_resolution",
    "STUDY_AXES",
]

# Chaotic trajectories are only scored while the reference itself is
# trustworthy; pointwise comparison beyond is dominated by divergence.
SCORE_WINDOW = {"ks-chaotic": 0.5}


class EvaluationError(ValueError):
    pass


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """||pred - truth|| / ||truth||."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise EvaluationError(
            f"length mismatch: {pred.shape} vs {truth.shape}"
        )
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise EvaluationError("reference field has zero norm")
    return float(np.linalg.norm(pred - truth) / denom)


def exact_solution_eval(problem: PdeProblem, pts: np.ndarray) -> np.ndarray:
    """Exact solution values; spectral reference when no closed form."""
    if problem.exact is not None:
        return problem.exact(pts)
    if problem.oracle is not None:
        sol = oracles.reference_solution(problem.oracle)
        return oracles.oracle_eval(sol, pts)
    raise EvaluationError(
        f"problem {problem.name!r} has no exact solution or reference solver"
    )


def exact_flux_eval(problem: PdeProblem, pts: np.ndarray) -> np.ndarray:
    if problem.exact_flux is None:
        raise EvaluationError(f"problem {problem.name!r} has no exact flux")
    return problem.exact_flux(pts)


def predict(spec: ModelSpec, params, pts: np.ndarray,
            chunk: int = 8192) -> np.ndarray:
    """Model values on plain points, chunked, without recording."""
    outs = []
    with ad.no_grad():
        for i in range(0, pts.shape[0], chunk):
            outs.append(forward(spec, params, pts[i:i + chunk]).value)
    return np.vstack(outs)


def predict_flux(spec: ModelSpec, params, problem: PdeProblem,
                 pts: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Flux field -mu grad(u); needs one input-gradient pass per chunk."""
    if problem.mu is None:
        raise EvaluationError(f"problem {problem.name!r} has no flux")
    outs = []
    for i in range(0, pts.shape[0], chunk):
        fn = lambda x: forward(spec, params, x)  # noqa: E731
        outs.append(flux_op(fn, pts[i:i + chunk], problem.mu).value)
    return np.vstack(outs)


def _interface_exclusion_mask(pts: np.ndarray, band: float = 2e-3) -> np.ndarray:
    y = pts[:, 1]
    mask = np.ones(pts.shape[0], dtype=bool)
    for k in range(1, 5):
        mask &= np.abs(y - k * STRIP_HEIGHT) > band
    return mask


def flux_error(spec: ModelSpec, params, problem: PdeProblem,
               grid: np.ndarray) -> list[float]:
    """Relative L2 error per flux component; rough-coefficient problems
    exclude a band around the material interfaces where the exact
    transverse flux is discontinuous."""
    if problem.exact_flux is None:
        raise EvaluationError(f"problem {problem.name!r} has no exact flux")
    pts = grid
    if problem.mu is not None and problem.mu.kind == "five-strip":
        pts = grid[_interface_exclusion_mask(grid)]
    pred = predict_flux(spec, params, problem, pts)
    truth = exact_flux_eval(problem, pts)
    out = []
    for k in range(truth.shape[1]):
        if np.linalg.norm(truth[:, k]) == 0:
            out.append(float("nan"))  # identically-zero component
        else:
            out.append(relative_l2(pred[:, k], truth[:, k]))
    return out


def interface_jump(spec: ModelSpec, params, problem: PdeProblem,
                   n_samples: int = 200, delta: float = 1e-3):
    """Mean flux jumps across each strip interface.

    Samples paired points straddling the four interfaces; returns a list of
    (normal_jump, tangential_jump) ordered by interface height.  The normal
    component is y (interfaces are horizontal), the tangential is x.
    """
    if problem.mu is None or problem.mu.kind != "five-strip":
        raise EvaluationError("interface diagnostics need the five-strip problem")
    x = np.linspace(0.02, 0.98, n_samples)
    out = []
    for k in range(1, 5):
        y0 = k * STRIP_HEIGHT
        below = np.column_stack([x, np.full(n_samples, y0 - delta)])
        above = np.column_stack([x, np.full(n_samples, y0 + delta)])
        qb = predict_flux(spec, params, problem, below)
        qa = predict_flux(spec, params, problem, above)
        normal = float(np.mean(np.abs(qa[:, 1] - qb[:, 1])))
        tangential = float(np.mean(np.abs(qa[:, 0] - qb[:, 0])))
        out.append((normal, tangential))
    return out


def default_resolution(problem: PdeProblem) -> tuple:
    name = problem.name
    if name == "allen-cahn":
        return (101, 256)
    if name.startswith("ks"):
        return (101, 512)
    if name.startswith("darcy3d"):
        return (64, 64, 64)
    return (200, 200)


def evaluate_model(spec: ModelSpec, params, problem: PdeProblem,
                   resolution: tuple | None = None,
                   cache: dict | None = None) -> dict:
    """Solution (and flux, when defined) errors on the problem's test grid."""
    resolution = resolution or default_resolution(problem)
    cache = cache if cache is not None else {}
    key = (problem.name, tuple(resolution))
    if key not in cache:
        grid = eval_grid(problem.domain, resolution)
        window = SCORE_WINDOW.get(problem.name)
        if window is not None:
            t1 = problem.domain.t0 + window * (problem.domain.t1 - problem.domain.t0)
            grid = grid[grid[:, 0] <= t1 + 1e-12]
        cache[key] = (grid, exact_solution_eval(problem, grid))
    grid, truth = cache[key]
    pred = predict(spec, params, grid)
    metrics = {"rel_l2": relative_l2(pred, truth)}
    if problem.name in SCORE_WINDOW:
        metrics["score_window"] = SCORE_WINDOW[problem.name]
    if problem.exact_flux is not None:
        comps = flux_error(spec, params, problem, grid)
        metrics["rel_l2_flux_x"] = comps[0]
        for k, v in enumerate(comps[1:], start=1):
            if not np.isnan(v):
                metrics[f"rel_l2_flux_{'yz'[k - 1]}"] = v
    return metrics


# ---------------------------------------------------------------------------
# study aggregation


@dataclass(frozen=True)
class MetricRecord:
    problem_id: str
    model_kind: str
    seed: int
    axis_value: float
    rel_l2_solution: float
    rel_l2_flux_x: float | None = None
    steps: int = 0
    wall_clock_seconds: float = 0.0
    config_hash: str = ""


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


STUDY_AXES = ("depth", "collocation-count", "iteration", "wall-clock",
              "model-kind")


def aggregate_study(records: list[MetricRecord], axis: str) -> list[dict]:
    """Mean metrics over seeds per (model kind, axis value), tidy rows."""
    if axis not in STUDY_AXES:
        raise EvaluationError(f"unknown study axis {axis!r}")
    if not records:
        return []
    problems = {r.problem_id for r in records}
    if len(problems) > 1:
        raise EvaluationError(
            f"records mix problems: {sorted(problems)}"
        )
    groups: dict = {}
    for r in records:
        groups.setdefault((r.model_kind, r.axis_value), []).append(r)
    rows = []
    for (kind, value), rs in sorted(groups.items()):
        row = {
            "problem": rs[0].problem_id,
            "model": kind,
            "axis": axis,
            "axis_value": value,
            "n_seeds": len(rs),
            "rel_l2_mean": float(np.mean([r.rel_l2_solution for r in rs])),
            "wall_clock_mean": float(np.mean([r.wall_clock_seconds for r in rs])),
        }
        fx = [r.rel_l2_flux_x for r in rs if r.rel_l2_flux_x is not None]
        row["rel_l2_flux_x_mean"] = float(np.mean(fx)) if fx else ""
        rows.append(row)
    return rows


def write_study_csv(rows: list[dict], path, note: str = "") -> None:
    if not rows:
        raise EvaluationError("no study rows to write")
    cols = list(rows[0])
    with open(path, "w", newline="") as f:
        if note:
            f.write(f"# {note}\n")
        f.write("# columns: " + ", ".join(cols) + "\n")
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow(r)
