"""Independent reference solutions for the time-dependent benchmarks.

Fourier pseudo-spectral discretization in space with fourth-order
exponential time differencing (ETDRK4) in time; the phi-function weights
come from the standard complex contour means, and quadratic nonlinearities
are dealiased by the 2/3 rule.  These trajectories score model outputs and
are never used in training.

Solutions cache to disk keyed by a hash of every parameter that affects
the numbers; set HYRESPINN_CACHE to move the cache directory.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problems import KS_CHAOTIC_COEFFS, KS_REGULAR_COEFFS, allen_cahn_initial

__all__ = [
    "OracleError",
    "SpectralSolution",
    "solve_allen_cahn_spectral",
    "solve_ks_spectral",
    "oracle_eval",
    "reference_solution",
    "cache_dir",
    "self_convergence",
]

_CACHE_ENV = "HYRESPINN_CACHE"


class OracleError(RuntimeError):
    """Spectral solve failure (blow-up, bad resolution, bad query)."""


@dataclass(frozen=True)
class SpectralSolution:
    """Periodic space-time trajectory on a uniform grid."""

    x_grid: np.ndarray  # (K,)
    t_grid: np.ndarray  # (S,)
    field: np.ndarray  # (S, K)
    modes: int
    dt: float
    method_id: str
    x_period: float

    def final_slice(self) -> np.ndarray:
        return self.field[-1]


def _etdrk4_coeffs(lin: np.ndarray, dt: float, n_roots: int = 32):
    """Contour-mean phi weights, stable for small |lin * dt|."""
    lr = dt * lin[:, None] + np.exp(
        1j * np.pi * (np.arange(n_roots) + 0.5) / n_roots
    )[None, :]
    e_half = np.exp(0.5 * dt * lin)
    e_full = np.exp(dt * lin)
    q = dt * np.real(((np.exp(lr / 2.0) - 1) / lr).mean(axis=1))
    f1 = dt * np.real(
        ((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3).mean(axis=1)
    )
    f2 = dt * np.real(((2 + lr + np.exp(lr) * (lr - 2)) / lr**3).mean(axis=1))
    f3 = dt * np.real(
        ((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3).mean(axis=1)
    )
    return e_half, e_full, q, f1, f2, f3


def _dealias_mask(n_rfft: int) -> np.ndarray:
    mask = np.ones(n_rfft)
    cutoff = int(np.floor(2.0 / 3.0 * (n_rfft - 1)))
    mask[cutoff + 1:] = 0.0
    return mask


def _integrate(u0: np.ndarray, lin: np.ndarray, nonlinear, dt: float,
               t_samples: np.ndarray, blowup: float, method_id: str,
               x_grid: np.ndarray, x_period: float, modes: int):
    """March ETDRK4 and collect the requested time slices."""
    steps = np.diff(t_samples) / dt
    n_steps = np.round(steps).astype(int)
    if np.any(np.abs(steps - n_steps) > 1e-8):
        raise OracleError(
            "sample times must be integer multiples of dt "
            f"(dt={dt}, sample spacing {np.diff(t_samples)[:3]}...)"
        )
    e_half, e_full, q, f1, f2, f3 = _etdrk4_coeffs(lin, dt)
    v = np.fft.rfft(u0)
    out = [u0.copy()]
    for n in n_steps:
        for _ in range(n):
            nv = nonlinear(v)
            a = e_half * v + q * nv
            na = nonlinear(a)
            b = e_half * v + q * na
            nb = nonlinear(b)
            c = e_half * a + q * (2 * nb - nv)
            nc = nonlinear(c)
            v = e_full * v + f1 * nv + 2 * f2 * (na + nb) + f3 * nc
        u = np.fft.irfft(v)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > blowup:
            raise OracleError(
                f"spectral solve blew up (|u| > {blowup}); reduce dt"
            )
        out.append(u)
    return SpectralSolution(
        x_grid=x_grid,
        t_grid=np.asarray(t_samples, dtype=float),
        field=np.asarray(out),
        modes=modes,
        dt=dt,
        method_id=method_id,
        x_period=x_period,
    )


def solve_allen_cahn_spectral(modes: int = 512, dt: float = 1e-4,
                              t_samples=None) -> SpectralSolution:
    """Reaction-diffusion trajectory u_t = 1e-4 u_xx + 5(u - u^3) on
    x in [-1, 1) periodic, from u(0, x) = x^2 cos(pi x)."""
    if modes < 64:
        raise OracleError("need at least 64 modes")
    if dt > 1e-3:
        raise OracleError("dt must be <= 1e-3")
    if t_samples is None:
        t_samples = np.linspace(0.0, 1.0, 101)
    t_samples = np.asarray(t_samples, dtype=float)
    x = -1.0 + 2.0 * np.arange(modes) / modes
    k = np.pi * np.arange(modes // 2 + 1)
    lin = -1e-4 * k**2 + 5.0
    mask = _dealias_mask(k.size)

    def nonlinear(v):
        u = np.fft.irfft(v * mask)
        return -5.0 * np.fft.rfft(u**3) * mask

    u0 = allen_cahn_initial(x)[:, 0]
    return _integrate(u0, lin, nonlinear, dt, t_samples, blowup=10.0,
                      method_id="etdrk4-allen-cahn", x_grid=x, x_period=2.0,
                      modes=modes)


def solve_ks_spectral(coeffs, u0_fn=None, modes: int = 512, dt: float = 2.5e-5,
                      t_samples=None) -> SpectralSolution:
    """Fourth-order dispersion trajectory u_t = -a u u_x - b u_xx - c u_xxxx
    on x in [0, 2 pi) periodic."""
    a, b, c = coeffs
    if modes < 64:
        raise OracleError("need at least 64 modes")
    if t_samples is None:
        t_samples = np.linspace(0.0, 1.0, 101)
    t_samples = np.asarray(t_samples, dtype=float)
    x = 2.0 * np.pi * np.arange(modes) / modes
    k = np.arange(modes // 2 + 1).astype(float)
    lin = b * k**2 - c * k**4
    mask = _dealias_mask(k.size)

    if u0_fn is None:
        u0 = np.cos(x) * (1.0 + np.sin(x))
    else:
        u0 = np.asarray(u0_fn(x), dtype=float)

    def nonlinear(v):
        u = np.fft.irfft(v * mask)
        return -0.5j * a * k * np.fft.rfft(u**2) * mask

    return _integrate(u0, lin, nonlinear, dt, t_samples, blowup=50.0,
                      method_id="etdrk4-ks", x_grid=x, x_period=2.0 * np.pi,
                      modes=modes)


# ---------------------------------------------------------------------------
# evaluation at arbitrary points


def _trig_interp_slice(field_slice: np.ndarray, x_grid: np.ndarray,
                       x_period: float, xq: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of one periodic slice at query x."""
    k = field_slice.size
    coeff = np.fft.rfft(field_slice) / k
    modes = np.arange(coeff.size)
    # interior modes count twice (conjugate pairs); Nyquist and DC once
    weights = np.full(coeff.size, 2.0)
    weights[0] = 1.0
    if k % 2 == 0:
        weights[-1] = 1.0
    ang = (2.0 * np.pi / x_period) * (xq - x_grid[0])
    phases = np.exp(1j * np.outer(ang, modes))
    return np.real(phases @ (weights * coeff))


def oracle_eval(sol: SpectralSolution, pts: np.ndarray) -> np.ndarray:
    """Evaluate a trajectory at (t, x) points.

    Trigonometric interpolation in x; cubic Lagrange interpolation in t
    between stored slices.  Queries that land on stored nodes return the
    stored values.
    """
    pts = np.atleast_2d(pts)
    t, xq = pts[:, 0], pts[:, 1]
    t0, t1 = sol.t_grid[0], sol.t_grid[-1]
    if np.any(t < t0 - 1e-12) or np.any(t > t1 + 1e-12):
        raise OracleError(
            f"query times outside the solved window [{t0}, {t1}]"
        )
    out = np.empty(pts.shape[0])
    # group queries by time so each slice interpolates once
    order = np.argsort(t, kind="stable")
    i = 0
    ts = sol.t_grid
    while i < order.size:
        j = i
        tv = t[order[i]]
        while j < order.size and t[order[j]] <= tv + 1e-12:
            j += 1
        sel = order[i:j]
        node = np.argmin(np.abs(ts - tv))
        if abs(ts[node] - tv) <= 1e-12:
            vals = _eval_x(sol, node, xq[sel])
        else:
            lo = int(np.clip(np.searchsorted(ts, tv) - 2, 0, ts.size - 4))
            stencil = range(lo, lo + 4)
            vals = np.zeros(sel.size)
            for m in stencil:
                w = 1.0
                for n in stencil:
                    if n != m:
                        w *= (tv - ts[n]) / (ts[m] - ts[n])
                vals += w * _eval_x(sol, m, xq[sel])
        out[sel] = vals
        i = j
    return out.reshape(-1, 1)


def _eval_x(sol: SpectralSolution, slice_idx: int, xq: np.ndarray) -> np.ndarray:
    xs = sol.x_grid
    dx = xs[1] - xs[0]
    rel = (xq - xs[0]) / dx
    near = np.round(rel)
    on_node = np.abs(rel - near) <= 1e-12
    vals = np.empty(xq.size)
    if np.any(on_node):
        idx = (near[on_node].astype(int)) % xs.size
        vals[on_node] = sol.field[slice_idx][idx]
    if np.any(~on_node):
        vals[~on_node] = _trig_interp_slice(
            sol.field[slice_idx], xs, sol.x_period, xq[~on_node]
        )
    return vals


# ---------------------------------------------------------------------------
# cache and registry


def cache_dir() -> Path:
    root = os.environ.get(_CACHE_ENV)
    if root:
        path = Path(root)
    else:
        path = Path.home() / ".cache" / "hyrespinn" / "oracles"
    path.mkdir(parents=True, exist_ok=True)
    return path


# Scoring defaults.  The reaction-diffusion solution develops interfaces of
# width ~6e-3, so 1024 modes are needed before truncation error (~5e-5)
# stops being visible next to model errors.
_ORACLE_DEFAULTS = {
    "allen-cahn": {"modes": 1024, "dt": 1e-4},
    "ks-regular": {"modes": 512, "dt": 1e-4},
    "ks-chaotic": {"modes": 512, "dt": 2.5e-5},
}

_MEMORY_CACHE: dict = {}


def _solve(oracle_id: str, modes: int, dt: float) -> SpectralSolution:
    if oracle_id == "allen-cahn":
        return solve_allen_cahn_spectral(modes=modes, dt=dt)
    if oracle_id == "ks-regular":
        return solve_ks_spectral(KS_REGULAR_COEFFS, modes=modes, dt=dt)
    if oracle_id == "ks-chaotic":
        return solve_ks_spectral(KS_CHAOTIC_COEFFS, modes=modes, dt=dt)
    raise OracleError(f"no reference solver for {oracle_id!r}")


def reference_solution(oracle_id: str, modes: int | None = None,
                       dt: float | None = None,
                       use_cache: bool = True) -> SpectralSolution:
    """Build or load the cached reference trajectory for a problem id."""
    defaults = _ORACLE_DEFAULTS.get(oracle_id)
    if defaults is None:
        raise OracleError(f"no reference solver for {oracle_id!r}")
    modes = modes or defaults["modes"]
    dt = dt or defaults["dt"]
    header = {
        "oracle": oracle_id,
        "modes": modes,
        "dt": dt,
        "u0": "default",
        "method": "etdrk4",
        "t_samples": 101,
    }
    key = hashlib.sha256(
        json.dumps(header, sort_keys=True).encode()
    ).hexdigest()[:16]
    if use_cache and key in _MEMORY_CACHE:
        return _MEMORY_CACHE[key]
    path = cache_dir() / f"{oracle_id}-{key}.npz"
    if use_cache and path.exists():
        data = np.load(path, allow_pickle=False)
        sol = SpectralSolution(
            x_grid=data["x_grid"], t_grid=data["t_grid"], field=data["field"],
            modes=int(data["modes"]), dt=float(data["dt"]),
            method_id=str(data["method_id"]), x_period=float(data["x_period"]),
        )
        _MEMORY_CACHE[key] = sol
        return sol
    sol = _solve(oracle_id, modes, dt)
    if use_cache:
        np.savez(
            path, x_grid=sol.x_grid, t_grid=sol.t_grid, field=sol.field,
            modes=sol.modes, dt=sol.dt, method_id=sol.method_id,
            x_period=sol.x_period, header=json.dumps(header, sort_keys=True),
        )
        _MEMORY_CACHE[key] = sol
    return sol


def self_convergence(oracle_id: str, modes: int | None = None,
                     dt: float | None = None) -> float:
    """Relative L2 change of the final slice when modes double and dt
    halves; the grid-refinement convergence diagnostic."""
    defaults = _ORACLE_DEFAULTS[oracle_id]
    modes = modes or defaults["modes"]
    dt = dt or defaults["dt"]
    coarse = _solve(oracle_id, modes, dt)
    fine = _solve(oracle_id, modes * 2, dt / 2)
    uc = coarse.final_slice()
    uf = fine.final_slice()[::2]
    return float(np.linalg.norm(uf - uc) / np.linalg.norm(uf))
