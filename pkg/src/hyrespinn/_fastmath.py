"""Fused numeric helpers for the hot paths of the autodiff engine.

Each function computes plain float64 numpy values in a single pass (numba
when available, vectorized numpy otherwise).  They carry no differentiation
logic themselves; the engine records them as single operations and expresses
their backward rules in ordinary recorded ops.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import os

import numpy as np

__all__ = ["one_minus_sq", "mix_val", "r_from_gram", "horner_masked",
           "tune_allocator"]


def tune_allocator() -> bool:
    """Keep large numpy temporaries on the heap instead of fresh mmaps.

    The engine allocates and frees megabyte-scale arrays thousands of times
    per training step; with glibc defaults those round-trip through mmap and
    page-fault zeroing, which dominates the step time.  Opt out with
    HYRESPINN_NO_MALLOC_TUNING=1.
    """
    if os.environ.get("HYRESPINN_NO_MALLOC_TUNING"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"))
        m_mmap_threshold, m_trim_threshold = -3, -1
        ok = libc.mallopt(m_mmap_threshold, 1 << 30)
        ok &= libc.mallopt(m_trim_threshold, 1 << 30)
        return bool(ok)
    except (OSError, AttributeError, TypeError):
        return False


try:
    import numba

    @numba.njit(fastmath=False)
    def _one_minus_sq_kernel(y, out):
        for i in range(y.shape[0]):
            out[i] = 1.0 - y[i] * y[i]

    @numba.njit(fastmath=False)
    def _mix_kernel(phi, a, b, out):
        q = 1.0 - phi
        for i in range(a.shape[0]):
            out[i] = phi * a[i] + q * b[i]

    @numba.njit(fastmath=False)
    def _r_from_gram_kernel(rowsq, cross, csq, eps, out):
        for i in range(cross.shape[0]):
            ri = rowsq[i]
            for j in range(cross.shape[1]):
                d2 = ri - 2.0 * cross[i, j] + csq[j]
                if d2 < 0.0:
                    d2 = 0.0
                out[i, j] = np.sqrt(d2 + eps)

    def _build_horner_kernel(coeffs):
        # Unrolled Horner with literal coefficients so the loop vectorizes.
        expr = repr(coeffs[-1])
        for c in coeffs[-2::-1]:
            expr = f"({expr}) * ui + {c!r}"
        src = (
            "def _kern(u, out):\n"
            "    for i in range(u.shape[0]):\n"
            "        ui = u[i]\n"
            "        if ui >= 1.0:\n"
            "            out[i] = 0.0\n"
            "        else:\n"
            f"            out[i] = {expr}\n"
        )
        ns: dict = {}
        exec(src, ns)
        return numba.njit(fastmath=False)(ns["_kern"])

    def one_minus_sq(y: np.ndarray) -> np.ndarray:
        out = np.empty(y.shape)
        _one_minus_sq_kernel(np.ascontiguousarray(y).ravel(), out.ravel())
        return out

    def mix_val(phi: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.empty(a.shape)
        _mix_kernel(phi, np.ascontiguousarray(a).ravel(),
                    np.ascontiguousarray(b).ravel(), out.ravel())
        return out

    def r_from_gram(rowsq, cross, csq, eps: float) -> np.ndarray:
        out = np.empty_like(cross)
        _r_from_gram_kernel(rowsq, cross, csq, eps, out)
        return out

    _horner_cache: dict = {}

    def horner_masked(u: np.ndarray, coeffs) -> np.ndarray:
        key = tuple(float(c) for c in coeffs)
        kern = _horner_cache.get(key)
        if kern is None:
            kern = _horner_cache[key] = _build_horner_kernel(key)
        out = np.empty(u.shape)
        kern(np.ascontiguousarray(u).ravel(), out.ravel())
        return out

except ImportError:  # pragma: no cover - numba is a declared dependency

    def one_minus_sq(y):
        return 1.0 - y * y

    def mix_val(phi, a, b):
        return phi * a + (1.0 - phi) * b

    def r_from_gram(rowsq, cross, csq, eps):
        d2 = rowsq[:, None] - 2.0 * cross + csq[None, :]
        np.maximum(d2, 0.0, out=d2)
        d2 += eps
        return np.sqrt(d2, out=d2)

    def horner_masked(u, coeffs):
        acc = np.full_like(u, coeffs[-1])
        for c in coeffs[-2::-1]:
            acc *= u
            acc += c
        return np.where(u >= 1.0, 0.0, acc)
