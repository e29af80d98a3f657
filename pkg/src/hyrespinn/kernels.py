"""Compactly supported Wendland C4 radial kernel and its derivative family.

The kernel profile is the degree-8 piecewise polynomial

    P(u) = (1 - u)^6 (35 u^2 + 18 u + 3)   for u in [0, 1),   0 for u >= 1,

evaluated at u = r / tau.  P(0) = 3 and P and its first five derivatives
vanish at the support edge u = 1, so masked polynomial evaluation is exact
for every derivative order used here.

Each derivative order is a single recorded operation whose backward rule
reaches for the next order: d P_k / du = P_{k+1}.  That keeps the graph
small under nested differentiation (fourth spatial derivatives of an RBF
network ask for P_4, and their parameter gradients for P_5) and lets the
inner polynomial run as one fused pass instead of a dozen temporaries.

``pairwise_r`` builds the query-to-center distance matrix against a fixed
center set as a single operation, using the Gram expansion so no N x Nc x q
intermediate is ever materialized.
"""

from __future__ import annotations

import numpy as np

from . import _fastmath
from . import autodiff as ad
from .autodiff import Var

__all__ = [
    "wendland_c4",
    "wendland_profile",
    "pairwise_r",
    "MAX_PROFILE_ORDER",
    "KernelError",
]


class KernelError(ValueError):
    """Invalid kernel arguments (nonpositive scale, negative radius...)."""


# Ascending coefficients of P and d^k P / du^k; the profile is C4 in the
# radial variable, so orders up to 5 are well defined pointwise.
_PROFILE_COEFFS = tuple(
    np.asarray(c, dtype=np.float64)
    for c in (
        (3.0, 0.0, -28.0, 0.0, 210.0, -448.0, 420.0, -192.0, 35.0),
        (0.0, -56.0, 0.0, 840.0, -2240.0, 2520.0, -1344.0, 280.0),
        (-56.0, 0.0, 2520.0, -8960.0, 12600.0, -8064.0, 1960.0),
        (0.0, 5040.0, -26880.0, 50400.0, -40320.0, 11760.0),
        (5040.0, -53760.0, 151200.0, -161280.0, 58800.0),
        (-53760.0, 302400.0, -483840.0, 235200.0),
    )
)

MAX_PROFILE_ORDER = len(_PROFILE_COEFFS) - 1

# Floor added under the square root of squared distances: keeps the radial
# chain differentiable if a query ever lands exactly on a center.
_R_EPS = 1e-30


def wendland_profile(u, order: int = 0) -> np.ndarray:
    """Evaluate d^order P / du^order at plain numpy values."""
    if not 0 <= order <= MAX_PROFILE_ORDER:
        raise KernelError(
            f"profile derivative order {order} outside supported range "
            f"[0, {MAX_PROFILE_ORDER}]"
        )
    u = np.asarray(u, dtype=np.float64)
    shaped = np.atleast_1d(u)
    out = _fastmath.horner_masked(shaped, _PROFILE_COEFFS[order])
    return out.reshape(u.shape)


def _vjp_wendland(g, out, needed):
    r, tau = out._parents
    order = out._ctx
    nxt = _wendland_op(r, tau, order + 1)
    t = ad.mul(g, nxt)
    inv_tau = ad.reciprocal(tau)
    dr = ad.mul(t, inv_tau) if needed[0] else None
    dtau = None
    if needed[1]:
        dtau = ad._sum_to(ad.mul(t, r), tau.shape)
        dtau = ad.neg(ad.mul(dtau, ad.mul(inv_tau, inv_tau)))
    return (dr, dtau)


def _wendland_op(r: Var, tau: Var, order: int) -> Var:
    if order > MAX_PROFILE_ORDER:
        raise KernelError(
            "nested differentiation through the Wendland kernel exceeded its "
            f"C4 smoothness (needs profile order {order})"
        )
    # Each derivative order is built once per (r, tau) pair and shared by
    # every backward pass that touches the kernel.  A node cached without
    # recording is not reused while recording is on and either input is
    # tracked, since that would detach the graph.
    key = ("wendland", id(tau), order)
    cache = r._cache
    if cache is not None:
        node = cache.get(key)
        if node is not None and (
            node.requires_grad
            or not ad._grad_enabled
            or not (r.requires_grad or tau.requires_grad)
        ):
            return node
    u = np.divide(r.value, tau.value)
    value = _fastmath.horner_masked(u, _PROFILE_COEFFS[order])
    node = ad._make(value, (r, tau), _vjp_wendland, f"wendland[{order}]",
                    ctx=order)
    ad._cache_put(r, key, node)
    return node


def wendland_c4(r, tau) -> Var:
    """Kernel matrix psi(r; tau) for radii r (N x Nc) and scales tau (Nc,).

    Exactly zero wherever r >= tau; differentiable in both r and tau.
    Scalars and equal shapes broadcast the numpy way.
    """
    r = ad.as_var(r)
    tau = ad.as_var(tau)
    if np.any(tau.value <= 0.0):
        raise KernelError("kernel scale tau must be strictly positive")
    if np.any(r.value < 0.0):
        raise KernelError("kernel radius must be nonnegative")
    try:
        np.broadcast_shapes(r.shape, tau.shape)
    except ValueError as e:
        raise KernelError(
            f"radius shape {r.shape} and scale shape {tau.shape} do not broadcast"
        ) from e
    return _wendland_op(r, tau, 0)


def _vjp_pairwise_r(g, out, needed):
    (a,) = out._parents
    centers, _ = out._ctx
    # dr/da_i = sum_j g_ij (a_i - c_j) / r_ij, assembled without the big
    # difference tensor: a * rowsum(g/r) - (g/r) @ C.
    gt = ad.mul(g, ad.reciprocal(out))
    da = ad.sub(ad.mul(a, ad.row_sums(gt)), ad.matmul(gt, Var(centers)))
    return (da,)


def pairwise_r(a: Var, centers: np.ndarray) -> Var:
    """Distances from query rows to a fixed center set, (N, q) -> (N, Nc)."""
    a = ad.as_var(a)
    centers = np.asarray(centers, dtype=np.float64)
    if a.ndim != 2 or centers.ndim != 2 or a.shape[1] != centers.shape[1]:
        raise ad.ShapeError(
            f"pairwise_r: query shape {a.shape} and center shape "
            f"{centers.shape} do not share a feature dimension"
        )
    csq = np.einsum("ij,ij->i", centers, centers)
    rowsq = np.einsum("ij,ij->i", a.value, a.value)
    cross = a.value @ centers.T
    value = _fastmath.r_from_gram(rowsq, cross, csq, _R_EPS)
    return ad._make(value, (a,), _vjp_pairwise_r, "pairwise_r", ctx=(centers, csq))
