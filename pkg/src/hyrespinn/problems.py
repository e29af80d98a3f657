"""Benchmark PDE problems: residual operators, domains, data, exact fields.

Residual operators take a model (a Var -> Var field) and plain collocation
points; all derivatives of the field go through the recording engine so the
result stays differentiable with respect to the model parameters.

Problems are immutable after construction and registered under string ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .domains import Annulus2d, Box2d, Domain, ExtrudedAnnulus3d, TimeSlab
from .models import EmbeddingSpec

__all__ = [
    "ProblemError",
    "CoefficientField",
    "PdeProblem",
    "allen_cahn_residual",
    "darcy_residual",
    "flux",
    "ks_residual",
    "PROBLEM_IDS",
    "make_problem",
    "KS_CHAOTIC_COEFFS",
    "KS_REGULAR_COEFFS",
    "FIVE_STRIP_VALUES",
]

FIVE_STRIP_VALUES = (16.0, 6.0, 1.0, 10.0, 2.0)
STRIP_HEIGHT = 0.2
_INTERFACE_EPS = 1e-9

# Fourth-order dispersion family u_t + a u u_x + b u_xx + c u_xxxx = 0.
# The chaotic set scales a classic benchmark by powers of 16; the regular
# set is a mild configuration with the same signs.
KS_CHAOTIC_COEFFS = (100.0 / 16.0, 100.0 / 16.0**2, 100.0 / 16.0**4)
KS_REGULAR_COEFFS = (5.0, 0.5, 0.005)

AC_DIFFUSIVITY = 1e-4


class ProblemError(ValueError):
    """Ill-posed request against a problem definition."""


@dataclass(frozen=True)
class CoefficientField:
    """Material coefficient: constant, or five horizontal strips on the
    unit square with values (16, 6, 1, 10, 2) ordered by y."""

    kind: str = "constant"
    value: float = 1.0

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.kind == "constant":
            return np.full((pts.shape[0], 1), self.value)
        if self.kind != "five-strip":
            raise ProblemError(f"unknown coefficient field {self.kind!r}")
        y = pts[:, 1]
        near = np.abs(y / STRIP_HEIGHT - np.round(y / STRIP_HEIGHT))
        on_interface = (near * STRIP_HEIGHT < 1e-12) & (y > 1e-12) & (y < 1 - 1e-12)
        if np.any(on_interface):
            raise ProblemError(
                "coefficient undefined on a strip interface "
                f"(y = {y[on_interface][0]!r})"
            )
        idx = np.clip(np.floor(y / STRIP_HEIGHT).astype(int), 0, 4)
        return np.asarray(FIVE_STRIP_VALUES)[idx].reshape(-1, 1)

    def strip_index(self, pts: np.ndarray) -> np.ndarray:
        if self.kind != "five-strip":
            raise ProblemError("strip_index applies to the five-strip field")
        y = np.atleast_2d(pts)[:, 1]
        return np.clip(np.floor(y / STRIP_HEIGHT).astype(int), 0, 4)


# ---------------------------------------------------------------------------
# residual operators


def _laplacian(u: Var, x: Var) -> Var:
    g1 = ad.batch_gradient(u, x)
    lap = None
    for k in range(x.shape[1]):
        second = ad.cols(ad.batch_gradient(ad.cols(g1, k, k + 1), x), k, k + 1)
        lap = second if lap is None else ad.add(lap, second)
    return lap


def allen_cahn_residual(model_fn, pts: np.ndarray) -> Var:
    """u_t - 1e-4 u_xx + 5 u^3 - 5 u at (t, x) points."""
    x = Var(pts, requires_grad=True)
    u = model_fn(x)
    g1 = ad.batch_gradient(u, x)
    ut = ad.cols(g1, 0, 1)
    ux = ad.cols(g1, 1, 2)
    uxx = ad.cols(ad.batch_gradient(ux, x), 1, 2)
    cubic = ad.mul(u, ad.mul(u, u))
    return ad.add(
        ad.sub(ut, ad.mul(Var(AC_DIFFUSIVITY), uxx)),
        ad.mul(Var(5.0), ad.sub(cubic, u)),
    )


def allen_cahn_initial(x: np.ndarray) -> np.ndarray:
    """Starting profile x^2 cos(pi x)."""
    return (x**2 * np.cos(np.pi * x)).reshape(-1, 1)


def darcy_residual(model_fn, pts: np.ndarray, mu: CoefficientField,
                   forcing=None) -> Var:
    """-mu * laplacian(u) - f; valid off coefficient interfaces, where the
    piecewise-constant field has zero gradient."""
    mu_vals = mu.evaluate(pts)
    x = Var(pts, requires_grad=True)
    u = model_fn(x)
    lap = _laplacian(u, x)
    res = ad.neg(ad.mul(Var(mu_vals), lap))
    if forcing is not None:
        res = ad.sub(res, Var(forcing(pts)))
    return res


def flux(model_fn, pts: np.ndarray, mu: CoefficientField) -> Var:
    """Flux -mu * grad(u), one column per space dimension."""
    mu_vals = mu.evaluate(pts)
    x = Var(pts, requires_grad=True)
    u = model_fn(x)
    g1 = ad.batch_gradient(u, x)
    return ad.neg(ad.mul(Var(mu_vals), g1))


def ks_residual(model_fn, pts: np.ndarray, coeffs) -> Var:
    """u_t + a u u_x + b u_xx + c u_xxxx at (t, x) points."""
    a, b, c = coeffs
    x = Var(pts, requires_grad=True)
    u = model_fn(x)
    g1 = ad.batch_gradient(u, x)
    ut = ad.cols(g1, 0, 1)
    ux = ad.cols(g1, 1, 2)
    uxx = ad.cols(ad.batch_gradient(ux, x), 1, 2)
    uxxx = ad.cols(ad.batch_gradient(uxx, x), 1, 2)
    uxxxx = ad.cols(ad.batch_gradient(uxxx, x), 1, 2)
    res = ad.add(ut, ad.mul(Var(a), ad.mul(u, ux)))
    res = ad.add(res, ad.mul(Var(b), uxx))
    return ad.add(res, ad.mul(Var(c), uxxxx))


# ---------------------------------------------------------------------------
# problem container


@dataclass(frozen=True)
class PdeProblem:
    """One benchmark: operators, data, and exact fields when available."""

    name: str
    domain: Domain
    residual: callable  # (model_fn, pts) -> Var
    boundary_residual: callable | None = None  # (model_fn, label, pts, normals)
    initial_residual: callable | None = None  # (model_fn, pts) -> Var
    exact: callable | None = None  # pts -> (N, 1)
    exact_flux: callable | None = None  # pts -> (N, d)
    exact_model: callable | None = None  # () -> model_fn for self-consistency
    mu: CoefficientField | None = None
    periodic: tuple = ()  # ((dim, length), ...)
    sampling: str = "static"  # static | minibatch
    oracle: str | None = None  # reference solver id when no closed form
    pin: tuple | None = None  # (point (d,), value)
    prepare_interior: callable = field(default=lambda pts: pts)

    @property
    def time_dependent(self) -> bool:
        return self.domain.time_dependent

    def default_embedding(self) -> EmbeddingSpec:
        """Fourier features, wrapping periodic dimensions exactly."""
        if self.periodic:
            return EmbeddingSpec(kind="fourier+periodic",
                                 period_lengths=self.periodic)
        return EmbeddingSpec(kind="fourier")

    def boundary_exact_with(self, emb: EmbeddingSpec) -> bool:
        """True when the embedding already enforces every periodic pairing,
        making the boundary loss identically zero."""
        if not self.periodic:
            return False
        declared = emb.periodic_dims
        return all(
            dim in declared and abs(declared[dim] - length) < 1e-12
            for dim, length in self.periodic
        )


def _periodic_pair_residual(model_fn, pts, lo: float, hi: float) -> Var:
    """u at (t, lo) minus u at (t, hi) for soft periodic enforcement."""
    left = pts.copy()
    left[:, 1] = lo
    right = pts.copy()
    right[:, 1] = hi
    return ad.sub(model_fn(Var(left)), model_fn(Var(right)))


def _neumann_residual(model_fn, pts, normals, mu: CoefficientField, g_fn) -> Var:
    mu_vals = mu.evaluate(pts)
    x = Var(pts, requires_grad=True)
    u = model_fn(x)
    g1 = ad.batch_gradient(u, x)
    flux_n = ad.row_sums(ad.mul(g1, Var(normals)))
    return ad.sub(ad.mul(Var(mu_vals), flux_n), Var(g_fn(pts)))


def _dirichlet_residual(model_fn, pts, exact_fn) -> Var:
    return ad.sub(model_fn(Var(pts)), Var(exact_fn(pts)))


# ---------------------------------------------------------------------------
# concrete problems


def _allen_cahn() -> PdeProblem:
    domain = TimeSlab(0.0, 1.0, -1.0, 1.0)

    def boundary(model_fn, label, pts, normals):
        return _periodic_pair_residual(model_fn, pts, -1.0, 1.0)

    def initial(model_fn, pts):
        return ad.sub(model_fn(Var(pts)),
                      Var(allen_cahn_initial(pts[:, 1])))

    return PdeProblem(
        name="allen-cahn",
        domain=domain,
        residual=allen_cahn_residual,
        boundary_residual=boundary,
        initial_residual=initial,
        periodic=((1, 2.0),),
        sampling="minibatch",
        oracle="allen-cahn",
    )


def _ks(name: str, coeffs) -> PdeProblem:
    domain = TimeSlab(0.0, 1.0, 0.0, 2.0 * np.pi)

    def residual(model_fn, pts):
        return ks_residual(model_fn, pts, coeffs)

    def boundary(model_fn, label, pts, normals):
        return _periodic_pair_residual(model_fn, pts, 0.0, 2.0 * np.pi)

    def initial(model_fn, pts):
        x = pts[:, 1]
        u0 = (np.cos(x) * (1.0 + np.sin(x))).reshape(-1, 1)
        return ad.sub(model_fn(Var(pts)), Var(u0))

    return PdeProblem(
        name=name,
        domain=domain,
        residual=residual,
        boundary_residual=boundary,
        initial_residual=initial,
        periodic=((1, 2.0 * np.pi),),
        sampling="static",
        oracle=name,
    )


def _sin_product_exact(dim: int):
    def u(pts):
        pts = np.atleast_2d(pts)
        out = np.ones(pts.shape[0])
        for k in range(dim):
            out = out * np.sin(pts[:, k])
        return out.reshape(-1, 1)

    def grad_u(pts):
        pts = np.atleast_2d(pts)
        cols = []
        for k in range(dim):
            g = np.ones(pts.shape[0])
            for j in range(dim):
                g = g * (np.cos(pts[:, j]) if j == k else np.sin(pts[:, j]))
            cols.append(g)
        return np.column_stack(cols)

    def model():
        def fn(x):
            out = ad.sin(ad.cols(x, 0, 1))
            for k in range(1, dim):
                out = ad.mul(out, ad.sin(ad.cols(x, k, k + 1)))
            return out

        return fn

    return u, grad_u, model


def _darcy_smooth(name: str, dim: int, bc: str) -> PdeProblem:
    domain = Annulus2d() if dim == 2 else ExtrudedAnnulus3d()
    mu = CoefficientField("constant", 1.0)
    u_ex, grad_ex, exact_model = _sin_product_exact(dim)

    def forcing(pts):
        # -laplacian(sin products) = dim * product
        return dim * u_ex(pts)

    def residual(model_fn, pts):
        return darcy_residual(model_fn, pts, mu, forcing)

    def ex_flux(pts):
        return -grad_ex(pts)

    if bc == "dirichlet":
        def boundary(model_fn, label, pts, normals):
            return _dirichlet_residual(model_fn, pts, u_ex)

        pin = None
    else:
        def boundary(model_fn, label, pts, normals):
            def g(p):
                return np.sum(grad_ex(p) * normals, axis=1, keepdims=True)

            return _neumann_residual(model_fn, pts, normals, mu, g)

        r_pin, th_pin = 1.5, np.pi / 4.0
        point = [r_pin * np.cos(th_pin), r_pin * np.sin(th_pin)]
        if dim == 3:
            point.append(0.5)
        point = np.asarray(point)
        pin = (point, float(u_ex(point.reshape(1, -1))[0, 0]))

    return PdeProblem(
        name=name,
        domain=domain,
        residual=residual,
        boundary_residual=boundary,
        exact=u_ex,
        exact_flux=ex_flux,
        exact_model=exact_model,
        mu=mu,
        sampling="static",
        pin=pin,
    )


def _five_strip() -> PdeProblem:
    domain = Box2d(0.0, 1.0, 0.0, 1.0)
    mu = CoefficientField("five-strip")

    def u_ex(pts):
        pts = np.atleast_2d(pts)
        return (1.0 - pts[:, 0]).reshape(-1, 1)

    def ex_flux(pts):
        # -mu grad(1 - x) = (mu, 0): the transverse component jumps with mu,
        # the normal (y) component is identically zero.
        m = mu.evaluate(pts)
        return np.column_stack([m[:, 0], np.zeros(m.shape[0])])

    def exact_model():
        return lambda x: ad.sub(Var(1.0), ad.cols(x, 0, 1))

    def residual(model_fn, pts):
        return darcy_residual(model_fn, pts, mu, None)

    def boundary(model_fn, label, pts, normals):
        def g(p):
            m = mu.evaluate(p)
            grad_exact = np.column_stack(
                [-np.ones(p.shape[0]), np.zeros(p.shape[0])]
            )
            return np.sum(m * grad_exact * normals, axis=1, keepdims=True)

        return _neumann_residual(model_fn, pts, normals, mu, g)

    def prepare(pts):
        # keep collocation points off the coefficient interfaces
        pts = np.array(pts, copy=True)
        y = pts[:, 1]
        k = np.round(y / STRIP_HEIGHT)
        near = np.abs(y - k * STRIP_HEIGHT) < _INTERFACE_EPS
        inner = near & (k > 0) & (k < 5)
        pts[inner, 1] = k[inner] * STRIP_HEIGHT + 2 * _INTERFACE_EPS
        return pts

    return PdeProblem(
        name="darcy2d-rough-neumann",
        domain=domain,
        residual=residual,
        boundary_residual=boundary,
        exact=u_ex,
        exact_flux=ex_flux,
        exact_model=exact_model,
        mu=mu,
        sampling="static",
        pin=(np.array([0.0, 0.5]), 1.0),
        prepare_interior=prepare,
    )


PROBLEM_IDS = (
    "allen-cahn",
    "darcy2d-smooth-dirichlet",
    "darcy2d-smooth-neumann",
    "darcy3d-smooth-dirichlet",
    "darcy3d-smooth-neumann",
    "darcy2d-rough-neumann",
    "ks-regular",
    "ks-chaotic",
)


def make_problem(problem_id: str) -> PdeProblem:
    """Build a registered benchmark problem by id."""
    if problem_id == "allen-cahn":
        return _allen_cahn()
    if problem_id == "ks-regular":
        return _ks("ks-regular", KS_REGULAR_COEFFS)
    if problem_id == "ks-chaotic":
        return _ks("ks-chaotic", KS_CHAOTIC_COEFFS)
    if problem_id == "darcy2d-rough-neumann":
        return _five_strip()
    parts = problem_id.split("-")
    if (len(parts) == 3 and parts[0] in ("darcy2d", "darcy3d")
            and parts[1] == "smooth" and parts[2] in ("dirichlet", "neumann")):
        dim = 2 if parts[0] == "darcy2d" else 3
        return _darcy_smooth(problem_id, dim, parts[2])
    raise ProblemError(
        f"unknown problem id {problem_id!r}; known ids: {', '.join(PROBLEM_IDS)}"
    )
