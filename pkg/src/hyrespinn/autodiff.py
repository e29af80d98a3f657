"""Reverse-mode automatic differentiation over float64 numpy arrays.

The engine records a computation graph as operations execute: every
:class:`Var` produced by an operation keeps references to its parents and a
backward rule.  ``grad`` replays the recorded operations in reverse creation
order, pruning branches that cannot reach the requested inputs.  When called
with ``create_graph=True`` the backward rules themselves execute as recorded
operations, so gradients are again differentiable; this is how second and
fourth derivatives of network outputs are obtained (the backward pass of a
backward pass is just more graph).

Everything is float64.  Values are treated as immutable once wrapped; public
operations validate shapes and, when finite checking is enabled, reject any
NaN/Inf result immediately instead of letting it poison a training run.

A graph is confined to the worker that built it.  Independent graphs (e.g.
parallel seeds in separate processes) never share state.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from . import _fastmath

__all__ = [
    "AutodiffError",
    "ShapeError",
    "NonFiniteError",
    "Var",
    "as_var",
    "no_grad",
    "finite_checks",
    "grad",
    "batch_gradient",
    "jacobian_column",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "linear",
    "mix",
    "reciprocal",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "clamp_min",
    "vsum",
    "mean_sq",
    "row_sums",
    "rows",
    "pad_rows",
    "cols",
    "pad_cols",
    "concat_cols",
    "broadcast_to",
]

_fastmath.tune_allocator()


class AutodiffError(Exception):
    """Base class for engine errors."""


class ShapeError(AutodiffError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(AutodiffError):
    """An operation produced NaN or Inf."""


_vid_counter = itertools.count()
_grad_enabled = True
_finite_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (values still computed)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def finite_checks(enabled: bool):
    """Toggle per-operation NaN/Inf checking.

    Checks are on by default.  The training loop disables them for speed and
    instead validates loss terms and parameter gradients explicitly.
    """
    global _finite_enabled
    prev = _finite_enabled
    _finite_enabled = enabled
    try:
        yield
    finally:
        _finite_enabled = prev


class Var:
    """A float64 array (or scalar) tracked by the differentiation record."""

    __slots__ = ("value", "requires_grad", "_vid", "_parents", "_vjp", "_ctx",
                 "_cache")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._vid = next(_vid_counter)
        self._parents = ()
        self._vjp = None
        self._ctx = None
        self._cache = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Var":
        return Var(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_var(other))

    def __radd__(self, other):
        return add(as_var(other), self)

    def __sub__(self, other):
        return sub(self, as_var(other))

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, as_var(other))

    def __rmul__(self, other):
        return mul(as_var(other), self)

    def __truediv__(self, other):
        return div(self, as_var(other))

    def __rtruediv__(self, other):
        return div(as_var(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_var(other))


def as_var(x) -> Var:
    """Wrap scalars/arrays as constant Vars; pass Vars through."""
    if isinstance(x, Var):
        return x
    return Var(x)


def _make(value: np.ndarray, parents: tuple, vjp, name: str, ctx=None) -> Var:
    """Build an operation result node (hot path)."""
    if _finite_enabled and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{name} produced a non-finite result")
    v = Var.__new__(Var)
    v.value = value
    v._vid = next(_vid_counter)
    v._ctx = ctx
    v._cache = None
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                v.requires_grad = True
                v._parents = parents
                v._vjp = vjp
                return v
    v.requires_grad = False
    v._parents = ()
    v._vjp = None
    return v


def _cache_get(owner: Var, key):
    """Shared-subexpression lookup used by backward rules.

    Backward rules are invoked once per differentiation pass, so pieces that
    depend only on forward values (e.g. 1 - tanh(x)^2) are built once per
    node and reused.  A cached entry built without recording is not reused
    when recording is on, since it would silently detach the graph.
    """
    cache = owner._cache
    if cache is None:
        return None
    node = cache.get(key)
    if node is None:
        return None
    if node.requires_grad or not _grad_enabled or not owner.requires_grad:
        return node
    return None


def _cache_put(owner: Var, key, node: Var) -> Var:
    if owner._cache is None:
        owner._cache = {}
    owner._cache[key] = node
    return node


def _binary_value(a: Var, b: Var, op, name: str) -> np.ndarray:
    try:
        return op(a.value, b.value)
    except ValueError as e:
        raise ShapeError(
            f"{name}: operand shapes {a.shape} and {b.shape} are not compatible"
        ) from e


def _sum_to(v: Var, shape: tuple) -> Var:
    """Reduce a broadcast result back to a parent's shape (differentiable)."""
    if v.shape == shape:
        return v
    value = v.value
    extra = value.ndim - len(shape)
    if extra > 0:
        value = value.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and value.shape[i] != 1)
    if keep:
        value = value.sum(axis=keep, keepdims=True)
    value = np.asarray(value).reshape(shape)
    return _make(value, (v,), _vjp_sum_to, "sum_to")


def _vjp_sum_to(g, out, needed):
    (v,) = out._parents
    return (broadcast_to(g, v.shape),)


def _vjp_broadcast_to(g, out, needed):
    (v,) = out._parents
    return (_sum_to(g, v.shape),)


def broadcast_to(v: Var, shape: tuple) -> Var:
    """Broadcast to a larger shape (differentiable inverse of the reduction)."""
    v = as_var(v)
    if v.shape == shape:
        return v
    value = np.broadcast_to(v.value, shape)
    return _make(value, (v,), _vjp_broadcast_to, "broadcast_to")


# ---------------------------------------------------------------------------
# arithmetic


def _vjp_add(g, out, needed):
    a, b = out._parents
    return (
        _sum_to(g, a.shape) if needed[0] else None,
        _sum_to(g, b.shape) if needed[1] else None,
    )


def add(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(_binary_value(a, b, np.add, "add"), (a, b), _vjp_add, "add")


def _vjp_sub(g, out, needed):
    a, b = out._parents
    return (
        _sum_to(g, a.shape) if needed[0] else None,
        _sum_to(neg(g), b.shape) if needed[1] else None,
    )


def sub(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(_binary_value(a, b, np.subtract, "sub"), (a, b), _vjp_sub, "sub")


def _vjp_mul(g, out, needed):
    a, b = out._parents
    return (
        _sum_to(mul(g, b), a.shape) if needed[0] else None,
        _sum_to(mul(g, a), b.shape) if needed[1] else None,
    )


def mul(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(_binary_value(a, b, np.multiply, "mul"), (a, b), _vjp_mul, "mul")


def _vjp_div(g, out, needed):
    a, b = out._parents
    da = _sum_to(div(g, b), a.shape) if needed[0] else None
    db = _sum_to(neg(mul(g, div(out, b))), b.shape) if needed[1] else None
    return (da, db)


def div(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(_binary_value(a, b, np.divide, "div"), (a, b), _vjp_div, "div")


def _vjp_neg(g, out, needed):
    return (neg(g),)


def neg(a: Var) -> Var:
    a = as_var(a)
    return _make(np.negative(a.value), (a,), _vjp_neg, "neg")


def _vjp_transpose(g, out, needed):
    return (transpose(g),)


def transpose(a: Var) -> Var:
    a = as_var(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d operand, got shape {a.shape}")
    return _make(a.value.T, (a,), _vjp_transpose, "transpose")


def _vjp_matmul(g, out, needed):
    a, b = out._parents
    da = matmul(g, transpose(b)) if needed[0] else None
    db = matmul(transpose(a), g) if needed[1] else None
    return (da, db)


def matmul(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-d operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")
    return _make(a.value @ b.value, (a, b), _vjp_matmul, "matmul")


def _vjp_linear(g, out, needed):
    a, w, b = out._parents
    da = matmul(g, transpose(w)) if needed[0] else None
    dw = matmul(transpose(a), g) if needed[1] else None
    db = _sum_to(g, b.shape) if needed[2] else None
    return (da, dw, db)


def linear(a: Var, w: Var, b: Var) -> Var:
    """Affine map a @ w + b as a single recorded operation."""
    a, w, b = as_var(a), as_var(w), as_var(b)
    if a.ndim != 2 or w.ndim != 2 or a.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: shapes {a.shape} @ {w.shape} do not compose")
    value = a.value @ w.value
    np.add(value, b.value, out=value)
    return _make(value, (a, w, b), _vjp_linear, "linear")


def _vjp_mix(g, out, needed):
    phi, a, b = out._parents
    dphi = None
    if needed[0]:
        dphi = _sum_to(mul(g, sub(a, b)), phi.shape)
    da = mul(g, phi) if needed[1] else None
    db = mul(g, sub(Var(1.0), phi)) if needed[2] else None
    return (dphi, da, db)


def mix(phi: Var, a: Var, b: Var) -> Var:
    """Convex combination phi * a + (1 - phi) * b with a scalar gate phi."""
    phi, a, b = as_var(phi), as_var(a), as_var(b)
    if phi.value.size != 1:
        raise ShapeError(f"mix expects a scalar gate, got shape {phi.shape}")
    if a.shape != b.shape:
        raise ShapeError(f"mix: branch shapes differ, {a.shape} vs {b.shape}")
    value = _fastmath.mix_val(float(phi.value), a.value, b.value)
    return _make(value, (phi, a, b), _vjp_mix, "mix")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def _vjp_reciprocal(g, out, needed):
    # d(1/x)/dx = -1/x^2 = -out^2
    return (neg(mul(g, mul(out, out))),)


def reciprocal(a: Var) -> Var:
    """1 / a, cached per node so repeated backward passes share it."""
    a = as_var(a)
    node = _cache_get(a, "reciprocal")
    if node is None:
        node = _make(np.divide(1.0, a.value), (a,), _vjp_reciprocal, "reciprocal")
        _cache_put(a, "reciprocal", node)
    return node


def _vjp_one_minus_sq(g, out, needed):
    (y,) = out._parents
    return (mul(g, mul(Var(-2.0), y)),)


def _one_minus_sq(y: Var) -> Var:
    node = _cache_get(y, "one_minus_sq")
    if node is None:
        value = _fastmath.one_minus_sq(y.value)
        node = _make(value, (y,), _vjp_one_minus_sq, "one_minus_sq")
        _cache_put(y, "one_minus_sq", node)
    return node


def _vjp_tanh(g, out, needed):
    return (mul(g, _one_minus_sq(out)),)


def tanh(a: Var) -> Var:
    a = as_var(a)
    return _make(np.tanh(a.value), (a,), _vjp_tanh, "tanh")


def _vjp_sigmoid(g, out, needed):
    return (mul(g, mul(out, sub(Var(1.0), out))),)


def sigmoid(a: Var) -> Var:
    a = as_var(a)
    v = a.value
    e = np.exp(-np.abs(v))
    value = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(value, (a,), _vjp_sigmoid, "sigmoid")


def _vjp_exp(g, out, needed):
    return (mul(g, out),)


def exp(a: Var) -> Var:
    a = as_var(a)
    return _make(np.exp(a.value), (a,), _vjp_exp, "exp")


def _vjp_log(g, out, needed):
    (a,) = out._parents
    return (div(g, a),)


def log(a: Var) -> Var:
    a = as_var(a)
    return _make(np.log(a.value), (a,), _vjp_log, "log")


def _vjp_sqrt(g, out, needed):
    return (div(g, mul(Var(2.0), out)),)


def sqrt(a: Var) -> Var:
    a = as_var(a)
    return _make(np.sqrt(a.value), (a,), _vjp_sqrt, "sqrt")


def _vjp_sin(g, out, needed):
    (a,) = out._parents
    return (mul(g, cos(a)),)


def sin(a: Var) -> Var:
    a = as_var(a)
    return _make(np.sin(a.value), (a,), _vjp_sin, "sin")


def _vjp_cos(g, out, needed):
    (a,) = out._parents
    return (neg(mul(g, sin(a))),)


def cos(a: Var) -> Var:
    a = as_var(a)
    return _make(np.cos(a.value), (a,), _vjp_cos, "cos")


def _vjp_clamp_min(g, out, needed):
    (a,) = out._parents
    mask = Var((a.value > out._ctx).astype(np.float64))
    return (mul(g, mask),)


def clamp_min(a: Var, floor: float) -> Var:
    """max(a, floor); gradient is zero at and below the floor."""
    a = as_var(a)
    value = np.maximum(a.value, floor)
    return _make(value, (a,), _vjp_clamp_min, "clamp_min", ctx=float(floor))


_ELEMENTWISE_UNARY = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "sin": sin,
    "cos": cos,
    "neg": neg,
}

_ELEMENTWISE_BINARY = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
}


def elementwise(op_kind: str, a: Var, b: Var | None = None) -> Var:
    """Dispatch an elementwise operation by name."""
    if b is None:
        try:
            return _ELEMENTWISE_UNARY[op_kind](a)
        except KeyError:
            raise AutodiffError(f"unknown unary elementwise op {op_kind!r}") from None
    try:
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    except KeyError:
        raise AutodiffError(f"unknown binary elementwise op {op_kind!r}") from None


# ---------------------------------------------------------------------------
# reductions and column surgery


def _vjp_vsum(g, out, needed):
    (a,) = out._parents
    return (broadcast_to(g, a.shape),)


def vsum(a: Var) -> Var:
    """Sum of all entries (scalar)."""
    a = as_var(a)
    return _make(np.asarray(a.value.sum()), (a,), _vjp_vsum, "vsum")


def _vjp_mean_sq(g, out, needed):
    (a,) = out._parents
    scale = 2.0 / max(a.value.size, 1)
    return (mul(mul(g, Var(scale)), a),)


def mean_sq(a: Var) -> Var:
    """Mean of squared entries (scalar); the MSE building block."""
    a = as_var(a)
    return _make(np.asarray(np.mean(a.value**2)), (a,), _vjp_mean_sq, "mean_sq")


def _vjp_row_sums(g, out, needed):
    (a,) = out._parents
    return (broadcast_to(g, a.shape),)


def row_sums(a: Var) -> Var:
    """Sum each row: (N, q) -> (N, 1)."""
    a = as_var(a)
    if a.ndim != 2:
        raise ShapeError(f"row_sums expects a 2-d operand, got shape {a.shape}")
    return _make(a.value.sum(axis=1, keepdims=True), (a,), _vjp_row_sums, "row_sums")


def _vjp_rows(g, out, needed):
    (a,) = out._parents
    lo, hi = out._ctx
    return (pad_rows(g, a.shape[0], lo, hi),)


def rows(a: Var, lo: int, hi: int) -> Var:
    """Row slice [lo, hi) of a 2-d Var."""
    a = as_var(a)
    if a.ndim != 2:
        raise ShapeError(f"rows expects a 2-d operand, got shape {a.shape}")
    if not (0 <= lo < hi <= a.shape[0]):
        raise ShapeError(f"rows: slice [{lo}, {hi}) out of range for shape {a.shape}")
    return _make(a.value[lo:hi], (a,), _vjp_rows, "rows", ctx=(lo, hi))


def _vjp_pad_rows(g, out, needed):
    lo, hi = out._ctx[1], out._ctx[2]
    return (rows(g, lo, hi),)


def pad_rows(a: Var, total: int, lo: int, hi: int) -> Var:
    """Embed rows into a zero matrix of height ``total`` at [lo, hi)."""
    a = as_var(a)
    value = np.zeros((total, a.shape[1]))
    value[lo:hi] = a.value
    return _make(value, (a,), _vjp_pad_rows, "pad_rows", ctx=(total, lo, hi))


def _vjp_cols(g, out, needed):
    (a,) = out._parents
    lo, hi = out._ctx
    return (pad_cols(g, a.shape[1], lo, hi),)


def cols(a: Var, lo: int, hi: int) -> Var:
    """Column slice [lo, hi) of a 2-d Var."""
    a = as_var(a)
    if a.ndim != 2:
        raise ShapeError(f"cols expects a 2-d operand, got shape {a.shape}")
    if not (0 <= lo < hi <= a.shape[1]):
        raise ShapeError(f"cols: slice [{lo}, {hi}) out of range for shape {a.shape}")
    return _make(a.value[:, lo:hi], (a,), _vjp_cols, "cols", ctx=(lo, hi))


def _vjp_pad_cols(g, out, needed):
    lo, hi = out._ctx[1], out._ctx[2]
    return (cols(g, lo, hi),)


def pad_cols(a: Var, total: int, lo: int, hi: int) -> Var:
    """Embed columns into a zero matrix of width ``total`` at [lo, hi)."""
    a = as_var(a)
    value = np.zeros((a.shape[0], total))
    value[:, lo:hi] = a.value
    return _make(value, (a,), _vjp_pad_cols, "pad_cols", ctx=(total, lo, hi))


def _vjp_concat_cols(g, out, needed):
    bounds = out._ctx
    return tuple(
        cols(g, lo, hi) if nd else None for (lo, hi), nd in zip(bounds, needed)
    )


def concat_cols(parts) -> Var:
    """Concatenate 2-d Vars along columns."""
    parts = [as_var(p) for p in parts]
    bounds = []
    off = 0
    for p in parts:
        if p.ndim != 2:
            raise ShapeError(f"concat_cols expects 2-d operands, got shape {p.shape}")
        bounds.append((off, off + p.shape[1]))
        off += p.shape[1]
    value = np.concatenate([p.value for p in parts], axis=1)
    return _make(value, tuple(parts), _vjp_concat_cols, "concat_cols",
                 ctx=tuple(bounds))


# ---------------------------------------------------------------------------
# differentiation


def grad(output: Var, wrt, create_graph: bool = False):
    """Gradients of a scalar output with respect to each Var in ``wrt``.

    Returns numpy arrays, or Vars when ``create_graph`` is set (the backward
    computation is then itself recorded, enabling nested differentiation).
    Vars in ``wrt`` that the output does not depend on get zero gradients.
    """
    if output.value.size != 1:
        raise AutodiffError(f"grad needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not isinstance(w, Var):
            raise AutodiffError("wrt entries must be Vars")
        if not w.requires_grad:
            raise AutodiffError(
                "cannot differentiate with respect to a detached Var "
                "(requires_grad is False)"
            )

    wrt_ids = {id(w) for w in wrt}
    results: dict[int, Var] = {}

    if output.requires_grad:
        # Ancestors of the output, newest first.
        order = [output]
        seen = {id(output)}
        stack = [output]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    order.append(p)
                    stack.append(p)
        order.sort(key=lambda n: -n._vid)

        # Mark nodes through which some wrt Var is reachable; everything else
        # is dead weight for this particular gradient and is skipped.
        marked: dict[int, bool] = {}
        for node in reversed(order):
            nid = id(node)
            if nid in wrt_ids:
                marked[nid] = True
                continue
            m = False
            for p in node._parents:
                if p.requires_grad and marked.get(id(p)):
                    m = True
                    break
            marked[nid] = m

        if marked[id(output)]:
            adjoints = {id(output): broadcast_to(Var(np.ones(())), output.shape)}
            if create_graph:
                _accumulate(order, adjoints, marked, wrt_ids, results)
            else:
                with no_grad():
                    _accumulate(order, adjoints, marked, wrt_ids, results)

    out = []
    for w in wrt:
        g = results.get(id(w))
        if g is None:
            g = Var(np.zeros(w.shape))
        out.append(g if create_graph else g.value)
    return out


def _accumulate(order, adjoints, marked, wrt_ids, results):
    for node in order:
        nid = id(node)
        g = adjoints.pop(nid, None)
        if g is None:
            continue
        if nid in wrt_ids:
            results[nid] = g
        if node._vjp is None:
            continue
        parents = node._parents
        needed = tuple(p.requires_grad and marked.get(id(p), False) for p in parents)
        if True not in needed:
            continue
        contribs = node._vjp(g, node, needed)
        for p, c, nd in zip(parents, contribs, needed):
            if not nd or c is None:
                continue
            pid = id(p)
            prev = adjoints.get(pid)
            adjoints[pid] = c if prev is None else add(prev, c)


def batch_gradient(output: Var, x: Var, create_graph: bool = True) -> Var:
    """Per-row input gradient of a batched scalar field.

    ``output`` must be (N, 1) with row i depending only on row i of ``x``
    (true for every network here), so the gradient of the plain sum recovers
    each row's own derivative vector in one backward pass.
    """
    if output.ndim != 2 or output.shape[1] != 1:
        raise ShapeError(
            f"batch_gradient expects an (N, 1) field, got shape {output.shape}"
        )
    if output.shape[0] != x.shape[0]:
        raise ShapeError(
            f"batch_gradient: row counts differ, {output.shape} vs {x.shape}"
        )
    g = grad(vsum(output), [x], create_graph=create_graph)[0]
    return g if create_graph else Var(g)


def jacobian_column(output: Var, x: Var, col: int) -> Var:
    """Column ``col`` of the per-row Jacobian of a batched scalar field.

    Returns a differentiable (N, 1) Var, so second and fourth derivatives
    are obtained by applying it repeatedly.
    """
    if not 0 <= col < x.shape[1]:
        raise ShapeError(
            f"jacobian_column: column {col} out of range for input shape {x.shape}"
        )
    return cols(batch_gradient(output, x), col, col + 1)
