"""Network architectures: embeddings, dense stacks, RBF networks, gated
hybrid residual blocks, the deep hybrid assembly, and baseline models.

A model is (spec, parameters): specs are plain frozen dataclasses, the
parameters live in a :class:`ParamStore`, and the forward functions are pure
maps from (params-as-Vars, inputs) to a Var, so everything the trainer
differentiates goes through the recording engine.

Architecture notes:

* Hybrid block: gated convex mix of an RBF branch (compact Wendland kernels
  against fixed centers, trainable per-center scale and coefficients) and a
  small dense branch, squashed by tanh so block outputs stay in [-1, 1].
* Deep assembly: block outputs chain through a second convex gate against
  the previous hidden state, so every hidden state remains in [-1, 1]; the
  incoming state starts as a tanh-projected embedding for the same reason.
* Block gates start at 0 (balanced mix); chain gates start at 6.9068, i.e.
  a sigmoid of 0.999, so early training is dominated by the block path.
* RBF centers are blue-noise samples of the [-1, 1]^width state cube and
  stay fixed; their scale starts at twice the achieved packing radius so
  supports overlap typical states from the first step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .kernels import pairwise_r, wendland_c4
from .params import ParamStore
from .samplers import poisson_disk_cube

__all__ = [
    "ModelError",
    "EmbeddingSpec",
    "HybridBlockSpec",
    "ModelSpec",
    "MODEL_KINDS",
    "embed",
    "embed_width",
    "rbf_net_forward",
    "dense_forward",
    "hybrid_block_forward",
    "hyres_forward",
    "baseline_forward",
    "forward",
    "model_fn",
    "build_params",
    "desk_spec",
]

MODEL_KINDS = ("hyres", "pinn", "respinn", "expert", "rbfnet")

CHAIN_GATE_INIT = 6.9068  # sigmoid(6.9068) = 0.999


class ModelError(ValueError):
    """Invalid model specification or forward-time contract violation."""


@dataclass(frozen=True)
class EmbeddingSpec:
    """Input feature map.

    kind 'identity' passes coordinates through; 'periodic' replaces each
    declared dimension by (cos, sin) of one full period so outputs (and all
    their derivatives) match across that dimension's ends exactly;
    'fourier' projects through a fixed Gaussian matrix to random cosine
    features; 'fourier+periodic' composes the two.
    """

    kind: str = "identity"
    fourier_scale: float = 2.0
    fourier_count: int = 32
    period_lengths: tuple = ()  # ((dim, length), ...)

    def __post_init__(self):
        if self.kind not in ("identity", "periodic", "fourier", "fourier+periodic"):
            raise ModelError(f"unknown embedding kind {self.kind!r}")
        if self.fourier_scale <= 0:
            raise ModelError("fourier_scale must be positive")
        if "periodic" in self.kind and not self.period_lengths:
            raise ModelError("periodic embedding needs period_lengths")
        for _, length in self.period_lengths:
            if length <= 0:
                raise ModelError("period lengths must be positive")

    @property
    def periodic_dims(self) -> dict:
        return dict(self.period_lengths)


@dataclass(frozen=True)
class HybridBlockSpec:
    width: int = 64
    rbf_centers: int = 128
    nn_depth: int = 2
    nn_width: int | None = None
    tau_scale: float = 2.0

    def __post_init__(self):
        if min(self.width, self.rbf_centers, self.nn_depth) < 1:
            raise ModelError("block width, center count and nn_depth must be >= 1")
        if self.nn_width is not None and self.nn_width < 1:
            raise ModelError("nn_width must be >= 1")

    @property
    def hidden_width(self) -> int:
        return self.nn_width or self.width


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    in_dim: int
    out_dim: int = 1
    embedding: EmbeddingSpec = EmbeddingSpec()
    # hybrid assembly
    blocks: tuple = ()
    head_depth: int = 2
    head_width: int | None = None
    # dense baselines (pinn / respinn / expert)
    depth: int = 4
    width: int = 64
    # standalone RBF network
    rbf_centers: int = 128
    tau_scale: float = 2.0
    rwf: bool | None = None  # None: on for hyres/expert, off otherwise

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(
                f"unknown architecture kind {self.kind!r}; expected one of "
                f"{MODEL_KINDS}"
            )
        if self.in_dim < 1 or self.out_dim < 1:
            raise ModelError("in_dim and out_dim must be >= 1")
        if self.kind == "hyres":
            widths = {b.width for b in self.blocks}
            if len(widths) > 1:
                raise ModelError(
                    f"hybrid blocks must share one width, got {sorted(widths)}"
                )
            if self.head_depth < 1:
                raise ModelError("head_depth must be >= 1")
            if not self.blocks and self.head_width is None:
                raise ModelError("a blockless hybrid model needs head_width")
        elif self.kind in ("pinn", "respinn", "expert"):
            if self.depth < 1 or self.width < 1:
                raise ModelError("depth and width must be >= 1")
        for dim, _ in self.embedding.period_lengths:
            if not 0 <= dim < self.in_dim:
                raise ModelError(f"periodic dimension {dim} out of range")

    @property
    def use_rwf(self) -> bool:
        if self.rwf is not None:
            return self.rwf
        return self.kind in ("hyres", "expert")

    @property
    def state_width(self) -> int:
        """Width of the hybrid chain state (p)."""
        return self.blocks[0].width if self.blocks else (self.head_width or 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["embedding"]["period_lengths"] = [
            list(p) for p in self.embedding.period_lengths
        ]
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        d = dict(d)
        emb = dict(d.pop("embedding", {}))
        emb["period_lengths"] = tuple(
            (int(dim), float(length)) for dim, length in emb.get("period_lengths", ())
        )
        blocks = tuple(HybridBlockSpec(**b) for b in d.pop("blocks", ()))
        return ModelSpec(embedding=EmbeddingSpec(**emb), blocks=blocks, **d)


def desk_spec(kind: str, in_dim: int, embedding: EmbeddingSpec | None = None,
              n_blocks: int = 2, width: int = 64, rbf_centers: int = 128,
              depth: int = 4) -> ModelSpec:
    """Desk-scale architecture presets used by the benchmark profiles."""
    embedding = embedding or EmbeddingSpec(kind="fourier")
    if kind == "hyres":
        blocks = tuple(
            HybridBlockSpec(width=width, rbf_centers=rbf_centers)
            for _ in range(n_blocks)
        )
        return ModelSpec(kind="hyres", in_dim=in_dim, embedding=embedding,
                         blocks=blocks, head_depth=2, head_width=width)
    if kind in ("pinn", "respinn"):
        return ModelSpec(kind=kind, in_dim=in_dim,
                         embedding=EmbeddingSpec(kind="identity"),
                         depth=depth, width=width)
    if kind == "expert":
        return ModelSpec(kind="expert", in_dim=in_dim, embedding=embedding,
                         depth=depth, width=width)
    if kind == "rbfnet":
        return ModelSpec(kind="rbfnet", in_dim=in_dim,
                         embedding=EmbeddingSpec(kind="identity"),
                         rbf_centers=rbf_centers)
    raise ModelError(f"unknown architecture kind {kind!r}")


# ---------------------------------------------------------------------------
# embeddings


def embed_width(spec: EmbeddingSpec, in_dim: int) -> int:
    base = in_dim + len(spec.period_lengths)  # each periodic dim gains a channel
    if "fourier" in spec.kind:
        return 2 * spec.fourier_count
    return base


def _base_features(x: Var, spec: EmbeddingSpec) -> Var:
    if not spec.period_lengths:
        return x
    periodic = spec.periodic_dims
    parts = []
    for j in range(x.shape[1]):
        xj = ad.cols(x, j, j + 1)
        if j in periodic:
            w = 2.0 * np.pi / periodic[j]
            parts.append(ad.cos(ad.mul(Var(w), xj)))
            parts.append(ad.sin(ad.mul(Var(w), xj)))
        else:
            parts.append(xj)
    return ad.concat_cols(parts)


def embed(x: Var, spec: EmbeddingSpec, params, prefix: str = "embed") -> Var:
    """Apply the input feature map; Fourier projections come from params."""
    x = ad.as_var(x)
    if spec.kind == "identity":
        return x
    base = _base_features(x, spec)
    if "fourier" not in spec.kind:
        return base
    b = params[f"{prefix}.B"]
    z = ad.mul(Var(2.0 * np.pi), ad.matmul(base, ad.transpose(ad.as_var(b))))
    return ad.concat_cols([ad.cos(z), ad.sin(z)])


# ---------------------------------------------------------------------------
# building blocks


def rbf_net_forward(a: Var, centers: np.ndarray, tau: Var, w: Var) -> Var:
    """Compact-support RBF network: K(a, centers; tau) @ w.

    Centers are fixed; tau and w receive gradients.  Rows of the kernel
    matrix are exactly zero beyond each center's support radius.
    """
    a = ad.as_var(a)
    centers = np.asarray(centers, dtype=np.float64)
    tau = ad.as_var(tau)
    w = ad.as_var(w)
    if centers.shape[0] != w.shape[0] or centers.shape[0] != tau.shape[0]:
        raise ModelError(
            f"rbf network: {centers.shape[0]} centers, tau {tau.shape}, "
            f"coefficients {w.shape} do not line up"
        )
    r = pairwise_r(a, centers)
    k = wendland_c4(r, tau)
    return ad.matmul(k, w)


def _layer_weight(params, name: str, rwf: bool) -> Var:
    if rwf:
        v = ad.as_var(params[f"{name}.v"])
        g = ad.as_var(params[f"{name}.g"])
        return ad.mul(v, ad.exp(g))
    return ad.as_var(params[f"{name}.w"])


def dense_forward(a: Var, params, prefix: str, n_layers: int,
                  rwf: bool = False) -> Var:
    """Dense stack: tanh after every layer except the last.

    With weight factorization on, each layer's effective weight is the
    stored direction matrix times exp of a trainable per-output log-scale.
    """
    h = ad.as_var(a)
    for i in range(n_layers):
        w = _layer_weight(params, f"{prefix}.l{i}", rwf)
        b = ad.as_var(params[f"{prefix}.l{i}.b"])
        h = ad.linear(h, w, b)
        if i < n_layers - 1:
            h = ad.tanh(h)
    return h


def hybrid_block_forward(a: Var, params, prefix: str, spec: HybridBlockSpec,
                         rwf: bool = False) -> Var:
    """tanh of the gated convex mix of the RBF and dense branches."""
    centers = params[f"{prefix}.centers"]
    if isinstance(centers, Var):
        centers = centers.value
    f_r = rbf_net_forward(a, centers, ad.as_var(params[f"{prefix}.tau"]),
                          ad.as_var(params[f"{prefix}.W"]))
    f_n = dense_forward(a, params, f"{prefix}.nn", spec.nn_depth, rwf=rwf)
    gate = ad.sigmoid(ad.as_var(params[f"{prefix}.alpha"]))
    return ad.tanh(ad.mix(gate, f_r, f_n))


def _check_bounded(value: np.ndarray, what: str) -> None:
    m = float(np.max(np.abs(value))) if value.size else 0.0
    if m > 1.0 + 1e-9:
        raise ModelError(f"{what} left [-1, 1] (max abs {m}); "
                         "hidden-state boundedness is broken")


def hyres_forward(x, spec: ModelSpec, params) -> Var:
    """Deep hybrid assembly: embedded state chained through gated blocks,
    finished by a dense head.

    Every hidden state is checked to lie in [-1, 1]: block outputs are tanh
    squashed and the chain is a convex combination, starting from a tanh
    projected embedding.
    """
    x = ad.as_var(x)
    e = embed(x, spec.embedding, params)
    a = ad.tanh(ad.linear(e, ad.as_var(params["proj.w"]),
                          ad.as_var(params["proj.b"])))
    _check_bounded(a.value, "projected embedding")
    for l, bspec in enumerate(spec.blocks):
        blk = hybrid_block_forward(a, params, f"block{l}", bspec,
                                   rwf=spec.use_rwf)
        gate = ad.sigmoid(ad.as_var(params[f"block{l}.beta"]))
        a = ad.mix(gate, blk, a)
        _check_bounded(a.value, f"hidden state after block {l}")
    return dense_forward(a, params, "head", spec.head_depth, rwf=spec.use_rwf)


def _mlp_forward(x, spec: ModelSpec, params) -> Var:
    e = embed(x, spec.embedding, params)
    return dense_forward(e, params, "mlp", spec.depth, rwf=spec.use_rwf)


def _respinn_forward(x, spec: ModelSpec, params) -> Var:
    e = embed(x, spec.embedding, params)
    h = ad.tanh(ad.linear(e, ad.as_var(params["mlp.l0.w"]),
                          ad.as_var(params["mlp.l0.b"])))
    n_hidden = spec.depth - 1
    i = 1
    # consecutive hidden layers pair up into additive identity skips
    while i + 1 < n_hidden + 1:
        z = ad.tanh(ad.linear(h, ad.as_var(params[f"mlp.l{i}.w"]),
                              ad.as_var(params[f"mlp.l{i}.b"])))
        z = ad.tanh(ad.linear(z, ad.as_var(params[f"mlp.l{i + 1}.w"]),
                              ad.as_var(params[f"mlp.l{i + 1}.b"])))
        h = ad.add(h, z)
        i += 2
    if i < n_hidden + 1:
        h = ad.tanh(ad.linear(h, ad.as_var(params[f"mlp.l{i}.w"]),
                              ad.as_var(params[f"mlp.l{i}.b"])))
        i += 1
    return ad.linear(h, ad.as_var(params[f"mlp.l{i}.w"]),
                     ad.as_var(params[f"mlp.l{i}.b"]))


def _rbfnet_forward(x, spec: ModelSpec, params) -> Var:
    e = embed(x, spec.embedding, params)
    centers = params["rbf.centers"]
    if isinstance(centers, Var):
        centers = centers.value
    return rbf_net_forward(e, centers, ad.as_var(params["rbf.tau"]),
                           ad.as_var(params["rbf.W"]))


def baseline_forward(x, spec: ModelSpec, params) -> Var:
    if spec.kind == "pinn" or spec.kind == "expert":
        return _mlp_forward(x, spec, params)
    if spec.kind == "respinn":
        return _respinn_forward(x, spec, params)
    if spec.kind == "rbfnet":
        return _rbfnet_forward(x, spec, params)
    raise ModelError(f"{spec.kind!r} is not a baseline architecture")


def forward(spec: ModelSpec, params, x) -> Var:
    """Evaluate any architecture; params may be a ParamStore or a dict of
    Vars (one training step's leaves)."""
    if isinstance(params, ParamStore):
        params = params.as_vars()
    if spec.kind == "hyres":
        return hyres_forward(x, spec, params)
    return baseline_forward(x, spec, params)


def model_fn(spec: ModelSpec, params):
    """Bind spec and parameters into a callable Var -> Var field."""
    if isinstance(params, ParamStore):
        params = params.as_vars()
    return lambda x: forward(spec, params, x)


# ---------------------------------------------------------------------------
# initialization


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, (fan_in, fan_out))


def _add_dense(store: ParamStore, rng, prefix: str, dims: list[int],
               rwf: bool) -> None:
    """Layers dims[0] -> dims[1] -> ... -> dims[-1].

    With factorization on, the stored direction matrix is the Glorot draw
    divided by the drawn scale, so the effective initial weight equals the
    plain Glorot draw and only the optimization geometry changes.
    """
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        w = _glorot(rng, fi, fo)
        if rwf:
            g = rng.normal(1.0, 0.1, fo)
            store.add(f"{prefix}.l{i}.v", w / np.exp(g)[None, :],
                      init="glorot_normal/exp(g)")
            store.add(f"{prefix}.l{i}.g", g, init="normal(1.0,0.1)")
        else:
            store.add(f"{prefix}.l{i}.w", w, init="glorot_normal")
        store.add(f"{prefix}.l{i}.b", np.zeros(fo), init="zeros")


def _add_block(store: ParamStore, rng, prefix: str, spec: HybridBlockSpec,
               rwf: bool) -> None:
    centers, radius = poisson_disk_cube(spec.rbf_centers, spec.width, rng)
    store.add(f"{prefix}.centers", centers, trainable=False,
              init="poisson_disk_cube")
    store.add(f"{prefix}.tau", np.full(spec.rbf_centers, spec.tau_scale * radius),
              init=f"tau_scale*radius({radius:.4g})")
    store.add(f"{prefix}.W", _glorot(rng, spec.rbf_centers, spec.width),
              init="glorot_normal")
    dims = [spec.width] + [spec.hidden_width] * (spec.nn_depth - 1) + [spec.width]
    _add_dense(store, rng, f"{prefix}.nn", dims, rwf)
    store.add(f"{prefix}.alpha", np.zeros(()), init="zeros")
    store.add(f"{prefix}.beta", np.full((), CHAIN_GATE_INIT),
              init=f"constant({CHAIN_GATE_INIT})")


def build_params(spec: ModelSpec, seed: int) -> ParamStore:
    """Deterministic parameter construction: same spec and seed give a
    bitwise-identical store."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    store = ParamStore()
    emb = spec.embedding
    base_dim = spec.in_dim + len(emb.period_lengths)
    if "fourier" in emb.kind:
        store.add("embed.B",
                  rng.normal(0.0, emb.fourier_scale,
                             (emb.fourier_count, base_dim)),
                  trainable=False, init=f"normal(0,{emb.fourier_scale}^2)")
    ew = embed_width(emb, spec.in_dim)

    if spec.kind == "hyres":
        p = spec.state_width
        store.add("proj.w", _glorot(rng, ew, p), init="glorot_normal")
        store.add("proj.b", np.zeros(p), init="zeros")
        for l, bspec in enumerate(spec.blocks):
            _add_block(store, rng, f"block{l}", bspec, spec.use_rwf)
        head_w = spec.head_width or p
        dims = [p] + [head_w] * (spec.head_depth - 1) + [spec.out_dim]
        _add_dense(store, rng, "head", dims, spec.use_rwf)
    elif spec.kind in ("pinn", "respinn", "expert"):
        dims = [ew] + [spec.width] * (spec.depth - 1) + [spec.out_dim]
        _add_dense(store, rng, "mlp", dims, spec.use_rwf)
    elif spec.kind == "rbfnet":
        centers, radius = poisson_disk_cube(spec.rbf_centers, ew, rng)
        store.add("rbf.centers", centers, trainable=False,
                  init="poisson_disk_cube")
        store.add("rbf.tau", np.full(spec.rbf_centers, spec.tau_scale * radius),
                  init=f"tau_scale*radius({radius:.4g})")
        store.add("rbf.W", _glorot(rng, spec.rbf_centers, spec.out_dim),
                  init="glorot_normal")
    return store
