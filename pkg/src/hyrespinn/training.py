"""Loss assembly, adaptive weighting, optimization, and the training loop.

The composite loss is a weighted sum of mean-square residual terms (initial,
boundary, interior) plus a fixed-weight L2 penalty on the block and chain
gate parameters.  Interior residuals of time-dependent problems can be
weighted causally: the time axis splits into chunks and each chunk is
discounted by the exponential of the accumulated loss of earlier chunks, so
early times converge first.  Term weights rebalance periodically from the
relative gradient norms of the unweighted terms.

Runs are deterministic given (config, seed): model init, static point sets,
and batch streams draw from independent child seeds of one root sequence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import evaluation
from .autodiff import Var
from .models import ModelSpec, build_params, forward
from .params import ParamStore
from .problems import PdeProblem, make_problem
from .samplers import PointSet, minibatch, poisson_disk

__all__ = [
    "TrainError",
    "NanLossError",
    "LossWeights",
    "CausalConfig",
    "Schedule",
    "OptimState",
    "TrainConfig",
    "RunReport",
    "composite_loss",
    "causal_weights",
    "grad_norm_balance",
    "lr_schedule",
    "adam_step",
    "train",
]


class TrainError(RuntimeError):
    """Training could not proceed."""


class NanLossError(TrainError):
    """A loss term or gradient went non-finite; carries the culprit name."""

    def __init__(self, what: str):
        super().__init__(f"non-finite value in {what}")
        self.what = what


@dataclass
class LossWeights:
    """Term weights; the gate penalty weight is fixed, the rest rebalance."""

    lam_ic: float = 1.0
    lam_b: float = 1.0
    lam_r: float = 1.0
    lam_p: float = 1e-4
    update_period: int = 1000
    ema_decay: float = 0.9

    def validate(self) -> None:
        for name in ("lam_ic", "lam_b", "lam_r", "lam_p"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise TrainError(f"loss weight {name} must be finite and >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise TrainError("ema_decay must lie in [0, 1)")


@dataclass
class CausalConfig:
    enabled: bool = False
    chunks: int = 32
    tolerance: float = 1.0

    def validate(self) -> None:
        if self.chunks < 1:
            raise TrainError("causal chunks must be >= 1")
        if self.tolerance <= 0:
            raise TrainError("causal tolerance must be positive")


@dataclass
class Schedule:
    """Linear warmup to the peak rate, then continuous exponential decay."""

    peak: float = 1e-3
    warmup: int = 5000
    decay_rate: float = 0.9
    decay_steps: int = 5000


@dataclass
class OptimState:
    schedule: Schedule
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def lr_schedule(step: int, cfg: Schedule) -> float:
    """Learning rate at a given step (0 at step 0 when warming up)."""
    if step < 0:
        raise TrainError("schedule step must be >= 0")
    if cfg.warmup > 0 and step <= cfg.warmup:
        return cfg.peak * step / cfg.warmup
    return cfg.peak * cfg.decay_rate ** ((step - cfg.warmup) / cfg.decay_steps)


def causal_weights(chunk_losses: np.ndarray, epsilon: float) -> np.ndarray:
    """Discounts exp(-eps * sum of earlier chunk losses); first chunk is 1.

    Treated as constants: no gradient flows through the weights.
    """
    losses = np.asarray(chunk_losses, dtype=float)
    prefix = np.concatenate([[0.0], np.cumsum(losses)[:-1]])
    return np.exp(-epsilon * prefix)


def grad_norm_balance(norms: np.ndarray, lams: np.ndarray,
                      ema_decay: float) -> np.ndarray:
    """New weights pulling each term's gradient to the common scale.

    Target for term k is (sum of norms) / norm_k, blended into the current
    weight by the EMA factor.  Zero-norm terms keep their weight.
    """
    norms = np.asarray(norms, dtype=float)
    lams = np.asarray(lams, dtype=float)
    out = lams.copy()
    total = norms.sum()
    if total <= 0:
        return out
    active = norms > 0
    target = total / norms[active]
    out[active] = ema_decay * lams[active] + (1.0 - ema_decay) * target
    return out


def adam_step(params: ParamStore, grads: dict, state: OptimState) -> float:
    """One Adam update with bias correction; returns the rate used."""
    state.step += 1
    lr = lr_schedule(state.step, state.schedule)
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        g = np.asarray(g)
        if g.shape != params[name].shape:
            raise TrainError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NanLossError(f"gradient of {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        params.set(name, params[name] - lr * update)
    return lr


# ---------------------------------------------------------------------------
# loss assembly


def _gate_penalty(pvars: dict) -> Var | None:
    total = None
    for name, v in pvars.items():
        if name.endswith(".alpha") or name.endswith(".beta"):
            sq = ad.mul(v, v)
            total = sq if total is None else ad.add(total, sq)
    return total


def _causal_residual_loss(res: Var, t_sorted: np.ndarray, problem: PdeProblem,
                          causal: CausalConfig):
    """Chunked, causally discounted mean-square residual.

    Points must be sorted by time; each chunk is a contiguous row range.
    Returns (scalar Var, weights, plain mse float).
    """
    t0, t1 = problem.domain.t0, problem.domain.t1
    edges = np.linspace(t0, t1, causal.chunks + 1)
    bounds = np.searchsorted(t_sorted, edges[1:-1])
    bounds = np.concatenate([[0], bounds, [t_sorted.size]])
    chunk_terms = []
    spans = []
    for i in range(causal.chunks):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        spans.append((lo, hi))
        if hi > lo:
            chunk_terms.append(ad.mean_sq(ad.rows(res, lo, hi)))
        else:
            chunk_terms.append(None)
    losses = np.array([0.0 if c is None else c.item() for c in chunk_terms])
    w = causal_weights(losses, causal.tolerance)
    total = None
    for wi, term in zip(w, chunk_terms):
        if term is None:
            continue
        piece = ad.mul(Var(wi), term)
        total = piece if total is None else ad.add(total, piece)
    total = ad.mul(Var(1.0 / causal.chunks), total)
    return total, w, float(np.mean(res.value**2))


def composite_loss(model_fn, problem: PdeProblem, batch: PointSet,
                   weights: LossWeights, causal: CausalConfig | None = None,
                   pvars: dict | None = None, pin_repeat: int = 32):
    """Weighted residual losses plus the gate penalty.

    Returns (scalar loss Var, info dict).  The info dict carries each
    unweighted term as both a Var (for gradient-norm balancing) and a float,
    plus the causal weights when active.  Pin points ride inside the
    boundary term, repeated so a single point is not washed out.
    """
    terms: dict[str, Var] = {}
    info: dict = {}

    if problem.initial_residual is not None and batch.initial is not None \
            and batch.initial.size:
        terms["ic"] = ad.mean_sq(problem.initial_residual(model_fn, batch.initial))

    boundary_parts = []
    for label, pts, normals in batch.boundary:
        if pts.size:
            boundary_parts.append(
                problem.boundary_residual(model_fn, label, pts, normals)
            )
    if problem.pin is not None and boundary_parts:
        point, value = problem.pin
        pin_pts = np.tile(point, (pin_repeat, 1))
        pin_res = ad.sub(model_fn(Var(pin_pts)), Var(value))
        boundary_parts.append(pin_res)
    if boundary_parts:
        stacked = boundary_parts[0] if len(boundary_parts) == 1 else None
        if stacked is None:
            # vertical concat via padding into a common column
            total_rows = sum(p.shape[0] for p in boundary_parts)
            off = 0
            acc = None
            for p in boundary_parts:
                padded = ad.pad_rows(p, total_rows, off, off + p.shape[0])
                acc = padded if acc is None else ad.add(acc, padded)
                off += p.shape[0]
            stacked = acc
        terms["b"] = ad.mean_sq(stacked)

    causal_w = None
    if batch.interior.size:
        pts = problem.prepare_interior(batch.interior)
        if causal is not None and causal.enabled and problem.time_dependent:
            order = np.argsort(pts[:, 0], kind="stable")
            pts = pts[order]
            res = problem.residual(model_fn, pts)
            terms["r"], causal_w, plain = _causal_residual_loss(
                res, pts[:, 0], problem, causal
            )
            info["residual_mse"] = plain
        else:
            terms["r"] = ad.mean_sq(problem.residual(model_fn, pts))

    for name, term in terms.items():
        if not np.isfinite(term.item()):
            raise NanLossError(f"loss term {name!r}")

    lam = {"ic": weights.lam_ic, "b": weights.lam_b, "r": weights.lam_r}
    total = None
    for name, term in terms.items():
        piece = ad.mul(Var(lam[name]), term)
        total = piece if total is None else ad.add(total, piece)
    if total is None:
        raise TrainError("empty batch: no loss terms to assemble")

    penalty = _gate_penalty(pvars) if pvars else None
    if penalty is not None:
        if not np.isfinite(penalty.item()):
            raise NanLossError("gate penalty")
        info["reg"] = float(penalty.item())
        total = ad.add(total, ad.mul(Var(weights.lam_p), penalty))

    info["terms"] = terms
    info["term_values"] = {k: float(v.item()) for k, v in terms.items()}
    info["causal_weights"] = causal_w
    return total, info


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class TrainConfig:
    steps: int = 1000
    # static problems: blue-noise set sizes
    static_count: int = 2000
    boundary_count: int | None = None
    # minibatch problems: per-step draw sizes
    batch_interior: int = 256
    batch_initial: int = 128
    batch_boundary: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    causal: CausalConfig = field(default_factory=CausalConfig)
    schedule: Schedule = field(default_factory=Schedule)
    eval_every: int = 500
    eval_resolution: tuple | None = None
    budget_seconds: float | None = None
    pin_repeat: int = 32

    def validate(self) -> None:
        if self.steps < 0:
            raise TrainError("steps must be >= 0")
        self.weights.validate()
        self.causal.validate()
        if self.eval_every < 1:
            raise TrainError("eval_every must be >= 1")


@dataclass
class RunReport:
    problem_id: str
    model_kind: str
    seed: int
    config: dict
    step_rows: list = field(default_factory=list)
    eval_rows: list = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    aborted: str | None = None

    def summary(self) -> dict:
        out = {
            "problem": self.problem_id,
            "model": self.model_kind,
            "seed": self.seed,
            "steps_run": len(self.step_rows),
            "wall_clock_seconds": self.wall_clock,
            "aborted": self.aborted,
        }
        out.update(self.final_metrics)
        return out

    def to_csv(self, path) -> None:
        gate_cols: list[str] = []
        for row in self.step_rows[:1]:
            gate_cols = sorted(k for k in row if k.startswith("phi_"))
        cols = ["step", "loss", "ic", "b", "r", "reg",
                "lam_ic", "lam_b", "lam_r", "lr", "eval_rel_l2"] + gate_cols
        eval_by_step = {r["step"]: r for r in self.eval_rows}
        with open(path, "w") as f:
            for k, v in self.summary().items():
                f.write(f"# {k}: {v}\n")
            f.write(",".join(cols) + "\n")
            for row in self.step_rows:
                ev = eval_by_step.get(row["step"], {})
                vals = []
                for c in cols:
                    if c == "eval_rel_l2":
                        vals.append(str(ev.get("rel_l2", "")))
                    else:
                        vals.append(str(row.get(c, "")))
                f.write(",".join(vals) + "\n")


def _phi(x: float) -> float:
    return float(1.0 / (1.0 + np.exp(-x)))


def _gate_values(params: ParamStore) -> dict:
    out = {}
    for name in params.names():
        if name.endswith(".alpha") or name.endswith(".beta"):
            short = name.replace("block", "").replace(".", "_")
            out[f"phi_{short}"] = _phi(float(params[name]))
    return out


def _static_pointset(problem: PdeProblem, cfg: TrainConfig, seed: int,
                     skip_boundary: bool) -> PointSet:
    ps = poisson_disk(problem.domain, cfg.static_count, seed=seed,
                      boundary_count=cfg.boundary_count)
    interior = problem.prepare_interior(ps.interior)
    if problem.time_dependent:
        order = np.argsort(interior[:, 0], kind="stable")
        interior = interior[order]
    boundary = [] if skip_boundary else ps.boundary
    return PointSet(interior=interior, boundary=boundary, initial=ps.initial,
                    seed=ps.seed, radius=ps.radius)


def _draw_minibatch(problem: PdeProblem, cfg: TrainConfig, rng,
                    skip_boundary: bool, causal_on: bool) -> PointSet:
    counts = {
        "interior": cfg.batch_interior,
        "boundary": 0 if skip_boundary else cfg.batch_boundary,
        "initial": cfg.batch_initial if problem.initial_residual else 0,
    }
    ps = minibatch(problem.domain, counts, rng)
    interior = problem.prepare_interior(ps.interior)
    if causal_on:
        # stratify over the causal chunks so each gets an equal share
        m = cfg.causal.chunks
        n = interior.shape[0]
        t0, t1 = problem.domain.t0, problem.domain.t1
        base = np.repeat(np.arange(m), int(np.ceil(n / m)))[:n]
        u = rng.uniform(0.0, 1.0, n)
        interior[:, 0] = t0 + (base + u) * (t1 - t0) / m
    if problem.time_dependent:
        order = np.argsort(interior[:, 0], kind="stable")
        interior = interior[order]
    return PointSet(interior=interior, boundary=ps.boundary,
                    initial=ps.initial)


def train(model_spec: ModelSpec, problem, config: TrainConfig, seed: int):
    """Run the training loop; returns (RunReport, final ParamStore).

    Deterministic in (model_spec, problem, config, seed).  On a non-finite
    loss or gradient the loop aborts, keeping the parameters from before
    the offending step.
    """
    config.validate()
    if isinstance(problem, str):
        problem = make_problem(problem)
    root = np.random.SeedSequence(seed)
    model_seed, data_seed, batch_seed = [
        int(s.generate_state(1)[0]) for s in root.spawn(3)
    ]
    params = build_params(model_spec, model_seed)
    state = OptimState(schedule=config.schedule)
    weights = LossWeights(**{**asdict(config.weights)})
    skip_boundary = problem.boundary_exact_with(model_spec.embedding)

    static = problem.sampling == "static"
    if static:
        batch = _static_pointset(problem, config, data_seed, skip_boundary)
    batch_rng = np.random.default_rng(batch_seed)

    truth_cache: dict = {}
    report = RunReport(
        problem_id=problem.name,
        model_kind=model_spec.kind,
        seed=seed,
        config={"steps": config.steps, "static_count": config.static_count,
                "batch_interior": config.batch_interior,
                "causal": asdict(config.causal),
                "schedule": asdict(config.schedule),
                "weights": asdict(config.weights)},
    )

    def evaluate(step: int) -> None:
        metrics = evaluation.evaluate_model(
            model_spec, params, problem, resolution=config.eval_resolution,
            cache=truth_cache,
        )
        metrics["step"] = step
        report.eval_rows.append(metrics)

    t_start = time.perf_counter()
    causal_on = config.causal.enabled and problem.time_dependent
    prev_trainable: dict = {}
    aborted = None

    evaluate(0)
    with ad.finite_checks(False):
        for step_idx in range(1, config.steps + 1):
            if not static:
                batch = _draw_minibatch(problem, config, batch_rng,
                                        skip_boundary, causal_on)
            pvars = params.as_vars()
            fn = lambda x: forward(model_spec, pvars, x)  # noqa: E731
            try:
                loss, info = composite_loss(
                    fn, problem, batch, weights,
                    causal=config.causal if causal_on else None,
                    pvars=pvars, pin_repeat=config.pin_repeat,
                )
                trainable = params.trainable_names()
                for n in trainable:
                    prev_trainable[n] = params[n].copy()

                if (weights.update_period > 0
                        and step_idx % weights.update_period == 0
                        and len(info["terms"]) > 1):
                    _rebalance(info["terms"], weights, pvars, trainable)

                grads = ad.grad(loss, [pvars[n] for n in trainable])
                lr = adam_step(params, dict(zip(trainable, grads)), state)
            except NanLossError as e:
                for n, v in prev_trainable.items():
                    params.set(n, v)
                aborted = str(e)
                break

            row = {
                "step": step_idx,
                "loss": float(loss.item()),
                "lr": lr,
                "lam_ic": weights.lam_ic,
                "lam_b": weights.lam_b,
                "lam_r": weights.lam_r,
                "reg": info.get("reg", 0.0),
            }
            row.update(info["term_values"])
            row.update(_gate_values(params))
            report.step_rows.append(row)

            if step_idx % config.eval_every == 0 or step_idx == config.steps:
                evaluate(step_idx)
            if config.budget_seconds is not None and step_idx % 25 == 0:
                if time.perf_counter() - t_start > config.budget_seconds:
                    aborted = "budget"
                    break

    if aborted != "budget" and aborted is not None:
        report.aborted = aborted
    elif aborted == "budget":
        report.aborted = "budget"
    if not report.eval_rows or report.eval_rows[-1]["step"] != len(report.step_rows):
        evaluate(len(report.step_rows))
    report.wall_clock = time.perf_counter() - t_start
    report.final_metrics = {
        k: v for k, v in report.eval_rows[-1].items() if k != "step"
    }
    return report, params


def _rebalance(terms: dict, weights: LossWeights, pvars: dict,
               trainable: list[str]) -> None:
    """Gradient-norm rebalancing of whichever terms are present."""
    names = [n for n in ("ic", "b", "r") if n in terms]
    norms = []
    leaves = [pvars[n] for n in trainable]
    for n in names:
        gs = ad.grad(terms[n], leaves)
        norms.append(np.sqrt(sum(float(np.sum(g * g)) for g in gs)))
    lams = np.array([getattr(weights, f"lam_{n}") for n in names])
    new = grad_norm_balance(np.array(norms), lams, weights.ema_decay)
    for n, v in zip(names, new):
        setattr(weights, f"lam_{n}", float(v))