"""Physics-informed loss, Adam and the training loop."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models as M
from .dataset import (NormalizationStats, PointCloudCase, boundary_targets, compute_normalization,
                      normalize_case)
from .diffcore import tape as T
from .errors import ConfigurationError, NumericalError, TrainingDiverged
from .physics import mms_forcing, scaled_residuals

HISTORY_COLUMNS = ("epoch", "lr", "l_m", "l_c", "l_b", "l_d", "total")
DEFAULT_BATCH = {"pipn": 1, "pigano": 4}  # PIPN pools per case, so one cloud per step


@dataclass(frozen=True)
class LossWeights:
    m: float = 1.0
    c: float = 1.0
    b: float = 1.0
    d: float = 0.0

    def __post_init__(self):
        w = (self.m, self.c, self.b, self.d)
        if any(not (x >= 0 and math.isfinite(x)) for x in w):
            raise ConfigurationError(f"loss weights must be finite and non-negative, got {w}")
        if not any(x > 0 for x in w):
            raise ConfigurationError("at least one loss weight must be positive")

    @property
    def physics(self):
        return self.m > 0 or self.c > 0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    lr: float = 1e-3
    alpha: float = 0.9995
    batch_size: int | None = None  # cases per optimizer step; None picks the per-model default
    seed: int = 0
    weights: LossWeights = LossWeights()
    dropout: float = 0.0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    val_every: int = 0  # 0 validates only at checkpoints and at the end
    clip_norm: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.epochs > 0:
            raise ConfigurationError("epochs must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in (0, 1]")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch size must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigurationError("clip norm must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


@dataclass
class LossBreakdown:
    l_m: float
    l_c: float
    l_b: float
    l_d: float
    total: float
    var: object = field(default=None, repr=False, compare=False)  # tape handle of the total


def combine(weights: LossWeights, l_m, l_c, l_b, l_d):
    """Weighted sum in a fixed order, shared by floats and tape variables."""
    return weights.m * l_m + weights.c * l_c + weights.b * l_b + weights.d * l_d


def lr_at(epoch, base, alpha):
    if epoch < 0:
        raise ConfigurationError("epoch must be non-negative")
    return base * alpha ** epoch


# ------------------------------------------------------------------ loss

def case_forcing(case: PointCloudCase, idx):
    """Physical body force at points ``idx``, component-first; None for unforced cases."""
    if case.meta.kind != "mms":
        return None
    f = mms_forcing(case.coords[idx], case.props, case.coeffs, case.chi[idx])
    return f.T


def _mean(x):
    return x.mean() if isinstance(x, T.Var) else float(np.mean(x))


def loss_terms(out, nc, stats: NormalizationStats, weights: LossWeights, forcing="auto"):
    """Loss terms from an output jet over all points of a normalized case.

    ``out.data`` has shape ``(1 + 2d, N, d + 1)``; value and derivative slots
    refer to normalized coordinates and outputs.
    """
    case = nc.source
    d = case.dim
    data = out.data
    zero = 0.0
    l_m = l_c = l_b = l_d = zero
    if weights.physics:
        if out.ndir != d:
            raise ConfigurationError("physics terms need first and second derivatives")
        ii = case.interior_idx
        if ii.size:
            if isinstance(forcing, str):
                forcing = case_forcing(case, ii)
            X = data[:, ii, :]
            u = [X[0, :, i] for i in range(d)]
            jac = [[X[1 + k, :, i] for i in range(d)] for k in range(d)]
            second = [[X[1 + d + k, :, i] for i in range(d)] for k in range(d)]
            grad_p = [X[1 + k, :, d] for k in range(d)]
            cont, mom = scaled_residuals(u, jac, second, grad_p, stats, case.props, case.coeffs,
                                         chi=case.chi[ii].astype(float), forcing=forcing)
            l_c = _mean(cont * cont)
            sq = mom[0] * mom[0]
            for r in mom[1:]:
                sq = sq + r * r
            l_m = _mean(sq)
    values = data[0]
    if weights.b > 0:
        b = case.boundary_idx
        if b.size:
            ut, pt, mu, mp = boundary_targets(case)
            ut = (ut - np.asarray(stats.vel_mean)) / np.asarray(stats.vel_std)
            pt = (pt - stats.p_mean) / stats.p_std
            V = values[b]
            err = mu[:, 0] * (V[:, 0] - ut[:, 0]) ** 2
            for i in range(1, d):
                err = err + mu[:, i] * (V[:, i] - ut[:, i]) ** 2
            err = err + mp * (V[:, d] - pt) ** 2
            l_b = _mean(err)
    if weights.d > 0:
        obs = case.observations
        if obs.size == 0:
            raise ConfigurationError(f"case {case.case_id!r}: data weight is positive but it has no observation points")
        if nc.u is None:
            raise ConfigurationError(f"case {case.case_id!r}: observations need reference fields")
        V = values[obs]
        err = (V[:, d] - nc.p[obs]) ** 2
        for i in range(d):
            err = err + (V[:, i] - nc.u[obs, i]) ** 2
        l_d = _mean(err)
    total = combine(weights, l_m, l_c, l_b, l_d)
    f = lambda x: float(T.value_of(x))
    return LossBreakdown(f(l_m), f(l_c), f(l_b), f(l_d), f(total), var=total)


def compute_loss(model: M.Model, nc, stats, weights: LossWeights, values=None, rng=None,
                 forcing="auto") -> LossBreakdown:
    ndir = None if weights.physics else 0
    out = model.forward(nc, stats, values=values, ndir=ndir, rng=rng)
    return loss_terms(out, nc, stats, weights, forcing=forcing)


# ------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0, beta1, beta2, eps)

    def meta(self):
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(params: dict, grads: dict, state: AdamState, lr):
    """Bias-corrected Adam update; returns new parameters and a new state."""
    for name, g in grads.items():
        g = np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient entry in parameter {name!r}", name=name)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def clip_by_global_norm(grads: dict, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads, total
    s = max_norm / total
    return {k: g * s for k, g in grads.items()}, total


# ----------------------------------------------------------- train loop

@dataclass
class TrainResult:
    params: M.ModelParameters  # final-epoch parameters
    history: list  # one dict per epoch with HISTORY_COLUMNS
    stats: NormalizationStats
    best: M.ModelParameters | None = None  # lowest validation loss, when validated
    best_epoch: int | None = None
    val_history: list = field(default_factory=list)
    optimizer: AdamState | None = None


def default_model_config(kind, cases, dropout=0.0, **overrides):
    dim = cases[0].dim
    act = "tanh" if all(c.meta.kind == "mms" for c in cases) else "silu"
    overrides.setdefault("activation", act)
    if kind == "pipn":
        return M.PipnConfig(dim=dim, dropout=dropout, **overrides)
    if kind == "pigano":
        return M.PiganoConfig.for_dim(dim, dropout=dropout, **overrides)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def write_history(path, history):
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(str(int(row["epoch"])) if k == "epoch" else "%.17g" % row[k]
                              for k in HISTORY_COLUMNS) + "\n")


def read_history(path):
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != HISTORY_COLUMNS:
        raise ConfigurationError(f"{path}: not a loss-history table")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        row = {k: float(v) for k, v in zip(HISTORY_COLUMNS, vals)}
        row["epoch"] = int(vals[0])
        rows.append(row)
    return rows


def evaluate_loss(model, ncs, stats, weights):
    terms = np.zeros(4)
    for nc in ncs:
        lb = compute_loss(model, nc, stats, weights)
        terms += (lb.l_m, lb.l_c, lb.l_b, lb.l_d)
    terms /= max(len(ncs), 1)
    terms = [float(t) for t in terms]
    return LossBreakdown(*terms, combine(weights, *terms))


def _save(directory, model_params, epoch, stats, opt, config, history, val_history, best_epoch):
    extra = {"train_config": config.to_dict(), "best_epoch": best_epoch,
             "val_history": val_history}
    M.save_checkpoint(directory, model_params, epoch=epoch, stats=stats, optimizer=opt, extra=extra)
    write_history(Path(directory) / "history.csv", history)


def train(kind, cases, config: TrainConfig, model_config=None, stats=None, val_cases=(),
          checkpoint_dir=None, resume_from=None, progress=None) -> TrainResult:
    """Run Adam over minibatches of cases for ``config.epochs`` epochs.

    Every source of randomness is derived from ``config.seed`` and the
    epoch/minibatch indices, so resuming from a checkpoint continues the
    original trajectory exactly.
    """
    cases = list(cases)
    if not cases:
        raise ConfigurationError("training needs at least one case")
    if stats is None:
        stats = compute_normalization(cases)
    weights = config.weights
    start = 0
    history, val_history = [], []
    best, best_epoch, best_loss = None, None, math.inf
    if resume_from is not None:
        params, manifest, moments = M.load_checkpoint(resume_from)
        if moments is None:
            raise ConfigurationError(f"{resume_from}: checkpoint has no optimizer state")
        meta = manifest["optimizer"]
        opt = AdamState(moments[0], moments[1], int(meta["t"]), meta["beta1"], meta["beta2"], meta["eps"])
        start = int(manifest["epoch"])
        stats = NormalizationStats.from_dict(manifest["stats"])
        history = read_history(Path(resume_from) / "history.csv")
        val_history = list(manifest["extra"].get("val_history", []))
        best_epoch = manifest["extra"].get("best_epoch")
        if val_history:
            best_loss = min(v["total"] for v in val_history)
        model_config = params.config
    else:
        if model_config is None:
            model_config = default_model_config(kind, cases, dropout=config.dropout)
        params = M.init_parameters(model_config, config.seed)
        opt = AdamState.zeros(params.values, config.beta1, config.beta2, config.eps)
    model = M.Model(params, branch_seed=config.seed)
    ncs = [normalize_case(c, stats) for c in cases]
    val_ncs = [normalize_case(c, stats) for c in val_cases]
    forcings = [case_forcing(c, c.interior_idx) for c in cases]
    values = params.values
    n = len(ncs)
    bs = config.batch_size or DEFAULT_BATCH[params.kind]
    last_ckpt = None

    for epoch in range(start, config.epochs):
        lr = lr_at(epoch, config.lr, config.alpha)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sums = np.zeros(4)
        for bi, lo in enumerate(range(0, n, bs)):
            batch = order[lo:lo + bs]
            tape = T.Tape()
            leaves = tape.leaves(values)
            drop_rng = np.random.default_rng([config.seed, epoch, bi, 1]) if model_config.dropout > 0 else None
            total = None
            for j in batch:
                lb = compute_loss(model, ncs[j], stats, weights, values=leaves, rng=drop_rng,
                                  forcing=forcings[j])
                sums += (lb.l_m, lb.l_c, lb.l_b, lb.l_d)
                total = lb.var if total is None else total + lb.var
            total = total / len(batch)
            if not np.all(np.isfinite(T.value_of(total))):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, minibatch {bi}"
                    + (f"; last checkpoint kept at {last_ckpt}" if last_ckpt else ""),
                    epoch=epoch, batch=bi)
            grads = T.parameter_gradient(total, leaves)
            if config.clip_norm is not None:
                grads, _ = clip_by_global_norm(grads, config.clip_norm)
            try:
                values, opt = adam_step(values, grads, opt, lr)
            except NumericalError as exc:
                raise TrainingDiverged(f"epoch {epoch}, minibatch {bi}: {exc}", epoch=epoch, batch=bi) from exc
        terms = sums / n
        row = {"epoch": epoch + 1, "lr": float(lr), "l_m": float(terms[0]), "l_c": float(terms[1]),
               "l_b": float(terms[2]), "l_d": float(terms[3]),
               "total": float(combine(weights, *terms))}
        history.append(row)
        if progress is not None:
            progress(row)
        done = epoch + 1
        at_ckpt = config.checkpoint_every and done % config.checkpoint_every == 0
        at_val = (config.val_every and done % config.val_every == 0) or at_ckpt or done == config.epochs
        current = params.with_values(values)
        model = M.Model(current, branch_seed=config.seed)
        if val_ncs and at_val:
            vl = evaluate_loss(model, val_ncs, stats, weights)
            val_history.append({"epoch": done, "total": vl.total})
            if vl.total < best_loss:
                best_loss, best_epoch, best = vl.total, done, current.copy()
        if checkpoint_dir is not None and at_ckpt:
            last_ckpt = Path(checkpoint_dir) / f"epoch_{done:05d}"
            _save(last_ckpt, current, done, stats, opt, config, history, val_history, best_epoch)
    final = params.with_values(values)
    if checkpoint_dir is not None:
        _save(Path(checkpoint_dir) / "final", final, config.epochs, stats, opt, config, history,
              val_history, best_epoch)
        if best is not None:
            M.save_checkpoint(Path(checkpoint_dir) / "best", best, epoch=best_epoch, stats=stats)
    return TrainResult(final, history, stats, best, best_epoch, val_history, opt)

