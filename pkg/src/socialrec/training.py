"""Pairwise ranking optimisation with minibatch Adam and early stopping.

Each positive (user, item) is paired with freshly sampled unobserved items
every epoch; one Adam step is applied per minibatch on the mean gradient of
``-ln sigmoid(score_pos - score_neg)`` plus local L2 on the embedding rows
the triple touches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .dataset import sample_negatives
from .evaluation import evaluate


@dataclass
class TrainConfig:
    latent: int = 15
    hidden: int = 20
    reg: float = 0.01
    lr: float = 0.0005
    batch: int = 512
    negatives: int = 5
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 2
    seed: int = 0
    mode: M.AttentionMode = field(default_factory=M.AttentionMode)
    warm_start: bool = True
    warm_epochs: int = 20
    eval_candidates: int = 100
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.reg < 0:
            raise ValueError("reg must be >= 0")
        for name in ("latent", "hidden", "batch", "negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


class AdamState:
    """First/second moment accumulators congruent to the parameter set."""

    def __init__(self, params: M.ModelParams):
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.tensors().items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.tensors().items()}
        self.t = 0


def adam_step(params: M.ModelParams, grads: dict, state: AdamState, cfg: TrainConfig):
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, tensor in params.tensors().items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** state.t)
        v_hat = state.v[name] / (1 - b2 ** state.t)
        tensor -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(tensor.dtype)


@dataclass
class TrainState:
    params: M.ModelParams
    adam: AdamState
    epoch: int = 0
    best_hr: float = -1.0
    best_ndcg: float = -1.0
    best_params: M.ModelParams | None = None
    best_epoch: int = 0
    log: list = field(default_factory=list)


def pairwise_loss(score_pos: float, score_neg: float, reg: float, reg_rows=()) -> float:
    """-ln sigmoid(pos - neg) plus L2 over the supplied embedding rows."""
    margin = score_pos - score_neg
    loss = float(np.logaddexp(0.0, -margin))
    for row in reg_rows:
        loss += reg * float(np.dot(row, row))
    return loss


def _build_triples(train, negatives, rng):
    """All (user, pos, neg) with `negatives` fresh draws per positive."""
    triples = []
    for u, i, _ in train.ratings:
        for j in sample_negatives(train, u, negatives, rng):
            triples.append((u, i, int(j)))
    return triples


def _add_ridge(acc, params, touched, reg):
    """Per-triple local L2 gradient: 2 * reg * row for each touched row."""
    if reg <= 0:
        return
    for idx in touched.user_base:
        acc.user_base[idx] += 2 * reg * params.user_base[idx]
    for idx in touched.user_aux:
        acc.user_aux[idx] += 2 * reg * params.user_aux[idx]
    for idx in touched.item_base:
        acc.item_base[idx] += 2 * reg * params.item_base[idx]
    for idx in touched.item_aux:
        acc.item_aux[idx] += 2 * reg * params.item_aux[idx]


def _ridge_rows(params, touched):
    rows = []
    rows += [params.user_base[i] for i in touched.user_base]
    rows += [params.user_aux[i] for i in touched.user_aux]
    rows += [params.item_base[i] for i in touched.item_base]
    rows += [params.item_aux[i] for i in touched.item_aux]
    return rows


def train_epoch(state: TrainState, train, bundle, cfg: TrainConfig) -> float:
    """One pass over fresh triples in shuffled minibatches; returns mean loss."""
    params = state.params
    mode = cfg.mode
    rng = np.random.default_rng([cfg.seed, 0xE90C, state.epoch])
    triples = _build_triples(train, cfg.negatives, rng)
    order = rng.permutation(len(triples))

    total_loss = 0.0
    for start in range(0, len(order), cfg.batch):
        batch = [triples[int(k)] for k in order[start:start + cfg.batch]]
        proj = None
        if mode.aspects and bundle is not None and mode.bottom != "avg":
            proj = M.project_features(params, bundle)
        acc = M.GradientAccumulator(params.dims)
        ctx_cache = {}
        for u, i, j in batch:
            ctx = ctx_cache.get(u)
            if ctx is None:
                ctx = M.build_user_context(u, params, train, bundle, mode, proj)
                ctx_cache[u] = ctx
            s_pos, tr_pos = M.predict(u, i, params, train, bundle, mode, proj, ctx)
            s_neg, tr_neg = M.predict(u, j, params, train, bundle, mode, proj, ctx)
            # d/d margin of -ln sigmoid(margin) is sigmoid(margin) - 1.
            d_margin = -1.0 / (1.0 + np.exp(s_pos - s_neg))
            touched = M.Touched()
            M.backward(tr_pos, d_margin, params, bundle, mode, acc, touched)
            M.backward(tr_neg, -d_margin, params, bundle, mode, acc, touched)
            _add_ridge(acc, params, touched, cfg.reg)
            total_loss += pairwise_loss(s_pos, s_neg, cfg.reg, _ridge_rows(params, touched))
        grads = acc.finalize(bundle, count=len(batch))
        adam_step(params, grads, state.adam, cfg)
    state.epoch += 1
    return total_loss / max(len(triples), 1)


def bpr_pretrain(train, dims: M.ModelDims, epochs: int, seed: int, cfg: TrainConfig | None = None):
    """Plain pairwise matrix factorisation (all context masked).

    Returns (user_base, item_base) for warm starting; the same params also
    serve as the no-context baseline.
    """
    base_cfg = cfg or TrainConfig()
    bpr_cfg = TrainConfig(
        latent=dims.latent, hidden=dims.hidden, reg=base_cfg.reg, lr=base_cfg.lr,
        batch=base_cfg.batch, negatives=base_cfg.negatives, epochs=epochs,
        seed=seed, mode=M.BPR_MODE, warm_start=False,
    )
    params = M.init_params(dims, seed=seed)
    state = TrainState(params=params, adam=AdamState(params))
    for _ in range(epochs):
        train_epoch(state, train, None, bpr_cfg)
    return params.user_base.copy(), params.item_base.copy()


def _validation_metrics(params, mode, split, bundle, cfg):
    report = evaluate(
        params, mode, split, bundle, ks=(5,), n_candidates=cfg.eval_candidates,
        repeats=1, seed=[cfg.seed, 0x7A11], subset="validation",
    )
    return report.hr_mean[5], report.ndcg_mean[5]


def fit(split, bundle, cfg: TrainConfig, dims: M.ModelDims | None = None,
        warm=None, log_sink=None):
    """Train with per-epoch validation and both-metrics early stopping.

    An epoch is kept as the running best unless both HR@5 and NDCG@5 fall
    below the maxima seen over trained epochs; training stops after
    `patience` consecutive such epochs.  Returns (best params, per-epoch
    log records).
    """
    train = split.train
    if dims is None:
        dims = M.ModelDims(
            num_users=train.num_users, num_items=train.num_items,
            latent=cfg.latent, hidden=cfg.hidden,
            social=bundle.social_dim if bundle is not None else 0,
            content=bundle.content_dim if bundle is not None else 0,
            style=bundle.style_dim if bundle is not None else 0,
        )
    if warm is None and cfg.warm_start:
        warm = bpr_pretrain(train, dims, cfg.warm_epochs, cfg.seed, cfg)
    params = M.init_params(dims, seed=cfg.seed, warm_start=warm,
                           leaky_slope=cfg.leaky_slope)
    state = TrainState(params=params, adam=AdamState(params))

    have_validation = len(split.validation) > 0
    state.best_params = params.copy()
    bad_streak = 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        mean_loss = train_epoch(state, train, bundle, cfg)
        if have_validation:
            hr, ndcg = _validation_metrics(params, cfg.mode, split, bundle, cfg)
        else:
            hr = ndcg = float("nan")
        record = {
            "epoch": epoch,
            "mean_loss": mean_loss,
            "val_hr5": hr,
            "val_ndcg5": ndcg,
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }
        state.log.append(record)
        if log_sink is not None:
            log_sink(record)
        if not have_validation:
            state.best_params = params.copy()
            state.best_epoch = epoch
            continue
        # the running best tracks trained epochs only; the first one seeds it
        good = epoch == 1 or hr >= state.best_hr or ndcg >= state.best_ndcg
        state.best_hr = max(state.best_hr, hr)
        state.best_ndcg = max(state.best_ndcg, ndcg)
        if good:
            state.best_params = params.copy()
            state.best_epoch = epoch
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak > cfg.patience:
                break
    return state.best_params, state.log


def gradient_check(params: M.ModelParams, pairs, ds, bundle, mode,
                   step: float = 1e-5) -> dict:
    """Max relative error of analytical vs central-difference gradients.

    The checked scalar is the sum of scores over the supplied (user, item)
    pairs.  Requires float64 parameters.
    """
    if params.dtype != np.float64:
        raise ValueError("gradient_check requires float64 parameters")

    acc = M.GradientAccumulator(params.dims)
    for u, i in pairs:
        _, trace = M.predict(u, i, params, ds, bundle, mode)
        M.backward(trace, 1.0, params, bundle, mode, acc)
    analytic = acc.finalize(bundle, count=1)

    def total_score():
        return sum(M.predict(u, i, params, ds, bundle, mode)[0] for u, i in pairs)

    report = {}
    for name, tensor in params.tensors().items():
        a = analytic[name]
        worst = 0.0
        flat = tensor.reshape(-1)
        a_flat = np.asarray(a).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = total_score()
            flat[idx] = orig - step
            down = total_score()
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            err = abs(a_flat[idx] - numeric)
            denom = max(abs(a_flat[idx]) + abs(numeric), 1e-6)
            worst = max(worst, err / denom)
        report[name] = worst
    return report
