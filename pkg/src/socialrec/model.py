"""Hierarchical attentive scoring model.

Each user carries a base and an auxiliary embedding, each item likewise.
Three contextual aspects feed the auxiliary side of the prediction:

* upload history  -- attention over the user's uploaded items, aggregating
  their auxiliary item vectors into ``x_tilde``;
* social influence -- attention over followees, aggregating their auxiliary
  user vectors into ``q_tilde``;
* creator admiration -- the auxiliary vector of the scored item's creator.

A top-level attention combines the active aspects, and the score is
``item_base[i] . (user_base[a] + sum_l gamma_l * aspect_l)``.  Every bottom
or top attention can be swapped for uniform (avg) or hard argmax (max)
pooling, aspects and attention inputs can be masked, and ``backward``
produces exact analytical gradients of the score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matio

ASPECTS = ("upload", "social", "creator")
INPUT_KINDS = ("base", "aux", "social_embed", "visual_content", "visual_style")
ATT_CHOICES = ("att", "avg", "max")

CHECKPOINT_MAGIC = "socialrec-checkpoint"


@dataclass(frozen=True)
class ModelDims:
    num_users: int
    num_items: int
    latent: int = 15
    hidden: int = 20
    social: int = 128
    content: int = 4096
    style: int = 5120

    @property
    def upload_input(self):
        return 8 * self.latent + self.social

    @property
    def social_input(self):
        return 6 * self.latent + 2 * self.social

    def to_dict(self):
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "latent": self.latent,
            "hidden": self.hidden,
            "social": self.social,
            "content": self.content,
            "style": self.style,
        }


@dataclass(frozen=True)
class AttentionMode:
    """Selectors for the attention grid, aspect subsets and input subsets."""

    bottom: str = "att"
    top: str = "att"
    aspects: tuple = ASPECTS
    inputs: tuple = INPUT_KINDS
    creator_input: str = "creator"  # "creator": owner's aux vector; "self": q_a

    def __post_init__(self):
        if self.bottom not in ATT_CHOICES or self.top not in ATT_CHOICES:
            raise ValueError(f"attention selectors must be one of {ATT_CHOICES}")
        object.__setattr__(self, "aspects", tuple(self.aspects))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        for a in self.aspects:
            if a not in ASPECTS:
                raise ValueError(f"unknown aspect {a!r}")
        for k in self.inputs:
            if k not in INPUT_KINDS:
                raise ValueError(f"unknown attention input {k!r}")
        if "base" not in self.inputs:
            raise ValueError("the base embedding input cannot be masked")
        if self.creator_input not in ("creator", "self"):
            raise ValueError("creator_input must be 'creator' or 'self'")

    def to_dict(self):
        return {
            "bottom": self.bottom,
            "top": self.top,
            "aspects": list(self.aspects),
            "inputs": list(self.inputs),
            "creator_input": self.creator_input,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            bottom=d["bottom"],
            top=d["top"],
            aspects=tuple(d["aspects"]),
            inputs=tuple(d["inputs"]),
            creator_input=d.get("creator_input", "creator"),
        )


BPR_MODE = AttentionMode(aspects=())
AVG_MODE = AttentionMode(bottom="avg", top="avg")


@dataclass
class AttentionNet:
    """One scoring subnetwork: raw(z) = v . act(W z + b)."""

    W: np.ndarray
    v: np.ndarray
    b: np.ndarray


class ModelParams:
    """All trainable tensors, bound to one (users, items) geometry."""

    def __init__(self, dims: ModelDims, tensors: dict, leaky_slope: float = 0.01):
        self.dims = dims
        self.leaky_slope = float(leaky_slope)
        self.user_base = tensors["user_base"]
        self.user_aux = tensors["user_aux"]
        self.item_base = tensors["item_base"]
        self.item_aux = tensors["item_aux"]
        self.content_proj = tensors["content_proj"]
        self.style_proj = tensors["style_proj"]
        self.upload_net = AttentionNet(
            tensors["upload_net.W"], tensors["upload_net.v"], tensors["upload_net.b"]
        )
        self.social_net = AttentionNet(
            tensors["social_net.W"], tensors["social_net.v"], tensors["social_net.b"]
        )
        self.aspect_net = AttentionNet(
            tensors["aspect_net.W"], tensors["aspect_net.v"], tensors["aspect_net.b"]
        )
        self._check_shapes()

    def _check_shapes(self):
        d = self.dims
        expect = tensor_shapes(d)
        for name, arr in self.tensors().items():
            if arr.shape != expect[name]:
                raise ValueError(f"{name}: expected shape {expect[name]}, got {arr.shape}")

    @property
    def dtype(self):
        return self.user_base.dtype

    def tensors(self):
        return {
            "user_base": self.user_base,
            "user_aux": self.user_aux,
            "item_base": self.item_base,
            "item_aux": self.item_aux,
            "content_proj": self.content_proj,
            "style_proj": self.style_proj,
            "upload_net.W": self.upload_net.W,
            "upload_net.v": self.upload_net.v,
            "upload_net.b": self.upload_net.b,
            "social_net.W": self.social_net.W,
            "social_net.v": self.social_net.v,
            "social_net.b": self.social_net.b,
            "aspect_net.W": self.aspect_net.W,
            "aspect_net.v": self.aspect_net.v,
            "aspect_net.b": self.aspect_net.b,
        }

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims, {k: v.copy() for k, v in self.tensors().items()}, self.leaky_slope
        )

    def activation(self, x):
        """Leaky rectifier; the kink at zero takes the leaky slope."""
        return np.where(x > 0, x, self.leaky_slope * x)

    def activation_grad(self, x):
        return np.where(x > 0, 1.0, self.leaky_slope)


def tensor_shapes(dims: ModelDims) -> dict:
    h = dims.hidden
    return {
        "user_base": (dims.num_users, dims.latent),
        "user_aux": (dims.num_users, dims.latent),
        "item_base": (dims.num_items, dims.latent),
        "item_aux": (dims.num_items, dims.latent),
        "content_proj": (dims.latent, dims.content),
        "style_proj": (dims.latent, dims.style),
        "upload_net.W": (h, dims.upload_input),
        "upload_net.v": (h,),
        "upload_net.b": (h,),
        "social_net.W": (h, dims.social_input),
        "social_net.v": (h,),
        "social_net.b": (h,),
        "aspect_net.W": (h, dims.latent),
        "aspect_net.v": (h,),
        "aspect_net.b": (h,),
    }


def init_params(
    dims: ModelDims,
    seed: int = 0,
    warm_start=None,
    dtype=np.float64,
    leaky_slope: float = 0.01,
) -> ModelParams:
    """Draw every tensor from Normal(0, 0.1); optionally copy a warm start.

    `warm_start` is a (user_base, item_base) pair, typically from a plain
    pairwise-ranking pretraining run.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(dims).items():
        tensors[name] = rng.normal(0.0, 0.1, size=shape).astype(dtype)
    if warm_start is not None:
        p, w = warm_start
        if p.shape != tensors["user_base"].shape or w.shape != tensors["item_base"].shape:
            raise ValueError(
                f"warm start shapes {p.shape}/{w.shape} do not match "
                f"{tensors['user_base'].shape}/{tensors['item_base'].shape}"
            )
        tensors["user_base"] = np.array(p, dtype=dtype)
        tensors["item_base"] = np.array(w, dtype=dtype)
    return ModelParams(dims, tensors, leaky_slope)


@dataclass
class ProjectionCache:
    """Visual features and profiles projected into the latent space."""

    item_content: np.ndarray
    item_style: np.ndarray
    user_content: np.ndarray
    user_style: np.ndarray


def project_features(params: ModelParams, bundle) -> ProjectionCache:
    return ProjectionCache(
        item_content=bundle.content @ params.content_proj.T,
        item_style=bundle.style @ params.style_proj.T,
        user_content=bundle.user_content @ params.content_proj.T,
        user_style=bundle.user_style @ params.style_proj.T,
    )


def softmax(raw):
    """Max-subtracted softmax over a 1-d array."""
    shifted = raw - np.max(raw)
    e = np.exp(shifted)
    return e / e.sum()


def softmax_backward(weights, d_weights):
    """Pull a gradient through softmax: J^T g with J = diag(w) - w w^T."""
    return weights * (d_weights - np.dot(weights, d_weights))


def hard_max_weights(raw):
    """One-hot of the largest raw score; ties take the lowest index."""
    w = np.zeros_like(raw)
    w[int(np.argmax(raw))] = 1.0
    return w


def _net_forward(net: AttentionNet, Z, params: ModelParams):
    """Raw attention scores for stacked inputs Z (n, in_dim)."""
    pre = Z @ net.W.T + net.b
    return params.activation(pre) @ net.v, pre


def _pool(raw, choice):
    if choice == "att":
        return softmax(raw)
    if choice == "max":
        return hard_max_weights(raw)
    raise ValueError(choice)


@dataclass
class SideContext:
    """One bottom attention side: support, inputs and pooled aggregate."""

    support: np.ndarray        # element indices (items or followees)
    Z: np.ndarray | None       # (n, in_dim) stacked attention inputs
    pre: np.ndarray | None     # (n, hidden) pre-activations, None for avg
    raw: np.ndarray | None     # (n,) raw scores, None for avg
    weights: np.ndarray | None
    aggregate: np.ndarray      # x_tilde or q_tilde
    active: bool


@dataclass
class UserContext:
    """Item-independent part of a forward pass for one user."""

    user: int
    excluded_item: int | None
    upload: SideContext
    social: SideContext


@dataclass
class AttentionTrace:
    """Every intermediate of one (user, item) forward pass.

    Sufficient to reproduce the score and to drive ``backward`` without
    re-running the forward, provided the parameters are unchanged.
    """

    user: int
    item: int
    creator: int
    ctx: UserContext
    aspect_names: tuple
    aspect_inputs: np.ndarray | None   # (n_active, latent)
    aspect_pre: np.ndarray | None
    aspect_raw: np.ndarray | None
    gamma: np.ndarray | None
    creator_row: int | None            # user_aux row used by the creator aspect
    user_vec: np.ndarray
    score: float

    def gamma_full(self):
        """Gamma aligned to (upload, social, creator); inactive slots are 0."""
        out = np.zeros(3)
        for k, name in enumerate(self.aspect_names):
            out[ASPECTS.index(name)] = self.gamma[k]
        return out


def _upload_side(user, params, ds, bundle, mode, proj, exclude_item):
    D = params.dims.latent
    d = params.dims.social
    support = [j for j in ds.uploads_by_user[user] if j != exclude_item]
    support = np.asarray(support, dtype=np.int64)
    active = "upload" in mode.aspects and support.size > 0
    if not active:
        return SideContext(support, None, None, None, None,
                           np.zeros(D, dtype=params.dtype), False)
    n = support.size
    if mode.bottom == "avg":
        weights = np.full(n, 1.0 / n)
        Z = pre = raw = None
    else:
        Z = np.zeros((n, params.dims.upload_input), dtype=params.dtype)
        inputs = mode.inputs
        if "base" in inputs:
            Z[:, 0:D] = params.user_base[user]
            Z[:, 3 * D:4 * D] = params.item_base[support]
        if "aux" in inputs:
            Z[:, D:2 * D] = params.user_aux[user]
            Z[:, 2 * D:3 * D] = params.item_aux[support]
        if "social_embed" in inputs:
            Z[:, 4 * D:4 * D + d] = bundle.social[user]
        if "visual_content" in inputs:
            Z[:, 4 * D + d:5 * D + d] = proj.item_content[support]
            Z[:, 6 * D + d:7 * D + d] = proj.user_content[user]
        if "visual_style" in inputs:
            Z[:, 5 * D + d:6 * D + d] = proj.item_style[support]
            Z[:, 7 * D + d:8 * D + d] = proj.user_style[user]
        raw, pre = _net_forward(params.upload_net, Z, params)
        weights = _pool(raw, mode.bottom)
    aggregate = weights @ params.item_aux[support]
    return SideContext(support, Z, pre, raw, weights, aggregate, True)


def _social_side(user, params, ds, bundle, mode, proj):
    D = params.dims.latent
    d = params.dims.social
    support = np.asarray(ds.followees[user], dtype=np.int64)
    active = "social" in mode.aspects and support.size > 0
    if not active:
        return SideContext(support, None, None, None, None,
                           np.zeros(D, dtype=params.dtype), False)
    n = support.size
    if mode.bottom == "avg":
        weights = np.full(n, 1.0 / n)
        Z = pre = raw = None
    else:
        Z = np.zeros((n, params.dims.social_input), dtype=params.dtype)
        inputs = mode.inputs
        if "base" in inputs:
            Z[:, 0:D] = params.user_base[user]
            Z[:, D:2 * D] = params.user_base[support]
        if "aux" in inputs:
            Z[:, 2 * D:3 * D] = params.user_aux[user]
            Z[:, 3 * D:4 * D] = params.user_aux[support]
        if "social_embed" in inputs:
            Z[:, 4 * D:4 * D + d] = bundle.social[user]
            Z[:, 4 * D + d:4 * D + 2 * d] = bundle.social[support]
        if "visual_content" in inputs:
            Z[:, 4 * D + 2 * d:5 * D + 2 * d] = proj.user_content[user]
        if "visual_style" in inputs:
            Z[:, 5 * D + 2 * d:6 * D + 2 * d] = proj.user_style[user]
        raw, pre = _net_forward(params.social_net, Z, params)
        weights = _pool(raw, mode.bottom)
    aggregate = weights @ params.user_aux[support]
    return SideContext(support, Z, pre, raw, weights, aggregate, True)


def build_user_context(
    user, params, ds, bundle, mode, proj=None, exclude_item=None
) -> UserContext:
    """Compute both bottom attention sides; they do not depend on the item
    except through the self-upload exclusion."""
    needs_bundle = bool(mode.aspects) and (
        "upload" in mode.aspects or "social" in mode.aspects
    )
    if needs_bundle and mode.bottom != "avg" and proj is None:
        if bundle is None:
            raise ValueError("bundle required for attention inputs")
        proj = project_features(params, bundle)
    return UserContext(
        user=user,
        excluded_item=exclude_item,
        upload=_upload_side(user, params, ds, bundle, mode, proj, exclude_item),
        social=_social_side(user, params, ds, bundle, mode, proj),
    )


def upload_attention(user, params, ds, bundle, mode, exclude_item=None, proj=None):
    """Weights over the user's uploads and their aggregate (alpha, x_tilde)."""
    if proj is None and mode.bottom != "avg" and bundle is not None:
        proj = project_features(params, bundle)
    side = _upload_side(user, params, ds, bundle, mode, proj, exclude_item)
    return side.weights, side.aggregate


def social_attention(user, params, ds, bundle, mode, proj=None):
    """Weights over the user's followees and their aggregate (beta, q_tilde)."""
    if proj is None and mode.bottom != "avg" and bundle is not None:
        proj = project_features(params, bundle)
    side = _social_side(user, params, ds, bundle, mode, proj)
    return side.weights, side.aggregate


def aspect_attention(user, item, x_tilde, q_tilde, params, ds, mode):
    """Top-level weights over the active aspects, in canonical order.

    Pass ``None`` for an inactive side's aggregate; returns (names, gamma).
    """
    rows = []
    names = []
    if "upload" in mode.aspects and x_tilde is not None:
        names.append("upload")
        rows.append(x_tilde)
    if "social" in mode.aspects and q_tilde is not None:
        names.append("social")
        rows.append(q_tilde)
    if "creator" in mode.aspects:
        names.append("creator")
        row_index = user if mode.creator_input == "self" else int(ds.creators[item])
        rows.append(params.user_aux[row_index])
    if not names:
        return (), np.zeros(0)
    A = np.stack(rows)
    if mode.top == "avg":
        return tuple(names), np.full(len(names), 1.0 / len(names))
    raw, _ = _net_forward(params.aspect_net, A, params)
    return tuple(names), _pool(raw, mode.top)


def predict(user, item, params, ds, bundle, mode, proj=None, ctx=None):
    """Score one (user, item) pair; returns (score, AttentionTrace)."""
    creator = int(ds.creators[item])
    exclude = item if creator == user else None
    if ctx is None or ctx.user != user or ctx.excluded_item != exclude:
        ctx = build_user_context(user, params, ds, bundle, mode, proj, exclude)

    names = []
    rows = []
    creator_row = None
    if ctx.upload.active:
        names.append("upload")
        rows.append(ctx.upload.aggregate)
    if ctx.social.active:
        names.append("social")
        rows.append(ctx.social.aggregate)
    if "creator" in mode.aspects:
        creator_row = user if mode.creator_input == "self" else creator
        names.append("creator")
        rows.append(params.user_aux[creator_row])

    user_vec = params.user_base[user].copy()
    if names:
        A = np.stack(rows)
        if mode.top == "avg":
            gamma = np.full(len(names), 1.0 / len(names))
            raw = pre = None
        else:
            raw, pre = _net_forward(params.aspect_net, A, params)
            gamma = _pool(raw, mode.top)
        user_vec += gamma @ A
    else:
        A = pre = raw = gamma = None

    score = float(params.item_base[item] @ user_vec)
    trace = AttentionTrace(
        user=user,
        item=item,
        creator=creator,
        ctx=ctx,
        aspect_names=tuple(names),
        aspect_inputs=A,
        aspect_pre=pre,
        aspect_raw=raw,
        gamma=gamma,
        creator_row=creator_row,
        user_vec=user_vec,
        score=score,
    )
    return score, trace


def score_items(user, items, params, ds, bundle, mode, proj=None, ctx=None):
    """Score many items for one user, sharing the bottom attention work.

    Items created by the user route through ``predict`` (the scored item is
    excluded from its own upload context); the rest share one context.
    """
    items = np.asarray(items, dtype=np.int64)
    needs_bundle = bool(mode.aspects)
    if needs_bundle and mode.bottom != "avg" and proj is None and bundle is not None:
        proj = project_features(params, bundle)
    if ctx is None:
        ctx = build_user_context(user, params, ds, bundle, mode, proj, None)
    scores = np.empty(items.size, dtype=np.float64)

    own = ds.creators[items] == user
    for k in np.nonzero(own)[0]:
        scores[k], _ = predict(user, int(items[k]), params, ds, bundle, mode, proj=proj)
    rest = np.nonzero(~own)[0]
    if rest.size == 0:
        return scores
    sub = items[rest]

    names = []
    fixed_rows = []
    if ctx.upload.active:
        names.append("upload")
        fixed_rows.append(ctx.upload.aggregate)
    if ctx.social.active:
        names.append("social")
        fixed_rows.append(ctx.social.aggregate)
    has_creator = "creator" in mode.aspects

    base = params.user_base[user]
    if not names and not has_creator:
        scores[rest] = params.item_base[sub] @ base
        return scores

    if has_creator:
        if mode.creator_input == "self":
            creator_vecs = np.broadcast_to(
                params.user_aux[user], (sub.size, params.dims.latent)
            )
        else:
            creator_vecs = params.user_aux[ds.creators[sub]]
        n_active = len(names) + 1
        if mode.top == "avg":
            gamma_fixed = np.full((sub.size, len(names)), 1.0 / n_active)
            gamma_creator = np.full(sub.size, 1.0 / n_active)
        else:
            raw_fixed = np.array(
                [_net_forward(params.aspect_net, r[None, :], params)[0][0] for r in fixed_rows]
            )
            pre = creator_vecs @ params.aspect_net.W.T + params.aspect_net.b
            raw_creator = params.activation(pre) @ params.aspect_net.v
            raw_all = np.concatenate(
                [np.broadcast_to(raw_fixed, (sub.size, len(names))),
                 raw_creator[:, None]], axis=1
            )
            if mode.top == "att":
                shifted = raw_all - raw_all.max(axis=1, keepdims=True)
                e = np.exp(shifted)
                g = e / e.sum(axis=1, keepdims=True)
            else:
                g = np.zeros_like(raw_all)
                g[np.arange(sub.size), np.argmax(raw_all, axis=1)] = 1.0
            gamma_fixed, gamma_creator = g[:, :-1], g[:, -1]
        user_vecs = np.broadcast_to(base, (sub.size, base.size)).copy()
        for k, row in enumerate(fixed_rows):
            user_vecs += gamma_fixed[:, k:k + 1] * row
        user_vecs += gamma_creator[:, None] * creator_vecs
        scores[rest] = np.einsum("ij,ij->i", params.item_base[sub], user_vecs)
    else:
        A = np.stack(fixed_rows)
        if mode.top == "avg":
            gamma = np.full(len(names), 1.0 / len(names))
        else:
            raw, _ = _net_forward(params.aspect_net, A, params)
            gamma = _pool(raw, mode.top)
        user_vec = base + gamma @ A
        scores[rest] = params.item_base[sub] @ user_vec
    return scores


class Touched:
    """Embedding rows structurally involved in one training triple."""

    def __init__(self):
        self.user_base = set()
        self.user_aux = set()
        self.item_base = set()
        self.item_aux = set()


class GradientAccumulator:
    """Accumulates per-pair gradients; projection grads are composed lazily.

    Contributions to the visual projections are stored as per-row factors
    (d_input rows indexed by item or user) and contracted against the raw
    features only once, in ``finalize``.
    """

    def __init__(self, dims: ModelDims):
        self.dims = dims
        D, h = dims.latent, dims.hidden
        self.user_base = np.zeros((dims.num_users, D))
        self.user_aux = np.zeros((dims.num_users, D))
        self.item_base = np.zeros((dims.num_items, D))
        self.item_aux = np.zeros((dims.num_items, D))
        self.nets = {
            name: {
                "W": np.zeros(shape_W),
                "v": np.zeros(h),
                "b": np.zeros(h),
            }
            for name, shape_W in (
                ("upload_net", (h, dims.upload_input)),
                ("social_net", (h, dims.social_input)),
                ("aspect_net", (h, D)),
            )
        }
        self.wc_items = np.zeros((dims.num_items, D))
        self.ws_items = np.zeros((dims.num_items, D))
        self.wc_users = np.zeros((dims.num_users, D))
        self.ws_users = np.zeros((dims.num_users, D))

    def finalize(self, bundle, count: int) -> dict:
        """Mean gradients over `count` contributions, keyed like tensors()."""
        inv = 1.0 / max(count, 1)
        grads = {
            "user_base": self.user_base * inv,
            "user_aux": self.user_aux * inv,
            "item_base": self.item_base * inv,
            "item_aux": self.item_aux * inv,
        }
        for net in ("upload_net", "social_net", "aspect_net"):
            for part in ("W", "v", "b"):
                grads[f"{net}.{part}"] = self.nets[net][part] * inv
        if bundle is not None:
            grads["content_proj"] = (
                self.wc_items.T @ bundle.content + self.wc_users.T @ bundle.user_content
            ) * inv
            grads["style_proj"] = (
                self.ws_items.T @ bundle.style + self.ws_users.T @ bundle.user_style
            ) * inv
        else:
            grads["content_proj"] = np.zeros((self.dims.latent, self.dims.content))
            grads["style_proj"] = np.zeros((self.dims.latent, self.dims.style))
        return grads


def _net_backward(net, Z, pre, d_raw, params, acc_net):
    """Backprop through raw = v . act(Z W^T + b); returns dZ."""
    act = params.activation(pre)
    acc_net["v"] += act.T @ d_raw
    d_pre = np.outer(d_raw, net.v) * params.activation_grad(pre)
    acc_net["W"] += d_pre.T @ Z
    acc_net["b"] += d_pre.sum(axis=0)
    return d_pre @ net.W


def backward(trace, upstream, params, bundle, mode, acc, touched=None):
    """Accumulate d(score)/d(params) * upstream into `acc`.

    The trace must come from ``predict`` under the same params and mode.
    Parameters of masked aspects and masked inputs receive no gradient.
    """
    D = params.dims.latent
    d = params.dims.social
    a = trace.user
    i = trace.item
    g = float(upstream)
    if touched is None:
        touched = Touched()

    # score = item_base[i] . user_vec
    acc.item_base[i] += g * trace.user_vec
    touched.item_base.add(i)
    d_user_vec = g * params.item_base[i]
    acc.user_base[a] += d_user_vec
    touched.user_base.add(a)

    d_x_tilde = None
    d_q_tilde = None
    if trace.aspect_names:
        A = trace.aspect_inputs
        gamma = trace.gamma
        d_gamma = A @ d_user_vec
        dA = gamma[:, None] * d_user_vec[None, :]
        if mode.top == "att":
            d_raw = softmax_backward(gamma, d_gamma)
            dA += _net_backward(
                params.aspect_net, A, trace.aspect_pre, d_raw, params,
                acc.nets["aspect_net"],
            )
        for k, name in enumerate(trace.aspect_names):
            if name == "upload":
                d_x_tilde = dA[k]
            elif name == "social":
                d_q_tilde = dA[k]
            else:
                acc.user_aux[trace.creator_row] += dA[k]
                touched.user_aux.add(trace.creator_row)

    up = trace.ctx.upload
    if up.active and d_x_tilde is not None:
        support = up.support
        X = params.item_aux[support]
        acc.item_aux[support] += np.outer(up.weights, d_x_tilde)
        touched.item_aux.update(int(j) for j in support)
        if mode.bottom == "att":
            d_alpha = X @ d_x_tilde
            d_raw = softmax_backward(up.weights, d_alpha)
            dZ = _net_backward(
                params.upload_net, up.Z, up.pre, d_raw, params, acc.nets["upload_net"]
            )
            inputs = mode.inputs
            if "base" in inputs:
                acc.user_base[a] += dZ[:, 0:D].sum(axis=0)
                acc.item_base[support] += dZ[:, 3 * D:4 * D]
                touched.item_base.update(int(j) for j in support)
            if "aux" in inputs:
                acc.user_aux[a] += dZ[:, D:2 * D].sum(axis=0)
                acc.item_aux[support] += dZ[:, 2 * D:3 * D]
                touched.user_aux.add(a)
            if "visual_content" in inputs:
                acc.wc_items[support] += dZ[:, 4 * D + d:5 * D + d]
                acc.wc_users[a] += dZ[:, 6 * D + d:7 * D + d].sum(axis=0)
            if "visual_style" in inputs:
                acc.ws_items[support] += dZ[:, 5 * D + d:6 * D + d]
                acc.ws_users[a] += dZ[:, 7 * D + d:8 * D + d].sum(axis=0)

    so = trace.ctx.social
    if so.active and d_q_tilde is not None:
        support = so.support
        Q = params.user_aux[support]
        acc.user_aux[support] += np.outer(so.weights, d_q_tilde)
        touched.user_aux.update(int(b) for b in support)
        if mode.bottom == "att":
            d_beta = Q @ d_q_tilde
            d_raw = softmax_backward(so.weights, d_beta)
            dZ = _net_backward(
                params.social_net, so.Z, so.pre, d_raw, params, acc.nets["social_net"]
            )
            inputs = mode.inputs
            if "base" in inputs:
                acc.user_base[a] += dZ[:, 0:D].sum(axis=0)
                acc.user_base[support] += dZ[:, D:2 * D]
                touched.user_base.update(int(b) for b in support)
            if "aux" in inputs:
                acc.user_aux[a] += dZ[:, 2 * D:3 * D].sum(axis=0)
                acc.user_aux[support] += dZ[:, 3 * D:4 * D]
                touched.user_aux.add(a)
            if "visual_content" in inputs:
                acc.wc_users[a] += dZ[:, 4 * D + 2 * d:5 * D + 2 * d].sum(axis=0)
            if "visual_style" in inputs:
                acc.ws_users[a] += dZ[:, 5 * D + 2 * d:6 * D + 2 * d].sum(axis=0)
    return touched


def score_gradients(trace, upstream, params, bundle, mode) -> dict:
    """Gradients of one pair's score, congruent to ``tensors()``."""
    acc = GradientAccumulator(params.dims)
    backward(trace, upstream, params, bundle, mode, acc)
    return acc.finalize(bundle, count=1)


def save_checkpoint(params: ModelParams, path, mode: AttentionMode | None = None,
                    seed=None, metadata=None) -> None:
    """Write a manifest plus per-tensor blobs; round trip is bit-exact."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dtype = "f64" if params.dtype == np.float64 else "f32"
    manifest = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "dims": params.dims.to_dict(),
        "dtype": dtype,
        "leaky_slope": params.leaky_slope,
        "mode": mode.to_dict() if mode is not None else None,
        "seed": seed,
        "metadata": metadata or {},
        "tensors": {},
    }
    for name, arr in params.tensors().items():
        fname = name.replace(".", "_")
        mat = arr if arr.ndim == 2 else arr[None, :]
        matio.write_matrix(
            path / fname, mat, [str(r) for r in range(mat.shape[0])], dtype=dtype
        )
        manifest["tensors"][name] = {"file": fname, "shape": list(arr.shape)}
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Load (params, manifest) from a checkpoint directory."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{manifest_path}: corrupted or unknown checkpoint header")
    dims = ModelDims(**manifest["dims"])
    dtype = np.float64 if manifest["dtype"] == "f64" else np.float32
    tensors = {}
    for name, entry in manifest["tensors"].items():
        data, _, _ = matio.read_matrix(path / entry["file"])
        tensors[name] = np.asarray(data, dtype=dtype).reshape(entry["shape"])
    params = ModelParams(dims, tensors, manifest.get("leaky_slope", 0.01))
    return params, manifest
