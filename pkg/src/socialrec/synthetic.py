"""Desk-scale synthetic datasets with planted aspect structure.

Users split into three groups.  Group 1 likes items whose generated latent
vectors sit near the centroid of the user's own uploads, group 2 relikes
what its followees like, group 3 likes items from a few admired creators.
Ground-truth group labels come back with the dataset so tests can check
that attention recovers the planted drivers.

A configurable fraction of items are decoys: their latent vectors ignore
the creator's taste and their visual features carry a fixed marker
direction.  Decoys are never planted as likes, so they dilute uniformly
pooled upload contexts while staying identifiable to a learned attention.
Half of the decoys belong to dedicated bulk uploaders (drawn from the
third group) whose items nobody likes.  Upload-driven and
admiration-driven users' follow edges are rewired onto those bulk
uploaders, so for two thirds of the users the social context is
recognisably cold junk; mixing it in at a fixed uniform weight costs
accuracy that only a learned aspect attention can recover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataError, InteractionDataset
from .features import EmbeddingBundle, user_visual_profiles


@dataclass
class SyntheticConfig:
    num_users: int = 200
    num_items: int = 1000
    fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    latent_dim: int = 12
    noise: float = 0.05
    seed: int = 0
    ratings_per_user: int = 20
    follows_per_user: int = 3
    admired_creators: int = 3
    decoy_fraction: float = 0.0
    social_dim: int = 32
    content_dim: int = 256
    style_dim: int = 320

    def __post_init__(self):
        if self.num_users < 2 or self.num_items < 2:
            raise DataError("need at least 2 users and 2 items")
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f < 0 or f > 1 for f in fr):
            raise DataError("fractions must be three values in [0, 1]")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"fractions must sum to 1, got {sum(fr)}")
        object.__setattr__(self, "fractions", fr)
        if not 0 <= self.noise < 1:
            raise DataError("noise must be in [0, 1)")
        if not 0 <= self.decoy_fraction < 1:
            raise DataError("decoy_fraction must be in [0, 1)")
        # ceil with headroom: creator reassignment can double a user's uploads
        own = -(-2 * self.num_items // self.num_users)
        if self.ratings_per_user > self.num_items - own:
            raise DataError(
                f"cannot draw {self.ratings_per_user} ratings per user from "
                f"{self.num_items} items (up to {own} may be the user's own uploads)"
            )


def group_sizes(cfg: SyntheticConfig):
    n1 = int(round(cfg.fractions[0] * cfg.num_users))
    n2 = int(round(cfg.fractions[1] * cfg.num_users))
    n1 = min(n1, cfg.num_users)
    n2 = min(n2, cfg.num_users - n1)
    return n1, n2, cfg.num_users - n1 - n2


def bulk_uploaders(cfg: SyntheticConfig):
    """Users whose uploads are all decoys and who receive no followers.

    Taken from the tail of the third group; empty when there are no decoys.
    """
    if cfg.decoy_fraction <= 0:
        return []
    _, _, n3 = group_sizes(cfg)
    count = min(-(-15 * cfg.num_users // 100), n3)  # ceil(0.15 M), capped
    return list(range(cfg.num_users - count, cfg.num_users))


def _plant(cfg: SyntheticConfig):
    """Tastes, item latents, decoy mask and the item -> creator assignment."""
    M, N = cfg.num_users, cfg.num_items
    rng = np.random.default_rng([cfg.seed, 1])
    tastes = rng.normal(0.0, 1.0, size=(M, cfg.latent_dim))
    decoys = rng.random(N) < cfg.decoy_fraction

    bulk = bulk_uploaders(cfg)
    regular = [u for u in range(M) if u not in set(bulk)]
    creators = np.zeros(N, dtype=np.int64)
    rr = {"regular": 0, "bulk": 0}

    def next_creator(pool, key):
        u = pool[rr[key] % len(pool)]
        rr[key] += 1
        return u

    decoy_seen = 0
    for i in range(N):
        if decoys[i]:
            # alternate decoys between bulk uploaders and regular users
            if bulk and decoy_seen % 2 == 0:
                creators[i] = next_creator(bulk, "bulk")
            else:
                creators[i] = next_creator(regular, "regular")
            decoy_seen += 1
        else:
            creators[i] = next_creator(regular, "regular")

    item_latents = tastes[creators] + 0.5 * rng.normal(
        0.0, 1.0, size=(N, cfg.latent_dim)
    )
    item_latents[decoys] = rng.normal(
        0.0, 1.2, size=(int(decoys.sum()), cfg.latent_dim)
    )
    return tastes, item_latents, decoys, creators, set(bulk)


def planted_latents(cfg: SyntheticConfig):
    """The generator's latents: (user tastes, item latents, decoy mask).

    Deterministic in the config seed; reproducible independently of the
    rest of the generation so tests can recompute planted similarities.
    """
    tastes, item_latents, decoys, _, _ = _plant(cfg)
    return tastes, item_latents, decoys


def generate_synthetic(cfg: SyntheticConfig):
    """Build (dataset, bundle, labels) with the planted group behaviours."""
    M, N = cfg.num_users, cfg.num_items
    tastes, item_latents, decoys, creators, bulk = _plant(cfg)
    uploads_of = [np.nonzero(creators == u)[0] for u in range(M)]

    n1, n2, _ = group_sizes(cfg)
    labels = np.empty(M, dtype=np.int64)
    labels[:n1] = 1
    labels[n1:n1 + n2] = 2
    labels[n1 + n2:] = 3

    rng_likes = np.random.default_rng([cfg.seed, 3])
    rng_edges = np.random.default_rng([cfg.seed, 4])

    def noisy_fill(chosen, pool_excluded, u):
        """Replace picks with uniform random unrated items at the noise rate."""
        out = []
        taken = set(pool_excluded)
        for item in chosen:
            if rng_likes.random() < cfg.noise:
                item = int(rng_likes.integers(N))
                while item in taken:
                    item = int(rng_likes.integers(N))
            if int(item) in taken:
                continue
            out.append(int(item))
            taken.add(int(item))
        while len(out) < cfg.ratings_per_user:
            item = int(rng_likes.integers(N))
            if item not in taken:
                out.append(item)
                taken.add(item)
        return out[:cfg.ratings_per_user]

    def nearest_items(center, exclude, count):
        sims = item_latents @ center
        order = np.argsort(-sims, kind="stable")
        picks = [int(i) for i in order if int(i) not in exclude and not decoys[i]]
        return picks[:count]

    likes = [None] * M

    # Upload-driven and creator-driven users first; social users re-like them.
    for u in range(M):
        own = set(int(i) for i in uploads_of[u])
        if labels[u] == 1:
            aligned = [i for i in uploads_of[u] if not decoys[i]]
            centroid = item_latents[aligned or uploads_of[u]].mean(axis=0)
            picks = nearest_items(centroid, own, cfg.ratings_per_user)
            likes[u] = noisy_fill(picks, own, u)
        elif labels[u] == 3:
            others = [c for c in range(M)
                      if c != u and c not in bulk and uploads_of[c].size > 0]
            order = rng_likes.permutation(len(others))
            admired, pool = [], []
            # admire at least `admired_creators`, more if their catalogues
            # are too small to cover the requested ratings
            for k in order:
                c = others[int(k)]
                admired.append(c)
                pool += [int(i) for i in uploads_of[c]
                         if int(i) not in own and not decoys[i]]
                if len(admired) >= cfg.admired_creators and \
                        len(pool) >= cfg.ratings_per_user:
                    break
            take = min(cfg.ratings_per_user, len(pool))
            picks = rng_likes.choice(np.array(pool), size=take, replace=False)
            likes[u] = noisy_fill(list(picks), own, u)

    followees = [[] for _ in range(M)]
    influencer_pool = [u for u in range(M) if labels[u] != 2 and u not in bulk]
    for u in range(M):
        own = set(int(i) for i in uploads_of[u])
        if labels[u] != 2:
            continue
        pool = [v for v in influencer_pool if v != u] or [v for v in range(M) if v != u]
        chosen = rng_likes.choice(
            np.array(pool), size=min(cfg.follows_per_user, len(pool)), replace=False
        )
        followees[u] = [int(v) for v in chosen]
        liked_pool = []
        for v in followees[u]:
            if likes[v]:
                liked_pool.extend(likes[v])
        liked_pool = [i for i in dict.fromkeys(liked_pool) if i not in own]
        take = min(cfg.ratings_per_user, len(liked_pool))
        picks = list(rng_likes.choice(np.array(liked_pool), size=take, replace=False)) \
            if take else []
        if take < cfg.ratings_per_user:
            centroid = tastes[followees[u]].mean(axis=0)
            exclude = own | set(int(i) for i in picks)
            picks += nearest_items(centroid, exclude, cfg.ratings_per_user - take)
        likes[u] = noisy_fill(picks, own, u)

    # Everyone follows somebody so the social aspect has support everywhere.
    # With decoys planted, non-social users follow bulk uploaders only: their
    # social context is then junk the aspect attention can learn to discount.
    followable = M - 1 - len(bulk)
    for u in range(M):
        have = set(followees[u])
        if bulk and labels[u] != 2:
            pool = [v for v in sorted(bulk) if v != u]
            while len(have) < min(cfg.follows_per_user, len(pool)):
                have.add(pool[int(rng_edges.integers(len(pool)))])
        else:
            while len(have) < min(cfg.follows_per_user, followable):
                v = int(rng_edges.integers(M))
                if v != u and v not in bulk:
                    have.add(v)
        followees[u] = sorted(have)
    edges = [(u, v) for u in range(M) for v in followees[u]]

    ratings = []
    for u in range(M):
        order = rng_likes.permutation(len(likes[u]))
        for ts, k in enumerate(order, start=1):
            ratings.append((u, likes[u][int(k)], ts))

    ds = InteractionDataset(
        user_ids=[f"u{u}" for u in range(M)],
        item_ids=[f"i{i}" for i in range(N)],
        ratings=ratings,
        social_edges=edges,
        creators=creators,
    )

    rng_feat = np.random.default_rng([cfg.seed, 2])
    k = cfg.latent_dim
    proj_c = rng_feat.normal(0.0, 1.0 / np.sqrt(k), size=(k, cfg.content_dim))
    proj_s = rng_feat.normal(0.0, 1.0 / np.sqrt(k), size=(k, cfg.style_dim))
    proj_e = rng_feat.normal(0.0, 1.0 / np.sqrt(k), size=(k, cfg.social_dim))
    content = item_latents @ proj_c + 0.1 * rng_feat.normal(size=(N, cfg.content_dim))
    style = item_latents @ proj_s + 0.1 * rng_feat.normal(size=(N, cfg.style_dim))
    # decoys carry a fixed marker direction, so attention can single them out
    marker_c = rng_feat.normal(size=cfg.content_dim)
    marker_s = rng_feat.normal(size=cfg.style_dim)
    content[decoys] += 1.5 * marker_c
    style[decoys] += 1.5 * marker_s
    content = content.astype(np.float32)
    style = style.astype(np.float32)
    social = (tastes @ proj_e
              + 0.1 * rng_feat.normal(size=(M, cfg.social_dim))).astype(np.float32)
    user_content, user_style = user_visual_profiles(ds, content, style)
    bundle = EmbeddingBundle(social, content, style, user_content, user_style)
    return ds, bundle, labels
