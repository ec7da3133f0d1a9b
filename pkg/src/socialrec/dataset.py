"""Sparse interaction data: loading, filtering, splitting and sampling.

Three behaviour tables share one pair of vocabularies:

* ratings   -- implicit (user, item) feedback, optionally timestamped
* social    -- directed follow edges (follower, followee)
* uploads   -- each item's unique creator

All indices are dense; external ids map through ``user_ids``/``item_ids``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input files or violated dataset invariants."""


class InteractionDataset:
    """Immutable container for ratings, social edges and upload records.

    Construction validates the invariants: every item has exactly one
    creator, indices are dense, and there are no duplicate ratings,
    duplicate social edges or self-loops.
    """

    def __init__(self, user_ids, item_ids, ratings, social_edges, creators):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: k for k, u in enumerate(self.user_ids)}
        self.item_index = {i: k for k, i in enumerate(self.item_ids)}
        if len(self.user_index) != len(self.user_ids):
            raise DataError("duplicate external user id")
        if len(self.item_index) != len(self.item_ids):
            raise DataError("duplicate external item id")
        self.num_users = len(self.user_ids)
        self.num_items = len(self.item_ids)
        self.ratings = [(int(u), int(i), t) for u, i, t in ratings]
        self.social_edges = [(int(a), int(b)) for a, b in social_edges]
        self.creators = np.asarray(creators, dtype=np.int64)

        self._validate()

        # Derived views, built once; the object is never mutated afterwards.
        self.rated_items = [set() for _ in range(self.num_users)]
        self.ratings_by_user = [[] for _ in range(self.num_users)]
        for order, (u, i, t) in enumerate(self.ratings):
            self.rated_items[u].add(i)
            self.ratings_by_user[u].append((i, t, order))
        self.followees = [[] for _ in range(self.num_users)]
        for a, b in self.social_edges:
            self.followees[a].append(b)
        self.uploads_by_user = [[] for _ in range(self.num_users)]
        for i, c in enumerate(self.creators):
            self.uploads_by_user[int(c)].append(i)

    def _validate(self):
        if self.creators.shape != (self.num_items,):
            raise DataError("creator mapping must cover every item exactly once")
        for i, c in enumerate(self.creators):
            if not 0 <= c < self.num_users:
                raise DataError(f"item {self.item_ids[i]!r}: creator index out of range")
        seen_pairs = set()
        for u, i, _ in self.ratings:
            if not (0 <= u < self.num_users and 0 <= i < self.num_items):
                raise DataError("rating index out of range")
            if (u, i) in seen_pairs:
                raise DataError(f"duplicate rating ({self.user_ids[u]!r}, {self.item_ids[i]!r})")
            seen_pairs.add((u, i))
        seen_edges = set()
        for a, b in self.social_edges:
            if not (0 <= a < self.num_users and 0 <= b < self.num_users):
                raise DataError("social edge index out of range")
            if a == b:
                raise DataError(f"self-loop social edge on user {self.user_ids[a]!r}")
            if (a, b) in seen_edges:
                raise DataError(f"duplicate social edge ({self.user_ids[a]!r}, {self.user_ids[b]!r})")
            seen_edges.add((a, b))

    def creator_only_users(self):
        """Users present only through their uploads (no ratings, no links)."""
        linked = set()
        for a, b in self.social_edges:
            linked.add(a)
            linked.add(b)
        return {
            u
            for u in range(self.num_users)
            if not self.ratings_by_user[u] and u not in linked and self.uploads_by_user[u]
        }

    def with_ratings(self, ratings):
        """A view sharing vocabularies, edges and creators but new ratings."""
        return InteractionDataset(
            self.user_ids, self.item_ids, ratings, self.social_edges, self.creators
        )


class SplitDataset:
    """Leave-one-out split: train view plus held-out validation/test pairs."""

    def __init__(self, train: InteractionDataset, validation, test, seed: int):
        self.train = train
        self.validation = [(int(u), int(i)) for u, i in validation]
        self.test = [(int(u), int(i)) for u, i in test]
        self.seed = int(seed)
        self.validation_item = {u: i for u, i in self.validation}
        self.test_item = {u: i for u, i in self.test}


def _parse_tsv(path, n_min, n_max, what):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing {what} file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if not n_min <= len(fields) <= n_max:
                raise DataError(f"{path}:{lineno}: malformed {what} line: {line!r}")
            if any(f == "" for f in fields):
                raise DataError(f"{path}:{lineno}: empty field in {what} line")
            rows.append((lineno, fields))
    return rows


def load_interactions(ratings_path, social_path, uploads_path) -> InteractionDataset:
    """Load the three behaviour tables into one dense-index dataset.

    Vocabularies assign indices in first-appearance order: ratings are
    scanned first, then uploads; the social file may only reference users
    already known from those two.
    """
    rating_rows = _parse_tsv(ratings_path, 2, 3, "ratings")
    social_rows = _parse_tsv(social_path, 2, 2, "social")
    upload_rows = _parse_tsv(uploads_path, 2, 2, "uploads")

    user_ids, item_ids = [], []
    user_index, item_index = {}, {}

    def user_of(ext):
        if ext not in user_index:
            user_index[ext] = len(user_ids)
            user_ids.append(ext)
        return user_index[ext]

    def item_of(ext):
        if ext not in item_index:
            item_index[ext] = len(item_ids)
            item_ids.append(ext)
        return item_index[ext]

    ratings = []
    for lineno, fields in rating_rows:
        ts = None
        if len(fields) == 3:
            try:
                ts = int(fields[2])
            except ValueError:
                raise DataError(f"{ratings_path}:{lineno}: bad timestamp {fields[2]!r}")
        ratings.append((user_of(fields[0]), item_of(fields[1]), ts))

    creator_of = {}
    for lineno, (item_ext, creator_ext) in upload_rows:
        if item_ext in creator_of:
            raise DataError(f"item {item_ext!r} has multiple creators")
        creator_of[item_ext] = creator_ext
        item_of(item_ext)
        user_of(creator_ext)

    for ext in item_ids:
        if ext not in creator_of:
            raise DataError(f"item {ext!r} has no creator in uploads file")
    creators = [user_index[creator_of[ext]] for ext in item_ids]

    edges = []
    for lineno, (follower, followee) in social_rows:
        if follower not in user_index:
            raise DataError(f"{social_path}:{lineno}: unknown user {follower!r}")
        if followee not in user_index:
            raise DataError(f"{social_path}:{lineno}: unknown user {followee!r}")
        edges.append((user_index[follower], user_index[followee]))

    return InteractionDataset(user_ids, item_ids, ratings, edges, creators)


def filter_dataset(
    ds: InteractionDataset,
    min_user_ratings: int = 2,
    min_user_links: int = 2,
    min_item_ratings: int = 2,
) -> InteractionDataset:
    """Iteratively drop users/items below the thresholds until a fixpoint.

    A dropped user loses ratings and social edges but is retained as a
    creator-only user when one of their items survives, so every item's
    creator still resolves.
    """
    if min(min_user_ratings, min_user_links, min_item_ratings) < 0:
        raise ValueError("thresholds must be >= 0")
    active_users = set(range(ds.num_users))
    active_items = set(range(ds.num_items))
    while True:
        user_r = {u: 0 for u in active_users}
        user_l = {u: 0 for u in active_users}
        item_r = {i: 0 for i in active_items}
        for u, i, _ in ds.ratings:
            if u in active_users and i in active_items:
                user_r[u] += 1
                item_r[i] += 1
        for a, b in ds.social_edges:
            if a in active_users and b in active_users:
                user_l[a] += 1
                user_l[b] += 1
        drop_users = {
            u for u in active_users
            if user_r[u] < min_user_ratings or user_l[u] < min_user_links
        }
        drop_items = {i for i in active_items if item_r[i] < min_item_ratings}
        if not drop_users and not drop_items:
            break
        active_users -= drop_users
        active_items -= drop_items

    keep_users = set(active_users)
    for i in active_items:
        keep_users.add(int(ds.creators[i]))

    new_ratings = [
        (u, i, t) for u, i, t in ds.ratings if u in active_users and i in active_items
    ]
    if not new_ratings:
        raise DataError("dataset exhausted by filtering")
    new_edges = [
        (a, b) for a, b in ds.social_edges if a in active_users and b in active_users
    ]

    user_map = {u: k for k, u in enumerate(sorted(keep_users))}
    item_map = {i: k for k, i in enumerate(sorted(active_items))}
    return InteractionDataset(
        user_ids=[ds.user_ids[u] for u in sorted(keep_users)],
        item_ids=[ds.item_ids[i] for i in sorted(active_items)],
        ratings=[(user_map[u], item_map[i], t) for u, i, t in new_ratings],
        social_edges=[(user_map[a], user_map[b]) for a, b in new_edges],
        creators=[user_map[int(ds.creators[i])] for i in sorted(active_items)],
    )


def leave_one_out_split(
    ds: InteractionDataset, validation_fraction: float = 0.05, seed: int = 0
) -> SplitDataset:
    """Hold out each user's latest rating as test, sample validation pairs.

    The latest rating is the one with the largest timestamp (ties broken by
    file order); when any of the user's ratings lacks a timestamp the last
    occurrence in file order is used.  Users with a single rating stay
    train-only.  Validation holds ``validation_fraction`` of the remaining
    train pairs, at most one per user and never a user's last train pair.
    """
    if not 0.0 <= validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in [0, 1)")
    test_orders = {}
    for u in range(ds.num_users):
        recs = ds.ratings_by_user[u]
        if len(recs) < 2:
            continue
        if any(t is None for _, t, _ in recs):
            _, _, order = recs[-1]
        else:
            _, _, order = max(recs, key=lambda r: (r[1], r[2]))
        test_orders[u] = order

    test = []
    remaining = []
    for order, (u, i, t) in enumerate(ds.ratings):
        if test_orders.get(u) == order:
            test.append((u, i))
        else:
            remaining.append((u, i, t, order))

    target = int(round(validation_fraction * len(remaining)))
    rng = np.random.default_rng(seed)
    validation_orders = set()
    validation = []
    if target > 0:
        counts = {}
        for u, _, _, _ in remaining:
            counts[u] = counts.get(u, 0) + 1
        taken = set()
        for k in rng.permutation(len(remaining)):
            u, i, _, order = remaining[int(k)]
            if u in taken or counts[u] < 2:
                continue
            validation.append((u, i))
            validation_orders.add(order)
            taken.add(u)
            if len(validation) >= target:
                break

    train_ratings = [
        (u, i, t) for (u, i, t, order) in remaining if order not in validation_orders
    ]
    train = ds.with_ratings(train_ratings)
    return SplitDataset(train, validation, test, seed)


def sample_negatives(train: InteractionDataset, user: int, count: int, rng) -> np.ndarray:
    """Draw `count` distinct items the user has not rated in train.

    Returns all unrated items (in index order) when fewer than `count` exist.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rated = sorted(train.rated_items[user])
    pool = np.setdiff1d(np.arange(train.num_items), np.asarray(rated, dtype=np.int64))
    if pool.size <= count:
        return pool
    return rng.choice(pool, size=count, replace=False)


def sample_eval_candidates(split: SplitDataset, user: int, n: int, rng) -> np.ndarray:
    """Draw `n` candidate items: unrated in train, not the held-out pairs."""
    excluded = set(split.train.rated_items[user])
    if user in split.test_item:
        excluded.add(split.test_item[user])
    if user in split.validation_item:
        excluded.add(split.validation_item[user])
    pool = np.setdiff1d(
        np.arange(split.train.num_items), np.asarray(sorted(excluded), dtype=np.int64)
    )
    if pool.size <= n:
        return pool
    return rng.choice(pool, size=n, replace=False)


def dataset_stats(ds: InteractionDataset) -> dict:
    """Summary counts plus rating density (ratings / users*items)."""
    density = len(ds.ratings) / float(ds.num_users * ds.num_items) if ds.num_items else 0.0
    return {
        "users": ds.num_users,
        "images": ds.num_items,
        "ratings": len(ds.ratings),
        "social_links": len(ds.social_edges),
        "density": density,
    }


def write_dataset_tsvs(ds: InteractionDataset, out_dir) -> None:
    """Write ratings.tsv / social.tsv / uploads.tsv with external ids."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ratings.tsv", "w", encoding="utf-8") as fh:
        for u, i, t in ds.ratings:
            if t is None:
                fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\n")
            else:
                fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\t{t}\n")
    with open(out_dir / "social.tsv", "w", encoding="utf-8") as fh:
        for a, b in ds.social_edges:
            fh.write(f"{ds.user_ids[a]}\t{ds.user_ids[b]}\n")
    with open(out_dir / "uploads.tsv", "w", encoding="utf-8") as fh:
        for i in range(ds.num_items):
            fh.write(f"{ds.item_ids[i]}\t{ds.user_ids[int(ds.creators[i])]}\n")


def write_split_manifest(split: SplitDataset, path) -> None:
    ds = split.train
    payload = {
        "seed": split.seed,
        "test": [[ds.user_ids[u], ds.item_ids[i]] for u, i in split.test],
        "validation": [[ds.user_ids[u], ds.item_ids[i]] for u, i in split.validation],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_split_manifest(path, full: InteractionDataset) -> SplitDataset:
    """Rebuild a SplitDataset from a manifest and the full filtered dataset."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    held = {}
    for kind in ("test", "validation"):
        pairs = []
        for u_ext, i_ext in payload[kind]:
            if u_ext not in full.user_index or i_ext not in full.item_index:
                raise DataError(f"split manifest references unknown pair ({u_ext!r}, {i_ext!r})")
            pairs.append((full.user_index[u_ext], full.item_index[i_ext]))
        held[kind] = pairs
    held_set = {pair for pairs in held.values() for pair in pairs}
    train_ratings = [(u, i, t) for u, i, t in full.ratings if (u, i) not in held_set]
    train = full.with_ratings(train_ratings)
    return SplitDataset(train, held["validation"], held["test"], payload["seed"])
