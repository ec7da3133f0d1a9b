"""Top-K ranking evaluation with sampled candidates.

Each held-out item is ranked against sampled unrated candidates; ties count
against the held-out item.  The protocol repeats with derived seeds and
reports mean and std over the repeat-level macro averages.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .dataset import sample_eval_candidates


def rank_of_test_item(test_score: float, candidate_scores) -> int:
    """1-based rank; candidates scoring >= the test item all outrank it."""
    cand = np.asarray(candidate_scores)
    if not (np.all(np.isfinite(cand)) and math.isfinite(test_score)):
        raise ValueError("scores must be finite")
    return int(1 + np.sum(cand > test_score) + np.sum(cand == test_score))


def hr_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    """Single-relevant-item discounted gain; the ideal DCG is 1."""
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


@dataclass
class EvalReport:
    ks: tuple
    hr_mean: dict
    hr_std: dict
    ndcg_mean: dict
    ndcg_std: dict
    repeats: int
    n_users: int
    seeds: list = field(default_factory=list)

    def to_dict(self):
        return {
            "ks": list(self.ks),
            "hr_mean": {str(k): v for k, v in self.hr_mean.items()},
            "hr_std": {str(k): v for k, v in self.hr_std.items()},
            "ndcg_mean": {str(k): v for k, v in self.ndcg_mean.items()},
            "ndcg_std": {str(k): v for k, v in self.ndcg_std.items()},
            "repeats": self.repeats,
            "n_users": self.n_users,
            "seeds": self.seeds,
        }


def _seed_list(seed):
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def rank_held_out(params, mode, split, bundle, n_candidates=100, repeats=10,
                  seed=0, subset="test", scorer=None, threads=1):
    """Per-user ranks of the held-out item, one per repeat.

    Returns (users, ranks) where ranks has shape (repeats, len(users)).
    The repeat r uses seed + r; candidate draws use per-user streams so the
    result is independent of scheduling order.
    """
    held = split.test if subset == "test" else split.validation
    users = [u for u, _ in held]
    item_of = dict(held)
    base = _seed_list(seed)

    proj = None
    if scorer is None:
        if mode.aspects and mode.bottom != "avg" and bundle is not None:
            proj = M.project_features(params, bundle)

        def scorer(user, items):
            return M.score_items(user, items, params, split.train, bundle, mode, proj)

    def rank_one(args):
        r, user = args
        rng = np.random.default_rng(base[:-1] + [base[-1] + r, user])
        candidates = sample_eval_candidates(split, user, n_candidates, rng)
        scores = scorer(user, np.concatenate((candidates, [item_of[user]])))
        return rank_of_test_item(float(scores[-1]), scores[:-1])

    jobs = [(r, u) for r in range(repeats) for u in users]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(rank_one, jobs))
    else:
        flat = [rank_one(j) for j in jobs]
    ranks = np.array(flat, dtype=np.int64).reshape(repeats, len(users))
    return users, ranks


def aggregate_ranks(ranks: np.ndarray, ks, repeats: int, seeds=None) -> EvalReport:
    """Macro-average metrics per repeat, then mean/std across repeats."""
    ks = tuple(int(k) for k in ks)
    hr_mean, hr_std, ndcg_mean, ndcg_std = {}, {}, {}, {}
    n_users = ranks.shape[1]
    for k in ks:
        if n_users == 0:
            hr_mean[k] = hr_std[k] = ndcg_mean[k] = ndcg_std[k] = 0.0
            continue
        hr_r = np.array([
            np.mean([hr_at_k(int(r), k) for r in row]) for row in ranks
        ])
        nd_r = np.array([
            np.mean([ndcg_at_k(int(r), k) for r in row]) for row in ranks
        ])
        hr_mean[k] = float(hr_r.mean())
        hr_std[k] = float(hr_r.std()) if ranks.shape[0] > 1 else 0.0
        ndcg_mean[k] = float(nd_r.mean())
        ndcg_std[k] = float(nd_r.std()) if ranks.shape[0] > 1 else 0.0
    return EvalReport(ks, hr_mean, hr_std, ndcg_mean, ndcg_std,
                      repeats, n_users, seeds or [])


def evaluate(params, mode, split, bundle, ks=(1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
             n_candidates=100, repeats=10, seed=0, subset="test",
             scorer=None, threads=1) -> EvalReport:
    """Sampled-candidate ranking over all held-out pairs."""
    _, ranks = rank_held_out(
        params, mode, split, bundle, n_candidates, repeats, seed, subset,
        scorer, threads,
    )
    base = _seed_list(seed)
    seeds = [base[:-1] + [base[-1] + r] for r in range(repeats)]
    return aggregate_ranks(ranks, ks, repeats, seeds)


def sparsity_bins(split, users, ranks, ks, edges, repeats: int):
    """Per-bin reports keyed by train-rating-count ranges.

    `edges` must be strictly increasing; bins are [0, e0), [e0, e1), ...,
    [e_last, inf).  No edges means a single all-covering bin.
    """
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    bounds = [0] + edges + [None]
    labels = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        labels.append(f"[{lo},{hi})" if hi is not None else f"[{lo},inf)")

    counts = [len(split.train.ratings_by_user[u]) for u in users]

    def bin_of(c):
        for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            if c >= lo and (hi is None or c < hi):
                return k
        return len(labels) - 1

    out = {}
    for k, label in enumerate(labels):
        cols = [j for j, c in enumerate(counts) if bin_of(c) == k]
        sub = ranks[:, cols] if cols else np.zeros((repeats, 0), dtype=np.int64)
        out[label] = {
            "report": aggregate_ranks(sub, ks, repeats),
            "population": len(cols),
        }
    return out


@dataclass
class AttentionDump:
    """Per-user mean aspect weights and the dominant-aspect label."""

    rows: list          # (user index, gamma (3,), dominant label)
    skipped: int        # users whose pairs had no active aspects

    def to_tsv(self, ds) -> str:
        lines = ["user_id\tgamma_upload\tgamma_social\tgamma_creator\tdominant"]
        for u, gamma, dominant in self.rows:
            g = "\t".join(f"{x:.6f}" for x in gamma)
            lines.append(f"{ds.user_ids[u]}\t{g}\t{dominant}")
        return "\n".join(lines) + "\n"


def export_attention(params, mode, ds, bundle, pairs) -> AttentionDump:
    """Mean top-level attention per user over the supplied (user, item) pairs."""
    proj = None
    if mode.aspects and mode.bottom != "avg" and bundle is not None:
        proj = M.project_features(params, bundle)
    sums = {}
    counts = {}
    seen = set()
    for u, i in pairs:
        seen.add(u)
        _, trace = M.predict(u, i, params, ds, bundle, mode, proj)
        if not trace.aspect_names:
            continue
        sums[u] = sums.get(u, 0.0) + trace.gamma_full()
        counts[u] = counts.get(u, 0) + 1
    rows = []
    for u in sorted(sums):
        gamma = sums[u] / counts[u]
        rows.append((u, gamma, M.ASPECTS[int(np.argmax(gamma))]))
    return AttentionDump(rows=rows, skipped=len(seen) - len(sums))
