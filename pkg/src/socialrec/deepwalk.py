"""Node embeddings from truncated random walks fed to skip-gram.

The follow graph is walked as undirected.  Walks use per-vertex RNG streams,
so the corpus is identical no matter how walk generation is scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def build_adjacency(num_vertices: int, edges):
    """Undirected neighbour lists from directed follow edges."""
    neigh = [set() for _ in range(num_vertices)]
    for a, b in edges:
        neigh[a].add(b)
        neigh[b].add(a)
    return [np.array(sorted(s), dtype=np.int64) for s in neigh]


def deepwalk_walks(
    num_vertices: int,
    edges,
    walks_per_vertex: int = 80,
    walk_length: int = 40,
    seed: int = 0,
    threads: int = 1,
):
    """Generate walks_per_vertex uniform random walks from every vertex.

    A walk holds walk_length vertices; isolated vertices yield length-1
    walks.  Fixed seed gives an identical corpus regardless of `threads`.
    """
    adjacency = build_adjacency(num_vertices, edges)

    def walks_for(v):
        rng = np.random.default_rng([seed, v])
        out = []
        for _ in range(walks_per_vertex):
            walk = [v]
            cur = v
            while len(walk) < walk_length:
                nbrs = adjacency[cur]
                if nbrs.size == 0:
                    break
                cur = int(nbrs[rng.integers(nbrs.size)])
                walk.append(cur)
            out.append(walk)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_vertex = list(pool.map(walks_for, range(num_vertices)))
    else:
        per_vertex = [walks_for(v) for v in range(num_vertices)]
    return [w for chunk in per_vertex for w in chunk]


def init_embeddings(num_vertices: int, dim: int, seed: int) -> np.ndarray:
    """Skip-gram input-matrix initialisation: uniform in (-0.5, 0.5)/dim."""
    rng = np.random.default_rng([seed, 0x5157])
    return ((rng.random((num_vertices, dim)) - 0.5) / dim).astype(np.float64)


def skipgram_train(
    walks,
    num_vertices: int,
    dim: int = 128,
    window: int = 10,
    negative_samples: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> np.ndarray:
    """Train skip-gram with negative sampling over a walk corpus.

    Negatives are drawn from the corpus unigram distribution raised to 3/4.
    Single-threaded and deterministic under a fixed seed.  The learning rate
    decays linearly to lr * 1e-4 over all processed tokens.
    """
    if not walks:
        raise ValueError("empty walk corpus")
    emb = init_embeddings(num_vertices, dim, seed)
    if epochs <= 0:
        return emb
    ctx = np.zeros((num_vertices, dim), dtype=np.float64)

    counts = np.zeros(num_vertices, dtype=np.float64)
    for walk in walks:
        for v in walk:
            counts[v] += 1
    noise = counts ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    rng = np.random.default_rng([seed, 0x5158])
    total_tokens = epochs * sum(len(w) for w in walks)
    min_lr = lr * 1e-4
    processed = 0

    for _ in range(epochs):
        for walk in walks:
            n = len(walk)
            for pos in range(n):
                alpha = max(min_lr, lr * (1.0 - processed / total_tokens))
                processed += 1
                center = walk[pos]
                # Dynamic window, as in the original skip-gram trainer.
                b = int(rng.integers(1, window + 1))
                lo, hi = max(0, pos - b), min(n, pos + b + 1)
                h = emb[center]
                for cpos in range(lo, hi):
                    if cpos == pos:
                        continue
                    target = walk[cpos]
                    negs = np.searchsorted(noise_cdf, rng.random(negative_samples))
                    negs = negs[negs != target]
                    rows = np.concatenate(([target], negs))
                    labels = np.zeros(rows.size)
                    labels[0] = 1.0
                    scores = ctx[rows] @ h
                    g = _sigmoid(scores) - labels
                    dh = g @ ctx[rows]
                    np.add.at(ctx, rows, -alpha * np.outer(g, h))
                    emb[center] = h = h - alpha * dh
    return emb


def train_social_embeddings(
    ds,
    dim: int = 128,
    walks_per_vertex: int = 80,
    walk_length: int = 40,
    window: int = 10,
    negative_samples: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    threads: int = 1,
) -> np.ndarray:
    """Walk the follow graph and train one embedding row per user."""
    walks = deepwalk_walks(
        ds.num_users, ds.social_edges, walks_per_vertex, walk_length, seed, threads
    )
    return skipgram_train(
        walks, ds.num_users, dim, window, negative_samples, epochs, lr, seed
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
