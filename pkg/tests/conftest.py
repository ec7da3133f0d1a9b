import numpy as np
import pytest

from socialrec.dataset import InteractionDataset
from socialrec.features import EmbeddingBundle
from socialrec import model as M


def make_instance(seed, num_users=6, num_items=10, latent=5, hidden=4,
                  social=6, content=7, style=8, ensure_support=True):
    """Random tiny dataset + bundle + params for model-level tests.

    With ensure_support every user gets at least one upload and one followee,
    so all three aspects are active for every (user, item) pair.
    """
    rng = np.random.default_rng(seed)
    creators = rng.integers(num_users, size=num_items)
    if ensure_support:
        creators[:num_users] = np.arange(num_users)
    edges = set()
    for a in range(num_users):
        k = rng.integers(1, 3) if ensure_support else rng.integers(0, 3)
        for b in rng.choice(num_users, size=int(k), replace=False):
            if int(b) != a:
                edges.add((a, int(b)))
    ratings = []
    for u in range(num_users):
        items = rng.choice(num_items, size=3, replace=False)
        for ts, i in enumerate(items, start=1):
            ratings.append((u, int(i), ts))
    ds = InteractionDataset(
        user_ids=[f"u{k}" for k in range(num_users)],
        item_ids=[f"i{k}" for k in range(num_items)],
        ratings=ratings,
        social_edges=sorted(edges),
        creators=creators,
    )
    bundle = EmbeddingBundle(
        social=rng.normal(size=(num_users, social)).astype(np.float32),
        content=rng.normal(size=(num_items, content)).astype(np.float32),
        style=rng.normal(size=(num_items, style)).astype(np.float32),
        user_content=rng.normal(size=(num_users, content)).astype(np.float32),
        user_style=rng.normal(size=(num_users, style)).astype(np.float32),
    )
    dims = M.ModelDims(num_users, num_items, latent=latent, hidden=hidden,
                       social=social, content=content, style=style)
    params = M.init_params(dims, seed=seed)
    return ds, bundle, params, dims


@pytest.fixture
def tiny_instance():
    return make_instance(seed=42)


def write_fixture_tsvs(tmp_path, ratings, social, uploads):
    """Write raw TSV fixtures; each argument is a list of field tuples."""
    paths = {}
    for name, rows in (("ratings", ratings), ("social", social), ("uploads", uploads)):
        path = tmp_path / f"{name}.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write("\t".join(str(f) for f in row) + "\n")
        paths[name] = path
    return paths
