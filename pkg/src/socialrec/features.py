"""Visual feature handling: Gram-based style vectors and user profiles.

Style vectors summarise a CNN's filter co-activations per layer: each layer's
feature map (filters x positions) becomes a Gram matrix, block-averaged down
to 32x32 and flattened, and the five layer blocks are concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matio

STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")
STYLE_LAYER_FILTERS = {"conv1_1": 64, "conv2_1": 128, "conv3_1": 256, "conv4_1": 512, "conv5_1": 512}
GRAM_SIZE = 32
STYLE_DIM = len(STYLE_LAYERS) * GRAM_SIZE * GRAM_SIZE  # 5120
CONTENT_DIM = 4096


def gram_matrix(feature_map) -> np.ndarray:
    """Position-summed filter co-activation matrix: G[i,j] = sum_k B[i,k]B[j,k]."""
    B = np.asarray(feature_map, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 1:
        raise ValueError(f"feature map must be 2-d and non-empty, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise ValueError("feature map contains non-finite values")
    return B @ B.T


def downsample_gram(gram, target: int = GRAM_SIZE) -> np.ndarray:
    """Block-average a square matrix to target x target.

    Rows and columns are partitioned into `target` contiguous groups whose
    sizes differ by at most one; each output cell is the mean of its block.
    """
    G = np.asarray(gram, dtype=np.float64)
    n = G.shape[0]
    if G.ndim != 2 or G.shape[1] != n:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    if n < target:
        raise ValueError(f"cannot downsample {n}x{n} to {target}x{target}")
    bounds = np.linspace(0, n, target + 1).astype(np.int64)
    # Mean over row groups, then column groups.
    rows = np.add.reduceat(G, bounds[:-1], axis=0)
    out = np.add.reduceat(rows, bounds[:-1], axis=1)
    sizes = np.diff(bounds).astype(np.float64)
    return out / np.outer(sizes, sizes)


def style_vector(layer_maps: dict) -> np.ndarray:
    """Concatenate the five downsampled-Gram blocks in fixed layer order."""
    parts = []
    for name in STYLE_LAYERS:
        if name not in layer_maps:
            raise ValueError(f"missing style layer {name!r}")
        parts.append(downsample_gram(gram_matrix(layer_maps[name])).ravel())
    return np.concatenate(parts)


def user_visual_profiles(ds, content, style):
    """Per-user mean of rated items' content/style rows (train ratings).

    Users with no ratings get all-zero profile rows.
    """
    content = np.asarray(content)
    style = np.asarray(style)
    if content.shape[0] != ds.num_items or style.shape[0] != ds.num_items:
        raise ValueError("feature row count must equal the number of items")
    user_content = np.zeros((ds.num_users, content.shape[1]), dtype=np.float64)
    user_style = np.zeros((ds.num_users, style.shape[1]), dtype=np.float64)
    for u in range(ds.num_users):
        items = [i for i, _, _ in ds.ratings_by_user[u]]
        if items:
            user_content[u] = content[items].mean(axis=0)
            user_style[u] = style[items].mean(axis=0)
    return user_content.astype(content.dtype), user_style.astype(style.dtype)


@dataclass
class EmbeddingBundle:
    """Pretrained inputs of the attention networks, aligned to one dataset."""

    social: np.ndarray        # (num_users, social_dim)
    content: np.ndarray       # (num_items, content_dim)
    style: np.ndarray         # (num_items, style_dim)
    user_content: np.ndarray  # (num_users, content_dim)
    user_style: np.ndarray    # (num_users, style_dim)

    @property
    def social_dim(self):
        return self.social.shape[1]

    @property
    def content_dim(self):
        return self.content.shape[1]

    @property
    def style_dim(self):
        return self.style.shape[1]

    def check(self, ds):
        if self.social.shape[0] != ds.num_users:
            raise ValueError("social embedding rows != number of users")
        if self.content.shape[0] != ds.num_items or self.style.shape[0] != ds.num_items:
            raise ValueError("visual feature rows != number of items")
        if self.user_content.shape != (ds.num_users, self.content.shape[1]):
            raise ValueError("user content profile shape mismatch")
        if self.user_style.shape != (ds.num_users, self.style.shape[1]):
            raise ValueError("user style profile shape mismatch")

    def with_profiles_from(self, ds) -> "EmbeddingBundle":
        """Recompute user profiles from the given (train) ratings."""
        uc, us = user_visual_profiles(ds, self.content, self.style)
        return EmbeddingBundle(self.social, self.content, self.style, uc, us)


def load_bundle(dir_path, ds) -> EmbeddingBundle:
    """Load social/content/style/user profiles from interchange files.

    Rows are re-ordered to match the dataset's vocabularies by external id.
    """
    def aligned(name, ids_expected):
        data, ids, _ = matio.read_matrix(f"{dir_path}/{name}")
        if ids == ids_expected:
            return data
        index = {ext: k for k, ext in enumerate(ids)}
        missing = [ext for ext in ids_expected if ext not in index]
        if missing:
            raise ValueError(f"{name}: missing rows for ids {missing[:5]}")
        return data[[index[ext] for ext in ids_expected]]

    bundle = EmbeddingBundle(
        social=aligned("social", ds.user_ids),
        content=aligned("content", ds.item_ids),
        style=aligned("style", ds.item_ids),
        user_content=aligned("user_content", ds.user_ids),
        user_style=aligned("user_style", ds.user_ids),
    )
    bundle.check(ds)
    return bundle


def save_bundle(bundle: EmbeddingBundle, ds, dir_path) -> None:
    matio.write_matrix(f"{dir_path}/social", bundle.social, ds.user_ids)
    matio.write_matrix(f"{dir_path}/content", bundle.content, ds.item_ids)
    matio.write_matrix(f"{dir_path}/style", bundle.style, ds.item_ids)
    matio.write_matrix(f"{dir_path}/user_content", bundle.user_content, ds.user_ids)
    matio.write_matrix(f"{dir_path}/user_style", bundle.user_style, ds.user_ids)


def style_vectors_from_layer_files(maps_dir, item_ids) -> np.ndarray:
    """Build style vectors for every item from per-layer interchange files.

    Each layer file holds one flattened (filters x positions) map per image;
    the sidecar's meta records "filters" and "positions".
    """
    per_layer = {}
    for name in STYLE_LAYERS:
        try:
            data, ids, meta = matio.read_matrix(f"{maps_dir}/{name}")
        except FileNotFoundError:
            raise ValueError(f"missing style layer file for {name!r} in {maps_dir}")
        if "filters" not in meta or "positions" not in meta:
            raise ValueError(f"{name}: layer sidecar lacks filters/positions meta")
        index = {ext: k for k, ext in enumerate(ids)}
        missing = [ext for ext in item_ids if ext not in index]
        if missing:
            raise ValueError(f"{name}: missing feature maps for items {missing[:5]}")
        per_layer[name] = (data, index, int(meta["filters"]), int(meta["positions"]))

    out = np.zeros((len(item_ids), STYLE_DIM), dtype=np.float32)
    for k, ext in enumerate(item_ids):
        maps = {}
        for name in STYLE_LAYERS:
            data, index, n_l, m_l = per_layer[name]
            maps[name] = data[index[ext]].reshape(n_l, m_l)
        out[k] = style_vector(maps)
    return out
