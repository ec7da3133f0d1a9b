"""VGG19 feature extraction: 4096-d content vectors and five style layers.

The content vector is the post-activation output of the last 4096-wide
fully-connected layer.  Style layers are the outputs of the first
convolution in each of the five blocks, flattened to (filters, positions)
per image and written one interchange file per layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interchange import write_matrix

STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")
LAYER_FILTERS = {"conv1_1": 64, "conv2_1": 128, "conv3_1": 256,
                 "conv4_1": 512, "conv5_1": 512}
# indices of the block-opening convolutions inside torchvision's vgg19.features
LAYER_INDICES = {"conv1_1": 0, "conv2_1": 5, "conv3_1": 10,
                 "conv4_1": 19, "conv5_1": 28}
CONTENT_DIM = 4096
INPUT_SIZE = 224

PREPROCESSING = (
    "RGB, resize shorter side to 256, center-crop 224x224, scale to [0,1], "
    "normalize mean=(0.485,0.456,0.406) std=(0.229,0.224,0.225)"
)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}


@dataclass
class ExtractionManifest:
    image_ids: list
    layers: dict                 # layer name -> file base (relative)
    content: str                 # content file base (relative)
    model: str
    preprocessing: str
    failed: list = field(default_factory=list)

    def to_dict(self):
        return {
            "image_ids": self.image_ids,
            "layers": self.layers,
            "content": self.content,
            "model": self.model,
            "preprocessing": self.preprocessing,
            "failed": self.failed,
        }

    def save(self, out_dir) -> None:
        with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def _load_network(weights: str):
    import torch
    from torchvision.models import vgg19

    if weights == "random":
        net = vgg19(weights=None)
    elif weights == "pretrained":
        from torchvision.models import VGG19_Weights

        try:
            net = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise RuntimeError(
                "pretrained VGG19 weights are unavailable "
                f"({exc}); pass --weights PATH or --weights random"
            ) from exc
    else:
        net = vgg19(weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    net.eval()
    return net


def _preprocess(image):
    from torchvision import transforms

    pipeline = transforms.Compose([
        transforms.Resize(256),
        transforms.CenterCrop(INPUT_SIZE),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406],
                             std=[0.229, 0.224, 0.225]),
    ])
    return pipeline(image.convert("RGB"))


def _forward(net, batch):
    """Run one batch; returns (content (B, 4096), {layer: (B, N_l, M_l)})."""
    import torch

    captured = {}
    hooks = []

    def keep(name):
        def hook(_module, _inp, out):
            captured[name] = out.detach()
        return hook

    for name, idx in LAYER_INDICES.items():
        hooks.append(net.features[idx].register_forward_hook(keep(name)))
    # post-activation output of the last 4096-wide fully-connected layer
    hooks.append(net.classifier[4].register_forward_hook(keep("content")))
    try:
        with torch.no_grad():
            net(batch)
    finally:
        for h in hooks:
            h.remove()
    content = captured["content"].numpy()
    maps = {}
    for name in STYLE_LAYERS:
        t = captured[name]
        b, n_l = t.shape[0], t.shape[1]
        maps[name] = t.reshape(b, n_l, -1).numpy()
    return content, maps


def extract(image_dir, out_dir, weights: str = "pretrained",
            batch_size: int = 8) -> ExtractionManifest:
    """Extract features for every readable image in a directory.

    Unreadable files are skipped and listed in the manifest under
    ``failed``.  Image ids are the file stems, in sorted filename order.
    """
    import torch
    from PIL import Image, UnidentifiedImageError

    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(
        p for p in image_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise FileNotFoundError(f"no readable images in {image_dir}")

    net = _load_network(weights)
    ids, failed = [], []
    tensors = []
    for path in paths:
        try:
            with Image.open(path) as img:
                tensors.append(_preprocess(img))
            ids.append(path.stem)
        except (OSError, UnidentifiedImageError) as exc:
            failed.append({"file": path.name, "error": str(exc)})

    if not ids:
        raise RuntimeError(f"all {len(paths)} images failed to load")

    contents = []
    layer_rows = {name: [] for name in STYLE_LAYERS}
    for start in range(0, len(tensors), batch_size):
        batch = torch.stack(tensors[start:start + batch_size])
        content, maps = _forward(net, batch)
        contents.append(content)
        for name in STYLE_LAYERS:
            b = maps[name].shape[0]
            layer_rows[name].append(maps[name].reshape(b, -1))

    write_matrix(out_dir / "content", np.concatenate(contents), ids)
    layer_files = {}
    for name in STYLE_LAYERS:
        data = np.concatenate(layer_rows[name])
        positions = data.shape[1] // LAYER_FILTERS[name]
        write_matrix(out_dir / name, data, ids,
                     meta={"filters": LAYER_FILTERS[name], "positions": positions})
        layer_files[name] = name

    manifest = ExtractionManifest(
        image_ids=ids,
        layers=layer_files,
        content="content",
        model=f"vgg19/torchvision (weights={weights}, content=fc2 post-activation)",
        preprocessing=PREPROCESSING,
        failed=failed,
    )
    manifest.save(out_dir)
    return manifest


def emit_synthetic_features(ids, seed: int, out_dir,
                            positions: int = 49) -> ExtractionManifest:
    """Seeded random features with the real layer geometry, no CNN needed.

    Values are uniform in [0, 1); shapes match a real extraction except for
    the spatial size, which is kept small.
    """
    ids = [str(i) for i in ids]
    if not ids:
        raise ValueError("empty id list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([int(seed), 0xFEA7])
    write_matrix(out_dir / "content",
                 rng.random((len(ids), CONTENT_DIM), dtype=np.float32), ids)
    layer_files = {}
    for name in STYLE_LAYERS:
        n_l = LAYER_FILTERS[name]
        data = rng.random((len(ids), n_l * positions), dtype=np.float32)
        write_matrix(out_dir / name, data, ids,
                     meta={"filters": n_l, "positions": positions})
        layer_files[name] = name
    manifest = ExtractionManifest(
        image_ids=ids,
        layers=layer_files,
        content="content",
        model=f"synthetic (seed={seed})",
        preprocessing="none (synthetic features)",
    )
    manifest.save(out_dir)
    return manifest
