"""Batch export of last-attention-layer key features to CTF1 tensors plus
a manifest JSON describing every produced file."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .ctf import write_ctf
from .vit import VisionTransformer, load_checkpoint

# published preprocessing for the self-supervised ViT checkpoints
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)
DEFAULT_IMAGE_SIZE = 480


@dataclass
class ExportManifest:
    model_id: str
    patch_size: int
    image_size: int
    normalization: dict
    entries: list[dict] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "patch_size": self.patch_size,
            "image_size": self.image_size,
            "normalization": self.normalization,
            "key_source": "last attention layer, heads concatenated, cls dropped",
            "entries": self.entries,
            "errors": self.errors,
        }


def preprocess(path, image_size: int) -> torch.Tensor:
    """Resize to the square working resolution and normalize."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((image_size, image_size),
                                        Image.Resampling.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.array(NORM_MEAN, dtype=np.float32)) \
        / np.array(NORM_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)


def extract_keys(model: VisionTransformer, batch: torch.Tensor) -> np.ndarray:
    """(1, 3, S, S) image batch -> (grid, grid, dim) float32 key map."""
    side = batch.shape[-1] // model.patch_size
    keys = model.last_layer_keys(batch)[0]
    return keys.reshape(side, side, model.embed_dim).numpy().astype(np.float32)


def export_features(image_paths, checkpoint_path, out_dir,
                    image_size: int = DEFAULT_IMAGE_SIZE,
                    num_heads: int | None = None) -> ExportManifest:
    """Run inference over the images and write one CTF1 tensor per image.

    Per-image decode/inference failures are recorded in the manifest's
    error map instead of aborting the batch. The manifest is written to
    out_dir/manifest.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(checkpoint_path, num_heads=num_heads)
    if image_size % model.patch_size != 0:
        raise ValueError(f"image size {image_size} is not a multiple of the "
                         f"patch size {model.patch_size}")
    manifest = ExportManifest(
        model_id=Path(checkpoint_path).name,
        patch_size=model.patch_size,
        image_size=image_size,
        normalization={"mean": list(NORM_MEAN), "std": list(NORM_STD)},
    )
    grid = image_size // model.patch_size
    for path in sorted(Path(p) for p in image_paths):
        image_id = path.stem
        try:
            batch = preprocess(path, image_size)
            features = extract_keys(model, batch)
            if not np.isfinite(features).all():
                raise ValueError("non-finite values in exported features")
            if not (np.linalg.norm(features.reshape(-1, features.shape[2]),
                                   axis=1) > 0).all():
                raise ValueError("zero-norm patch feature")
            tensor_path = out / f"{image_id}.ctf"
            write_ctf(features, tensor_path)
            manifest.entries.append({
                "image_id": image_id,
                "tensor_path": tensor_path.name,
                "grid_h": grid,
                "grid_w": grid,
                "dim": int(features.shape[2]),
            })
        except Exception as exc:
            manifest.errors[image_id] = f"{type(exc).__name__}: {exc}"
    with open(out / "manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
