import numpy as np
import pytest
from PIL import Image

from vitkeys.vit import random_checkpoint


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    """Seeded random weights in the published checkpoint layout; small
    depth keeps CPU inference quick while exercising the real loader."""
    path = tmp_path_factory.mktemp("ckpt") / "vit_rand.pth"
    random_checkpoint(path, dim=192, depth=4, patch_size=8,
                      pretrain_grid=28, seed=7)
    return path


def synthesize_photo(path, side=480, seed=5):
    """Photo-like synthetic scene: gradient sky, textured ground, two
    textured blobs. Stands in for a natural image in the offline sandbox."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    t = yy / side
    sky = np.stack([120 + 50 * (1 - t), 150 + 35 * (1 - t),
                    205 + 20 * (1 - t)], axis=2)
    ground = np.stack([95 + 18 * np.sin(xx / 17.0) + 10 * np.sin(yy / 9.0),
                       125 + 14 * np.cos(xx / 23.0),
                       75 + 8 * np.sin((xx + yy) / 31.0)], axis=2)
    img = np.where((yy > 0.55 * side)[..., None], ground, sky)
    blobs = [
        (0.62 * side, 0.30 * side, 0.16 * side, (205, 85, 60)),
        (0.48 * side, 0.72 * side, 0.11 * side, (60, 140, 75)),
    ]
    for cy, cx, r, color in blobs:
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        mask = d2 < r * r
        texture = 12 * np.sin(xx / 5.0) * np.sin(yy / 7.0)
        for c in range(3):
            channel = img[:, :, c]
            channel[mask] = color[c] + texture[mask]
    img += rng.normal(0.0, 5.0, img.shape)
    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    Image.fromarray(out).save(path)
    return path


@pytest.fixture(scope="session")
def photo(tmp_path_factory):
    return synthesize_photo(tmp_path_factory.mktemp("photos") / "scene.ppm")
