"""Natural-image crop corpus built from the sample photographs bundled with
scikit-image and scikit-learn.

Each block is a random square crop (side 128..512 px, clipped to the source
size) resized down to the block size, which imitates shrinking a full
512x512 photograph to 64x64.  Sources are split into a training pool and a
held-out pool so that test blocks never share pixels with training blocks.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .image_core import resize, rgb_to_ycbcr

TRAIN_SOURCES = (
    "astronaut", "coffee", "coins", "moon", "page", "text", "brick", "grass",
    "hubble_deep_field", "retina", "immunohistochemistry", "motorcycle_left",
    "cell", "clock", "flower",
)
HELDOUT_SOURCES = ("camera", "chelsea", "rocket", "gravel", "motorcycle_right", "china")


@lru_cache(maxsize=None)
def load_source(name: str) -> np.ndarray:
    """Return a bundled sample photograph as float64 (gray or RGB)."""
    if name in ("china", "flower"):
        from sklearn.datasets import load_sample_image

        img = load_sample_image(f"{name}.jpg")
    else:
        import skimage.data

        if name.startswith("motorcycle_"):
            left, right, _ = skimage.data.stereo_motorcycle()
            img = left if name.endswith("left") else right
        else:
            img = getattr(skimage.data, name)()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3]
    return img


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return rgb_to_ycbcr(img)[0]


def natural_blocks(n: int, seed: int, *, sources=TRAIN_SOURCES, size: int = 64,
                   color: bool = False, min_crop: int = 128, max_crop: int = 512) -> np.ndarray:
    """Draw ``n`` random crops resized to ``size x size``.

    Returns ``(n, size, size)`` gray planes, or ``(n, size, size, 3)`` RGB
    images when ``color`` is set (gray sources are replicated to 3 channels).
    """
    rng = np.random.default_rng(seed)
    imgs = [load_source(s) for s in sources]
    if not color:
        imgs = [_to_gray(im) for im in imgs]
    out = []
    for _ in range(n):
        im = imgs[rng.integers(len(imgs))]
        h, w = im.shape[:2]
        hi = min(max_crop, h, w)
        side = int(rng.integers(min(min_crop, hi), hi + 1))
        y = int(rng.integers(0, h - side + 1))
        x = int(rng.integers(0, w - side + 1))
        crop = im[y:y + side, x:x + side]
        if rng.random() < 0.5:
            crop = crop[:, ::-1]
        block = resize(crop, size, size)
        if color and block.ndim == 2:
            block = np.repeat(block[..., None], 3, axis=2)
        out.append(np.rint(block))
    return np.stack(out)
