"""StirMark-style simulated attacks on luma planes.

Attack specs have a canonical text form used on the command line::

    jpeg:70   mb:3   na:2:seed=7   rot:4   crop:90   scale:120

Every attack returns a plane with the input's dimensions, clamped to
[0, 255].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import prng
from .image_core import resize
from .linalg import blockwise_dct, blockwise_idct

# ITU-T T.81 Annex K luminance table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

KINDS = {
    "jpeg": "JPEG",
    "mb": "MedianBlur",
    "na": "NoiseAdd",
    "rot": "Rotation",
    "crop": "CenterCrop",
    "scale": "Rescale",
}
_RANGES = {
    "jpeg": (1, 100),
    "mb": (1, 15),
    "na": (0, 100),
    "rot": (-180, 180),
    "crop": (1, 100),
    "scale": (10, 400),
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    param: float
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; choose from {sorted(KINDS)}")
        lo, hi = _RANGES[self.kind]
        if not (lo <= self.param <= hi) or not math.isfinite(self.param):
            raise ValueError(f"{self.kind} parameter {self.param} outside [{lo}, {hi}]")
        if self.kind == "mb" and self.param != int(self.param):
            raise ValueError("median kernel side must be an integer")
        if (self.kind == "na") != (self.seed is not None):
            raise ValueError("a seed is required for noise addition and only for it")

    @classmethod
    def parse(cls, text: str) -> "AttackSpec":
        parts = text.strip().lower().split(":")
        if len(parts) < 2:
            raise ValueError(f"malformed attack spec {text!r}")
        kind, param = parts[0], float(parts[1])
        seed = None
        for extra in parts[2:]:
            key, _, val = extra.partition("=")
            if key != "seed":
                raise ValueError(f"unknown attack option {extra!r}")
            seed = int(val)
        if kind == "na" and seed is None:
            seed = 0
        return cls(kind, param, seed)

    def __str__(self) -> str:
        p = int(self.param) if float(self.param).is_integer() else self.param
        text = f"{self.kind}:{p}"
        if self.seed is not None:
            text += f":seed={self.seed}"
        return text

    def with_seed(self, seed: int) -> "AttackSpec":
        return AttackSpec(self.kind, self.param, seed) if self.kind == "na" else self


def jpeg_table(quality: float) -> np.ndarray:
    """IJG quality scaling of the standard luminance table."""
    q = int(round(quality))
    scale = 5000 / q if q < 50 else 200 - 2 * q
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50) / 100), 1, 255)


def jpeg(img: np.ndarray, quality: float) -> np.ndarray:
    """Baseline-JPEG luma round trip without entropy coding."""
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(img, ((0, ph), (0, pw)), mode="edge") - 128.0
    table = jpeg_table(quality)
    c = blockwise_dct(x, 8)
    c = np.round(c / table) * table
    out = blockwise_idct(c) + 128.0
    return np.clip(out[:h, :w], 0.0, 255.0)


def median_blur(img: np.ndarray, k: int) -> np.ndarray:
    """k x k median with edge replication; even k takes the lower median of a
    window whose top-left cell is the output pixel."""
    k = int(k)
    if k % 2:
        return ndimage.median_filter(img, size=k, mode="nearest")
    # scipy centres even windows at index k//2; shift so they start at the pixel
    return ndimage.rank_filter(img, rank=k * k // 2 - 1, size=k, mode="nearest", origin=-(k // 2))


def noise_add(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    noise = prng.normal(seed, img.size).reshape(img.shape)
    return np.clip(img + sigma * noise, 0.0, 255.0)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counter-clockwise (as displayed) about the image centre on the same
    canvas; bilinear sampling, edge-clamped."""
    h, w = img.shape
    th = math.radians(degrees)
    c, s = math.cos(th), math.sin(th)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    dy, dx = yy - cy, xx - cx
    src_x = c * dx - s * dy + cx
    src_y = s * dx + c * dy + cy
    out = ndimage.map_coordinates(img, [src_y, src_x], order=1, mode="nearest")
    return np.clip(out, 0.0, 255.0)


def center_crop(img: np.ndarray, percent: float) -> np.ndarray:
    h, w = img.shape
    ch = max(1, int(round(h * percent / 100)))
    cw = max(1, int(round(w * percent / 100)))
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    return resize(img[y0:y0 + ch, x0:x0 + cw], w, h)


def rescale(img: np.ndarray, percent: float) -> np.ndarray:
    h, w = img.shape
    sh = max(1, int(round(h * percent / 100)))
    sw = max(1, int(round(w * percent / 100)))
    return resize(resize(img, sw, sh), w, h)


def apply_attack(img: np.ndarray, spec: AttackSpec | str) -> np.ndarray:
    if isinstance(spec, str):
        spec = AttackSpec.parse(spec)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("attacks act on 2-D luma planes")
    if spec.kind == "jpeg":
        return jpeg(img, spec.param)
    if spec.kind == "mb":
        if min(img.shape) < spec.param:
            raise ValueError("image smaller than the median kernel")
        return median_blur(img, int(spec.param))
    if spec.kind == "na":
        return noise_add(img, spec.param, spec.seed)
    if spec.kind == "rot":
        return rotate(img, spec.param)
    if spec.kind == "crop":
        return center_crop(img, spec.param)
    return rescale(img, spec.param)


def attack_sweep(img: np.ndarray, kind: str, params, seed: int | None = None):
    """Apply one attack family at each parameter; returns ``[(param, image)]``."""
    if kind == "na" and seed is None:
        seed = 0
    specs = [AttackSpec(kind, float(p), seed if kind == "na" else None) for p in params]
    return [(s.param, apply_attack(img, s)) for s in specs]


# the robustness sweeps used for the add-on watermarking comparison
DEFAULT_SWEEPS = {
    "jpeg": (60, 70, 80),
    "mb": (2, 3, 4),
    "na": (1, 2, 3),
    "rot": (3, 4, 5),
    "crop": (85, 90, 95),
    "scale": (80, 90, 110, 120),
}
