"""Add-on watermarking: per-pixel mixing of a codec residual with the attack
network's residual that carries the same bit.

For target bit ``j`` the two candidates are the codec residual ``R`` of
``B_w(j)`` and the network residual ``Rt`` obtained by attacking
``B_w(1-j)``.  AoW-min keeps the smaller magnitude at each pixel (``Rt`` on
ties), AoW-max the larger (``R`` on ties).  Residuals are ``original -
image``, so an image is rebuilt as ``original - residual``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .attacks import AttackSpec, apply_attack
from .codecs import AuxData, get_codec
from .image_core import psnr, ssim
from .wan import attack_blocks

RESIDUAL_HEADER = "wanbench-residual 1"


def select_residuals(r: np.ndarray, rt: np.ndarray):
    """Return ``(min_residual, max_residual)`` chosen pixel by pixel."""
    r = np.asarray(r, dtype=np.float64)
    rt = np.asarray(rt, dtype=np.float64)
    if r.shape != rt.shape:
        raise ValueError(f"residual shape mismatch {r.shape} vs {rt.shape}")
    take_r = np.abs(r) < np.abs(rt)
    return np.where(take_r, r, rt), np.where(take_r, rt, r)


def _compose(original, residual):
    original = np.asarray(original, dtype=np.float64)
    if original.shape != residual.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {residual.shape}")
    return np.clip(original - residual, 0.0, 255.0)


def aow_min(original, r, rt) -> np.ndarray:
    return _compose(original, select_residuals(r, rt)[0])


def aow_max(original, r, rt) -> np.ndarray:
    return _compose(original, select_residuals(r, rt)[1])


def aow_candidates(aux: AuxData, net, originals: np.ndarray, bits: np.ndarray):
    """Watermarked blocks plus both residual candidates for each target bit."""
    codec = get_codec(aux)
    originals = np.asarray(originals, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.int64)
    marked = codec.embed(originals, bits).watermarked
    opposite = codec.embed(originals, 1 - bits).watermarked
    attacked = attack_blocks(net, opposite)
    return marked, originals - marked, originals - attacked


def write_residual(path, residual: np.ndarray, *, codec: str, bits, checkpoint: str) -> None:
    """Store a residual as float32 little-endian samples after a text header.

    ``bits`` are the target bits ``j`` of the tiles in row-major order.
    """
    residual = np.asarray(residual)
    h, w = residual.shape
    text = "".join(str(int(b)) for b in np.atleast_1d(bits))
    header = (f"{RESIDUAL_HEADER}\nwidth {w}\nheight {h}\ncodec {codec}\n"
              f"bits {text}\ncheckpoint {checkpoint}\nend\n")
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(residual.astype("<f4").tobytes())


def read_residual(path):
    data = Path(path).read_bytes()
    end = data.index(b"\nend\n") + 5
    lines = data[:end].decode().splitlines()
    if lines[0] != RESIDUAL_HEADER:
        raise ValueError(f"{path}: not a residual raster")
    meta = dict(ln.split(" ", 1) for ln in lines[1:-1])
    w, h = int(meta["width"]), int(meta["height"])
    arr = np.frombuffer(data[end:end + 4 * w * h], dtype="<f4")
    if arr.size != w * h:
        raise ValueError(f"{path}: truncated residual payload")
    meta["bits"] = np.array([int(c) for c in meta["bits"]], dtype=np.uint8)
    return arr.reshape(h, w).astype(np.float64), meta


def _ber(codec, images, bits):
    return float(np.mean(codec.extract(images) != bits))


def aow_evaluate(aux: AuxData, net, originals: np.ndarray, sweeps: dict | None = None,
                 noise_seed: int = 0) -> list[dict]:
    """Fidelity and robustness of watermarked, AoW-max and AoW-min blocks.

    Every original is marked with both bits.  ``sweeps`` maps an attack kind
    to its parameter list; the BER of a sweep is the mean over parameters.
    """
    codec = get_codec(aux)
    originals = np.asarray(originals, dtype=np.float64)
    n = len(originals)
    orig2 = np.concatenate([originals, originals])
    bits = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
    marked, r, rt = aow_candidates(aux, net, orig2, bits)
    r_min, r_max = select_residuals(r, rt)
    variants = {
        "watermarked": marked,
        "AoW-max": np.clip(orig2 - r_max, 0, 255),
        "AoW-min": np.clip(orig2 - r_min, 0, 255),
    }
    rows = []
    for name, imgs in variants.items():
        row = {
            "variant": name,
            "psnr": float(np.mean([psnr(o, x) for o, x in zip(orig2, imgs)])),
            "ssim": float(np.mean([ssim(o, x) for o, x in zip(orig2, imgs)])),
            "ber": _ber(codec, imgs, bits),
            "n": len(imgs),
        }
        for kind, params in (sweeps or {}).items():
            bers = []
            for p in params:
                attacked = []
                for k, img in enumerate(imgs):
                    spec = AttackSpec(kind, float(p), noise_seed + k if kind == "na" else None)
                    attacked.append(apply_attack(img, spec))
                bers.append(_ber(codec, np.stack(attacked), bits))
            row[f"ber_{kind}"] = float(np.mean(bers))
        rows.append(row)
    return rows
