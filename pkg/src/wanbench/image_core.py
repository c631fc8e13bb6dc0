"""Image planes, file I/O, resizing, colour conversion and quality metrics.

Planes are plain ``float64`` numpy arrays of shape ``(height, width)`` holding
values in ``[0, 255]``.  Colour images are ``(height, width, 3)`` RGB arrays in
the same range.  Values stay real-valued in memory; quantisation to 8 bits only
happens when a file is written.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "ImageFormatError",
    "MalformedHeaderError",
    "UnsupportedBitDepthError",
    "TruncatedDataError",
    "as_plane",
    "as_message",
    "load_image",
    "save_image",
    "resize",
    "rgb_to_ycbcr",
    "ycbcr_to_rgb",
    "psnr",
    "ssim",
    "ber",
]


class ImageFormatError(ValueError):
    """Raised when an image file cannot be decoded."""


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedBitDepthError(ImageFormatError):
    pass


class TruncatedDataError(ImageFormatError):
    pass


def as_plane(data) -> np.ndarray:
    """Return ``data`` as a finite float64 plane clamped to [0, 255]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty plane")
    if not np.all(np.isfinite(arr)):
        raise ValueError("plane contains non-finite values")
    return np.clip(arr, 0.0, 255.0)


def as_message(bits) -> np.ndarray:
    """Return ``bits`` as a 1-D uint8 array of zeros and ones."""
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    arr = np.asarray(bits).ravel()
    if arr.size < 1:
        raise ValueError("message must hold at least one bit")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("message bits must be 0 or 1")
    return arr.astype(np.uint8)


# ---------------------------------------------------------------------------
# File I/O

def _read_pnm_header(buf: bytes, magic: bytes):
    """Parse a binary PNM header; returns (width, height, maxval, offset)."""
    if buf[:2] != magic:
        raise MalformedHeaderError(f"expected magic {magic!r}, got {buf[:2]!r}")
    fields = []
    pos = 2
    n = len(buf)
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < n and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("header ended before width/height/maxval")
        fields.append(int(buf[start:pos]))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or maxval < 1 or maxval > 65535:
        raise MalformedHeaderError(f"invalid header values {fields}")
    return width, height, maxval, pos


def _load_pnm(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise MalformedHeaderError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if magic == b"P5" else 3
    width, height, maxval, offset = _read_pnm_header(buf, magic)
    if maxval != 255:
        raise UnsupportedBitDepthError(f"{path}: unsupported bit depth (maxval {maxval})")
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise TruncatedDataError(f"{path}: expected {need} bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)


def _load_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        msg = str(exc)
        if "truncated" in msg.lower():
            raise TruncatedDataError(f"{path}: {msg}") from exc
        raise MalformedHeaderError(f"{path}: {msg}") from exc
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64)
    if img.mode == "RGB":
        return np.asarray(img, dtype=np.float64)
    if img.mode in ("I;16", "I;16B", "I;16L", "I", "F", "1"):
        raise UnsupportedBitDepthError(f"{path}: unsupported bit depth (mode {img.mode})")
    raise ImageFormatError(f"{path}: unsupported PNG mode {img.mode}")


def load_image(path, format: str | None = None) -> np.ndarray:
    """Load an 8-bit grayscale or RGB image without rescaling pixel values.

    ``format`` is ``"pgm"`` or ``"png"``; when omitted it is inferred from the
    file magic.  Binary PPM (P6) is accepted as the colour twin of PGM.
    """
    path = Path(path)
    if format is None:
        with open(path, "rb") as fh:
            head = fh.read(8)
        format = "png" if head.startswith(b"\x89PNG") else "pgm"
    format = format.lower()
    if format in ("pgm", "ppm", "pnm"):
        return _load_pnm(path)
    if format == "png":
        return _load_png(path)
    raise ValueError(f"unknown image format {format!r}")


def save_image(path, img: np.ndarray) -> None:
    """Write a plane as P5 PGM (or an RGB image as P6 PPM), rounding to 8 bits."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        magic, (h, w) = b"P5", arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic, (h, w) = b"P6", arr.shape[:2]
    else:
        raise ValueError(f"cannot save array of shape {arr.shape}")
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# Resizing

def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    out = np.where(ax <= 1, (a + 2) * ax3 - (a + 3) * ax2 + 1, 0.0)
    out = np.where((ax > 1) & (ax < 2), a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, out)
    return out


def resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Return the ``(n_out, n_in)`` antialiased bicubic interpolation matrix.

    When shrinking, the kernel is stretched by ``1/scale`` so it doubles as a
    low-pass filter.  Samples outside the input are edge-replicated.
    """
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centers - support).astype(int) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * _cubic(stretch * (centers[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(np.arange(n_out), taps), np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    return mat


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bicubic resize (antialiased when shrinking), clamped to [0, 255]."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    wy = resize_weights(h, out_h)
    wx = resize_weights(w, out_w)
    if arr.ndim == 2:
        out = wy @ arr @ wx.T
    else:
        out = np.einsum("ij,jkc,lk->ilc", wy, arr, wx)
    return np.clip(out, 0.0, 255.0)


# ---------------------------------------------------------------------------
# Colour

# BT.601 full-range (JFIF) coefficients
_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def rgb_to_ycbcr(img: np.ndarray):
    """Split an RGB image into BT.601 full-range ``(Y, Cb, Cr)`` planes."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {arr.shape}")
    ycc = arr @ _RGB2YCC.T
    ycc[..., 1:] += 128.0
    return ycc[..., 0], ycc[..., 1], ycc[..., 2]


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    ycc = np.stack([y, cb - 128.0, cr - 128.0], axis=-1)
    return np.clip(ycc @ _YCC2RGB.T, 0.0, 255.0)


# ---------------------------------------------------------------------------
# Metrics

def _check_same(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for 8-bit range; ``inf`` if identical."""
    a, b = _check_same(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def ssim(a: np.ndarray, b: np.ndarray, *, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 255.0) -> float:
    """Mean structural similarity over all fully-contained Gaussian windows."""
    a, b = _check_same(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D planes")
    if min(a.shape) < win:
        raise ValueError(f"image smaller than the {win}x{win} window")
    g = _gaussian_window(win, sigma)

    def filt(x):
        # separable valid-mode filtering
        x = ndimage.correlate1d(x, g, axis=0, mode="constant")
        x = ndimage.correlate1d(x, g, axis=1, mode="constant")
        r = win // 2
        return x[r:x.shape[0] - r, r:x.shape[1] - r]

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a ** 2
    s_bb = filt(b * b) - mu_b ** 2
    s_ab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def ber(m, m_hat) -> float:
    """Fraction of mismatched bits between two equal-length messages."""
    m = as_message(m)
    m_hat = as_message(m_hat)
    if m.shape != m_hat.shape:
        raise ValueError(f"length mismatch: {m.size} vs {m_hat.size}")
    return float(np.count_nonzero(m != m_hat)) / m.size
