"""Small-matrix transforms used by the block codecs.

All routines work in double precision on blocks of at most 64x64 and return
results with pinned sign conventions, so that embedders that compare signed
factor entries have a well-defined extractor.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import fft as _fft

DCT_SIDES = (8, 16, 32, 64)


class SvdFactors(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


class QrFactors(NamedTuple):
    Q: np.ndarray
    R: np.ndarray


def _finite_matrix(block) -> np.ndarray:
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite entries")
    return arr


def _dct_block(block) -> np.ndarray:
    arr = _finite_matrix(block)
    h, w = arr.shape
    if h != w or h not in DCT_SIDES:
        raise ValueError(f"unsupported DCT block side {arr.shape}; expected square of {DCT_SIDES}")
    return arr


def dct2(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a square block."""
    return _fft.dctn(_dct_block(block), type=2, norm="ortho")


def idct2(coeffs) -> np.ndarray:
    return _fft.idctn(_dct_block(coeffs), type=2, norm="ortho")


def blockwise_dct(plane: np.ndarray, side: int) -> np.ndarray:
    """DCT of every ``side x side`` tile, returned as ``(rows, cols, side, side)``."""
    h, w = plane.shape
    tiles = plane.reshape(h // side, side, w // side, side).swapaxes(1, 2)
    return _fft.dctn(tiles, type=2, norm="ortho", axes=(2, 3))


def blockwise_idct(coeffs: np.ndarray) -> np.ndarray:
    rows, cols, side, _ = coeffs.shape
    tiles = _fft.idctn(coeffs, type=2, norm="ortho", axes=(2, 3))
    return tiles.swapaxes(1, 2).reshape(rows * side, cols * side)


def dwt2_haar(block):
    """Single-level orthonormal Haar DWT; returns ``(LL, LH, HL, HH)``.

    ``LH`` holds horizontal detail (row differences averaged along columns),
    ``HL`` vertical detail, ``HH`` diagonal detail.
    """
    x = _finite_matrix(block)
    h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"Haar DWT needs even dimensions, got {x.shape}")
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, lh, hl, hh


def idwt2_haar(ll, lh, hl, hh) -> np.ndarray:
    ll, lh, hl, hh = (np.asarray(t, dtype=np.float64) for t in (ll, lh, hl, hh))
    h, w = ll.shape
    out = np.empty((2 * h, 2 * w))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def _first_nonzero_signs(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    signs = np.ones(mat.shape[1])
    for j in range(mat.shape[1]):
        nz = np.flatnonzero(np.abs(mat[:, j]) > tol)
        if nz.size and mat[nz[0], j] < 0:
            signs[j] = -1.0
    return signs


def svd(block) -> SvdFactors:
    """Full SVD ``A = U diag(S) V^T`` with non-negative leading entries in U.

    The first non-negligible entry of every U column is made non-negative and
    the matching V column flipped with it.
    """
    a = _finite_matrix(block)
    if max(a.shape) > 64:
        raise ValueError("svd is meant for blocks of side <= 64")
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    v = vt.T
    signs = _first_nonzero_signs(u)
    u = u * signs
    k = min(a.shape)
    v[:, :k] = v[:, :k] * signs[:k]
    return SvdFactors(u, s, v)


def qr(block) -> QrFactors:
    """Householder QR of a square matrix with a non-negative R diagonal."""
    a = _finite_matrix(block)
    n, m = a.shape
    if n != m:
        raise ValueError(f"qr expects a square matrix, got {a.shape}")
    r = a.copy()
    q = np.eye(n)
    for k in range(n - 1):
        x = r[k:, k]
        if not np.any(x[1:]):
            continue
        normx = np.linalg.norm(x)
        alpha = -normx if x[0] >= 0 else normx
        v = x.copy()
        v[0] -= alpha
        vnorm2 = v @ v
        if vnorm2 == 0.0:
            continue
        # H = I - 2 v v^T / (v^T v)
        r[k:, :] -= np.outer(v, (2.0 / vnorm2) * (v @ r[k:, :]))
        q[:, k:] -= np.outer(q[:, k:] @ v, (2.0 / vnorm2) * v)
        r[k + 1:, k] = 0.0
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q = q * signs
    r = r * signs[:, None]
    return QrFactors(q, r)
