"""Training and inference for the watermark attack network.

The network sees a watermarked block and is trained so that the residual
``original - attacked`` of a bit-0 block mimics the codec's bit-1 residual and
vice versa (the attack loss), while staying close to the original (the
content loss).  Images are scaled to [0, 1] at the network boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codecs import AuxData, get_codec, tile, untile
from .image_core import load_image, psnr, save_image
from .neural import (DESK_WAN, WAN, Tape, Tensor, WanConfig, abs_mean, adam_init, adam_step,
                     build_wan, concat, load_checkpoint, scale, split, sub)

log = logging.getLogger(__name__)

MANIFEST_HEADER = "wanbench-manifest 1"
HISTORY_COLUMNS = ("epoch", "l_wa", "l_c", "val_ber", "val_psnr")
SPLIT_RATIO = (14, 1, 5)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TripleSet:
    """Aligned (original, bit-0, bit-1) 64x64 planes in [0, 255]."""

    originals: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    ids: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.originals.shape == self.w0.shape == self.w1.shape):
            raise ValueError("triple planes must share dimensions")
        if not self.ids:
            self.ids = [f"{i:05d}" for i in range(len(self.originals))]

    def __len__(self):
        return len(self.originals)

    def subset(self, idx) -> "TripleSet":
        idx = np.asarray(idx)
        return TripleSet(self.originals[idx], self.w0[idx], self.w1[idx], [self.ids[i] for i in idx])

    @classmethod
    def from_originals(cls, originals: np.ndarray, aux: AuxData, ids=None) -> "TripleSet":
        codec = get_codec(aux)
        originals = np.asarray(originals, dtype=np.float64)
        w0 = np.rint(codec.embed(originals, 0).watermarked)
        w1 = np.rint(codec.embed(originals, 1).watermarked)
        return cls(originals, w0, w1, list(ids) if ids is not None else [])


def split_counts(n: int, ratio=SPLIT_RATIO) -> tuple[int, int, int]:
    """Train/val/test sizes for ``n`` records in the given ratio."""
    total = sum(ratio)
    n_val = int(round(n * ratio[1] / total))
    n_test = int(round(n * ratio[2] / total))
    return n - n_val - n_test, n_val, n_test


def read_manifest(path) -> dict[str, TripleSet]:
    """Load a dataset manifest into one TripleSet per split tag."""
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ValueError(f"{path}: missing manifest header")
    groups: dict[str, list] = {}
    for ln in lines[1:]:
        rid, tag, orig, p0, p1 = ln.split("\t")
        groups.setdefault(tag, []).append((rid, orig, p0, p1))
    out = {}
    for tag, rows in groups.items():
        load = lambda p: load_image(path.parent / p)
        out[tag] = TripleSet(np.stack([load(r[1]) for r in rows]),
                             np.stack([load(r[2]) for r in rows]),
                             np.stack([load(r[3]) for r in rows]),
                             [r[0] for r in rows])
    return out


def write_dataset(originals: np.ndarray, out_dir, aux: AuxData, seed: int = 0, ids=None,
                  ratio=SPLIT_RATIO) -> Path:
    """Write originals and both watermarked versions as PGM files plus a
    manifest; records are assigned to train/val/test by a seeded shuffle."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    triples = TripleSet.from_originals(np.rint(originals), aux, ids)
    n_train, n_val, _ = split_counts(len(triples), ratio)
    order = np.random.default_rng(seed).permutation(len(triples))
    tags = np.empty(len(triples), dtype=object)
    tags[order[:n_train]] = "train"
    tags[order[n_train:n_train + n_val]] = "val"
    tags[order[n_train + n_val:]] = "test"
    lines = [MANIFEST_HEADER]
    for i, rid in enumerate(triples.ids):
        names = [f"images/{rid}_{kind}.pgm" for kind in ("o", "w0", "w1")]
        for name, plane in zip(names, (triples.originals[i], triples.w0[i], triples.w1[i])):
            save_image(out_dir / name, plane)
        lines.append("\t".join([rid, tags[i], *names]))
    path = out_dir / "manifest.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# batches and losses

def make_paired_batches(n_pairs: int, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Shuffle pair indices and cut them into batches of ``batch_size // 2``.

    Each returned index array selects the bit-0 images first and the bit-1
    images of the same originals second.  The incomplete tail is dropped.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError("batch size must be even")
    half = batch_size // 2
    if n_pairs < half:
        raise ValueError(f"dataset too small: {n_pairs} pairs for batch size {batch_size}")
    perm = np.random.default_rng(epoch_seed).permutation(n_pairs)
    return [perm[i:i + half] for i in range(0, n_pairs - half + 1, half)]


def loss_wa(r_o_w0: Tensor, r_o_w1: Tensor, rt_o_w0: Tensor, rt_o_w1: Tensor) -> Tensor:
    """Attack loss: each attacked residual should look like the other bit's."""
    return abs_mean(sub(r_o_w0, rt_o_w1)) + abs_mean(sub(r_o_w1, rt_o_w0))


def loss_c(original: Tensor, attacked0: Tensor, attacked1: Tensor) -> Tensor:
    """Content loss: l1 distance of both attacked images to the original."""
    return abs_mean(sub(original, attacked0)) + abs_mean(sub(original, attacked1))


def wan_losses(net: WAN, originals, w0, w1):
    """Forward a paired batch (arrays in [0, 1], shape (n, H, W)); returns
    ``(l_wa, l_c, attacked0, attacked1)`` as tensors."""
    n = len(originals)
    dtype = net.dtype
    o = Tensor(np.asarray(originals, dtype=dtype)[..., None])
    b0 = Tensor(np.asarray(w0, dtype=dtype)[..., None])
    b1 = Tensor(np.asarray(w1, dtype=dtype)[..., None])
    out = net(concat([b0, b1], axis=0))
    a0, a1 = split(out, [n, n], axis=0)
    r0 = Tensor(o.data - b0.data)
    r1 = Tensor(o.data - b1.data)
    l_wa = loss_wa(r0, r1, sub(o, a0), sub(o, a1))
    l_c = loss_c(o, a0, a1)
    return l_wa, l_c, a0, a1


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    lambda_wa: float = 0.3
    lambda_c: float = 0.4
    batch_size: int = 32
    epochs: int = 30
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.lambda_wa < 0 or self.lambda_c < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch size must be even")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


@dataclass
class TrainResult:
    net: WAN
    history: list
    best_epoch: int
    best_val_ber: float

    @property
    def meta(self) -> dict:
        return {"best_epoch": self.best_epoch, "val_ber": self.best_val_ber,
                "history": [dict(zip(HISTORY_COLUMNS, row)) for row in self.history]}


def attack_blocks(net: WAN, blocks: np.ndarray, batch: int = 32) -> np.ndarray:
    """Attack ``(n, H, W)`` planes in [0, 255]; output clamped to [0, 255]."""
    out = net.infer(np.asarray(blocks) / 255.0, batch=batch)
    return np.clip(out.astype(np.float64), 0.0, 1.0) * 255.0


def evaluate_attack(net: WAN, data: TripleSet, aux: AuxData):
    """BER (fraction of inverted bits) and mean PSNR after attacking both
    watermarked versions of every record."""
    codec = get_codec(aux)
    a0 = attack_blocks(net, data.w0)
    a1 = attack_blocks(net, data.w1)
    errors = np.count_nonzero(codec.extract(a0) != 0) + np.count_nonzero(codec.extract(a1) != 1)
    ber = errors / (2 * len(data))
    ps = [psnr(o, a) for o, a in zip(np.concatenate([data.originals] * 2), np.concatenate([a0, a1]))]
    return ber, float(np.mean(ps))


def _snapshot(net: WAN):
    return [p.data.copy() for p in net.parameters()]


def train(train_set: TripleSet, val_set: TripleSet, aux: AuxData, cfg: TrainConfig = None,
          wan_cfg: WanConfig = DESK_WAN, progress=None) -> TrainResult:
    """Train with paired mini-batches and keep the epoch with the highest
    validation BER (earliest epoch wins ties)."""
    cfg = cfg or TrainConfig()
    dtype = np.dtype(cfg.dtype)
    net = build_wan(wan_cfg, seed=cfg.seed, dtype=dtype)
    params = net.parameters()
    state = adam_init(params)
    orig = train_set.originals / 255.0
    w0 = train_set.w0 / 255.0
    w1 = train_set.w1 / 255.0
    history = []
    best = (-1.0, 0, None)
    for epoch in range(1, cfg.epochs + 1):
        batches = make_paired_batches(len(train_set), cfg.batch_size, cfg.seed * 1000003 + epoch)
        sums = np.zeros(2)
        for idx in batches:
            net.zero_grad()
            with Tape() as tape:
                l_wa, l_c, _, _ = wan_losses(net, orig[idx], w0[idx], w1[idx])
                total = scale(l_wa, cfg.lambda_wa) + scale(l_c, cfg.lambda_c)
            if not math.isfinite(total.item()):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            tape.backward(total)
            adam_step(params, [p.grad for p in params], state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            sums += (l_wa.item(), l_c.item())
        l_wa_mean, l_c_mean = sums / len(batches)
        val_ber, val_psnr = evaluate_attack(net, val_set, aux)
        row = (epoch, float(l_wa_mean), float(l_c_mean), float(val_ber), float(val_psnr))
        history.append(row)
        log.info("epoch %d  l_wa %.5f  l_c %.5f  val_ber %.4f  val_psnr %.2f", *row)
        if progress is not None:
            progress(row)
        if val_ber > best[0]:
            best = (val_ber, epoch, _snapshot(net))
        for p in params:
            p.grad = None
    for p, data in zip(params, best[2]):
        p.data = data
    return TrainResult(net, history, best[1], best[0])


def write_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(f"{row[0]},{row[1]:.8f},{row[2]:.8f},{row[3]:.6f},{row[4]:.4f}\n")


# ---------------------------------------------------------------------------
# inference

def wan_attack(net: WAN | str | Path, image: np.ndarray) -> np.ndarray:
    """Attack an image tile by tile (64x64, stride 64); output in [0, 255]."""
    if not isinstance(net, WAN):
        net, _ = load_checkpoint(net)
    image = np.asarray(image, dtype=np.float64)
    tiles = tile(image)
    return untile(attack_blocks(net, tiles), *image.shape)
