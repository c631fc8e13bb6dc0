"""Residual-dense attack network, Adam, and checkpoint files."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import Tensor, add, concat, conv2d, relu

CHECKPOINT_MAGIC = b"WANCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class WanConfig:
    num_rdb: int = 12
    convs_per_rdb: int = 6
    base_features: int = 32
    growth_rate: int = 16

    def __post_init__(self):
        for name, val in asdict(self).items():
            if int(val) != val or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val}")


PAPER_WAN = WanConfig(12, 6, 32, 16)
DESK_WAN = WanConfig(3, 3, 16, 8)


class Conv:
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, dtype):
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)  # Kaiming-uniform, ReLU gain
        self.weight = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class ResidualDenseBlock:
    """``convs`` densely connected 3x3 conv + ReLU layers, 1x1 local fusion
    back to ``g0`` maps, and a local residual connection."""

    def __init__(self, g0: int, g: int, convs: int, rng, dtype):
        self.layers = [Conv(g0 + i * g, g, 3, rng, dtype) for i in range(convs)]
        self.fusion = Conv(g0 + convs * g, g0, 1, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        feats = [x]
        for layer in self.layers:
            inp = feats[0] if len(feats) == 1 else concat(feats)
            feats.append(relu(layer(inp)))
        return add(x, self.fusion(concat(feats)))

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        return ps + self.fusion.parameters()


class WAN:
    """Fully convolutional: 1-channel image in, 1-channel image out, same size.

    shallow conv (F-1) -> conv (F0) -> D residual dense blocks -> concat ->
    1x1 conv -> 3x3 conv -> + F-1 -> 3x3 conv to one channel.
    """

    def __init__(self, cfg: WanConfig = DESK_WAN, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        g0, g = cfg.base_features, cfg.growth_rate
        self.shallow1 = Conv(1, g0, 3, rng, dtype)
        self.shallow2 = Conv(g0, g0, 3, rng, dtype)
        self.blocks = [ResidualDenseBlock(g0, g, cfg.convs_per_rdb, rng, dtype) for _ in range(cfg.num_rdb)]
        self.global_fusion = Conv(cfg.num_rdb * g0, g0, 1, rng, dtype)
        self.global_conv = Conv(g0, g0, 3, rng, dtype)
        self.output = Conv(g0, 1, 3, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[3] != 1:
            raise ValueError(f"WAN expects (N, H, W, 1) input, got {x.shape}")
        f_1 = self.shallow1(x)
        h = self.shallow2(f_1)
        outs = []
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        fused = outs[0] if len(outs) == 1 else concat(outs)
        g = self.global_conv(self.global_fusion(fused))
        return self.output(add(g, f_1))

    def init_identity(self) -> "WAN":
        """Make the network an exact pass-through: the first shallow map copies
        the input, the output conv reads only that map, and the fused branch
        starts at zero."""
        self.shallow1.weight.data[0] = 0
        self.shallow1.weight.data[0, 0, 1, 1] = 1
        self.shallow1.bias.data[0] = 0
        self.global_conv.weight.data[:] = 0
        self.global_conv.bias.data[:] = 0
        self.output.weight.data[:] = 0
        self.output.weight.data[0, 0, 1, 1] = 1
        self.output.bias.data[:] = 0
        return self

    def parameters(self) -> list[Tensor]:
        ps = self.shallow1.parameters() + self.shallow2.parameters()
        for block in self.blocks:
            ps += block.parameters()
        return ps + self.global_fusion.parameters() + self.global_conv.parameters() + self.output.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "WAN":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def infer(self, images: np.ndarray, batch: int = 32) -> np.ndarray:
        """Run ``(N, H, W)`` images in [0, 1] through the network without a tape."""
        images = np.asarray(images, dtype=self.dtype)
        out = np.empty_like(images)
        for i in range(0, len(images), batch):
            out[i:i + batch] = self(Tensor(images[i:i + batch, ..., None])).data[..., 0]
        return out


def build_wan(cfg: WanConfig, seed: int = 0, dtype=np.float64, identity: bool = True) -> WAN:
    """Fresh network for training, by default starting as the identity map."""
    net = WAN(cfg, seed, dtype)
    return net.init_identity() if identity else net


# ---------------------------------------------------------------------------
# optimiser

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params) -> AdamState:
    return AdamState([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place Adam update with bias correction; returns the updated state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have the same length")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"shape mismatch in adam_step: {g.shape} vs {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype, copy=False)
    return state


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   8s   magic "WANCKPT\0"
#   u32  format version
#   4xu32 num_rdb, convs_per_rdb, base_features, growth_rate
#   u64  init seed
#   u32  length of a UTF-8 JSON metadata blob, then the blob
#   u32  parameter count, then per parameter:
#        u8 dtype code (4 = float32, 8 = float64), u8 ndim, ndim x u32 shape,
#        raw values

def save_checkpoint(path, net: WAN, meta: dict | None = None) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    c = net.cfg
    buf.write(struct.pack("<4I", c.num_rdb, c.convs_per_rdb, c.base_features, c.growth_rate))
    buf.write(struct.pack("<Q", net.seed & (2 ** 64 - 1)))
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    params = net.parameters()
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        arr = np.ascontiguousarray(p.data)
        code = arr.dtype.itemsize
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return ``(net, meta)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a WAN checkpoint")
    pos = 8
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    cfg = WanConfig(*struct.unpack_from("<4I", data, pos))
    pos += 16
    (seed,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + mlen].decode())
    pos += mlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = []
    for _ in range(count):
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = np.dtype("<f4" if code == 4 else "<f8")
        n = int(np.prod(shape)) * dtype.itemsize
        arrays.append(np.frombuffer(data[pos:pos + n], dtype=dtype).reshape(shape).astype(dtype.newbyteorder("=")))
        pos += n
    net = WAN(cfg, seed=seed, dtype=arrays[0].dtype if arrays else np.float64)
    params = net.parameters()
    if len(params) != len(arrays):
        raise ValueError(f"{path}: expected {len(params)} parameters, found {len(arrays)}")
    for p, arr in zip(params, arrays):
        if p.shape != arr.shape:
            raise ValueError(f"{path}: parameter shape {arr.shape} != {p.shape}")
        p.data = arr.copy()
    return net, meta
