"""Siamese difference network and its checkpoint format.

Encoder: 7x7/2 stem convolution + BN + ReLU + 2x2 max pool, then three
stages of basic residual blocks (64, 128, 256 channels at strides 1, 2, 2).
The optional DDR layer runs after the final ReLU of stages 1 and 2. Both
dates go through the same parameters; per-level features are compared with
an absolute difference, resized to the input size, concatenated and
projected to a single-channel sigmoid probability map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .ddr import DDRLayer, NormConfig, RunningMoments, bn_forward
from .functional import bilinear_resize, concat_channels, conv2d, maxpool2
from .tensor import Tensor, as_tensor, concat, relu, sigmoid, tabs

CHECKPOINT_MAGIC = b"DONACKPT"
CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    widths: tuple = (64, 128, 256)
    blocks_per_stage: int = 2
    variant: str = "none"
    lam: int = 6
    eps: float = 1e-5
    newton_t: int = 5
    in_channels: int = 3
    dtype: str = "float32"
    seed: int = 0

    @classmethod
    def tiny(cls, **kw) -> "NetConfig":
        """Reduced network (8/16/32 channels, one block per stage) for gradient checks."""
        kw.setdefault("widths", (8, 16, 32))
        kw.setdefault("blocks_per_stage", 1)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


class Conv:
    def __init__(self, cin, cout, k, stride=1, pad=0, bias=False, rng=None, dtype=np.float32, gain=2.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        std = np.sqrt(gain / (cin * k * k))
        self.weight = Tensor(rng.normal(0.0, std, (cout, cin, k, k)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def named_parameters(self, prefix):
        yield prefix + ".weight", self.weight
        if self.bias is not None:
            yield prefix + ".bias", self.bias


class BatchNorm:
    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        self.eps = eps
        self.running = RunningMoments(channels, "diagonal", dtype=dtype)

    def __call__(self, x, training):
        return bn_forward(x, self.running, training, self.eps)


class BasicBlock:
    def __init__(self, cin, cout, stride, rng, dtype, eps):
        self.conv1 = Conv(cin, cout, 3, stride, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(cout, eps, dtype)
        self.conv2 = Conv(cout, cout, 3, 1, 1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(cout, eps, dtype)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = Conv(cin, cout, 1, stride, 0, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm(cout, eps, dtype)

    def __call__(self, x, training):
        out = relu(self.bn1(self.conv1(x), training))
        out = self.bn2(self.conv2(out), training)
        skip = x if self.proj is None else self.proj_bn(self.proj(x), training)
        return relu(out + skip)

    def named_parameters(self, prefix):
        yield from self.conv1.named_parameters(prefix + ".conv1")
        yield from self.conv2.named_parameters(prefix + ".conv2")
        if self.proj is not None:
            yield from self.proj.named_parameters(prefix + ".proj")

    def named_buffers(self, prefix):
        yield prefix + ".bn1", self.bn1.running
        yield prefix + ".bn2", self.bn2.running
        if self.proj is not None:
            yield prefix + ".proj_bn", self.proj_bn.running


@dataclass
class ForwardOutput:
    f_levels: tuple
    diff_levels: list
    f_agg: Tensor
    p_out: Tensor
    extras: dict = field(default_factory=dict)


class SDNetwork:
    """Shared-parameter siamese encoder with difference aggregation head."""

    def __init__(self, cfg: NetConfig | None = None):
        self.cfg = cfg = cfg or NetConfig()
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        w1, w2, w3 = cfg.widths
        self.norm_cfg = NormConfig(lam=cfg.lam, eps=cfg.eps, variant=cfg.variant, newton_t=cfg.newton_t)
        self.stem = Conv(cfg.in_channels, w1, 7, 2, 3, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm(w1, cfg.eps, dtype)
        self.stages = []
        cin = w1
        for cout, stride in ((w1, 1), (w2, 2), (w3, 2)):
            blocks = []
            for b in range(cfg.blocks_per_stage):
                blocks.append(BasicBlock(cin, cout, stride if b == 0 else 1, rng, dtype, cfg.eps))
                cin = cout
            self.stages.append(blocks)
        self.ddr = [DDRLayer(w1, self.norm_cfg, dtype), DDRLayer(w2, self.norm_cfg, dtype)]
        self.head = Conv(sum(cfg.widths), 1, 1, bias=True, rng=rng, dtype=dtype, gain=1.0)

    # -- parameters --------------------------------------------------------
    def named_parameters(self):
        yield from self.stem.named_parameters("stem")
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                yield from blk.named_parameters(f"stage{i + 1}.{j}")
        yield from self.head.named_parameters("head")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self):
        yield "stem_bn", self.stem_bn.running
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                yield from blk.named_buffers(f"stage{i + 1}.{j}")
        for i, layer in enumerate(self.ddr):
            yield f"ddr{i + 1}", layer.running

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    # -- forward -----------------------------------------------------------
    def encode(self, x, training: bool):
        x = as_tensor(x)
        h, w = x.shape[2:]
        if h % 32 or w % 32:
            raise ValueError(f"input size {h}x{w} must be divisible by 32; pad the tile first")
        out = maxpool2(relu(self.stem_bn(self.stem(x), training)))
        feats = []
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                out = blk(out, training)
            if i < 2:
                out = self.ddr[i](out, training)
            feats.append(out)
        return feats

    def forward_pair(self, xa, xb, training: bool = False) -> ForwardOutput:
        xa, xb = as_tensor(xa), as_tensor(xb)
        if xa.shape != xb.shape:
            raise ValueError(f"image pair shape mismatch {xa.shape} vs {xb.shape}")
        n, _, h, w = xa.shape
        if training:
            # one pass over both dates so batch statistics pool the pair
            both = self.encode(concat([xa, xb], axis=0), training)
            fa = [f[:n] for f in both]
            fb = [f[n:] for f in both]
        else:
            fa = self.encode(xa, training)
            fb = self.encode(xb, training)
        diffs = diff_features(fa, fb)
        f_agg = aggregate(diffs, h, w)
        return ForwardOutput((fa, fb), diffs, f_agg, predict(f_agg, self))

    __call__ = forward_pair


def diff_features(fa, fb):
    """Per level ``|f_A - f_B|``."""
    if len(fa) != len(fb):
        raise ValueError("feature lists differ in length")
    out = []
    for a, b in zip(fa, fb):
        if a.shape != b.shape:
            raise ValueError(f"feature shape mismatch {a.shape} vs {b.shape}")
        out.append(tabs(a - b))
    return out


def aggregate(diffs, height: int, width: int) -> Tensor:
    if len(diffs) != 3:
        raise ValueError(f"expected three difference levels, got {len(diffs)}")
    return concat_channels([bilinear_resize(d, height, width) for d in diffs])


def predict(f_agg: Tensor, net: SDNetwork) -> Tensor:
    expected = net.head.weight.shape[1]
    if f_agg.shape[1] != expected:
        raise ValueError(f"head expects {expected} channels, got {f_agg.shape[1]}")
    return sigmoid(net.head(f_agg))


# -- checkpoints ------------------------------------------------------------

def _write_record(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    pos = fh.tell()
    b = fh.read(n)
    if len(b) != n:
        raise ValueError(f"truncated checkpoint at byte {pos}: wanted {n} bytes, got {len(b)}")
    return b


def _read_record(fh):
    (nlen,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, nlen).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def save_checkpoint(net: SDNetwork, path) -> None:
    """Write parameters and running-moment buffers as little-endian float32 records."""
    records = [(name, p.data) for name, p in net.named_parameters()]
    for name, rm in net.named_buffers():
        for key, arr in rm.state().items():
            records.append((f"buffer:{name}.{key}", arr))
    cfg = json.dumps(net.cfg.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, arr)


def load_checkpoint(path) -> SDNetwork:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic at byte 0: {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version} at byte 8")
        (clen,) = struct.unpack("<I", _read_exact(fh, 4))
        cfg = NetConfig.from_dict(json.loads(_read_exact(fh, clen).decode("utf-8")))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        records = dict(_read_record(fh) for _ in range(count))
    net = SDNetwork(cfg)
    for name, p in net.named_parameters():
        if name not in records:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        p.data[...] = records[name].reshape(p.shape)
    for name, rm in net.named_buffers():
        state = {}
        for key in ("mean", "second", "count"):
            rec = records.get(f"buffer:{name}.{key}")
            if rec is None:
                raise ValueError(f"checkpoint is missing buffer {name}.{key}")
            state[key] = rec
        rm.load_state(state)
    return net
