"""U-Net predictor with a dilated bottleneck and an unseen-aware attention unit."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .occupancy import EarliestOccupancyMap
from .tensor import Tensor


@dataclass
class NetConfig:
    in_channels: int = 5
    base_channels: int = 8
    depth: int = 2
    dilation_rates: tuple = (2, 4, 8)
    attention_enabled: bool = True
    output_scale: float = 30.0
    norm: bool = True
    upsample: str = "nearest"
    head_bias: float = 0.0  # initial logit of the output head

    def __post_init__(self):
        self.dilation_rates = tuple(self.dilation_rates)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.dilation_rates:
            raise ValueError("dilation_rates must be nonempty")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")
        if self.upsample not in ("nearest", "transpose"):
            raise ValueError("upsample must be 'nearest' or 'transpose'")

    def to_dict(self):
        d = asdict(self)
        d["dilation_rates"] = list(self.dilation_rates)
        return d


@dataclass
class AttentionTensors:
    F: Tensor
    K: Tensor
    Q: Tensor
    W: Tensor
    out: Tensor


def attention_unit(F: Tensor, key_w: Tensor, key_b: Tensor, query_w: Tensor,
                   query_b: Tensor) -> AttentionTensors:
    """Spatial attention: W = softmax over positions of <K, Q>, output W * F + F."""
    if F.ndim != 4:
        raise ValueError("attention_unit expects (B, n, h, w) features")
    n = F.shape[1]
    if key_w.shape[0] != n or query_w.shape[0] != n:
        raise ValueError("key/query branches must preserve the channel count")
    pad_k = key_w.shape[-1] // 2
    K = tn.conv2d(F, key_w, key_b, padding=pad_k)
    Q = tn.conv2d(F, query_w, query_b, padding=query_w.shape[-1] // 2)
    scores = (K * Q).sum(axis=1, keepdims=True)
    W = tn.spatial_softmax(scores)
    return AttentionTensors(F, K, Q, W, W * F + F)


def _he(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class UNet:
    """Encoder-decoder mapping a (B, C, H, W) raster to predictions in (0, T)."""

    def __init__(self, config: NetConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or NetConfig()
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = False
        self.last_attention: AttentionTensors | None = None
        self._build(np.random.default_rng(seed))

    # construction ----------------------------------------------------------
    def _param(self, name, arr):
        self.params[name] = Tensor(arr, requires_grad=True)

    def _conv(self, rng, name, cin, cout, k=3, bias=None):
        # bias=None: normalized block (bias only when norm is off)
        has_norm = self.config.norm and bias is None
        self._param(f"{name}.w", _he(rng, (cout, cin, k, k), self.dtype))
        if not has_norm:
            self._param(f"{name}.b", np.zeros(cout, self.dtype))
        if has_norm:
            self._param(f"{name}.gamma", np.ones(cout, self.dtype))
            self._param(f"{name}.beta", np.zeros(cout, self.dtype))
            self.buffers[f"{name}.mean"] = np.zeros(cout, self.dtype)
            self.buffers[f"{name}.var"] = np.ones(cout, self.dtype)

    def channels(self):
        c = self.config
        return [c.base_channels * 2 ** i for i in range(c.depth)], c.base_channels * 2 ** c.depth

    def _build(self, rng):
        c = self.config
        enc, cb = self.channels()
        cin = c.in_channels
        for i, ch in enumerate(enc):
            self._conv(rng, f"enc{i}.0", cin, ch)
            self._conv(rng, f"enc{i}.1", ch, ch)
            cin = ch
        for j, _ in enumerate(c.dilation_rates):
            self._conv(rng, f"bott.{j}", cin, cb)
            cin = cb
        if c.attention_enabled:
            self._conv(rng, "attn.key", cb, cb, bias=True)
            self._conv(rng, "attn.query", cb, cb, bias=True)
        for i in reversed(range(c.depth)):
            ch = enc[i]
            if c.upsample == "transpose":
                self._param(f"dec{i}.up.w", _he(rng, (cin, ch, 2, 2), self.dtype))
                self._param(f"dec{i}.up.b", np.zeros(ch, self.dtype))
            else:
                self._conv(rng, f"dec{i}.up", cin, ch)
            self._conv(rng, f"dec{i}.0", 2 * ch, ch)
            self._conv(rng, f"dec{i}.1", ch, ch)
            cin = ch
        self._conv(rng, "head", cin, 1, k=1, bias=True)
        self.params["head.b"].data[:] = c.head_bias

    # forward ---------------------------------------------------------------
    def _block(self, x, name, dilation=1):
        p = self.params
        x = tn.conv2d(x, p[f"{name}.w"], p.get(f"{name}.b"), dilation=dilation,
                      padding=dilation * (p[f"{name}.w"].shape[-1] // 2))
        if self.config.norm:
            x = tn.batch_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"],
                              self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"],
                              training=self.training)
        return tn.relu(x)

    def check_input(self, shape):
        H, W = shape[-2:]
        f = 2 ** self.config.depth
        if H % f or W % f:
            raise ValueError(f"raster height and width must be divisible by 2**depth = {f}; "
                             f"got {H}x{W}")

    def forward(self, x) -> Tensor:
        c = self.config
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if x.shape[1] != c.in_channels:
            raise ValueError(f"expected {c.in_channels} input channels, got {x.shape[1]}")
        self.check_input(x.shape)
        skips = []
        for i in range(c.depth):
            x = self._block(x, f"enc{i}.0")
            x = self._block(x, f"enc{i}.1")
            skips.append(x)
            x = tn.max_pool2d(x, 2)
        for j, d in enumerate(c.dilation_rates):
            x = self._block(x, f"bott.{j}", dilation=d)
        if c.attention_enabled:
            p = self.params
            att = attention_unit(x, p["attn.key.w"], p["attn.key.b"],
                                 p["attn.query.w"], p["attn.query.b"])
            self.last_attention = att
            x = att.out
        else:
            self.last_attention = None
        p = self.params
        for i in reversed(range(c.depth)):
            if c.upsample == "transpose":
                x = tn.relu(tn.conv_transpose2d(x, p[f"dec{i}.up.w"], p[f"dec{i}.up.b"]))
            else:
                x = self._block(tn.upsample_nearest(x, 2), f"dec{i}.up")
            x = tn.concat([x, skips[i]], axis=1)
            x = self._block(x, f"dec{i}.0")
            x = self._block(x, f"dec{i}.1")
        logits = tn.conv2d(x, p["head.w"], p["head.b"])
        return tn.sigmoid(logits) * float(c.output_scale)

    __call__ = forward

    def predict(self, raster) -> EarliestOccupancyMap:
        """Single-raster inference in evaluation mode."""
        was = self.training
        self.training = False
        try:
            with tn.no_grad():
                out = self.forward(np.asarray(raster))
        finally:
            self.training = was
        return EarliestOccupancyMap(out.data[0, 0].astype(np.float64), int(self.config.output_scale))

    # bookkeeping -------------------------------------------------------------
    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        d = {f"param/{k}": v.data for k, v in self.params.items()}
        d.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return d

    def load_state_dict(self, d: dict):
        for k, v in d.items():
            kind, name = k.split("/", 1)
            target = self.params[name].data if kind == "param" else self.buffers[name]
            if target.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {target.shape}")
            target[...] = v
