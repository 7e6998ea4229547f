"""Toy-scale context encoder: input projection + pre-layer-norm attention blocks.

Each block computes ``x + MHA(LN(x))`` then ``x + FFN(LN(x))``. There are no
positional encodings, so the encoder is exactly permutation-equivariant over
the token axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import UsageError


@dataclass
class FeatureSequence:
    """Per-instance matrix of L local features of width D_in."""

    tokens: np.ndarray  # (L, D_in)
    modality: str       # "text" or "pointcloud"

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape[0] < 1:
            raise UsageError("FeatureSequence: tokens must be a non-empty L x D matrix")
        if not np.all(np.isfinite(tokens)):
            raise UsageError("FeatureSequence: tokens must be finite")
        if self.modality not in ("text", "pointcloud"):
            raise UsageError(f"FeatureSequence: unknown modality {self.modality!r}")
        object.__setattr__(self, "tokens", tokens)


@dataclass
class EncoderParams:
    """Parameter set for one encoder stack; tensors live in ``params``."""

    d_in: int
    d: int
    layers: int
    heads: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise UsageError("EncoderParams: d must be divisible by heads")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder(d_in: int, d: int, layers: int, heads: int,
                 rng: np.random.Generator, prefix: str = "enc") -> EncoderParams:
    """Xavier-uniform projections, unit gains and zero biases for the norms."""
    enc = EncoderParams(d_in=d_in, d=d, layers=layers, heads=heads)
    p = enc.params

    def param(name, data):
        p[f"{prefix}.{name}"] = Tensor(data, requires_grad=True)

    param("proj.W", _xavier(rng, d_in, d))
    param("proj.b", np.zeros(d))
    for i in range(layers):
        param(f"block{i}.ln1.g", np.ones(d))
        param(f"block{i}.ln1.b", np.zeros(d))
        param(f"block{i}.Wq", _xavier(rng, d, d))
        param(f"block{i}.Wk", _xavier(rng, d, d))
        param(f"block{i}.Wv", _xavier(rng, d, d))
        param(f"block{i}.Wo", _xavier(rng, d, d))
        param(f"block{i}.ln2.g", np.ones(d))
        param(f"block{i}.ln2.b", np.zeros(d))
        param(f"block{i}.ffn.W1", _xavier(rng, d, 4 * d))
        param(f"block{i}.ffn.b1", np.zeros(4 * d))
        param(f"block{i}.ffn.W2", _xavier(rng, 4 * d, d))
        param(f"block{i}.ffn.b2", np.zeros(d))
    enc._prefix = prefix
    return enc


def _attention(x: Tensor, p: dict, pre: str, heads: int) -> Tensor:
    # x: (B, L, d); multi-head scaled dot-product with scale 1/sqrt(d/heads)
    B, L, d = x.shape
    dh = d // heads
    q = x @ p[pre + ".Wq"]
    k = x @ p[pre + ".Wk"]
    v = x @ p[pre + ".Wv"]

    def split(t):  # (B, L, d) -> (B, H, L, dh)
        return ad.transpose(ad.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(q), split(k), split(v)
    scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = attn @ v  # (B, H, L, dh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    return ctx @ p[pre + ".Wo"]


def encode(x: Tensor, enc: EncoderParams) -> Tensor:
    """Run a batch (B, L, D_in) through the stack; returns (B, L, d)."""
    if x.ndim != 3 or x.shape[-1] != enc.d_in:
        raise UsageError(
            f"encode: expected input (B, L, {enc.d_in}), got {x.shape}")
    p = enc.params
    prefix = getattr(enc, "_prefix", "enc")
    h = x @ p[f"{prefix}.proj.W"] + p[f"{prefix}.proj.b"]
    for i in range(enc.layers):
        pre = f"{prefix}.block{i}"
        a_in = ad.layer_norm(h, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
        h = h + _attention(a_in, p, pre, enc.heads)
        f_in = ad.layer_norm(h, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
        f1 = ad.gelu(f_in @ p[pre + ".ffn.W1"] + p[pre + ".ffn.b1"])
        h = h + (f1 @ p[pre + ".ffn.W2"] + p[pre + ".ffn.b2"])
    return h


def encode_sequence(seq: FeatureSequence, enc: EncoderParams) -> Tensor:
    """Single-sequence convenience wrapper; returns (L, d)."""
    out = encode(Tensor(seq.tokens[None, :, :]), enc)
    return ad.reshape(out, out.shape[1:])
