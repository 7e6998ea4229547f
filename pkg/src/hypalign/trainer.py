"""Deterministic training loop: AdamW with linear warmup/decay driving the
encoder -> aggregation -> dual-loss pipeline end to end.

Everything downstream of (seed, config, dataset) is reproducible bit for bit:
shuffling uses a dedicated PCG64 generator, gradient accumulation follows a
fixed index order, and metric lines are formatted with full-precision repr.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .aggregation import ModalityScale, aggregate_batch
from .autodiff import Tape, Tensor
from .config import TrainConfig
from .data import PairDataset
from .encoder import EncoderParams, encode, init_encoder
from .errors import FormatError, NumericError, SaturationError, UsageError
from .evaluation import containment_rate, evaluate
from .losses import BatchPairing, total_loss

CKPT_MAGIC = b"H2CK"
CKPT_VERSION = 1


# ---------------------------------------------------------------------------
# model state
# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    """All learnable state: two encoder stacks (or one shared), the modality
    scales and the log-curvature."""

    cfg: TrainConfig
    d_in: int
    enc_t: EncoderParams
    enc_p: EncoderParams
    scale_t: ModalityScale
    scale_p: ModalityScale
    log_c: Tensor

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c.data))

    def named_params(self) -> dict[str, Tensor]:
        params = dict(self.enc_t.params)
        if self.enc_p is not self.enc_t:
            params.update(self.enc_p.params)
        params["scale_t.log_alpha"] = self.scale_t.log_alpha
        params["scale_p.log_alpha"] = self.scale_p.log_alpha
        params["log_c"] = self.log_c
        return params

    def embed(self, tokens: np.ndarray, modality: str) -> np.ndarray:
        """Map raw token stacks (N, L, D_in) to root points (N, d+1), no grad."""
        enc = self.enc_t if modality == "text" else self.enc_p
        scale = self.scale_t if modality == "text" else self.scale_p
        z = encode(Tensor(tokens), enc)
        roots, _ = aggregate_batch(z, scale, ad.exp(self.log_c))
        return roots.data


def init_model(cfg: TrainConfig, d_in: int) -> ModelState:
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    enc_t = init_encoder(d_in, cfg.d, cfg.layers, cfg.heads, rng, prefix="enc_t")
    if cfg.shared_encoder:
        enc_p = enc_t
    else:
        enc_p = init_encoder(d_in, cfg.d, cfg.layers, cfg.heads, rng, prefix="enc_p")
    return ModelState(
        cfg=cfg, d_in=d_in, enc_t=enc_t, enc_p=enc_p,
        scale_t=ModalityScale(Tensor(np.log(cfg.alpha_init), requires_grad=True)),
        scale_p=ModalityScale(Tensor(np.log(cfg.alpha_init), requires_grad=True)),
        log_c=Tensor(np.log(cfg.c_init), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over the warmup span, then linear decay lr -> 0."""
    if step < 0 or step > total_steps:
        raise UsageError(f"lr_at: step {step} outside [0, {total_steps}]")
    warmup = int(round(cfg.warmup_fraction * total_steps))
    if warmup > 0 and step <= warmup:
        return cfg.lr * step / warmup
    if total_steps == warmup:
        return cfg.lr
    return cfg.lr * (total_steps - step) / (total_steps - warmup)


def _decayable(name: str, data: np.ndarray) -> bool:
    # decoupled decay on projection matrices only; biases, norm parameters and
    # the geometric scalars (log_c, log_alpha) are left undamped
    return data.ndim >= 2


def adamw_step(params: dict[str, Tensor], state: OptimizerState, lr_t: float,
               cfg: TrainConfig) -> None:
    """One bias-corrected AdamW update with decoupled weight decay."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data = p.data - lr_t * update
        if cfg.weight_decay > 0.0 and _decayable(name, p.data):
            p.data = p.data * (1.0 - lr_t * cfg.weight_decay)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _format_metrics(epoch: int, model: ModelState, l_tot, l_cont, l_ord,
                    cont_rate: float) -> str:
    vals = {
        "epoch": epoch,
        "loss": l_tot,
        "loss_cont": l_cont,
        "loss_ord": l_ord,
        "c": model.c,
        "alpha_t": model.scale_t.alpha,
        "alpha_p": model.scale_p.alpha,
        "containment": cont_rate,
    }
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in vals.items())


def train(dataset: PairDataset, cfg: TrainConfig, log_path=None):
    """Run the full loop; returns (model, optimizer_state, metric lines)."""
    model = init_model(cfg, dataset.width)
    opt = OptimizerState()
    params = model.named_params()
    loss_cfg = cfg.loss_config()
    rng = np.random.default_rng(np.random.PCG64(cfg.seed + 1))
    n = len(dataset)
    n_batches = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    lines: list[str] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            ep_tot = ep_cont = ep_ord = 0.0
            for b in range(n_batches):
                idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                pairing = BatchPairing.from_groups(
                    [dataset.group_ids[i] for i in idx])
                lr_t = lr_at(opt.step, total_steps, cfg)
                try:
                    with Tape() as tape:
                        c = ad.exp(model.log_c)
                        z_t = encode(Tensor(dataset.text[idx]), model.enc_t)
                        z_p = encode(Tensor(dataset.pc[idx]), model.enc_p)
                        h_t, _ = aggregate_batch(z_t, model.scale_t, c)
                        h_p, _ = aggregate_batch(z_p, model.scale_p, c)
                        l_tot, l_cont, l_ord = total_loss(
                            h_t, h_p, pairing, loss_cfg, c)
                        for p in params.values():
                            p.zero_grad()
                        tape.backward(l_tot)
                except SaturationError as e:
                    raise SaturationError(
                        f"epoch {epoch}, batch {b}: {e}") from e
                adamw_step(params, opt, lr_t, cfg)
                ep_tot += l_tot.item()
                ep_cont += l_cont.item()
                ep_ord += l_ord.item()
            h_t_all = model.embed(dataset.text, "text")
            h_p_all = model.embed(dataset.pc, "pointcloud")
            full_pairing = BatchPairing.from_groups(dataset.group_ids)
            cont_rate = containment_rate(h_t_all, h_p_all, full_pairing,
                                         cfg.K, model.c)
            line = _format_metrics(epoch, model, ep_tot / n_batches,
                                   ep_cont / n_batches, ep_ord / n_batches,
                                   cont_rate)
            lines.append(line)
            if log_fh:
                log_fh.write(line + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return model, opt, lines


def evaluate_model(model: ModelState, dataset: PairDataset,
                   ks=(1, 5, 10)) -> dict:
    h_t = model.embed(dataset.text, "text")
    h_p = model.embed(dataset.pc, "pointcloud")
    pairing = BatchPairing.from_groups(dataset.group_ids)
    metrics = evaluate(h_t, h_p, pairing, model.c, ks=tuple(ks))
    metrics["containment"] = containment_rate(h_t, h_p, pairing,
                                              model.cfg.K, model.c)
    return metrics


# ---------------------------------------------------------------------------
# checkpoint I/O (versioned, little-endian, deterministic byte layout)
# ---------------------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_array(a: np.ndarray) -> bytes:
    out = struct.pack("<I", a.ndim)
    out += struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b""
    out += np.ascontiguousarray(a, dtype="<f8").tobytes()
    return out


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"checkpoint truncated at byte offset {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self) -> np.ndarray:
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8")
        return data.reshape(shape).astype(np.float64)


def save_checkpoint(path, model: ModelState, opt: OptimizerState) -> None:
    cfg_dict = dataclasses.asdict(model.cfg)
    params = model.named_params()
    blob = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION)
    blob += _pack_str(json.dumps(cfg_dict, sort_keys=True))
    blob += struct.pack("<I", model.d_in)
    blob += struct.pack("<Q", opt.step)
    blob += struct.pack("<I", len(params))
    for name in sorted(params):
        blob += _pack_str(name)
        blob += _pack_array(params[name].data)
        blob += _pack_array(opt.m.get(name, np.zeros_like(params[name].data)))
        blob += _pack_array(opt.v.get(name, np.zeros_like(params[name].data)))
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Restore (model, optimizer_state) from a checkpoint file."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic at byte offset 0")
    version = r.u32()
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    cfg = TrainConfig(**json.loads(r.string()))
    d_in = r.u32()
    step = struct.unpack("<Q", r.take(8))[0]
    n_params = r.u32()
    model = init_model(cfg, d_in)
    params = model.named_params()
    opt = OptimizerState(step=step)
    seen = set()
    for _ in range(n_params):
        name = r.string()
        data = r.array()
        m = r.array()
        v = r.array()
        if name not in params:
            raise FormatError(f"{path}: unknown parameter {name!r}")
        if params[name].data.shape != data.shape:
            raise FormatError(f"{path}: shape mismatch for parameter {name!r}")
        params[name].data = data
        opt.m[name] = m
        opt.v[name] = v
        seen.add(name)
    if seen != set(params):
        raise FormatError(f"{path}: checkpoint is missing parameters")
    return model, opt
