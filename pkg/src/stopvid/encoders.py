"""Frozen toy CLIP-style two-tower model.

Video side: patch embedding, a pre-norm ViT applied per frame, and one
temporal self-attention block that aggregates per-frame CLS states (plus any
inserted prompt tokens) into a single video vector. Text side: a causal
transformer pooled at the end-marker position. Weights are seeded random
draws standing in for pretrained ones and are never updated.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from . import weightstore
from .numcore import ConfigError, ContractError, Tensor

INIT_STD = 0.02

# special token ids shared with the tokenizer
PAD_ID, BEGIN_ID, END_ID = 0, 1, 2


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_v: int = 64
    d: int = 32
    L_v: int = 2
    L_t: int = 2
    n_heads: int = 4
    g: int = 7
    h: int = 4
    w: int = 4
    N_F: int = 8
    vocab_size: int = 64
    max_text_len: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.d_v % self.n_heads or self.d % self.n_heads:
            raise ConfigError(f"d_v={self.d_v} and d={self.d} must be divisible by n_heads={self.n_heads}")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("L_v", "L_t", "seed"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be >= 0, got {v}")
            elif v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")

    @property
    def N_p(self) -> int:
        return self.g * self.g

    @property
    def H(self) -> int:
        return self.g * self.h

    @property
    def W(self) -> int:
        return self.g * self.w

    def header(self) -> list[int]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def from_header(cls, ints: Sequence[int]) -> "ModelConfig":
        names = [f.name for f in fields(cls)]
        if len(ints) < len(names):
            raise ConfigError(f"config header has {len(ints)} ints, need {len(names)}")
        return cls(**dict(zip(names, ints)))

    def digest(self) -> str:
        text = ";".join(f"{k}={v}" for k, v in asdict(self).items())
        return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


def _block_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.ln1_g", (d,)), (f"{prefix}.ln1_b", (d,)),
        (f"{prefix}.qkv_w", (d, 3 * d)), (f"{prefix}.qkv_b", (3 * d,)),
        (f"{prefix}.out_w", (d, d)), (f"{prefix}.out_b", (d,)),
        (f"{prefix}.ln2_g", (d,)), (f"{prefix}.ln2_b", (d,)),
        (f"{prefix}.fc1_w", (d, 4 * d)), (f"{prefix}.fc1_b", (4 * d,)),
        (f"{prefix}.fc2_w", (4 * d, d)), (f"{prefix}.fc2_b", (d,)),
    ]


def weight_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    dv = cfg.d_v
    shapes = [
        ("patch_w", (3 * cfg.h * cfg.w, dv)), ("patch_b", (dv,)),
        ("cls", (dv,)), ("pos_spatial", (cfg.N_p, dv)),
    ]
    for layer in range(cfg.L_v):
        shapes += _block_shapes(f"vit.{layer}", dv)
    shapes += [("pos_temporal", (cfg.N_F, dv))]
    shapes += _block_shapes("temporal", dv)
    shapes += [("vid_ln_g", (dv,)), ("vid_ln_b", (dv,)), ("vid_proj", (dv, cfg.d))]
    shapes += [("tok_emb", (cfg.vocab_size, dv)), ("pos_text", (cfg.max_text_len, dv))]
    for layer in range(cfg.L_t):
        shapes += _block_shapes(f"txt.{layer}", dv)
    shapes += [("txt_ln_g", (dv,)), ("txt_ln_b", (dv,)), ("txt_proj", (dv, cfg.d))]
    return shapes


def _init_value(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf.endswith("_g"):
        return np.ones(shape)
    if leaf.endswith("_b"):
        return np.zeros(shape)
    return INIT_STD * rng.standard_normal(shape)


class FrozenClipModel:
    """Immutable weight container; arrays are made read-only on construction."""

    def __init__(self, config: ModelConfig, weights: dict[str, np.ndarray]):
        expected = dict(weight_shapes(config))
        if set(expected) != set(weights):
            missing = sorted(set(expected) - set(weights))
            extra = sorted(set(weights) - set(expected))
            raise ConfigError(f"weight names do not match config (missing {missing}, extra {extra})")
        self.config = config
        self.weights: dict[str, Tensor] = {}
        for name, _ in weight_shapes(config):
            arr = np.array(weights[name], dtype=np.float64)
            if arr.shape != expected[name]:
                raise ConfigError(f"{name}: shape {arr.shape}, expected {expected[name]}")
            arr.flags.writeable = False
            self.weights[name] = Tensor(arr)
        self.reference_hash = self.content_hash()

    @classmethod
    def from_seed(cls, config: ModelConfig) -> "FrozenClipModel":
        rng = np.random.default_rng(config.seed)
        weights = {name: _init_value(name, shape, rng) for name, shape in weight_shapes(config)}
        return cls(config, weights)

    def __getitem__(self, name: str) -> Tensor:
        return self.weights[name]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.weights.items()}

    def content_hash(self) -> str:
        return weightstore.content_hash(self.arrays())

    def save(self, path: str | Path) -> None:
        weightstore.save(path, self.arrays(), self.config.header())

    @classmethod
    def load(cls, path: str | Path) -> "FrozenClipModel":
        header, tensors = weightstore.load(path)
        return cls(ModelConfig.from_header(header), tensors)


def verify_frozen(model: FrozenClipModel, reference_hash: str | None = None) -> bool:
    ref = model.reference_hash if reference_hash is None else reference_hash
    if any(t.grad_enabled for t in model.weights.values()):
        return False
    return model.content_hash() == ref


# ---------------------------------------------------------------- blocks

def _const(arr: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(arr))


def self_attention(x: Tensor, model: FrozenClipModel, prefix: str,
                   mask: np.ndarray | None = None) -> Tensor:
    """Multi-head self-attention over x[B, T, D] using the block's frozen projections."""
    nb, t, dim = x.shape
    heads = model.config.n_heads
    dh = dim // heads
    qkv = nc.linear(x, model[f"{prefix}.qkv_w"], model[f"{prefix}.qkv_b"])
    qkv = nc.transpose(nc.reshape(qkv, (nb, t, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = nc.scale(nc.matmul(q, nc.swap_last(k)), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = nc.add(scores, _const(np.broadcast_to(mask, scores.shape)))
    att = nc.softmax(scores, axis=-1)
    o = nc.reshape(nc.transpose(nc.matmul(att, v), (0, 2, 1, 3)), (nb, t, dim))
    return nc.linear(o, model[f"{prefix}.out_w"], model[f"{prefix}.out_b"])


def transformer_block(x: Tensor, model: FrozenClipModel, prefix: str,
                      mask: np.ndarray | None = None) -> Tensor:
    """Pre-norm residual block: x + MSA(LN(x)), then x + MLP(LN(x))."""
    m = model
    a = nc.layer_norm(x, m[f"{prefix}.ln1_g"], m[f"{prefix}.ln1_b"])
    x = nc.add(x, self_attention(a, m, prefix, mask))
    b = nc.layer_norm(x, m[f"{prefix}.ln2_g"], m[f"{prefix}.ln2_b"])
    hid = nc.gelu(nc.linear(b, m[f"{prefix}.fc1_w"], m[f"{prefix}.fc1_b"]))
    return nc.add(x, nc.linear(hid, m[f"{prefix}.fc2_w"], m[f"{prefix}.fc2_b"]))


# ---------------------------------------------------------------- video tower

def patchify(video: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """[N_F, 3, H, W] -> [N_F, N_p, 3*h*w], patches in row-major grid order."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[1:] != (3, cfg.H, cfg.W):
        raise ConfigError(f"video shape {video.shape} does not match config (*, 3, {cfg.H}, {cfg.W})")
    nf = video.shape[0]
    x = video.reshape(nf, 3, cfg.g, cfg.h, cfg.g, cfg.w)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(nf, cfg.N_p, 3 * cfg.h * cfg.w)


def patch_embed(video, model: FrozenClipModel) -> Tensor:
    """Video [N_F, 3, H, W] -> patch tokens [N_F, N_p, d_v] with spatial positions added."""
    cfg = model.config
    data = video.data if isinstance(video, Tensor) else video
    patches = Tensor(patchify(data, cfg))
    tokens = nc.linear(patches, model["patch_w"], model["patch_b"])
    pos = np.broadcast_to(model["pos_spatial"].data, tokens.shape)
    return nc.add(tokens, _const(pos))


def attn_cls_weights(h_cls: Tensor, h_i: Tensor, model: FrozenClipModel, layer: int = 0) -> Tensor:
    """Head-averaged attention of the CLS query over the patches of one or more frames.

    ``h_i`` is [N_p, d_v] or [N_F, N_p, d_v]; each returned row sums to one.
    """
    cfg = model.config
    if not 0 <= layer < cfg.L_v:
        raise ConfigError(f"layer {layer} out of range for L_v={cfg.L_v}")
    w = model[f"vit.{layer}.qkv_w"].data
    b = model[f"vit.{layer}.qkv_b"].data
    dv, heads = cfg.d_v, cfg.n_heads
    dh = dv // heads
    patches = h_i.data
    q = (h_cls.data @ w[:, :dv] + b[:dv]).reshape(heads, dh)
    k = (patches @ w[:, dv:2 * dv] + b[dv:2 * dv])
    k = k.reshape(*patches.shape[:-1], heads, dh)
    scores = np.einsum("hd,...phd->...hp", q, k) / math.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    att = e / e.sum(axis=-1, keepdims=True)
    return Tensor(att.mean(axis=-2))


def vit_frames_forward(tokens: Tensor, model: FrozenClipModel) -> tuple[Tensor, Tensor]:
    """Run the frame ViT over a stack of frames [..., N_p, d_v].

    Returns (cls_out [..., d_v], tokens_out [..., N_p, d_v]).
    """
    lead = tokens.shape[:-2]
    n_p, dv = tokens.shape[-2:]
    nb = int(np.prod(lead)) if lead else 1
    x = nc.reshape(tokens, (nb, n_p, dv))
    cls = np.broadcast_to(model["cls"].data, (nb, 1, dv))
    x = nc.concat([_const(cls), x], axis=1)
    for layer in range(model.config.L_v):
        x = transformer_block(x, model, f"vit.{layer}")
    cls_out = nc.reshape(x[:, 0, :], (*lead, dv))
    tokens_out = nc.reshape(x[:, 1:, :], (*lead, n_p, dv))
    return cls_out, tokens_out


def vit_frame_forward(tokens: Tensor, model: FrozenClipModel) -> tuple[Tensor, Tensor]:
    """Single frame [N_p, d_v] -> (cls_out [d_v], tokens_out [N_p, d_v])."""
    return vit_frames_forward(tokens, model)


def temporal_positions(counts: Sequence[int], model: FrozenClipModel) -> np.ndarray:
    """Positional rows for the interleaved [CLS_1, prompts_1, CLS_2, ...] sequence.

    Frame i takes row i of the temporal table; the t-th of n prompts between
    frames i and i+1 takes the linear interpolation at i + t / (n + 1).
    """
    table = model["pos_temporal"].data
    nf = len(counts) + 1
    if nf > table.shape[0]:
        raise ConfigError(f"{nf} frames exceed the temporal table ({table.shape[0]})")
    rows = []
    for i in range(nf):
        rows.append(table[i])
        if i < nf - 1:
            n = counts[i]
            for t in range(1, n + 1):
                f = t / (n + 1)
                rows.append((1.0 - f) * table[i] + f * table[i + 1])
    return np.stack(rows)


def interleave(frame_cls: Tensor, prompts: Sequence[Tensor | None]) -> tuple[Tensor, list[int]]:
    """Build [CLS_1, p_1, CLS_2, p_2, ..., CLS_NF]; returns the sequence and frame slots."""
    nf = frame_cls.shape[0]
    if len(prompts) != nf - 1:
        raise ContractError(f"need {nf - 1} prompt groups for {nf} frames, got {len(prompts)}")
    pieces: list[Tensor] = []
    slots: list[int] = []
    pos = 0
    for i in range(nf):
        pieces.append(frame_cls[i:i + 1])
        slots.append(pos)
        pos += 1
        if i < nf - 1 and prompts[i] is not None and prompts[i].shape[0] > 0:
            pieces.append(prompts[i])
            pos += prompts[i].shape[0]
    seq = pieces[0] if len(pieces) == 1 else nc.concat(pieces, axis=0)
    return seq, slots


def temporal_aggregate_seq(seq: Tensor, frame_slots: Sequence[int], positions: np.ndarray,
                           model: FrozenClipModel) -> Tensor:
    """MSA block over an assembled sequence [L, d_v]; mean-pool frame slots; project to d."""
    if seq.shape[0] == 0:
        raise ContractError("temporal_aggregate needs a non-empty sequence")
    if positions.shape != seq.shape:
        raise ContractError(f"positions {positions.shape} vs sequence {seq.shape}")
    x = nc.add(seq, _const(positions))
    x = transformer_block(nc.reshape(x, (1, *x.shape)), model, "temporal")
    x = nc.reshape(x, seq.shape)
    slots = list(frame_slots)
    if slots == list(range(seq.shape[0])):
        pooled = nc.mean(x, axis=0)
    else:
        pooled = nc.mean(x[np.asarray(slots)], axis=0)
    pooled = nc.layer_norm(pooled, model["vid_ln_g"], model["vid_ln_b"])
    return nc.reshape(nc.linear(nc.reshape(pooled, (1, -1)), model["vid_proj"]), (model.config.d,))


def temporal_aggregate(sequence: Sequence[Tensor] | Tensor, model: FrozenClipModel,
                       counts: Sequence[int] | None = None) -> Tensor:
    """Aggregate per-frame CLS states and inserted prompt tokens into v [d].

    ``sequence`` is the interleaved list [CLS_1, p, ..., CLS_2, ...] of d_v
    vectors. ``counts[i]`` is the number of prompt tokens between frames i and
    i+1; ``None`` means the sequence holds frame tokens only.
    """
    if isinstance(sequence, Tensor):
        seq = sequence
    else:
        if len(sequence) == 0:
            raise ContractError("temporal_aggregate needs a non-empty sequence")
        seq = nc.stack(list(sequence), axis=0)
    if seq.shape[0] == 0:
        raise ContractError("temporal_aggregate needs a non-empty sequence")
    if counts is None:
        counts = [0] * (seq.shape[0] - 1)
    counts = [int(c) for c in counts]
    if seq.shape[0] != len(counts) + 1 + sum(counts):
        raise ContractError(f"sequence length {seq.shape[0]} does not match prompt counts {counts}")
    slots, pos = [], 0
    for i in range(len(counts) + 1):
        slots.append(pos)
        pos += 1 + (counts[i] if i < len(counts) else 0)
    return temporal_aggregate_seq(seq, slots, temporal_positions(counts, model), model)


def baseline_video_encode(video, model: FrozenClipModel) -> Tensor:
    """Unprompted encoding: patch embed, per-frame ViT, mean-pooled temporal block."""
    tokens = patch_embed(video, model)
    cls_out, _ = vit_frames_forward(tokens, model)
    return temporal_aggregate(cls_out, model)


# ---------------------------------------------------------------- text tower

def text_encode(token_ids: Sequence[int], model: FrozenClipModel, end_id: int | None = END_ID) -> Tensor:
    """Causal text transformer pooled at the end marker (the last token when absent)."""
    cfg = model.config
    ids = [int(i) for i in token_ids]
    if not ids:
        raise InputError("empty token sequence")
    if len(ids) > cfg.max_text_len:
        raise InputError(f"{len(ids)} tokens exceed max_text_len={cfg.max_text_len}")
    bad = [i for i in ids if not 0 <= i < cfg.vocab_size]
    if bad:
        raise InputError(f"token ids out of vocabulary: {bad}")
    n = len(ids)
    pool = n - 1
    if end_id is not None and end_id in ids:
        pool = ids.index(end_id)
    x = Tensor(model["tok_emb"].data[ids] + model["pos_text"].data[:n])
    mask = np.triu(np.full((n, n), -np.inf), k=1)
    x = nc.reshape(x, (1, n, cfg.d_v))
    for layer in range(cfg.L_t):
        x = transformer_block(x, model, f"txt.{layer}", mask)
    state = nc.layer_norm(x[0, pool:pool + 1, :], model["txt_ln_g"], model["txt_ln_b"])
    return nc.reshape(nc.linear(state, model["txt_proj"]), (cfg.d,))
