"""Intra-frame spatial prompting and inter-frame temporal prompting.

Spatial stage: per-token motion energy from a 3-D conv over the token grid
is mixed with the frozen CLS attention map, the top ``N_s`` patches of each
frame are selected, and a token-wise prompter looking at the previous,
current and next frame writes additive prompts onto those patches.

Temporal stage: region-weighted energy of conv-filtered frame differences
sets how many prompt tokens are inserted between each pair of frames; a
prompter with one output head per count generates them, and they are
interleaved with the per-frame CLS states before the temporal block.

Region masks and prompt counts are hard decisions and carry no gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoders import (
    FrozenClipModel,
    attn_cls_weights,
    interleave,
    patch_embed,
    temporal_aggregate_seq,
    temporal_positions,
    vit_frames_forward,
)
from .numcore import ConfigError, ContractError, DimensionError, Tensor


@dataclass(frozen=True)
class StopHyper:
    alpha: float = 0.4
    beta: float = 4.0
    eta: int = 12
    N_s: int = 6
    tau: float = 0.07
    N_t_max: int | None = None  # defaults to eta

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if int(self.eta) != self.eta or self.eta < 1:
            raise ConfigError(f"eta must be an integer >= 1, got {self.eta}")
        if self.N_s < 1:
            raise ConfigError(f"N_s must be >= 1, got {self.N_s}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.N_t_max is not None and self.N_t_max < 1:
            raise ConfigError(f"N_t_max must be >= 1, got {self.N_t_max}")

    @property
    def max_prompts(self) -> int:
        return int(self.eta if self.N_t_max is None else self.N_t_max)


# ---------------------------------------------------------------- trainable state

def param_shapes(d_v: int, max_prompts: int, kernel: int = 3) -> dict[str, tuple[int, ...]]:
    k = kernel
    shapes = {
        "conv_s.w": (d_v, d_v, k, k, k), "conv_s.b": (d_v,),
        "conv_t.w": (d_v, d_v, k, k, k), "conv_t.b": (d_v,),
        "prompter_s.w1": (3 * d_v, d_v), "prompter_s.b1": (d_v,),
        "prompter_s.w2": (d_v, d_v), "prompter_s.b2": (d_v,),
        "prompter_t.w1": (d_v, d_v), "prompter_t.b1": (d_v,),
        "prompter_t.w2": (d_v, d_v), "prompter_t.b2": (d_v,),
    }
    for n in range(1, max_prompts + 1):
        shapes[f"prompter_t.head{n}.w"] = (d_v, n * d_v)
        shapes[f"prompter_t.head{n}.b"] = (n * d_v,)
    return shapes


@dataclass
class StopParams:
    """The only trainable tensors: two 3-D convs and the two prompters."""

    tensors: dict[str, Tensor]
    d_v: int
    max_prompts: int
    kernel: int = 3

    def __post_init__(self):
        expected = param_shapes(self.d_v, self.max_prompts, self.kernel)
        if set(expected) != set(self.tensors):
            raise ConfigError("StopParams tensor names do not match the configured layout")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ConfigError(f"{name}: shape {t.shape}, expected {shape}")
            if not t.grad_enabled:
                self.tensors[name] = Tensor(t.data, grad_enabled=True)

    @classmethod
    def zeros(cls, d_v: int, max_prompts: int, kernel: int = 3) -> "StopParams":
        shapes = param_shapes(d_v, max_prompts, kernel)
        return cls({k: Tensor(np.zeros(s), grad_enabled=True) for k, s in shapes.items()},
                   d_v, max_prompts, kernel)

    @classmethod
    def init(cls, d_v: int, max_prompts: int, seed: int, kernel: int = 3,
             conv_std: float | None = None, out_std: float = 0.02) -> "StopParams":
        """Seeded initialization.

        Hidden layers use 1/sqrt(fan_in); prompter output layers start small
        (``out_std``) so training begins close to the unprompted model.
        """
        rng = np.random.default_rng(seed)
        out = {}
        hidden = ("prompter_s.w1", "prompter_t.w1", "prompter_t.w2")
        for name, shape in param_shapes(d_v, max_prompts, kernel).items():
            if name.rsplit(".", 1)[1].startswith("b"):
                out[name] = np.zeros(shape)
                continue
            if name.startswith("conv"):
                std = conv_std if conv_std is not None else 1.0 / math.sqrt(d_v * kernel ** 3)
            elif name in hidden:
                std = 1.0 / math.sqrt(shape[0])
            else:
                std = out_std
            out[name] = std * rng.standard_normal(shape)
        return cls({k: Tensor(v, grad_enabled=True) for k, v in out.items()}, d_v, max_prompts, kernel)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def replace(self, tensors: dict[str, Tensor]) -> "StopParams":
        return StopParams(dict(tensors), self.d_v, self.max_prompts, self.kernel)

    def collect_grads(self, grad_map: dict[int, Tensor]) -> dict[str, Tensor]:
        """Name-keyed gradients; tensors the loss never touched get zeros."""
        return {name: grad_map.get(t.node_id, Tensor(np.zeros(t.shape)))
                for name, t in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


# ---------------------------------------------------------------- spatial stage

def _token_grid(tokens: Tensor) -> Tensor:
    """[..., N_F, N_p, d] -> [..., N_F, g, g, d] (channels-last grid)."""
    n_p = tokens.shape[-2]
    g = math.isqrt(n_p)
    if g * g != n_p:
        raise DimensionError(f"{n_p} patches do not form a square grid")
    return nc.reshape(tokens, (*tokens.shape[:-2], g, g, tokens.shape[-1]))


def _mean_square_last(x: Tensor) -> Tensor:
    return nc.mean(nc.square(x), axis=-1)


def temporal_dynamics(tokens: Tensor, conv_w: Tensor, conv_b: Tensor) -> Tensor:
    """Per-token motion energy M [..., N_F, N_p]: mean over channels of the squared conv response."""
    grid = _token_grid(tokens)
    filtered = nc.conv3d(grid, conv_w, conv_b, channels_last=True)
    return nc.reshape(_mean_square_last(filtered), tokens.shape[:-1])


def discriminative_scores(A: Tensor, M: Tensor, alpha: float) -> Tensor:
    if A.shape != M.shape:
        raise DimensionError(f"attention {A.shape} vs dynamics {M.shape}")
    return nc.add(nc.scale(A, alpha), nc.scale(M, 1.0 - alpha))


def select_regions(scores, N_s: int) -> np.ndarray:
    """Binary top-``N_s`` mask along the last axis; ties go to the lower patch index."""
    w = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    n_p = w.shape[-1]
    if not 1 <= N_s <= n_p:
        raise ConfigError(f"N_s={N_s} outside [1, {n_p}]")
    order = np.argsort(-w, axis=-1, kind="stable")[..., :N_s]
    mask = np.zeros(w.shape)
    np.put_along_axis(mask, order, 1.0, axis=-1)
    return mask


def _neighbor_stack(tokens: Tensor) -> Tensor:
    """[..., N_F, N_p, d] -> [..., N_F, N_p, 3d] as [h_{i-1}; h_i; h_{i+1}] with edge replication."""
    nf = tokens.shape[-3]
    if nf < 1:
        raise ContractError("need at least one frame")
    idx_prev = np.r_[0, np.arange(nf - 1)]
    idx_next = np.r_[np.arange(1, nf), nf - 1]
    lead = (slice(None),) * (tokens.ndim - 3)
    prev = tokens[lead + (idx_prev,)]
    nxt = tokens[lead + (idx_next,)]
    return nc.concat([prev, tokens, nxt], axis=-1)


def generate_spatial_prompts(tokens: Tensor, params: StopParams) -> Tensor:
    """Token-wise two-layer MLP over temporal neighbours; output has the shape of ``tokens``."""
    x = _neighbor_stack(tokens)
    hid = nc.gelu(nc.linear(x, params["prompter_s.w1"], params["prompter_s.b1"]))
    return nc.linear(hid, params["prompter_s.w2"], params["prompter_s.b2"])


def apply_spatial_prompts(tokens: Tensor, prompts: Tensor, mask) -> Tensor:
    """tokens + mask * prompts; rows with mask 0 are left bitwise unchanged."""
    if tokens.shape != prompts.shape:
        raise DimensionError(f"tokens {tokens.shape} vs prompts {prompts.shape}")
    r = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if r.shape != tokens.shape[:-1]:
        raise DimensionError(f"mask {r.shape} vs tokens {tokens.shape}")
    if not r.any():
        return tokens
    full = np.broadcast_to(r[..., None], tokens.shape)
    return nc.add(tokens, nc.mul(prompts, Tensor(np.ascontiguousarray(full))))


# ---------------------------------------------------------------- temporal stage

def frame_deltas(h_s: Tensor) -> Tensor:
    """[..., N_F, N_p, d] -> [..., N_F - 1, N_p, d] with delta_i = h_{i+1} - h_i."""
    nf = h_s.shape[-3]
    if nf < 2:
        raise ContractError(f"frame_deltas needs at least 2 frames, got {nf}")
    lead = (slice(None),) * (h_s.ndim - 3)
    return nc.sub(h_s[lead + (slice(1, None),)], h_s[lead + (slice(None, -1),)])


def inter_frame_variation(deltas: Tensor, conv_w: Tensor, conv_b: Tensor, mask, beta: float) -> Tensor:
    """Region-weighted variation per gap, W^t [..., N_F - 1].

    ``mask`` is the full [..., N_F, N_p] region mask; gap i uses the mask of
    its earlier frame.
    """
    r = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    n_gaps, n_p, d_v = deltas.shape[-3:]
    if r.shape[-2] == n_gaps + 1:
        r = r[..., :-1, :]
    if r.shape != deltas.shape[:-1]:
        raise DimensionError(f"mask {r.shape} vs deltas {deltas.shape}")
    grid = _token_grid(deltas)
    filtered = nc.conv3d(grid, conv_w, conv_b, channels_last=True)
    energy = nc.reshape(nc.sum(nc.square(filtered), axis=-1), deltas.shape[:-1])
    weights = Tensor(1.0 + beta * r)
    return nc.scale(nc.sum(nc.mul(energy, weights), axis=-1), 1.0 / (n_p * d_v))


def prompt_counts(W_t, eta: int, N_t_max: int | None = None) -> np.ndarray:
    """ceil(eta * min(W^t, 1)) clamped to [0, N_t_max] (integer array)."""
    if eta < 1:
        raise ConfigError(f"eta must be >= 1, got {eta}")
    cap = eta if N_t_max is None else N_t_max
    w = np.asarray(W_t.data if isinstance(W_t, Tensor) else W_t, dtype=np.float64)
    counts = np.ceil(eta * np.minimum(np.maximum(w, 0.0), 1.0))
    return np.clip(counts, 0, cap).astype(np.int64)


def _prompter_trunk(pooled: Tensor, params: StopParams) -> Tensor:
    hid = nc.gelu(nc.linear(pooled, params["prompter_t.w1"], params["prompter_t.b1"]))
    return nc.gelu(nc.linear(hid, params["prompter_t.w2"], params["prompter_t.b2"]))


def generate_temporal_prompts(deltas: Tensor, counts: Sequence[int], params: StopParams) -> list[Tensor | None]:
    """One [N^t_i, d_v] prompt block per gap (``None`` where N^t_i == 0).

    ``deltas`` is [N_F - 1, N_p, d_v]; each gap is mean-pooled over patches,
    passed through the shared trunk, then through output head N^t_i.
    """
    counts = [int(c) for c in np.asarray(counts).reshape(-1)]
    n_gaps = deltas.shape[0]
    if len(counts) != n_gaps:
        raise ContractError(f"{len(counts)} counts for {n_gaps} gaps")
    return _temporal_prompts_flat(nc.reshape(deltas, (n_gaps, *deltas.shape[1:])), counts, params)


def _temporal_prompts_flat(deltas: Tensor, counts: list[int], params: StopParams) -> list[Tensor | None]:
    """Same as :func:`generate_temporal_prompts` over an arbitrary flat list of gaps."""
    for c in counts:
        if c < 0 or c > params.max_prompts:
            raise ContractError(f"prompt count {c} outside [0, {params.max_prompts}]")
    out: list[Tensor | None] = [None] * len(counts)
    active = [i for i, c in enumerate(counts) if c > 0]
    if not active:
        return out
    d_v = deltas.shape[-1]
    pooled = nc.mean(deltas[np.asarray(active)], axis=1)
    trunk = _prompter_trunk(pooled, params)
    by_count: dict[int, list[int]] = {}
    for row, gap in enumerate(active):
        by_count.setdefault(counts[gap], []).append(row)
    for n, rows in sorted(by_count.items()):
        feats = trunk[np.asarray(rows)]
        tokens = nc.linear(feats, params[f"prompter_t.head{n}.w"], params[f"prompter_t.head{n}.b"])
        tokens = nc.reshape(tokens, (len(rows), n, d_v))
        for j, row in enumerate(rows):
            out[active[row]] = tokens[j]
    return out


# ---------------------------------------------------------------- full pipeline

@dataclass
class Diagnostics:
    A: np.ndarray
    M: np.ndarray
    W_s: np.ndarray
    r: np.ndarray
    W_t: np.ndarray
    counts: np.ndarray
    seq_len: list[int] = field(default_factory=list)

    def video(self, b: int) -> "Diagnostics":
        return Diagnostics(self.A[b], self.M[b], self.W_s[b], self.r[b], self.W_t[b],
                           self.counts[b], [self.seq_len[b]])


def stop_encode_batch(videos, model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                      intra_on: bool = True, inter_on: bool = True,
                      masks: np.ndarray | None = None,
                      counts: np.ndarray | None = None) -> tuple[Tensor, Diagnostics]:
    """Encode a batch of videos [B, N_F, 3, H, W] into V [B, d].

    ``masks`` / ``counts`` override the discrete decisions (used to hold them
    fixed in gradient checks). With ``intra_on`` false no spatial prompts are
    written (the region mask is still computed for the variation weights);
    with ``inter_on`` false every gap gets zero prompt tokens.
    """
    cfg = model.config
    vids = np.asarray(videos.data if isinstance(videos, Tensor) else videos, dtype=np.float64)
    if vids.ndim != 5:
        raise DimensionError(f"expected [B, N_F, 3, H, W], got {vids.shape}")
    nb, nf = vids.shape[:2]
    if hyper.N_s > cfg.N_p:
        raise ConfigError(f"N_s={hyper.N_s} exceeds N_p={cfg.N_p}")
    if hyper.max_prompts != params.max_prompts:
        raise ConfigError(f"hyper allows {hyper.max_prompts} prompts, params have {params.max_prompts} heads")

    with nc.no_grad():
        tokens = patch_embed(vids.reshape(nb * nf, *vids.shape[2:]), model)
        tokens = nc.reshape(tokens, (nb, nf, cfg.N_p, cfg.d_v))
        A = attn_cls_weights(model["cls"], tokens, model, layer=0) if cfg.L_v > 0 else \
            Tensor(np.full((nb, nf, cfg.N_p), 1.0 / cfg.N_p))
        M = temporal_dynamics(tokens, params["conv_s.w"], params["conv_s.b"])
        W_s = discriminative_scores(A, M, hyper.alpha)
    r = select_regions(W_s, hyper.N_s) if masks is None else np.asarray(masks, dtype=np.float64)
    if r.shape != (nb, nf, cfg.N_p):
        raise DimensionError(f"mask shape {r.shape}, expected {(nb, nf, cfg.N_p)}")

    if intra_on:
        p_s = generate_spatial_prompts(tokens, params)
        h_s = apply_spatial_prompts(tokens, p_s, r)
    else:
        h_s = tokens

    cls_out, _ = vit_frames_forward(h_s, model)  # [B, N_F, d_v]

    if nf >= 2:
        deltas = frame_deltas(h_s)
        with nc.no_grad():
            W_t = inter_frame_variation(deltas, params["conv_t.w"], params["conv_t.b"], r, hyper.beta)
        if counts is not None:
            n_t = np.asarray(counts, dtype=np.int64).reshape(nb, nf - 1)
        elif inter_on:
            n_t = prompt_counts(W_t, hyper.eta, hyper.max_prompts)
        else:
            n_t = np.zeros((nb, nf - 1), dtype=np.int64)
        flat_counts = [int(c) for c in n_t.reshape(-1)]
        flat_deltas = nc.reshape(deltas, (nb * (nf - 1), cfg.N_p, cfg.d_v))
        prompts = _temporal_prompts_flat(flat_deltas, flat_counts, params)
        W_t_arr = W_t.data
    else:
        n_t = np.zeros((nb, 0), dtype=np.int64)
        prompts = []
        W_t_arr = np.zeros((nb, 0))

    vs, seq_lens = [], []
    for b in range(nb):
        group = prompts[b * (nf - 1):(b + 1) * (nf - 1)]
        seq, slots = interleave(cls_out[b], group)
        pos = temporal_positions(n_t[b].tolist(), model)
        seq_lens.append(seq.shape[0])
        vs.append(temporal_aggregate_seq(seq, slots, pos, model))
    V = nc.stack(vs, axis=0)
    diag = Diagnostics(A.data, M.data, W_s.data, r, W_t_arr, n_t, seq_lens)
    return V, diag


def stop_video_encode(video, model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                      intra_on: bool = True, inter_on: bool = True,
                      mask: np.ndarray | None = None,
                      counts: np.ndarray | None = None) -> tuple[Tensor, Diagnostics]:
    """Single video [N_F, 3, H, W] -> (v [d], diagnostics)."""
    vid = np.asarray(video.data if isinstance(video, Tensor) else video, dtype=np.float64)
    V, diag = stop_encode_batch(vid[None], model, params, hyper, intra_on, inter_on,
                                None if mask is None else np.asarray(mask)[None],
                                None if counts is None else np.asarray(counts)[None])
    return nc.reshape(V, (model.config.d,)), diag.video(0)
