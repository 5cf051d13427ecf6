"""End-to-end gradient check of every trainable tensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoders import FrozenClipModel, ModelConfig
from .numcore import Tensor
from .objectives import action_loss, retrieval_loss
from .stopcore import StopHyper, StopParams, param_shapes, stop_encode_batch
from .training import class_embeddings

TOLERANCE = 1e-5
CHECK_EPS = 1e-4
# Pixel amplitude for the probe videos. The frozen patch projection is small
# (0.02 std), so unit-range pixels give tokens near 0.04 and some parameter
# gradients near 1e-6, where central-difference round-off alone approaches the
# tolerance. Amplitude 20 puts the tokens near unit scale.
VIDEO_SCALE = 20.0

TINY_MODEL = ModelConfig(d_v=4, d=4, L_v=1, L_t=1, n_heads=2, g=2, h=2, w=2, N_F=3,
                         vocab_size=64, max_text_len=16, seed=0)
TINY_HYPER = StopHyper(eta=3, N_s=2)


@dataclass
class GradRow:
    name: str
    size: int
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def grad_check(model: FrozenClipModel, params: StopParams, hyper: StopHyper,
               task: str = "action", batch: int = 2, seed: int = 0,
               eps: float = CHECK_EPS, video_scale: float = VIDEO_SCALE) -> list[GradRow]:
    """Autodiff vs central differences through encoder and loss for each StopParams tensor.

    Region masks and prompt counts are computed once at the unperturbed point
    and held fixed for every perturbed evaluation.
    """
    cfg = model.config
    rng = np.random.default_rng(seed)
    videos = video_scale * rng.uniform(-1.0, 1.0, (batch, cfg.N_F, 3, cfg.H, cfg.W))
    K = 4
    if task == "action":
        S = class_embeddings(model, K)
        labels = rng.integers(0, K, batch)
    else:
        S = Tensor(rng.standard_normal((batch, cfg.d)))
    with nc.no_grad():
        _, diag = stop_encode_batch(videos, model, params, hyper)

    def loss() -> Tensor:
        V, _ = stop_encode_batch(videos, model, params, hyper, masks=diag.r, counts=diag.counts)
        if task == "action":
            return action_loss(V, S, labels, hyper.tau)
        return retrieval_loss(S, V, hyper.tau)

    grads = params.collect_grads(nc.backward(loss()))
    rows = []
    for name in params.names():
        fd = nc.finite_diff_grad(loss, params[name], eps)
        rows.append(GradRow(name, params[name].size, nc.relative_error(grads[name].data, fd.data)))
    return rows


def random_params(d_v: int, max_prompts: int, seed: int, std: float = 1.0) -> StopParams:
    """Every tensor, biases included, drawn from N(0, std^2)."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(d_v, max_prompts)
    return StopParams({k: Tensor(std * rng.standard_normal(s), grad_enabled=True) for k, s in shapes.items()},
                      d_v, max_prompts)


def format_table(rows: list[GradRow], title: str = "") -> str:
    width = max(len(r.name) for r in rows)
    lines = [title] if title else []
    lines.append(f"{'tensor':<{width}}  {'size':>6}  {'max_rel_err':>12}  status")
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.size:>6}  {r.max_rel_err:>12.3e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
