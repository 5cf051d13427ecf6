"""Training loops and evaluation for the action and retrieval tasks.

Only :class:`StopParams` ever receive updates; the frozen model is read and
its content hash is checked again when a loop finishes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .encoders import FrozenClipModel, text_encode, verify_frozen
from .numcore import ContractError, Tensor
from .objectives import (acc_at_1, action_loss, retrieval_loss, retrieval_metrics,
                         similarity_matrix)
from .stopcore import StopHyper, StopParams, stop_encode_batch
from .synthdata import CLASS_NAMES, DatasetManifest, action_sentence, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 800
    batch_size: int = 8
    lr: float = 2e-2
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    seed: int = 0
    intra_on: bool = True
    inter_on: bool = True


@dataclass
class TrainResult:
    params: StopParams
    losses: list[float]
    frozen_ok: bool


def class_embeddings(model: FrozenClipModel, K: int) -> Tensor:
    """Text embeddings of "a video of the action <name>" for the first K classes."""
    L = model.config.max_text_len
    rows = [text_encode(tokenize(action_sentence(CLASS_NAMES[k]), L), model) for k in range(K)]
    with nc.no_grad():
        return Tensor(np.stack([r.data for r in rows]))


def caption_embeddings(model: FrozenClipModel, captions: Sequence[str]) -> Tensor:
    L = model.config.max_text_len
    with nc.no_grad():
        return Tensor(np.stack([text_encode(tokenize(c, L), model).data for c in captions]))


def encode_videos(videos: np.ndarray, model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                  intra_on: bool = True, inter_on: bool = True, chunk: int = 16) -> np.ndarray:
    """Inference-only encoding of a video stack [N, N_F, 3, H, W] -> [N, d]."""
    out = []
    with nc.no_grad():
        for i in range(0, len(videos), chunk):
            V, _ = stop_encode_batch(videos[i:i + chunk], model, params, hyper, intra_on, inter_on)
            out.append(V.data)
    return np.concatenate(out, axis=0)


def _optimize(params: StopParams, settings: TrainSettings, n_items: int,
              batch_loss: Callable[[StopParams, np.ndarray], Tensor],
              model: FrozenClipModel, on_step: Callable[[int, float], None] | None) -> TrainResult:
    if settings.batch_size > n_items:
        raise ContractError(f"batch size {settings.batch_size} exceeds {n_items} training items")
    state = nc.AdamWState(lr=settings.lr, beta1=settings.beta1, beta2=settings.beta2,
                          weight_decay=settings.weight_decay, total_steps=settings.steps)
    rng = np.random.default_rng([settings.seed, 1])
    losses = []
    for step in range(settings.steps):
        idx = np.sort(rng.choice(n_items, settings.batch_size, replace=False))
        loss = batch_loss(params, idx)
        grads = params.collect_grads(nc.backward(loss))
        params = params.replace(nc.adamw_step(params.tensors, grads, state))
        losses.append(loss.item())
        if on_step is not None:
            on_step(step, losses[-1])
    ok = verify_frozen(model)
    if not ok:
        raise ContractError("frozen model weights changed during training")
    return TrainResult(params, losses, ok)


def train_action(model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                 train: DatasetManifest, K: int, settings: TrainSettings,
                 on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Cross-entropy over class-template embeddings; returns the trained params and loss log."""
    S = class_embeddings(model, K)
    X, y = train.videos(), train.labels()

    def batch_loss(p: StopParams, idx: np.ndarray) -> Tensor:
        V, _ = stop_encode_batch(X[idx], model, p, hyper, settings.intra_on, settings.inter_on)
        return action_loss(V, S, y[idx], hyper.tau)

    return _optimize(params, settings, len(X), batch_loss, model, on_step)


def evaluate_action(model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                    test: DatasetManifest, K: int, intra_on: bool = True,
                    inter_on: bool = True) -> dict[str, float]:
    S = class_embeddings(model, K)
    V = encode_videos(test.videos(), model, params, hyper, intra_on, inter_on)
    C = similarity_matrix(Tensor(V), S)
    return {"ACC@1": acc_at_1(C, test.labels())}


def train_retrieval(model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                    data: DatasetManifest, settings: TrainSettings,
                    on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Symmetric contrastive training on caption/video pairs."""
    S_all = caption_embeddings(model, data.captions())
    X = data.videos()

    def batch_loss(p: StopParams, idx: np.ndarray) -> Tensor:
        V, _ = stop_encode_batch(X[idx], model, p, hyper, settings.intra_on, settings.inter_on)
        return retrieval_loss(Tensor(S_all.data[idx]), V, hyper.tau)

    return _optimize(params, settings, len(X), batch_loss, model, on_step)


def retrieval_loss_full(model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                        data: DatasetManifest, batch_size: int, intra_on: bool = True,
                        inter_on: bool = True) -> float:
    """Mean contrastive loss over consecutive blocks of ``batch_size`` pairs."""
    S = caption_embeddings(model, data.captions()).data
    V = encode_videos(data.videos(), model, params, hyper, intra_on, inter_on)
    vals = []
    with nc.no_grad():
        for i in range(0, len(V) - batch_size + 1, batch_size):
            vals.append(retrieval_loss(Tensor(S[i:i + batch_size]), Tensor(V[i:i + batch_size]), hyper.tau).item())
    return float(np.mean(vals))


def evaluate_retrieval(model: FrozenClipModel, params: StopParams, hyper: StopHyper,
                       data: DatasetManifest, intra_on: bool = True,
                       inter_on: bool = True) -> dict[str, float]:
    """R@K and MnR in both directions over the whole set."""
    S = caption_embeddings(model, data.captions())
    V = encode_videos(data.videos(), model, params, hyper, intra_on, inter_on)
    C = similarity_matrix(S, Tensor(V)).data  # rows: texts, cols: videos
    out = {f"t2v_{k}": v for k, v in retrieval_metrics(C).items()}
    out.update({f"v2t_{k}": v for k, v in retrieval_metrics(C.T).items()})
    return out
