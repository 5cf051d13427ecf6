"""Cosine similarity, the two training losses, and ranking metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoders import InputError
from .numcore import ContractError, ConfigError, Tensor

NORM_EPS = 1e-12


def cosine_similarity(s: Tensor, v: Tensor) -> Tensor:
    """s.v / (|s| |v|) with the norms guarded by 1e-12; a zero vector gives 0."""
    if s.shape != v.shape:
        raise nc.DimensionError(f"cosine_similarity: {s.shape} vs {v.shape}")
    return nc.sum(nc.mul(nc.l2_normalize(s, eps=NORM_EPS), nc.l2_normalize(v, eps=NORM_EPS)))


def is_degenerate(x: Tensor | np.ndarray) -> bool:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return not np.any(data)


def similarity_matrix(rows: Tensor, cols: Tensor) -> Tensor:
    """Pairwise cosine similarities C[i, j] = c(rows_i, cols_j)."""
    a = nc.l2_normalize(rows, axis=-1, eps=NORM_EPS)
    b = nc.l2_normalize(cols, axis=-1, eps=NORM_EPS)
    return nc.matmul(a, nc.transpose(b))


def _nll_of_diagonal(logits: Tensor, targets: np.ndarray) -> Tensor:
    logp = nc.log_softmax(logits, axis=-1)
    picked = nc.getitem(logp, (np.arange(len(targets)), targets))
    return nc.scale(nc.sum(picked), -1.0 / len(targets))


def action_loss(v_batch: Tensor, class_embeds: Tensor, labels: Sequence[int], tau: float) -> Tensor:
    """Mean cross-entropy of softmax_k(c(v_i, s_k) / tau) at the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    k = class_embeds.shape[0]
    if labels.shape != (v_batch.shape[0],):
        raise InputError(f"{labels.shape[0]} labels for a batch of {v_batch.shape[0]}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise InputError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    logits = nc.scale(similarity_matrix(v_batch, class_embeds), 1.0 / tau)
    return _nll_of_diagonal(logits, labels)


def retrieval_loss(S: Tensor, V: Tensor, tau: float) -> Tensor:
    """Symmetric InfoNCE over a batch of paired text/video rows.

    Both directions are negative log-likelihoods of the matching pair,
    averaged over 2B terms.
    """
    b = S.shape[0]
    if b < 2:
        raise ContractError("retrieval_loss needs at least two pairs (no negatives otherwise)")
    if S.shape != V.shape:
        raise nc.DimensionError(f"text {S.shape} vs video {V.shape}")
    logits = nc.scale(similarity_matrix(S, V), 1.0 / tau)  # [text i, video j]
    diag = np.arange(b)
    # video i against all texts j: softmax over the column of the text-video matrix
    v2t = _nll_of_diagonal(nc.transpose(logits), diag)
    t2v = _nll_of_diagonal(logits, diag)
    return nc.scale(nc.add(v2t, t2v), 0.5)


# ---------------------------------------------------------------- metrics

def _as_array(C) -> np.ndarray:
    return np.asarray(C.data if isinstance(C, Tensor) else C, dtype=np.float64)


def acc_at_1(C, labels: Sequence[int]) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    c = _as_array(C)
    labels = np.asarray(labels)
    if c.shape[0] != labels.shape[0]:
        raise nc.DimensionError(f"{c.shape[0]} rows vs {labels.shape[0]} labels")
    return float(np.mean(np.argmax(c, axis=1) == labels))


def diagonal_ranks(C) -> np.ndarray:
    """1-based rank of each row's diagonal entry under descending order.

    An entry ranks behind every strictly larger entry and behind equal entries
    at a lower column index.
    """
    c = _as_array(C)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise nc.DimensionError(f"ranking needs a square matrix, got {c.shape}")
    n = c.shape[0]
    diag = np.diag(c)[:, None]
    cols = np.arange(n)[None, :]
    ahead = (c > diag) | ((c == diag) & (cols < np.arange(n)[:, None]))
    return ahead.sum(axis=1) + 1


def recall_at_k(C, k: int) -> float:
    c = _as_array(C)
    if not 1 <= k <= c.shape[0]:
        raise ConfigError(f"k={k} outside [1, {c.shape[0]}]")
    return float(np.mean(diagonal_ranks(c) <= k))


def mean_rank(C) -> float:
    return float(np.mean(diagonal_ranks(C)))


def retrieval_metrics(C) -> dict[str, float]:
    c = _as_array(C)
    ks = [k for k in (1, 5, 10) if k <= c.shape[0]]
    out = {f"R@{k}": recall_at_k(c, k) for k in ks}
    out["MnR"] = mean_rank(c)
    return out


@dataclass
class MetricsReport:
    task: str
    metrics: dict[str, float]
    loss_curve: list[float] = field(default_factory=list)
    steps: int = 0
    seed: int = 0
    extra: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        """Flat key=value block, one entry per line."""
        lines = [f"task={self.task}", f"steps={self.steps}", f"seed={self.seed}"]
        lines += [f"{k}={v!r}" for k, v in self.metrics.items()]
        if self.loss_curve:
            lines.append(f"loss_initial={self.loss_curve[0]!r}")
            lines.append(f"loss_final={self.loss_curve[-1]!r}")
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        task = kv.pop("task")
        steps = int(kv.pop("steps"))
        seed = int(kv.pop("seed"))
        curve = []
        if "loss_initial" in kv:
            curve = [float(kv.pop("loss_initial")), float(kv.pop("loss_final"))]
        metrics, extra = {}, {}
        for k, v in kv.items():
            try:
                metrics[k] = float(v)
            except ValueError:
                extra[k] = v
        return cls(task, metrics, curve, steps, seed, extra)
