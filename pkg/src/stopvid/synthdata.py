"""Synthetic motion benchmark.

Each video shows one bright square on a dark noisy background. Classes differ
only in how the square moves, and trajectories wrap around the frame
(torus) and are centred on a uniformly drawn midpoint, so every class has
the same single-frame appearance distribution: nothing but motion separates
them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .encoders import BEGIN_ID, END_ID, PAD_ID, InputError, ModelConfig

CLASS_NAMES = ("left", "right", "up", "down", "clockwise", "still", "grow", "shrink")
COLORS = {
    "red": (1.0, 0.15, 0.15), "green": (0.15, 1.0, 0.15), "blue": (0.25, 0.35, 1.0),
    "yellow": (1.0, 1.0, 0.2), "cyan": (0.2, 1.0, 1.0), "magenta": (1.0, 0.2, 1.0),
    "white": (1.0, 1.0, 1.0), "orange": (1.0, 0.6, 0.1),
}
SIZES = {"small": 5, "medium": 7, "large": 9}
SPEED = 2  # pixels per frame for translations; even keeps midpoint-centred tracks on the grid
ORBIT_RADIUS = 5
NOISE_AMPLITUDE = 0.05
ACTION_TEMPLATE = "a video of the action {}"
CAPTION_TEMPLATE = "a {} {} square moving {}"

_SPECIAL = ["<pad>", "<begin>", "<end>"]
_WORDS = sorted(set(
    "a video of the action square moving".split()
    + list(CLASS_NAMES) + list(COLORS) + list(SIZES)
))
VOCAB: list[str] = _SPECIAL + _WORDS
VOCAB_SIZE = 64
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}
assert VOCAB[PAD_ID] == "<pad>" and VOCAB[BEGIN_ID] == "<begin>" and VOCAB[END_ID] == "<end>"
assert len(VOCAB) <= VOCAB_SIZE


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class MotionClass:
    id: int
    name: str

    @classmethod
    def by_name(cls, name: str) -> "MotionClass":
        return cls(CLASS_NAMES.index(name), name)

    @classmethod
    def by_id(cls, class_id: int) -> "MotionClass":
        if not 0 <= class_id < len(CLASS_NAMES):
            raise InputError(f"class id {class_id} outside [0, {len(CLASS_NAMES)})")
        return cls(class_id, CLASS_NAMES[class_id])

    def track(self, n_frames: int) -> list[tuple[int, int, int]]:
        """Per-frame (dx, dy, dside) relative to the trajectory midpoint."""
        out = []
        for t in range(n_frames):
            u2 = 2 * t - (n_frames - 1)  # twice the signed time from the midpoint
            dx = dy = ds = 0
            if self.name == "left":
                dx = -SPEED * u2 // 2
            elif self.name == "right":
                dx = SPEED * u2 // 2
            elif self.name == "up":
                dy = -SPEED * u2 // 2
            elif self.name == "down":
                dy = SPEED * u2 // 2
            elif self.name == "clockwise":
                ang = 2 * math.pi * t / n_frames
                dx = int(round(ORBIT_RADIUS * math.cos(ang)))
                dy = int(round(ORBIT_RADIUS * math.sin(ang)))  # image y grows downward
            elif self.name == "grow":
                ds = int(math.floor(u2 / 2))
            elif self.name == "shrink":
                ds = int(math.floor(-u2 / 2))
            out.append((dx, dy, ds))
        return out


@dataclass
class VideoSample:
    video: np.ndarray  # [N_F, 3, H, W] in [0, 1]
    class_id: int
    caption: str
    tokens: list[int]
    seed: int
    color: str = ""
    size: str = ""


# ---------------------------------------------------------------- tokenizer

def tokenize(text: str, max_len: int = 16) -> list[int]:
    """Whitespace tokenizer over the closed vocabulary; BEGIN ... END then PAD to ``max_len``."""
    words = text.split()
    unknown = [w for w in words if w not in WORD_TO_ID or w in _SPECIAL]
    if unknown:
        raise InputError(f"out-of-vocabulary word(s): {', '.join(unknown)}")
    if max_len < 2:
        raise InputError("max_len must leave room for the begin and end markers")
    words = words[:max_len - 2]
    ids = [BEGIN_ID] + [WORD_TO_ID[w] for w in words] + [END_ID]
    return ids + [PAD_ID] * (max_len - len(ids))


def detokenize(ids: Sequence[int]) -> str:
    words = []
    for i in ids:
        if i == END_ID:
            break
        if i in (BEGIN_ID, PAD_ID):
            continue
        words.append(VOCAB[i])
    return " ".join(words)


def action_sentence(class_name: str) -> str:
    return ACTION_TEMPLATE.format(class_name)


# ---------------------------------------------------------------- rendering

def _object_params(seed: int, cfg: ModelConfig) -> tuple[str, str, int, int]:
    rng = np.random.default_rng([seed, 0])
    color = list(COLORS)[rng.integers(len(COLORS))]
    size = list(SIZES)[rng.integers(len(SIZES))]
    cx = int(rng.integers(cfg.W))
    cy = int(rng.integers(cfg.H))
    return color, size, cx, cy


def gen_video(motion: MotionClass | str | int, seed: int, cfg: ModelConfig | None = None,
              color: str | None = None, size: str | None = None) -> VideoSample:
    """Render one video; identical (class, seed) pairs give bitwise-identical tensors.

    Object appearance and midpoint depend on ``seed`` only, never on the
    class. ``color`` / ``size`` override the seeded draw (used to keep
    retrieval captions unique).
    """
    cfg = cfg or ModelConfig()
    if isinstance(motion, str):
        motion = MotionClass.by_name(motion)
    elif isinstance(motion, (int, np.integer)):
        motion = MotionClass.by_id(int(motion))
    c_name, s_name, cx, cy = _object_params(seed, cfg)
    c_name = color or c_name
    s_name = size or s_name
    rgb = np.asarray(COLORS[c_name])
    side = SIZES[s_name]
    noise_rng = np.random.default_rng([seed, 1])
    nf, H, W = cfg.N_F, cfg.H, cfg.W
    video = NOISE_AMPLITUDE * noise_rng.random((nf, 3, H, W))
    for t, (dx, dy, ds) in enumerate(motion.track(nf)):
        s = max(1, side + ds)
        x0 = cx + dx - s // 2
        y0 = cy + dy - s // 2
        rows = np.arange(y0, y0 + s) % H
        cols = np.arange(x0, x0 + s) % W
        video[t][:, rows[:, None], cols[None, :]] = rgb[:, None, None]
    caption = CAPTION_TEMPLATE.format(c_name, s_name, motion.name)
    return VideoSample(np.clip(video, 0.0, 1.0), motion.id, caption,
                       tokenize(caption, cfg.max_text_len), int(seed), c_name, s_name)


# ---------------------------------------------------------------- datasets

@dataclass
class Record:
    class_id: int
    seed: int
    offset: int
    caption: str


@dataclass
class DatasetManifest:
    n_frames: int
    height: int
    width: int
    config_hash: str
    seed: int
    task: str
    records: list[Record] = field(default_factory=list)
    samples: list[VideoSample] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sample_floats(self) -> int:
        return self.n_frames * 3 * self.height * self.width

    def videos(self) -> np.ndarray:
        return np.stack([s.video for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.asarray([r.class_id for r in self.records], dtype=np.int64)

    def captions(self) -> list[str]:
        return [r.caption for r in self.records]


def _manifest(cfg: ModelConfig, seed: int, task: str, samples: list[VideoSample]) -> DatasetManifest:
    man = DatasetManifest(cfg.N_F, cfg.H, cfg.W, cfg.digest(), seed, task)
    step = 4 * man.sample_floats
    for i, s in enumerate(samples):
        man.records.append(Record(s.class_id, s.seed, len(RAW_MAGIC) + i * step, s.caption))
    man.samples = samples
    return man


def build_action_dataset(K: int, n_per_class: int, seed: int, cfg: ModelConfig | None = None,
                         train_fraction: float = 0.8) -> tuple[DatasetManifest, DatasetManifest]:
    """Balanced K-class split with disjoint sample seeds (80/20 by default)."""
    cfg = cfg or ModelConfig()
    if not 1 <= K <= len(CLASS_NAMES):
        raise InputError(f"K must be in [1, {len(CLASS_NAMES)}], got {K}")
    rng = np.random.default_rng(seed)
    seeds = rng.choice(2 ** 31 - 1, size=K * n_per_class, replace=False).reshape(K, n_per_class)
    n_train = int(round(train_fraction * n_per_class))
    train, test = [], []
    for i in range(n_per_class):
        for c in range(K):
            sample = gen_video(c, int(seeds[c, i]), cfg)
            (train if i < n_train else test).append(sample)
    return _manifest(cfg, seed, "action", train), _manifest(cfg, seed, "action", test)


def build_retrieval_dataset(n: int, seed: int, cfg: ModelConfig | None = None,
                            classes: Sequence[str] = CLASS_NAMES[:4]) -> DatasetManifest:
    """``n`` video/caption pairs with pairwise-distinct (color, size, direction) captions."""
    cfg = cfg or ModelConfig()
    if n < 2:
        raise InputError("a retrieval set needs at least 2 pairs")
    combos = [(c, s, m) for c in COLORS for s in SIZES for m in classes]
    if n > len(combos):
        raise InputError(f"only {len(combos)} distinct captions available, asked for {n}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(combos), size=n, replace=False)
    sample_seeds = rng.choice(2 ** 31 - 1, size=n, replace=False)
    samples = []
    for k, sd in zip(picks, sample_seeds):
        color, size, motion = combos[k]
        samples.append(gen_video(motion, int(sd), cfg, color=color, size=size))
    return _manifest(cfg, seed, "retrieval", samples)


# ---------------------------------------------------------------- file I/O

RAW_MAGIC = b"STOPD1\0"
MANIFEST_MAGIC = "#STOPM1"


def save_dataset(manifest: DatasetManifest, manifest_path: str | Path, raw_path: str | Path) -> None:
    """Write the raw float32 tensor file and the tab-separated manifest."""
    with open(raw_path, "wb") as fh:
        fh.write(RAW_MAGIC)
        for rec, s in zip(manifest.records, manifest.samples):
            if fh.tell() != rec.offset:
                raise FormatError(f"offset mismatch for record at {rec.offset}")
            fh.write(np.ascontiguousarray(s.video, dtype="<f4").tobytes())
    head = [MANIFEST_MAGIC, f"count={len(manifest)}", f"frames={manifest.n_frames}",
            f"height={manifest.height}", f"width={manifest.width}",
            f"config={manifest.config_hash}", f"seed={manifest.seed}", f"task={manifest.task}"]
    lines = ["\t".join(head)]
    for r in manifest.records:
        if "\t" in r.caption or "\n" in r.caption:
            raise FormatError("captions may not contain tabs or newlines")
        lines.append(f"{r.class_id}\t{r.seed}\t{r.offset}\t{r.caption}")
    Path(manifest_path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_dataset(manifest_path: str | Path, raw_path: str | Path,
                 max_text_len: int = 16) -> DatasetManifest:
    text = Path(manifest_path).read_text(encoding="ascii").splitlines()
    if not text or not text[0].startswith(MANIFEST_MAGIC + "\t"):
        raise FormatError(f"{manifest_path}: missing manifest header")
    head = dict(kv.split("=", 1) for kv in text[0].split("\t")[1:])
    man = DatasetManifest(int(head["frames"]), int(head["height"]), int(head["width"]),
                          head["config"], int(head["seed"]), head["task"])
    for line in text[1:]:
        cid, sd, off, caption = line.split("\t", 3)
        man.records.append(Record(int(cid), int(sd), int(off), caption))
    if len(man.records) != int(head["count"]):
        raise FormatError(f"manifest declares {head['count']} samples, lists {len(man.records)}")
    offs = [r.offset for r in man.records]
    if any(b <= a for a, b in zip(offs, offs[1:])):
        raise FormatError("manifest offsets must be strictly increasing")

    blob = Path(raw_path).read_bytes()
    if blob[:len(RAW_MAGIC)] != RAW_MAGIC:
        raise FormatError(f"{raw_path}: bad magic")
    shape = (man.n_frames, 3, man.height, man.width)
    nbytes = 4 * man.sample_floats
    for r in man.records:
        if r.offset < len(RAW_MAGIC) or r.offset + nbytes > len(blob):
            raise FormatError(f"{raw_path}: truncated at offset {r.offset}")
        arr = np.frombuffer(blob, dtype="<f4", count=man.sample_floats, offset=r.offset)
        video = arr.astype(np.float64).reshape(shape)
        man.samples.append(VideoSample(video, r.class_id, r.caption,
                                       tokenize(r.caption, max_text_len), r.seed))
    return man


def quantize(video: np.ndarray) -> np.ndarray:
    """The float32 round trip applied at save time."""
    return np.asarray(video, dtype=np.float32).astype(np.float64)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- appearance probe

def single_frame_probe(train: DatasetManifest, test: DatasetManifest, l2: float = 1e-2,
                       max_iter: int = 200) -> float:
    """Test accuracy of a multinomial logistic classifier on individual frames.

    Every frame is a sample labelled with its video's class; features are its
    raw pixels. Motion-only classes should keep this near chance.
    """
    def frames(man):
        x = np.concatenate([s.video.reshape(s.video.shape[0], -1) for s in man.samples])
        y = np.repeat(man.labels(), man.n_frames)
        return x, y

    x_tr, y_tr = frames(train)
    x_te, y_te = frames(test)
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0) + 1e-8
    x_tr = (x_tr - mu) / sd
    x_te = (x_te - mu) / sd
    k = int(max(y_tr.max(), y_te.max())) + 1
    n, d = x_tr.shape
    onehot = np.eye(k)[y_tr]

    def obj(theta):
        w = theta[:d * k].reshape(d, k)
        b = theta[d * k:]
        z = x_tr @ w + b
        z -= z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        loss = -np.sum(onehot * logp) / n + 0.5 * l2 * np.sum(w * w)
        gz = (p - onehot) / n
        grad = np.concatenate([(x_tr.T @ gz + l2 * w).ravel(), gz.sum(axis=0)])
        return loss, grad

    res = minimize(obj, np.zeros(d * k + k), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    w = res.x[:d * k].reshape(d, k)
    b = res.x[d * k:]
    pred = np.argmax(x_te @ w + b, axis=1)
    return float(np.mean(pred == y_te))
