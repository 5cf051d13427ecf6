"""Command-line entry point: gen-data, train, eval, grad-check, dump-attn.

Exit codes: 0 success, 2 config error, 3 missing data, 4 hash mismatch,
1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import weightstore
from .checks import TINY_HYPER, TINY_MODEL, format_table, grad_check, random_params
from .encoders import FrozenClipModel
from .imaging import heatmap, mask_image, write_pgm
from .numcore import ConfigError, Tensor
from .objectives import MetricsReport
from .runconfig import RunConfig
from .stopcore import StopParams, stop_video_encode
from .synthdata import (DatasetManifest, FormatError, build_action_dataset, build_retrieval_dataset,
                        load_dataset, save_dataset)
from .training import evaluate_action, evaluate_retrieval, train_action, train_retrieval

log = logging.getLogger("stopvid")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_HASH = 0, 1, 2, 3, 4

DATA_FILES = {
    "action_train": ("action_train.tsv", "action_train.raw"),
    "action_test": ("action_test.tsv", "action_test.raw"),
    "retrieval": ("retrieval.tsv", "retrieval.raw"),
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers

def _write_run_files(out: Path, rc: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(rc.to_text())
    (out / "config_hash.txt").write_text(rc.digest() + "\n")


def _load_split(rc: RunConfig, key: str) -> DatasetManifest:
    base = Path(rc.data_dir)
    mpath, rpath = (base / f for f in DATA_FILES[key])
    if not mpath.exists() or not rpath.exists():
        raise CliError(EXIT_DATA, f"dataset {key!r} not found under {base} (run gen-data first)")
    try:
        man = load_dataset(mpath, rpath, rc.max_text_len)
    except FormatError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    expected = rc.model_config().digest()
    if man.config_hash != expected:
        raise CliError(EXIT_HASH, f"dataset {key!r} was generated for config {man.config_hash}, "
                                  f"this run uses {expected}")
    return man


def _checkpoint_header(rc: RunConfig) -> list[int]:
    hyper = rc.hyper()
    return rc.model_config().header() + [hyper.eta, hyper.max_prompts, 3]


def save_checkpoint(path: Path, rc: RunConfig, params: StopParams) -> None:
    weightstore.save(path, params.arrays(), _checkpoint_header(rc))


def load_checkpoint(path: Path, rc: RunConfig) -> StopParams:
    if not path.exists():
        raise CliError(EXIT_DATA, f"checkpoint {path} not found")
    try:
        header, tensors = weightstore.load(path)
    except weightstore.FormatError as exc:
        raise CliError(EXIT_OTHER, str(exc)) from None
    if header != _checkpoint_header(rc):
        raise CliError(EXIT_HASH, f"checkpoint {path} was written for a different architecture "
                                  f"(header {header}, config expects {_checkpoint_header(rc)})")
    try:
        return StopParams({k: Tensor(v, grad_enabled=True) for k, v in tensors.items()},
                          rc.d_v, rc.hyper().max_prompts)
    except ConfigError as exc:
        raise CliError(EXIT_HASH, f"checkpoint tensors do not match config: {exc}") from None


def _evaluate(rc: RunConfig, model: FrozenClipModel, params: StopParams, task: str) -> dict[str, float]:
    hyper = rc.hyper()
    if task == "action":
        test = _load_split(rc, "action_test")
        return evaluate_action(model, params, hyper, test, rc.K, rc.intra_on, rc.inter_on)
    data = _load_split(rc, "retrieval")
    return evaluate_retrieval(model, params, hyper, data, rc.intra_on, rc.inter_on)


# ---------------------------------------------------------------- commands

def cmd_gen_data(rc: RunConfig, out: Path | None) -> int:
    base = Path(out) if out is not None else Path(rc.data_dir)
    base.mkdir(parents=True, exist_ok=True)
    cfg = rc.model_config()
    train, test = build_action_dataset(rc.K, rc.n_per_class, rc.data_seed, cfg)
    retr = build_retrieval_dataset(rc.retrieval_n, rc.data_seed, cfg)
    for key, man in (("action_train", train), ("action_test", test), ("retrieval", retr)):
        m, r = DATA_FILES[key]
        save_dataset(man, base / m, base / r)
        print(f"{key}: {len(man)} samples -> {base / m}")
    _write_run_files(base, rc)
    return EXIT_OK


def cmd_train(rc: RunConfig, task: str, out: Path) -> int:
    model = FrozenClipModel.from_seed(rc.model_config())
    hyper = rc.hyper()
    settings = rc.train_settings()
    params = StopParams.init(rc.d_v, hyper.max_prompts, rc.seed)
    if task == "action":
        train = _load_split(rc, "action_train")
        _load_split(rc, "action_test")  # fail before training if the test split is absent
        result = train_action(model, params, hyper, train, rc.K, settings)
    else:
        data = _load_split(rc, "retrieval")
        result = train_retrieval(model, params, hyper, data, settings)
    _write_run_files(out, rc)
    save_checkpoint(out / "checkpoint.stopw", rc, result.params)
    (out / "loss.log").write_text("".join(f"{i}\t{v!r}\n" for i, v in enumerate(result.losses)))
    metrics = _evaluate(rc, model, result.params, task)
    report = MetricsReport(task, metrics, result.losses, settings.steps, rc.seed,
                           {"config_hash": rc.digest(), "frozen_hash": model.reference_hash,
                            "frozen_ok": str(result.frozen_ok).lower()})
    (out / "metrics.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_eval(rc: RunConfig, task: str, checkpoint: Path, out: Path | None) -> int:
    params = load_checkpoint(checkpoint, rc)
    model = FrozenClipModel.from_seed(rc.model_config())
    metrics = _evaluate(rc, model, params, task)
    report = MetricsReport(task, metrics, [], 0, rc.seed, {"config_hash": rc.digest(),
                                                            "checkpoint": str(checkpoint)})
    target = Path(out) if out is not None else checkpoint.parent
    _write_run_files(target, rc)
    (target / f"eval_{task}.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_grad_check(rc: RunConfig | None, task: str, out: Path | None) -> int:
    """Gradient check on the tiny architecture (or the one in ``--config``)."""
    if rc is None:
        cfg, hyper = TINY_MODEL, TINY_HYPER
    else:
        cfg, hyper = rc.model_config(), rc.hyper()
    model = FrozenClipModel.from_seed(cfg)
    tables, ok = [], True
    for label, params in (("zero", StopParams.zeros(cfg.d_v, hyper.max_prompts)),
                          ("random", random_params(cfg.d_v, hyper.max_prompts, seed=1))):
        rows = grad_check(model, params, hyper, task=task)
        ok &= all(r.ok for r in rows)
        tables.append(format_table(rows, f"[{label} parameters]"))
        failed = [r.name for r in rows if not r.ok]
        if failed:
            tables.append(f"FAILED: {', '.join(failed)}")
    text = "\n\n".join(tables) + f"\n\ngrad-check {'passed' if ok else 'FAILED'}\n"
    sys.stdout.write(text)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "grad_check.txt").write_text(text)
    return EXIT_OK if ok else EXIT_OTHER


def cmd_dump_attn(rc: RunConfig, task: str, checkpoint: Path | None, sample: int, out: Path) -> int:
    cfg = rc.model_config()
    hyper = rc.hyper()
    params = load_checkpoint(checkpoint, rc) if checkpoint is not None else \
        StopParams.init(rc.d_v, hyper.max_prompts, rc.seed)
    man = _load_split(rc, "action_test" if task == "action" else "retrieval")
    if not 0 <= sample < len(man):
        raise CliError(EXIT_DATA, f"sample {sample} out of range (dataset has {len(man)} samples)")
    model = FrozenClipModel.from_seed(cfg)
    _, diag = stop_video_encode(man.samples[sample].video, model, params, hyper, rc.intra_on, rc.inter_on)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(cfg.N_F):
        write_pgm(out / f"A_frame{i}.pgm", heatmap(diag.A[i], cfg.h, cfg.w))
        write_pgm(out / f"M_frame{i}.pgm", heatmap(diag.M[i], cfg.h, cfg.w))
        write_pgm(out / f"Ws_frame{i}.pgm", heatmap(diag.W_s[i], cfg.h, cfg.w))
        write_pgm(out / f"r_frame{i}.pgm", mask_image(diag.r[i], cfg.h, cfg.w))
    lines = ["gap\tW_t\tN_t"] + [f"{i}\t{float(w)!r}\t{int(c)}" for i, (w, c) in enumerate(zip(diag.W_t, diag.counts))]
    (out / "temporal.txt").write_text("\n".join(lines) + "\n")
    _write_run_files(out, rc)
    print(f"sample {sample} ({man.records[sample].caption}): wrote {4 * cfg.N_F} images and temporal.txt to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stopvid", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, task=True):
        p.add_argument("--config", type=Path, default=None, help="key=value run config")
        if task:
            p.add_argument("--task", choices=("action", "retrieval"), default="action")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    common(sub.add_parser("gen-data", help="write synthetic datasets"), task=False)
    p = sub.add_parser("train", help="train the prompt parameters")
    common(p)
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("grad-check", help="finite-difference check of every trainable tensor")
    common(p)
    p = sub.add_parser("dump-attn", help="write per-frame score heatmaps for one sample")
    common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--sample", type=int, default=0)
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        rc = RunConfig.load(args.config) if (args.config or args.verb != "grad-check") else None
        if args.verb == "gen-data":
            return cmd_gen_data(rc, args.out)
        if args.verb == "train":
            return cmd_train(rc, args.task, args.out or Path("runs") / f"{args.task}-{rc.digest()}")
        if args.verb == "eval":
            return cmd_eval(rc, args.task, args.checkpoint, args.out)
        if args.verb == "grad-check":
            return cmd_grad_check(rc, args.task, args.out)
        if args.verb == "dump-attn":
            return cmd_dump_attn(rc, args.task, args.checkpoint, args.sample,
                                 args.out or Path("attn") / f"sample{args.sample}")
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        code = EXIT_CONFIG if args.config is not None and Path(exc.filename or "") == args.config else EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return code
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
