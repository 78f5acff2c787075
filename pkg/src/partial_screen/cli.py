"""Command-line entry point: ``gendata``, ``train``, ``eval`` and ``verify``.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import config as C
from . import datagen, verify
from .decouple import DiseaseEmbeddings, EmbeddingFileError
from .metrics import build_report, dumps_report, evaluate_dataset
from .trainer import BRANCH_PRESETS, CheckpointError, NumericError, Trainer, evaluate_bundle, infer, load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("partial_screen")


class UsageError(Exception):
    pass


def _effective_config(args) -> C.RunConfig:
    cfg = C.load(args.config) if getattr(args, "config", None) else C.RunConfig()
    run, data = cfg.run, cfg.data
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seeds=(args.seed,))
        data = dataclasses.replace(data, seed=args.seed)
    if getattr(args, "out", None):
        run = dataclasses.replace(run, out=args.out)
    if getattr(args, "branches", None):
        run = dataclasses.replace(run, branches=args.branches)
    return dataclasses.replace(cfg, run=run, data=data)


def _bundle_from_config(cfg: C.RunConfig) -> datagen.DataBundle:
    d = cfg.data
    subsets = [tuple(s) for s in d.label_subsets] if d.label_subsets is not None else None
    return datagen.generate(
        d.seed,
        num_domains=d.num_domains,
        num_tasks=d.num_tasks,
        n_per_dataset=d.n_per_dataset,
        label_subsets=subsets,
        n_test=d.n_test,
        n_unseen=d.n_unseen,
        shift=d.shift,
        contrast=d.contrast,
    )


def directory_digest(directory) -> str:
    """SHA-256 over every file's relative path and bytes, in sorted order."""
    directory = Path(directory)
    h = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(directory)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _writable_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    return path


def cmd_gendata(args) -> int:
    cfg = _effective_config(args)
    out = _writable_dir(cfg.run.out)
    bundle = _bundle_from_config(cfg)
    try:
        datagen.save_bundle(bundle, out)
    except OSError as exc:
        raise UsageError(f"cannot write dataset to {out}: {exc}") from exc
    summary = {
        "out": str(out),
        "train": [ds.name for ds in bundle.train],
        "test": [ds.name for ds in bundle.test],
        "unseen": bundle.unseen.name,
        "digest": directory_digest(out),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _load_embeddings(cfg: C.RunConfig):
    if not cfg.run.embeddings:
        return None
    try:
        return DiseaseEmbeddings.load(cfg.run.embeddings)
    except (OSError, EmbeddingFileError) as exc:
        raise UsageError(f"cannot load embeddings: {exc}") from exc


def _load_data(args, cfg: C.RunConfig) -> datagen.DataBundle:
    if args.data:
        try:
            return datagen.load_bundle(args.data)
        except (OSError, datagen.DataSpecError, KeyError) as exc:
            raise UsageError(f"cannot load dataset {args.data}: {exc}") from exc
    return _bundle_from_config(cfg)


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    bundle = _load_data(args, cfg)
    embeddings = _load_embeddings(cfg)
    out = _writable_dir(cfg.run.out)
    (out / "config.toml").write_text(C.dumps(cfg))
    results = {}
    for seed in cfg.run.seeds:
        run_dir = out / f"seed{seed}"
        train_cfg = cfg.train_config(seed)
        if args.resume:
            try:
                trainer = load_checkpoint(args.resume, dataclasses.replace(train_cfg))
            except (OSError, CheckpointError, KeyError) as exc:
                raise UsageError(f"cannot resume from {args.resume}: {exc}") from exc
        else:
            trainer = Trainer(train_cfg, cfg.model, embeddings)
        result = trainer.fit(bundle, run_dir)
        results[str(seed)] = {
            "in_domain": {k: result.report["in_domain"][k] for k in ("mF", "mQWK")},
            "out_of_domain": {k: result.report["out_of_domain"][k] for k in ("mF", "mQWK")},
            "epochs": trainer.epoch,
            "checkpoint": str(result.checkpoint),
        }
    print(json.dumps(results, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        trainer = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    data = Path(args.data)
    try:
        if (data / "manifest.txt").exists():
            report = evaluate_bundle(trainer.net, datagen.load_bundle(data))
        else:
            ds = datagen.load_dataset(data)
            report = build_report({ds.name: evaluate_dataset(infer(trainer.net, ds.images), ds.labels)})
    except (OSError, datagen.DataSpecError) as exc:
        raise UsageError(f"cannot load dataset {data}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"checkpoint does not fit the data: {exc}") from exc
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify.run_all(args.suite or None)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partial-screen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, branches=False):
        p.add_argument("--config", help="TOML run config; flags override its values")
        p.add_argument("--seed", type=int, help="seed for data generation and training (replaces run.seeds)")
        p.add_argument("--out", help="output directory")
        if branches:
            p.add_argument("--branches", choices=sorted(BRANCH_PRESETS), help="which branches to train")

    p = sub.add_parser("gendata", help="write a synthetic dataset dump")
    common(p)
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser("train", help="train one model per seed")
    common(p, branches=True)
    p.add_argument("--data", help="dataset dump from gendata (default: generate from [data])")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="teacher-path metrics for a checkpoint on a dataset dump")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="a gendata directory or a single dataset directory")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--suite", action="append", choices=list(verify.SUITES), help="run only this suite (repeatable)")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (C.ConfigError, UsageError, datagen.DataSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
