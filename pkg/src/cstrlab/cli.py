"""Command-line interface.

Subcommands: gen-data, train, eval, decode, gradcheck, ablate, report.
Exit codes: 0 success, 1 runtime failure (structured message on stderr),
2 usage error (argparse text).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .ablate import GRID_BUILDERS, run_cells
from .checkpoint import load_checkpoint
from .config import (build_ablate_settings, build_data_settings,
                     build_model_config, build_train_settings, load_config,
                     parse_model_fingerprint)
from .errors import CstrError, DataError
from .gradcheck import standard_suite
from .model import build_model
from .report import build_report
from .synth import DEFAULT_LEXICON, build_dataset, load_dataset, read_pgm
from .tensor import Tensor
from .train import evaluate, train


def _read_lexicon(settings) -> tuple[str, ...]:
    if settings.lexicon is None:
        return DEFAULT_LEXICON
    try:
        words = [w.strip() for w in
                 Path(settings.lexicon).read_text(encoding="utf-8")
                 .splitlines() if w.strip()]
    except OSError as e:
        raise DataError(f"cannot read lexicon {settings.lexicon}: {e}") from e
    if not words:
        raise DataError(f"lexicon file {settings.lexicon} is empty")
    return tuple(words)


def _load_dataset_for(data_settings):
    manifest = Path(data_settings.dir) / "manifest.tsv"
    if not manifest.is_file():
        raise DataError(
            f"no manifest at {manifest}; run `cstrlab gen-data` first")
    return load_dataset(manifest)


def _model_from_checkpoint(path):
    ck = load_checkpoint(path)
    model = build_model(parse_model_fingerprint(ck.fingerprint))
    model.params.load_state(ck.params)
    return model, ck


def cmd_gen_data(args) -> int:
    cp = load_config(args.config)
    data = build_data_settings(cp)
    lexicon = _read_lexicon(data)
    manifest = build_dataset(lexicon, data.n_train, data.n_eval, data.dir,
                             seed=args.seed, image_hw=data.image_hw,
                             eval_noise_sigma=data.eval_noise_sigma)
    print(f"manifest={manifest}")
    print(f"train={data.n_train} eval={data.n_eval} words={len(lexicon)}")
    return 0


def cmd_train(args) -> int:
    cp = load_config(args.config)
    data = build_data_settings(cp)
    settings = build_train_settings(cp)
    dataset = _load_dataset_for(data)
    model = build_model(build_model_config(cp, seed=args.seed))
    print(f"model={model.cfg.describe()} parameters={model.num_parameters()}")
    result = train(model, dataset, settings,
                   resume=Path(args.resume) if args.resume else None)
    print(f"steps={result.steps}")
    print(f"eval_word_acc={result.eval_word_acc:.4f}")
    print(f"eval_edit_dist={result.eval_edit_dist:.4f}")
    print(f"checkpoint={result.final_checkpoint}")
    print(f"metrics={result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    cp = load_config(args.config)
    data = build_data_settings(cp)
    dataset = _load_dataset_for(data)
    model, ck = _model_from_checkpoint(args.checkpoint)
    scores = evaluate(model, dataset.eval.images, dataset.eval.labels)
    print(f"checkpoint_step={ck.step}")
    print(f"n_eval={len(dataset.eval)}")
    print(f"word_accuracy={scores['word_accuracy']:.4f}")
    print(f"edit_distance={scores['mean_normalized_edit_distance']:.4f}")
    return 0


def cmd_decode(args) -> int:
    model, _ck = _model_from_checkpoint(args.checkpoint)
    img = read_pgm(args.image)
    batch = img[None, None, :, :].astype(np.float32)
    logits = model.forward(Tensor(batch), training=False)
    print(model.decode(logits.data)[0])
    return 0


def cmd_gradcheck(args) -> int:
    failures = 0
    for name, fn in standard_suite(seed=args.seed).items():
        report = fn()
        flag = "PASS" if report.passed else "FAIL"
        print(f"{name:18s} max_rel_err={report.max_rel_err:.3e} {flag}")
        failures += 0 if report.passed else 1
    if failures:
        print(f"{failures} op families failed", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    cp = load_config(args.config)
    data = build_data_settings(cp)
    ab = build_ablate_settings(cp)
    lexicon = _read_lexicon(data)
    manifest = build_dataset(lexicon, data.n_train, data.n_eval, data.dir,
                             seed=args.seed, image_hw=data.image_hw)
    dataset = load_dataset(manifest)
    noisy = None
    if "augment" in ab.tables:
        sigma = data.eval_noise_sigma if data.eval_noise_sigma > 0 else 0.03
        noisy_manifest = build_dataset(
            lexicon, 0, data.n_eval, f"{data.dir}-noisy", seed=args.seed,
            image_hw=data.image_hw, eval_noise_sigma=sigma)
        noisy = load_dataset(noisy_manifest)
    specs = []
    for table in ab.tables:
        specs.extend(GRID_BUILDERS[table](seeds=ab.seeds))
    results = run_cells(specs, dataset, ab.out_dir, steps=ab.steps,
                        noisy_eval=noisy, echo=print)
    trained = sum(1 for r in results if r.status == "trained")
    skipped = sum(1 for r in results if r.status == "skipped")
    failed = sum(1 for r in results if r.status == "failed")
    print(f"cells trained={trained} skipped={skipped} failed={failed}")
    if failed:
        print(f"{failed} cells failed; see *.failed markers in "
              f"{ab.out_dir}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    cp = load_config(args.config)
    ab = build_ablate_settings(cp)
    out_dir = args.out or str(Path(ab.out_dir) / "report")
    paths = build_report(ab.out_dir, out_dir)
    for kind in ("markdown", "csv", "png"):
        for p in paths.get(kind, []):
            print(f"{kind}={p}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cstrlab",
        description="Desk-scale scene-text recognition lab: synthetic data, "
                    "training, ablations, reports.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="INI config file ([model]/[data]/[train]/[ablate])")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for data generation / training / checks")

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the eval split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="read one word image with a checkpoint")
    common(p)
    p.add_argument("image", help="PGM image to decode")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every op family")
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run the ablation grids")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report",
                       help="aggregate ablation cells into tables + figures")
    common(p)
    p.add_argument("--out", default=None, help="report output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except CstrError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
