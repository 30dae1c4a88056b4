"""Command-line interface for the full pipeline.

Exit codes: 0 success, 1 usage error (unknown command or flag, missing
required flag), 2 data or contract error (missing file, corrupt checkpoint,
invalid config value, shape mismatch).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .audio import load_clip
from .config import RunConfig, echo_config, load_config
from .corpus import CorpusConfig, Manifest, build_corpus, load_manifest
from .encoders import AlignmentModel
from .errors import DataError, EmoalignError
from .gradcheck import LOSS_NAMES, run_suite, suite_passed
from . import pipeline as P
from .report import (write_ablation_report, write_comparison_report,
                     write_sweep_report)

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on stderr with exit code 1."""

    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="emoalign",
                     description="Audio-text alignment, soundscape prompt "
                                 "tuning, and cross-modal emotion classification.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name: str, help_text: str, *, config=True, seed=True, out=False,
            manifest=False, checkpoint=False, classifier=False, clip=False,
            split=False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", metavar="PATH",
                           help="key = value config file (defaults: desk profile)")
        if seed:
            p.add_argument("--seed", type=int, metavar="N",
                           help="training seed (default 0; corpus seed comes "
                                "from the config)")
        if out:
            p.add_argument("--out", required=True, metavar="DIR",
                           help="output directory")
        if manifest:
            p.add_argument("--manifest", required=True, metavar="PATH",
                           help="corpus manifest.tsv (or its directory)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, metavar="PATH",
                           help="alignment model checkpoint")
        if classifier:
            p.add_argument("--classifier", metavar="PATH",
                           help="classifier checkpoint")
        if clip:
            p.add_argument("--clip", required=True, metavar="WAV",
                           help="input audio clip")
        if split:
            p.add_argument("--split", required=True,
                           choices=("train", "test_in", "test_dg"))
        return p

    add("synth-data", "generate the synthetic corpus", out=True, seed=False)
    add("pretrain", "contrastive audio-text alignment", out=True, manifest=True)
    add("acpt", "tune per-soundscape prompt vectors", out=True, manifest=True,
        checkpoint=True)
    add("train-classifier", "train the text-feature classifier head", out=True,
        checkpoint=True)
    p_inf = add("infer", "classify one clip", checkpoint=True, clip=True,
                seed=False)
    p_inf.add_argument("--classifier", required=True, metavar="PATH",
                       help="classifier checkpoint")
    add("eval", "score a split", manifest=True, checkpoint=True,
        classifier=True, split=True, out=True)
    add("ablate", "alignment x prompt-tuning study over seeds", out=True,
        manifest=True)
    add("sweep-prompt-len", "prompt-count study over seeds", out=True,
        manifest=True)
    add("gradcheck", "finite-difference gradient suite", config=False,
        seed=False)
    return parser


def _manifest_path(arg: str) -> Path:
    p = Path(arg)
    return p / "manifest.tsv" if p.is_dir() else p


def _load_manifest(arg: str) -> Manifest:
    path = _manifest_path(arg)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    return load_manifest(path)


def _features(manifest: Manifest, out_dir: Path | None) -> np.ndarray:
    cache = out_dir / "features.npz" if out_dir is not None else None
    return P.compute_features(manifest, cache_path=cache)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_writer(out: Path, name: str, cfg: RunConfig, seed: int) -> P.RunLogWriter:
    header = [f"seed = {seed}", "effective config:"]
    header += ["  " + line for line in echo_config(cfg).splitlines()]
    return P.RunLogWriter(out / name, header)


def _seed(args) -> int:
    seed = getattr(args, "seed", None)
    if seed is None:
        return 0
    if seed < 0:
        raise DataError(f"--seed must be non-negative, got {seed}")
    return seed


def _pretrained_model(cfg: RunConfig, seed: int, manifest: Manifest,
                      mels: np.ndarray, out: Path, log) -> AlignmentModel:
    """Pretrain once per (out, seed) and reuse the cached checkpoint."""
    path = out / f"aligned_seed{seed}.ckpt"
    model = AlignmentModel(seed, n_prompt=cfg.acpt.n_prompt,
                           tau_init=cfg.pretrain.tau_init)
    if path.exists():
        P.load_model(model, path)
        return model
    P.pretrain(model, manifest, mels, cfg, seed, log)
    P.save_model(model, path)
    return model


def _cmd_synth_data(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args)
    corpus_cfg = CorpusConfig(seed=cfg.corpus.seed,
                              train_clips=cfg.corpus.train_clips,
                              test_clips=cfg.corpus.test_clips,
                              dg_clips=cfg.corpus.dg_clips)
    manifest = build_corpus(corpus_cfg, out)
    print(f"wrote {len(manifest.records)} clips under {out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args)
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    mels = _features(manifest, out)
    model = AlignmentModel(seed, n_prompt=cfg.acpt.n_prompt,
                           tau_init=cfg.pretrain.tau_init)
    with _log_writer(out, "pretrain_log.tsv", cfg, seed) as log:
        P.pretrain(model, manifest, mels, cfg, seed, log)
    path = out / "model.ckpt"
    P.save_model(model, path)
    print(f"wrote {path}")
    return 0


def _cmd_acpt(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args)
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    model = AlignmentModel(seed, n_prompt=cfg.acpt.n_prompt,
                           tau_init=cfg.pretrain.tau_init)
    P.load_model(model, args.checkpoint)
    with _log_writer(out, "acpt_log.tsv", cfg, seed) as log:
        P.run_acpt(model, manifest, cfg, seed, log)
    path = out / "model_tuned.ckpt"
    P.save_model(model, path)
    print(f"wrote {path}")
    return 0


def _cmd_train_classifier(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args)
    out = _out_dir(args)
    model = AlignmentModel(seed, n_prompt=cfg.acpt.n_prompt,
                           tau_init=cfg.pretrain.tau_init)
    P.load_model(model, args.checkpoint)
    features, labels = P.build_text_training_set(model, cfg)
    with _log_writer(out, "classifier_log.tsv", cfg, seed) as log:
        result = P.train_classifier(features, labels, cfg, seed, log)
    path = out / "classifier.ckpt"
    P.save_classifier(result, path)
    print(f"wrote {path} (train accuracy {result.train_accuracy:.4f})")
    return 0


def _cmd_infer(args) -> int:
    model = AlignmentModel(0)
    P.load_model(model, args.checkpoint)
    weights = P.load_classifier(args.classifier)
    clip_path = Path(args.clip)
    if not clip_path.exists():
        raise DataError(f"clip not found: {clip_path}")
    clip = load_clip(clip_path)
    print(P.infer_clip(model, weights, clip))
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    mels = _features(manifest, out)
    model = AlignmentModel(0, n_prompt=cfg.acpt.n_prompt,
                           tau_init=cfg.pretrain.tau_init)
    P.load_model(model, args.checkpoint)
    if args.classifier is not None:
        weights = P.load_classifier(args.classifier)
        head = "classifier"
    else:
        weights = P.zero_shot_weights(model)
        head = "zero-shot"
    result = P.evaluate_split(model, weights, manifest, mels, args.split)
    table = out / "eval.tsv"
    with open(table, "w", encoding="utf-8") as fh:
        fh.write(f"# split: {args.split}; head: {head}\n")
        fh.write("metric\tvalue\n")
        fh.write(f"wa\t{result.wa!r}\n")
        fh.write(f"ua\t{result.ua!r}\n")
        for row in result.confusion:
            fh.write("confusion\t" + ",".join(str(int(v)) for v in row) + "\n")
    print(f"{args.split} {head}: WA {result.wa:.4f}  UA {result.ua:.4f}")
    print(f"wrote {table}")
    return 0


def _study_seeds(base: int) -> tuple[int, int, int]:
    return (base, base + 1, base + 2)


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    mels = _features(manifest, out)
    seeds = _study_seeds(_seed(args))
    with _log_writer(out, "ablate_log.tsv", cfg, seeds[0]) as log:
        def factory(seed: int, pretrained: bool, n_prompt: int) -> AlignmentModel:
            if pretrained:
                return _pretrained_model(cfg, seed, manifest, mels, out, log)
            return AlignmentModel(seed, n_prompt=n_prompt,
                                  tau_init=cfg.pretrain.tau_init)

        rows = P.ablate(manifest, mels, cfg, seeds, factory, log)
        comparison = P.classifier_loss_comparison(manifest, mels, cfg, seeds,
                                                  factory, log)
    for paths in (write_ablation_report(rows, out),
                  write_comparison_report(comparison, out)):
        for path in paths.values():
            print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    mels = _features(manifest, out)
    seeds = _study_seeds(_seed(args))
    with _log_writer(out, "sweep_log.tsv", cfg, seeds[0]) as log:
        def factory(seed: int, pretrained: bool, n_prompt: int) -> AlignmentModel:
            base = _pretrained_model(cfg, seed, manifest, mels, out, log)
            if n_prompt == base.bank.prompts.shape[1]:
                return base
            model = AlignmentModel(seed, n_prompt=n_prompt,
                                   tau_init=cfg.pretrain.tau_init)
            P.load_model(model, out / f"aligned_seed{seed}.ckpt")
            return model

        rows = P.prompt_length_sweep(manifest, mels, cfg, seeds, factory,
                                     log=log)
    for path in write_sweep_report(rows, out).values():
        print(f"wrote {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    reports = run_suite()
    loss_reports = [r for r in reports
                    if r.name.split(".", 1)[0] in LOSS_NAMES]
    op_reports = [r for r in reports if r not in loss_reports]
    worst_op = max(op_reports, key=lambda r: r.max_rel_err)
    print(f"{'pass' if all(r.passed for r in op_reports) else 'FAIL'}  "
          f"tensor ops: {len(op_reports)} cases, worst {worst_op.name} "
          f"max rel err {worst_op.max_rel_err:.3e}")
    for loss in LOSS_NAMES:
        cases = [r for r in loss_reports if r.name.split(".", 1)[0] == loss]
        status = "pass" if all(r.passed for r in cases) else "FAIL"
        worst = max(cases, key=lambda r: r.max_rel_err)
        print(f"{status}  {loss}: {len(cases)} cases, "
              f"max rel err {worst.max_rel_err:.3e}")
    return 0 if suite_passed(reports) else 1


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "pretrain": _cmd_pretrain,
    "acpt": _cmd_acpt,
    "train-classifier": _cmd_train_classifier,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep-prompt-len": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return _COMMANDS[args.command](args)
    except EmoalignError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_EXIT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
