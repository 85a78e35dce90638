"""``docattr`` command line: render, extract, select, train, evaluate, vote and report.

Every subcommand writes into its ``--out`` directory, which must be new or empty
unless ``--force`` is given (``train --resume`` may continue an existing run).
Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from docattr import __version__
from docattr.backbone import BackboneConfig, BackboneKind, default_cache_dir
from docattr.dataset.corpus import MANIFEST_NAME, extract_corpus, render_corpus
from docattr.dataset.records import Manifest, read_manifest, write_manifest
from docattr.dataset.subset import Quotas, select_small_subset
from docattr.report import RunResult, emit_tables, export_curves, load_result
from docattr.trainer import (
    INSTANCE_MODES,
    ComponentImages,
    MetricsLog,
    OptimizerConfig,
    default_batch_size,
    evaluate,
    load_run,
    train,
)
from docattr.voting import (
    classify_page,
    decisions_csv,
    page_level_accuracy,
    predictions_csv,
    read_predictions,
    write_text,
)
from docattr.zoo.models import ModelConfig
from docattr.zoo.registry import RegistryError, parse_arch

log = logging.getLogger("docattr")


class CliError(RuntimeError):
    pass


class UsageError(CliError):
    """Bad invocation detected after parsing (exit status 2)."""


def _arch(value: str) -> str:
    try:
        return parse_arch(value)
    except RegistryError as exc:
        raise argparse.ArgumentTypeError(str(exc.args[0])) from None


def _prepare_out(path: str, force: bool, allow_existing: bool = False) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not allow_existing:
        if not force:
            raise CliError(f"{out} already exists and is not empty; pass --force to replace it")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _relocate(manifest: Manifest, src: Path, dst_dir: Path) -> Manifest:
    """Rewrite relative page image paths so they resolve from ``dst_dir``."""
    pages = []
    for p in manifest.pages:
        img = Path(p.image_path)
        if not img.is_absolute():
            img = Path(os.path.relpath((src.parent / img).resolve(), dst_dir.resolve()))
        pages.append(replace(p, image_path=img.as_posix()))
    return Manifest(manifest.records, pages, manifest.meta)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands -----------------------------------------------------------------

def cmd_render(args) -> None:
    out = _prepare_out(args.out, args.force)
    manifest = render_corpus(out, args.pages, args.seed)
    write_manifest(manifest, out / MANIFEST_NAME)
    log.info("rendered %d pages into %s", len(manifest.pages), out)


def cmd_extract(args) -> None:
    src = Path(args.manifest)
    manifest = read_manifest(src)
    out = _prepare_out(args.out, args.force)
    components, rejected = extract_corpus(manifest, src)
    write_manifest(_relocate(components, src, out), out / "components.jsonl")
    lines = ["page_id,index,x,y,w,h,reason"]
    lines += [f"{pid},{idx},{x},{y},{w},{h},{reason}" for pid, idx, (x, y, w, h), reason in rejected]
    (out / "rejected_words.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("%d components, %d word boxes rejected", len(components.records), len(rejected))


def cmd_select(args) -> None:
    src = Path(args.manifest)
    manifest = read_manifest(src)
    out = _prepare_out(args.out, args.force)
    subset = select_small_subset(manifest, Quotas(args.quota_train, args.quota_val, args.quota_test), args.seed)
    write_manifest(_relocate(subset, src, out), out / "subset.jsonl")
    _write_json(out / "shortfall.json", subset.meta["shortfall"])
    log.info("selected %d components (%d class shortfalls)", len(subset.records), len(subset.meta["shortfall"]))


def _backbone_config(args, seed: int) -> BackboneConfig:
    kind = BackboneKind(args.backbone)
    return BackboneConfig(kind, args.backbone_weights, frozen=kind != BackboneKind.TRAINABLE_TINY, seed=seed)


def _train_settings(args) -> dict:
    """Flags override the JSON ``--config`` file, which overrides built-in defaults."""
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(file_cfg) - set(_TRAIN_KEYS)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
    settings = {}
    for key, default in _TRAIN_KEYS.items():
        flag = getattr(args, key, None)
        settings[key] = flag if flag is not None else file_cfg.get(key, default)
    if settings["arch"] is None:
        raise UsageError("train needs --arch (or an 'arch' entry in --config)")
    try:
        settings["arch"] = parse_arch(settings["arch"])
    except RegistryError as exc:
        raise UsageError(str(exc)) from None
    return settings


_TRAIN_KEYS = {
    "arch": None,
    "instance": "patch",
    "epochs": 30,
    "batch_size": None,
    "lr": 1e-4,
    "step_size": 10,
    "seed": 0,
    "steps_per_epoch": None,
    "backbone": "deterministic_stub",
    "backbone_weights": None,
    "no_softmax_weights": False,
}


def cmd_train(args) -> None:
    s = _train_settings(args)
    src = Path(args.manifest)
    manifest = read_manifest(src)
    out = _prepare_out(args.out, args.force, allow_existing=args.resume)
    cfg = OptimizerConfig(
        lr0=s["lr"],
        step_size=s["step_size"],
        epochs=s["epochs"],
        batch_size=s["batch_size"] or default_batch_size(s["arch"], s["instance"]),
        seed=s["seed"],
        steps_per_epoch=s["steps_per_epoch"],
    )
    args.backbone, args.backbone_weights = s["backbone"], s["backbone_weights"]
    model_cfg = ModelConfig(softmax_weights=not s["no_softmax_weights"], seed=s["seed"])
    result = train(
        s["arch"], manifest, _backbone_config(args, s["seed"]), cfg,
        instance=s["instance"], model_config=model_cfg, run_dir=out, manifest_path=src,
        cache_dir=default_cache_dir(), resume=args.resume,
        progress=lambda row: log.info("epoch %d %s %s", row.epoch, row.split,
                                      " ".join(f"{t}={v:.3f}" for t, v in row.accuracy.items())),
    )
    export_curves(result.metrics, out / "curves.csv")
    log.info("best epoch %d; run written to %s", result.best_epoch, out)


def cmd_evaluate(args) -> None:
    run = load_run(args.run, args.checkpoint)
    src = Path(args.manifest)
    manifest = read_manifest(src)
    out = _prepare_out(args.out, args.force)
    images = ComponentImages(manifest, src)
    instance = run.config["instance"]
    splits = ["train", "val", "test"] if args.split == "all" else [args.split]
    accuracy, losses = {}, {}
    for split in splits:
        if not manifest.select(split=split):
            log.warning("split %s is empty; skipped", split)
            continue
        res = evaluate(run.model, manifest, split, run.backbone, instance=instance, images=images,
                       seed=run.config["optimizer"]["seed"])
        accuracy[split], losses[split] = res.accuracy, res.losses
        write_text(out / f"predictions_{split}.csv", predictions_csv(res.keys, res.page_ids, res.probabilities))
    if not accuracy:
        raise CliError("no requested split has components")
    result = RunResult(
        run.config["arch"], instance, accuracy,
        meta={"config_hash": run.config["config_hash"], "seed": run.config["optimizer"]["seed"],
              "checkpoint_epoch": run.meta["epoch"], "run": str(Path(args.run)), "losses": losses},
    )
    _write_json(out / "evaluation.json", result.to_json())
    for split, acc in accuracy.items():
        print(split, " ".join(f"{t}={v:.4f}" for t, v in acc.items()))


def cmd_vote(args) -> None:
    posteriors = read_predictions(args.predictions)
    truth_manifest = read_manifest(args.truth)
    truth = {p.page_id: p.labels for p in truth_manifest.pages}
    out = _prepare_out(args.out, args.force)
    decisions = [classify_page(posteriors[pid]) for pid in sorted(posteriors)]
    acc = page_level_accuracy(decisions, truth)
    write_text(out / "decisions.csv", decisions_csv(decisions))
    payload = {"page_accuracy": acc, "pages": len(decisions), "predictions": str(args.predictions)}
    sibling = Path(args.predictions).parent / "evaluation.json"
    if sibling.is_file():
        payload["config_hash"] = json.loads(sibling.read_text())["meta"].get("config_hash")
    _write_json(out / "page_accuracy.json", payload)
    print(" ".join(f"{t}={v:.4f}" for t, v in acc.items()))


def cmd_report(args) -> None:
    results = [load_result(Path(e) / "evaluation.json" if Path(e).is_dir() else e) for e in args.eval]
    by_hash = {r.meta.get("config_hash"): r for r in results}
    for v in args.votes or []:
        path = Path(v) / "page_accuracy.json" if Path(v).is_dir() else Path(v)
        vote_obj = json.loads(path.read_text())
        target = by_hash.get(vote_obj.get("config_hash"))
        if target is None:
            raise CliError(f"{path}: no evaluated run matches its config hash")
        target.page_accuracy = vote_obj["page_accuracy"]
    out = _prepare_out(args.out, args.force)
    for f in emit_tables(results, args.format, out):
        log.info("wrote %s", f)
    for r in results:
        run_dir = r.meta.get("run")
        metrics = Path(run_dir) / "metrics.csv" if run_dir else None
        if metrics and metrics.is_file():
            name = f"curves_{r.arch.replace(':', '-')}_{r.instance}.csv"
            export_curves(MetricsLog.read_csv(metrics), out / name)


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docattr", description="Font and scan attribute recognition pipeline.")
    parser.add_argument("--version", action="version", version=f"docattr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, manifest=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="replace an existing non-empty --out")
        if manifest:
            p.add_argument("--manifest", required=True, help="input manifest (.jsonl)")

    p = sub.add_parser("render-synthetic", help="render labelled synthetic pages")
    common(p, manifest=False)
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("extract", help="crop words and tile patches from every page")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("select-subset", help="pick the balanced small subset")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quota-train", type=int, default=400)
    p.add_argument("--quota-val", type=int, default=100)
    p.add_argument("--quota-test", type=int, default=150)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train an architecture on a manifest")
    common(p)
    p.add_argument("--config", help="JSON file with any of the options below")
    p.add_argument("--arch", type=_arch)
    p.add_argument("--instance", choices=INSTANCE_MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--step-size", type=int, help="epochs between x0.1 learning-rate decays")
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--backbone", choices=[k.value for k in BackboneKind])
    p.add_argument("--backbone-weights", help="ResNet-50 state dict for pretrained_resnet50")
    p.add_argument("--no-softmax-weights", action="store_true", default=None,
                   help="ablation: use raw instance weights in weighted models")
    p.add_argument("--resume", action="store_true", help="continue from the run's last checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="component-level accuracy and predictions of a trained run")
    common(p)
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--checkpoint", choices=["best", "last"], default="best")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("vote", help="page-level decisions from component predictions")
    common(p, manifest=False)
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True, help="manifest holding page labels")
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("report", help="accuracy tables and training curves")
    common(p, manifest=False)
    p.add_argument("--eval", nargs="+", required=True, help="evaluate output directories")
    p.add_argument("--votes", nargs="*", help="vote output directories")
    p.add_argument("--format", choices=["csv", "markdown", "both"], default="both")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"docattr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CliError, ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"docattr {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
