"""Command-line entry point: ``saoosc <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as P
from .channel import parse_snr
from .config import METHODS, ConfigError, dump_config, load_config
from .importance import (AnnotationError, AnnotationTransportError, agreement,
                         fetch_remote_annotation, object_to_patch, parse_annotation,
                         read_patch_labels_csv, rule_annotate, serialize_annotation,
                         write_patch_labels_csv)
from .jscc_codec import dump_stream
from .metrics import emit_report
from .scene import read_objects_jsonl, read_ppm, tokenize, write_objects_jsonl, write_ppm

log = logging.getLogger("saoosc")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="INI experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saoosc", description="Scenario-aware semantic image transmission")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render synthetic train/test scenes with rule labels")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("annotate", help="label objects in exported scenes (rules or a remote annotator)")
    _common(p)
    p.add_argument("--images", required=True, help="directory of <id>.ppm + <id>.objects.jsonl")
    p.add_argument("--endpoint", help="annotator URL; rule-based labels when omitted")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--out", required=True)

    for name, helptext in (("pretrain", "stage 1: noiseless HV pretraining"),
                           ("train", "stage 2: joint training with the channel in the loop")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--method", choices=METHODS + ("all",), default="all")
        p.add_argument("--out", required=True)

    p = sub.add_parser("transmit", help="send one image through a trained system")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PPM image")
    p.add_argument("--labels", required=True,
                   help="patch-level CSV, or object-level JSON together with --objects")
    p.add_argument("--objects", help="detections JSONL for object-level labels")
    p.add_argument("--snr", default=None, help="test SNR in dB ('inf' for noiseless)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="compare all configured methods on the test split")
    _common(p)
    p.add_argument("--checkpoints", help="directory holding <method>.ckpt (default: config or --out)")
    p.add_argument("--train-missing", action="store_true", help="train methods without a checkpoint first")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate-labels", help="per-category agreement of predicted vs reference labels")
    p.add_argument("--pred", required=True, help="object-level JSON or patch-level CSV")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", help="write the table as CSV here as well")
    return ap


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return load_config(args.config, overrides)


def _methods(cfg, choice: str) -> list[str]:
    return list(cfg.experiment.methods) if choice == "all" else [choice]


def _progress(stage, epoch, row):
    log.info("%s epoch %d: train %.5f eval %.5f", stage, epoch, row["train_loss"], row["eval_loss"])


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    for split in ("train", "test"):
        data = P.synthetic_dataset(cfg, split)
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        for i, sid in enumerate(data.ids):
            write_ppm(d / f"{sid}.ppm", data.images[i])
            write_objects_jsonl(d / f"{sid}.objects.jsonl", data.objects[i])
            (d / f"{sid}.labels.json").write_text(serialize_annotation(data.labels[i]), encoding="utf-8")
            write_patch_labels_csv(d / f"{sid}.labels.csv", data.levels[i])
        log.info("%s: %d scenes -> %s", split, len(data), d)
    dump_config(cfg, out / "config.ini")


def cmd_annotate(args) -> None:
    cfg = _config(args)
    src = Path(args.images)
    paths = sorted(src.glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm images in {src}")
    spec = cfg.data.scene_spec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        stem = p.name[:-4]
        image = read_ppm(p)
        objects = read_objects_jsonl(src / f"{stem}.objects.jsonl")
        if args.endpoint:
            labels = fetch_remote_annotation(image, objects, args.endpoint, timeout=args.timeout)
        else:
            labels = rule_annotate(objects, spec)
        (out / f"{stem}.labels.json").write_text(serialize_annotation(labels), encoding="utf-8")
        levels = object_to_patch(objects, labels, tokenize(image, cfg.data.patch_size))
        write_patch_labels_csv(out / f"{stem}.labels.csv", levels)


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    train = P.load_dataset(cfg, "train")
    done = set()
    for m in _methods(cfg, args.method):
        w = P.method_spec(m).weighting
        if w in done:
            continue
        _, tl = P.pretrain_hv(cfg, m, train, args.out, _progress)
        done.add(w)
        print(f"{m}: {tl.checkpoint} (eval loss {tl.initial_loss:.5f} -> {tl.final_loss:.5f})")


def cmd_train(args) -> None:
    cfg = _config(args)
    missing = [P.hv_checkpoint_path(args.out, m) for m in _methods(cfg, args.method)
               if not P.hv_checkpoint_path(args.out, m).is_file()]
    if missing:
        raise P.MissingCheckpointError(f"run 'pretrain' first; missing {', '.join(map(str, missing))}")
    train = P.load_dataset(cfg, "train")
    for m in _methods(cfg, args.method):
        system, tl = P.train_joint(cfg, m, train, P.hv_checkpoint_path(args.out, m), args.out, _progress)
        print(f"{m}: {tl.checkpoint} (eval loss {tl.initial_loss:.5f} -> {tl.final_loss:.5f}, "
              f"eta {system.rate.eta:.5g})")


def _load_levels(args, image) -> np.ndarray:
    grid = tokenize(image, P.read_meta(args.checkpoint)["hv_config"]["patch_size"])
    if args.labels.endswith(".csv"):
        levels = read_patch_labels_csv(args.labels)
        if levels.size != grid.L:
            raise ValueError(f"{args.labels}: {levels.size} labels for {grid.L} patches")
        return levels
    if not args.objects:
        raise ValueError("object-level labels need --objects with the detections JSONL")
    labels = parse_annotation(Path(args.labels).read_text(encoding="utf-8"))
    return object_to_patch(read_objects_jsonl(args.objects), labels, grid)


def cmd_transmit(args) -> None:
    cfg = _config(args)
    system = P.load_system(args.checkpoint, cfg)
    image = read_ppm(args.image)
    levels = _load_levels(args, image)
    snr = parse_snr(args.snr) if args.snr is not None else cfg.channel.train_snr_db
    stem = Path(args.image).name.rsplit(".", 1)[0]
    tx = P.transmit(image, levels, system, snr, cfg.train.seed, stem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / f"{stem}_recon.ppm", tx.reconstruction)
    dump_stream(out / f"{stem}_received.bin", tx.received)
    emit_report([tx.report], out / f"{stem}_report.csv", out, (cfg.data.rows, cfg.data.cols),
                tuple(cfg.jscc.V), cfg.data.patch_size)
    r = tx.report
    print(f"{stem}: cbr {r.cbr:.5f}  SAD {r.sad_db:.2f} dB  level-3 PSNR {r.psnr_by_level[3]}")


def cmd_benchmark(args) -> None:
    cfg = _config(args)
    ckpt_dir = Path(args.checkpoints or cfg.experiment.checkpoints or args.out)
    if args.train_missing:
        todo = [m for m in cfg.experiment.methods if not P.system_checkpoint_path(ckpt_dir, m).is_file()]
        if todo:
            train = P.load_dataset(cfg, "train")
            for m in todo:
                P.train_method(cfg, m, train, ckpt_dir, _progress)
    else:
        P.load_systems(cfg, ckpt_dir)   # fail before writing anything
    path = P.run_benchmark(cfg, args.out, ckpt_dir)
    print(path)


def _read_labels(path: str):
    if path.endswith(".csv"):
        return [int(v) for v in read_patch_labels_csv(path)]
    return {lab.object_id: lab.level for lab in parse_annotation(Path(path).read_text(encoding="utf-8"))}


def cmd_evaluate_labels(args) -> None:
    table = agreement(_read_labels(args.pred), _read_labels(args.ref))
    text = table.format()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")


COMMANDS = {
    "gen-data": cmd_gen_data, "annotate": cmd_annotate, "pretrain": cmd_pretrain, "train": cmd_train,
    "transmit": cmd_transmit, "benchmark": cmd_benchmark, "evaluate-labels": cmd_evaluate_labels,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"saoosc {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError, AnnotationError,
            AnnotationTransportError, json.JSONDecodeError) as exc:
        print(f"saoosc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
