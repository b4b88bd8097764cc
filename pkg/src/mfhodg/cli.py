"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, classify, encoding
from .config import PipelineConfig, load_config, resolve_channels
from .descriptors import CHANNELS, PIPELINES, read_descriptor_dump, write_descriptor_dump
from .errors import ConfigError, DataError, MfHodgError
from .media_io import load_sequence, open_sequence, to_gray
from .motion import estimate_sequence_motion, write_motion_sidecar
from .pipeline import extract_sequence, run_pipeline
from .synth import CLASSES, SynthSpec, synth_corpus, synth_sequence

log = logging.getLogger("mfhodg")


def _add_pipeline_flags(p):
    p.add_argument("--config", help="JSON pipeline config; flags below override it")
    p.add_argument("--block-size", type=int)
    p.add_argument("--search-range", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--channels", help="rgb-trio | hodg | rgb+hodg, or a comma list")
    p.add_argument("--seed", type=int, help="sets both the GMM and the SVM seed")
    p.add_argument("--workers", type=int)


def _config_from(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    for name in ("block_size", "search_range", "tau", "stride", "K", "C", "channels",
                 "workers"):
        val = getattr(args, name, None)
        if val is not None:
            changes[name] = val
    if getattr(args, "seed", None) is not None:
        changes["gmm_seed"] = changes["svm_seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def cmd_synth(args):
    if args.corpus:
        path = synth_corpus(args.out, args.train, args.test, args.seed, frames=args.frames,
                            size=args.size, magnitude=args.magnitude)
        print(f"wrote corpus split {path}")
        return
    spec = SynthSpec(cls=args.cls, frames=args.frames, size=args.size,
                     magnitude=args.magnitude, texture_seed=args.texture_seed)
    seq = synth_sequence(spec, args.seed, args.out)
    print(f"wrote {seq.frame_count} frames to {seq.source}")


def cmd_motion(args):
    cfg = _config_from(args)
    seq = open_sequence(args.manifest)
    rgb, _ = load_sequence(seq)
    fields = estimate_sequence_motion(to_gray(rgb), cfg.block_size, cfg.search_range)
    write_motion_sidecar(args.out, fields)
    print(f"wrote {len(fields)} motion fields to {args.out}")


def cmd_extract(args):
    cfg = _config_from(args)
    seq = open_sequence(args.manifest)
    channels = resolve_channels(args.channels) if args.channels else CHANNELS
    dset = extract_sequence(seq, cfg, channels)
    write_descriptor_dump(args.out, dset)
    print(f"wrote {len(dset)} trajectory descriptors to {args.out}")


def cmd_train_gmm(args):
    mats = []
    for path in args.descriptors:
        dset = read_descriptor_dump(path)
        if args.channel not in dset.channels:
            raise DataError(f"{path}: no {args.channel} channel")
        mats.append(dset.channels[args.channel])
    X = np.vstack(mats)
    cb = encoding.train_gmm(X, args.K, args.seed, args.max_iter, args.variance_floor,
                            channel=args.channel)
    encoding.save_codebook(args.out, cb)
    print(f"trained K={cb.K} codebook on {len(X)} {args.channel} descriptors -> {args.out}")


def cmd_encode(args):
    books = {}
    for path in args.codebook:
        cb = encoding.load_codebook(path)
        if cb.channel in books:
            raise ConfigError(f"two codebooks for channel {cb.channel}")
        books[cb.channel] = cb
    classes = sorted(args.classes.split(","))
    ids = {c: i for i, c in enumerate(classes)}
    rows, labels = [], []
    for path, label in args.item:
        if label not in ids:
            raise ConfigError(f"label {label!r} not in --classes")
        dset = read_descriptor_dump(path)
        fvs = [encoding.fisher_encode(books[ch], dset.channels[ch], channel=ch)
               for ch in CHANNELS if ch in books]
        rows.append(encoding.concat_channels(fvs))
        labels.append(ids[label])
    encoding.write_fv_dump(args.out, np.array(rows), labels)
    print(f"wrote {len(rows)} Fisher vectors of dimension {len(rows[0])} to {args.out}")


def cmd_train_svm(args):
    ids, X = encoding.read_fv_dump(args.fv)
    classes = sorted(args.classes.split(","))
    labels = [classes[i] for i in ids]
    model = classify.train_svm(X, labels, args.C, args.seed, args.epochs)
    classify.save_model(args.out, model)
    print(f"trained {len(model.classes)} one-vs-rest SVMs -> {args.out}")


def cmd_eval(args):
    model = classify.load_model(args.model)
    ids, X = encoding.read_fv_dump(args.fv)
    labels = [model.classes[i] if i < len(model.classes) else f"#{i}" for i in ids]
    report = classify.evaluate(model, X, labels)
    if args.out:
        classify.save_report(args.out, report)
    print(report.table())


def cmd_bench(args):
    cfg = _config_from(args)
    seq = open_sequence(args.manifest)
    report = bench.measure_fps(seq, args.pipeline, args.repeats, args.warmup,
                               cfg.workers, cfg, args.motion_source)
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    print(report.table())


def cmd_run(args):
    cfg = _config_from(args)
    report = run_pipeline(cfg, args.split, args.out)
    print(report.table(f"MF({cfg.channels})"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfhodg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic RGBD sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="cls", choices=CLASSES, default="translate")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--magnitude", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture-seed", type=int)
    p.add_argument("--corpus", action="store_true",
                   help="write a labelled corpus of every class plus split.json")
    p.add_argument("--train", type=int, default=10, help="train sequences per class (--corpus)")
    p.add_argument("--test", type=int, default=5, help="test sequences per class (--corpus)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("motion-estimate", help="block-matching motion sidecar for a sequence")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_motion)

    p = sub.add_parser("extract", help="trajectory descriptors of one sequence")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-gmm", help="GMM codebook for one descriptor channel")
    p.add_argument("descriptors", nargs="+")
    p.add_argument("--channel", required=True, choices=CHANNELS)
    p.add_argument("--K", type=int, default=encoding.DEFAULT_K, dest="K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--variance-floor", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_gmm)

    p = sub.add_parser("encode", help="Fisher vectors of descriptor dumps")
    p.add_argument("--codebook", action="append", required=True)
    p.add_argument("--item", nargs=2, action="append", required=True,
                   metavar=("DUMP", "LABEL"))
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train-svm", help="one-vs-rest linear SVM on an FV dump")
    p.add_argument("fv")
    p.add_argument("--classes", required=True)
    p.add_argument("--C", type=float, default=classify.DEFAULT_C, dest="C")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_svm)

    p = sub.add_parser("eval", help="mAP of a model on an FV dump")
    p.add_argument("fv")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="descriptor extraction frames per second")
    p.add_argument("manifest")
    p.add_argument("--pipeline", choices=sorted(PIPELINES), default="hodg")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--motion-source", choices=("precomputed", "estimate"),
                   default="precomputed")
    p.add_argument("--json")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", help="full pipeline over a train/test split")
    p.add_argument("--split", required=True)
    p.add_argument("--out")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MfHodgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
