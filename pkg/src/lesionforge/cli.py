"""``lesionforge`` command line.

Exit codes: 0 success, 1 fatal configuration/format error, 2 every input failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import udls
from .config import format_config, load_config
from .data import ManifestError, read_manifest
from .features import REGISTRY
from .pipeline import (
    AllInputsFailed,
    FeatureSources,
    PipelineError,
    load_embeddings,
    load_model,
    load_network,
    run_classify,
    run_evaluate,
    run_segment,
    run_train,
    save_model,
)
from .unet import build_unet_schedule, init_random_weights

logger = logging.getLogger("lesionforge")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--threads", type=int, help="parallel images")
    p.add_argument("--seed", type=int, help="seed for the GMM and SVM stages")
    p.add_argument("--base-width", type=int, help="UNet base channel width")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _sources_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--unet-weights", required=True, help="UDLS container with segmentation UNet weights")
    p.add_argument("--cnn-weights", action="append", default=[], help="UDLS container of an embedding network (repeatable)")
    p.add_argument("--embeddings", help="UDLS container of precomputed per-image embeddings")
    p.add_argument("--handcrafted-only", action="store_true", help="ignore CNN embedding networks")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="lesionforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", parents=[common], help="hybrid UNet/GMM lesion segmentation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--unet-weights", required=True)

    p = sub.add_parser("train-svm", parents=[common], help="train the hybrid-feature SVM")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="output model container")
    _sources_args(p)
    p.add_argument("--kernel", choices=["linear", "rbf"])
    p.add_argument("--C", type=float, dest="svm_c")
    p.add_argument("--gamma", dest="svm_gamma")

    for name, desc in (("classify", "predict labels"), ("evaluate", "predict and score against manifest labels")):
        p = sub.add_parser(name, parents=[common], help=desc)
        p.add_argument("--manifest", required=True)
        p.add_argument("--model", required=True)
        _sources_args(p)

    p = sub.add_parser("features", help="handcrafted feature registry")
    fsub = p.add_subparsers(dest="action", required=True)
    fsub.add_parser("list", help="print index, name and family of all 200 features")

    p = sub.add_parser("weights", help="weight container utilities")
    wsub = p.add_subparsers(dest="action", required=True)
    w = wsub.add_parser("init-random", help="write a randomly initialized UNet container")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--base-width", type=int, default=32)
    w.add_argument("--out", required=True)

    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise PipelineError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.seed is not None:
        overrides["gmm_seed"] = overrides["svm_seed"] = args.seed
    if args.base_width is not None:
        overrides["base_width"] = args.base_width
    if args.out is not None:
        overrides["output_dir"] = args.out
    for key in ("svm_c", "svm_gamma"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "kernel", None):
        overrides["svm_kernel"] = args.kernel
    if getattr(args, "handcrafted_only", False):
        overrides["cnn_features"] = False
    return load_config(args.config, **overrides)


def _sources(args, cfg) -> FeatureSources:
    unet = load_network(args.unet_weights, cfg.base_width)
    cnns = [load_network(p, cfg.base_width) for p in args.cnn_weights] if cfg.cnn_features else []
    emb = load_embeddings(args.embeddings) if args.embeddings else None
    return FeatureSources(unet, cnns, emb)


def _run(args) -> int:
    if args.command == "features":
        for f in REGISTRY:
            print(f"{f.index}\t{f.name}\t{f.family}")
        return 0
    if args.command == "weights":
        schedule = build_unet_schedule(args.base_width)
        udls.save(args.out, init_random_weights(schedule, args.seed))
        print(f"wrote {len(schedule.parameter_shapes())} tensors for {len(schedule)} layers to {args.out}")
        return 0

    cfg = _config(args)
    if args.command == "config":
        sys.stdout.write(format_config(cfg))
        return 0
    out = Path(cfg.output_dir)
    rows = read_manifest(args.manifest)

    if args.command == "segment":
        unet = load_network(args.unet_weights, cfg.base_width)
        report = run_segment(rows, unet, cfg, out)
        print((out / "segment_report.txt").read_text(), end="")
        return 0 if report["n_segmented"] or not rows else 2

    sources = _sources(args, cfg)
    if args.command == "train-svm":
        model, _ = run_train(rows, sources, cfg, out)
        save_model(args.model, model)
        print((out / "train_report.txt").read_text(), end="")
        return 0

    model = load_model(args.model)
    if args.command == "classify":
        run_classify(rows, model, sources, cfg, out)
        print(f"wrote {out / 'predictions.csv'}")
        return 0
    run_evaluate(rows, model, sources, cfg, out)
    print((out / "evaluate_report.txt").read_text(), end="")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except AllInputsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, ManifestError, udls.UdlsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
