"""Command line entry point: ``patchprint <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .degrade import gaussian_blur, jpeg_compress
from .errors import PatchprintError
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.data import load_manifest, make_synthetic_corpus, resolve_paths, split
from .harness.evaluate import Degradation, evaluate, score_images
from .harness.train import (TrainConfig, classifier_from_checkpoint,
                            essp_checkpoint, front_from_checkpoint, ssp_checkpoint, train_essp,
                            train_ssp)
from .imagecore import Image, load_image, resize_bilinear, save_image
from .models import MOST_COMPLEX, SIMPLEST, PipelineConfig, extract_input_patch
from .srm import fingerprint_array, residual_to_gray

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
_SELECT = {"simplest": SIMPLEST, "complex": MOST_COMPLEX, "most_complex": MOST_COMPLEX}


class UsageError(Exception):
    pass


def _manifest_samples(path: str):
    return resolve_paths(load_manifest(path), Path(path).parent)


def _add_train_args(p: argparse.ArgumentParser, essp: bool) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--aug-prob", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="JSON-lines epoch log (default: <out>.log.jsonl)")
    if essp:
        p.add_argument("--ssp", required=True, help="trained classifier checkpoint")
        p.add_argument("--no-perception", action="store_true",
                       help="condition on the reconstruction embedding only")
        p.add_argument("--unfreeze-ssp", action="store_true",
                       help="also update the classifier through a BCE term")
    else:
        p.add_argument("--patch", type=int, default=32)
        p.add_argument("--crops", type=int, default=64)
        p.add_argument("--select", choices=sorted(_SELECT), default="simplest")
        p.add_argument("--topk", type=int, default=1)
        p.add_argument("--no-srm", action="store_true")
        p.add_argument("--luma-diversity", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchprint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic real/fake corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="images per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=2.0, help="sensor noise std in 8-bit levels")
    p.add_argument("--size", type=int, default=256, help="image side in pixels")

    _add_train_args(sub.add_parser("train-ssp", help="train the patch classifier"), essp=False)
    _add_train_args(sub.add_parser("train-essp", help="train the restoration front end"),
                    essp=True)

    p = sub.add_parser("score", help="print P(real) for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=["ssp", "essp"], default="ssp")

    p = sub.add_parser("eval", help="metrics over a manifest's test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["ssp", "essp"], default="ssp")
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--blur", type=float, metavar="SIGMA")
    g.add_argument("--jpeg", type=int, metavar="QF")
    p.add_argument("--report", required=True)

    p = sub.add_parser("inspect", help="export the chosen patch and its residual planes")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("degrade", help="blur or compress one image")
    p.add_argument("--image", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--sigma", type=float)
    g.add_argument("--qf", type=int)
    p.add_argument("--out", required=True)
    return parser


def _cmd_synth(args) -> None:
    if args.n < 1 or args.size < 8:
        raise UsageError("--n must be >= 1 and --size >= 8")
    manifest, samples = make_synthetic_corpus(args.out, args.n, args.seed, size=args.size,
                                              noise_sigma=args.noise / 255.0)
    print(f"wrote {len(samples)} images and {manifest}")


def _train_config(args, pipeline: PipelineConfig) -> TrainConfig:
    if not 0.0 <= args.aug_prob <= 1.0:
        raise UsageError("--aug-prob must lie in [0, 1]")
    try:
        return TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr,
                           aug_prob=args.aug_prob, seed=args.seed, pipeline=pipeline)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _cmd_train_ssp(args) -> None:
    try:
        pipeline = PipelineConfig(patch=args.patch, crops=args.crops, select=_SELECT[args.select],
                                  topk=args.topk, use_srm=not args.no_srm,
                                  luma_diversity=args.luma_diversity, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _train_config(args, pipeline)
    samples = split(_manifest_samples(args.manifest), "train")
    result = train_ssp(samples, cfg, log_path=args.log or args.out + ".log.jsonl")
    save_checkpoint(ssp_checkpoint(result.model, cfg), args.out)
    print(f"final loss {result.history[-1]['loss']:.6f}" if result.history else "no epochs run")


def _cmd_train_essp(args) -> None:
    clf, pipeline = classifier_from_checkpoint(load_checkpoint(args.ssp))
    cfg = _train_config(args, pipeline)
    samples = split(_manifest_samples(args.manifest), "train")
    result = train_essp(samples, clf, cfg, use_perception=not args.no_perception,
                        unfreeze_ssp=args.unfreeze_ssp,
                        log_path=args.log or args.out + ".log.jsonl")
    save_checkpoint(essp_checkpoint(result.model, clf, cfg, args.unfreeze_ssp), args.out)
    last = result.history[-1]
    print(f"final rec {last['rec_loss']:.6g} perc {last['perc_loss']:.6g}")


def _load_models(path: str, mode: str):
    ckpt = load_checkpoint(path)
    clf, pipeline = classifier_from_checkpoint(ckpt)
    front = None
    if mode == "essp":
        if ckpt.config.get("kind") != "essp":
            raise UsageError("--mode essp needs a checkpoint written by train-essp")
        front = front_from_checkpoint(ckpt)
    return clf, pipeline, front


def _cmd_score(args) -> None:
    clf, pipeline, front = _load_models(args.ckpt, args.mode)
    score = score_images([load_image(args.image)], clf, pipeline, front)[0]
    print(repr(float(score)))


def _cmd_eval(args) -> None:
    if args.jpeg is not None and not 1 <= args.jpeg <= 100:
        raise UsageError("--jpeg must be in [1, 100]")
    if args.blur is not None and args.blur < 0:
        raise UsageError("--blur must be >= 0")
    degradation = Degradation(sigma=args.blur, qf=args.jpeg)
    clf, pipeline, front = _load_models(args.ckpt, args.mode)
    samples = _manifest_samples(args.manifest)
    if args.split != "all":
        samples = split(samples, args.split)
    metrics, _ = evaluate(samples, clf, pipeline, front, degradation)
    report = metrics.to_dict()
    report.update({"mode": args.mode, "degradation": degradation.to_dict(), "split": args.split})
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"acc {metrics.acc:.4f} map {metrics.map:.4f}")


def _cmd_inspect(args) -> None:
    cfg = PipelineConfig(seed=args.seed)
    img = load_image(args.image)
    if (img.height, img.width) != (cfg.image_size, cfg.image_size):
        img = resize_bilinear(img, cfg.image_size, cfg.image_size)
    pixels = extract_input_patch(img, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(Image(pixels), out / "patch.png")
    fp = fingerprint_array(pixels)
    for k, name in enumerate(("square3", "square5", "horiz2")):
        save_image(Image(residual_to_gray(fp[:, :, k])), out / f"residual_{name}.png")
    print(f"wrote {out}")


def _cmd_degrade(args) -> None:
    if args.sigma is not None and args.sigma < 0:
        raise UsageError("--sigma must be >= 0")
    if args.qf is not None and not 1 <= args.qf <= 100:
        raise UsageError("--qf must be in [1, 100]")
    img = load_image(args.image)
    if args.sigma is not None:
        out = gaussian_blur(img, args.sigma)
    else:
        out = jpeg_compress(img, args.qf)
    save_image(out, args.out)


_COMMANDS = {
    "synth": _cmd_synth,
    "train-ssp": _cmd_train_ssp,
    "train-essp": _cmd_train_essp,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
    "degrade": _cmd_degrade,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"patchprint: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PatchprintError, OSError, ValueError, KeyError) as exc:
        print(f"patchprint: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
