"""Command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Diagnostics go to stderr; machine-readable output only to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .data import ManifestError, load_dataset, validation_split
from .model import MODES, ModelConfig
from .synth import synth_dataset
from .train import NumericalError, TrainConfig, cross_validate, evaluate, fit, model_config
from .transcode import BinaryBlob, TranscodeError, parse_sections, to_audio, to_image

log = logging.getLogger("foca")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _write_config(path: Path, args: argparse.Namespace, **extra) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout=args.dropout,
        patience=args.patience,
        seed=args.seed,
        k_folds=getattr(args, "folds", 5),
    )


def cmd_transcode(args) -> int:
    src = Path(args.input)
    try:
        raw = src.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {src}: {exc.strerror}") from None
    blob = BinaryBlob.from_bytes(raw, args.kind)
    sections = parse_sections(blob)
    if sections.warning:
        log.warning("%s: %s", src, sections.warning)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    both = not (args.audio or args.image)
    if args.audio or both:
        (out / f"{src.name}.wav").write_bytes(to_audio(blob))
    if args.image or both:
        (out / f"{src.name}.png").write_bytes(to_image(blob, sections).to_png())
    if args.sections_json:
        doc = {"file": src.name, "kind": blob.kind, "length": len(blob), **sections.to_dict()}
        (out / f"{src.name}.sections.json").write_text(json.dumps(doc, indent=2) + "\n")
    _write_config(out / "config.json", args, resolved_kind=blob.kind)
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    branching = tuple(int(b) for b in args.branching.split(","))
    manifest = synth_dataset(
        out,
        args.n_per_class,
        tree_depth=args.tree_depth,
        branching=branching,
        d_audio=args.d_audio,
        d_visual=args.d_visual,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    _write_config(out / "config.json", args)
    log.info("wrote %s", manifest)
    return EXIT_OK


def _overrides(args) -> dict:
    over = {"hca_init": args.hca_init}
    if args.tangent_scale is not None:
        over["tangent_scale"] = args.tangent_scale
    return over


def cmd_train(args) -> int:
    data = load_dataset(args.manifest)
    cfg = _train_config(args)
    mcfg = model_config(data, args.mode, cfg, **_overrides(args))
    out = Path(args.out)
    _write_config(out / "config.json", args, train=cfg.to_dict(), model=mcfg.to_dict())
    idx = np.arange(len(data))
    fit_idx, val_idx = validation_split(idx, cfg.val_fraction, cfg.seed)
    from .model import build_model

    model = build_model(mcfg, cfg.seed)
    result = fit(model, data, fit_idx, val_idx, cfg, cfg.seed)
    log.info("best epoch %d, validation loss %.4f", result.best_epoch, result.best_val_loss)
    meta = {"model": mcfg.to_dict(), "train": cfg.to_dict(), "classes": data.classes}
    checkpoint.save(out / "model.ckpt", model, args.mode, meta)
    return EXIT_OK


def cmd_crossval(args) -> int:
    data = load_dataset(args.manifest)
    cfg = _train_config(args)
    out = Path(args.out)
    mcfg = model_config(data, args.mode, cfg, **_overrides(args))
    _write_config(out / "config.json", args, train=cfg.to_dict(), model=mcfg.to_dict())
    models, _, report = cross_validate(data, args.mode, cfg, **_overrides(args))
    for i, model in enumerate(models):
        meta = {"model": mcfg.to_dict(), "train": cfg.to_dict(), "classes": data.classes, "fold": i}
        checkpoint.save(out / f"fold{i}.ckpt", model, args.mode, meta)
    (out / "report.json").write_text(report.to_json())
    log.info("%s: mean accuracy %.4f, mean macro-F1 %.4f", args.mode, report.mean_accuracy, report.mean_macro_f1)
    return EXIT_OK


def _load_for_inference(args):
    try:
        model, meta = checkpoint.load(args.checkpoint)
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    data = load_dataset(args.manifest)
    mcfg = ModelConfig(**meta["model"])
    got = (data.audio.shape[1], data.visual.shape[1])
    if got != (mcfg.d_audio, mcfg.d_visual):
        raise InputError(
            f"manifest feature dims (audio {got[0]}, image {got[1]}) do not match "
            f"checkpoint (audio {mcfg.d_audio}, image {mcfg.d_visual})"
        )
    return model, mcfg, data


def _out_config_path(out: Path) -> Path:
    return out.with_name(out.stem + ".config.json")


def cmd_inspect_attention(args) -> int:
    model, mcfg, data = _load_for_inference(args)
    if mcfg.mode not in ("foca", "euclid-xattn"):
        raise InputError(f"checkpoint mode {mcfg.mode!r} has no attention maps")
    try:
        i = data.index_of(args.sample)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    with torch.no_grad():
        _, aux = model(torch.as_tensor(data.audio[i : i + 1]), torch.as_tensor(data.visual[i : i + 1]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q_index", "k_index", "weight", "direction"])
        for key, direction in (("alpha_av", "a->v"), ("alpha_va", "v->a")):
            alpha = aux[key][0].numpy()
            for q in range(alpha.shape[0]):
                for k in range(alpha.shape[1]):
                    w.writerow([q, k, repr(float(alpha[q, k])), direction])
    _write_config(_out_config_path(out), args, model=mcfg.to_dict())
    return EXIT_OK


def cmd_embed(args) -> int:
    model, mcfg, data = _load_for_inference(args)
    rows = []
    with torch.no_grad():
        for start in range(0, len(data), 256):
            sl = slice(start, start + 256)
            _, aux = model(torch.as_tensor(data.audio[sl]), torch.as_tensor(data.visual[sl]))
            rows.append(aux["penultimate"].numpy())
    pen = np.concatenate(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    labels = [data.classes[j] for j in data.labels]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", *(f"e{j}" for j in range(pen.shape[1]))])
        for sid, lab, vec in zip(data.sample_ids, labels, pen):
            w.writerow([sid, lab, *(repr(float(x)) for x in vec)])
    _write_config(_out_config_path(out), args, model=mcfg.to_dict())
    return EXIT_OK


def _add_training_args(p: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--dropout", type=float, default=defaults.dropout)
    p.add_argument("--patience", type=int, default=defaults.patience)
    p.add_argument("--hca-init", choices=("uniform", "identity"), default="uniform")
    p.add_argument("--tangent-scale", type=float, default=None)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foca", description="Hyperbolic cross-attention fusion toolkit")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transcode", help="binary -> .wav and/or .png")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("auto", "dex", "raw"), default="auto")
    p.add_argument("--audio", action="store_true")
    p.add_argument("--image", action="store_true")
    p.add_argument("--sections-json", action="store_true")
    p.set_defaults(func=cmd_transcode)

    p = sub.add_parser("synth", help="write a synthetic hierarchical dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--tree-depth", type=int, default=2)
    p.add_argument("--branching", default="5,2")
    p.add_argument("--d-audio", type=int, default=32)
    p.add_argument("--d-visual", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on the whole manifest")
    _add_training_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    _add_training_args(p)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("inspect-attention", help="dump both attention maps of one sample as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("embed", help="dump penultimate-layer activations as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (InputError, TranscodeError, ManifestError, checkpoint.CheckpointError, ValueError, KeyError) as exc:
        log.error("%s", exc.args[0] if isinstance(exc, KeyError) else exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
