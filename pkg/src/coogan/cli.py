"""Command-line entry point: ``coogan <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core import ConfigError, CooganError, DataError, DimensionError, RunConfig, TilingError, to_uint8
from .training import NumericError

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("coogan")


# -- config ------------------------------------------------------------------

def load_config(path) -> dict:
    """Read a JSON config with optional ``run``, ``generator``, ``discriminator`` and ``train`` sections."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - {"run", "generator", "discriminator", "train", "classifier"}
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    return cfg


def _section(cfg: dict, name: str, cls):
    values = dict(cfg.get(name, {}))
    unknown = set(values) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {name} field(s) {sorted(unknown)}")
    return values


def _train_config(cfg: dict, args):
    from .training import TrainConfig

    values = _section(cfg, "train", TrainConfig)
    for flag, key in (("seed", "seed"), ("steps", "steps"), ("batch_size", "batch_size"), ("lr", "lr")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return TrainConfig.from_dict(values)


def _run_section(cfg: dict) -> dict:
    return _section(cfg, "run", RunConfig)


# -- commands ----------------------------------------------------------------

def cmd_make_toy_data(args) -> None:
    from .data import make_toy_dataset

    out = make_toy_dataset(args.out, args.n, args.size, args.attrs, args.seed)
    print(f"wrote {args.n} images to {out}")


def _load_data(path, size: int, hr_size: int | None = None, seed: int = 0):
    from .data import load_dataset_dir

    return load_dataset_dir(path, size, hr_size, seed)


def cmd_train_global(args) -> None:
    from .networks import DiscriminatorSpec, GeneratorSpec
    from .training import train_global

    cfg = load_config(args.config)
    run = _run_section(cfg)
    size = run.get("global_size", 64)
    tc = _train_config(cfg, args)
    g_sec = _section(cfg, "generator", GeneratorSpec)
    d_sec = _section(cfg, "discriminator", DiscriminatorSpec)
    ds = _load_data(args.data, size, seed=tc.seed)
    train, _ = ds.split()
    n = len(ds.attribute_names)
    g_spec = GeneratorSpec(**{"n_attributes": n, **g_sec})
    d_spec = DiscriminatorSpec(**{"n_attributes": n, "input_size": size, **d_sec})
    _check_attrs(g_spec.n_attributes, d_spec.n_attributes, n)
    train_global(train, g_spec, d_spec, tc, out_dir=args.out,
                 extra={"global_size": size, "attribute_names": list(ds.attribute_names)})
    print(f"global checkpoint written to {args.out}")


def cmd_train_local(args) -> None:
    from .networks import DiscriminatorSpec, GeneratorSpec
    from .training import load_generator, train_local

    cfg = load_config(args.config)
    run = _run_section(cfg)
    g_global = load_generator(args.global_ckpt)
    meta = _stage_meta(args.global_ckpt)
    global_size = run.get("global_size", meta.get("global_size", 64))
    patch = run.get("patch_size", 32)
    hr = run.get("hr_size", 128)
    RunConfig(global_size=global_size, patch_size=patch, hr_size=hr, n_attributes=g_global.spec.n_attributes)
    tc = _train_config(cfg, args)
    g_sec = _section(cfg, "generator", GeneratorSpec)
    d_sec = _section(cfg, "discriminator", DiscriminatorSpec)
    ds = _load_data(args.data, global_size, hr, seed=tc.seed)
    train, _ = ds.split()
    n = len(ds.attribute_names)
    g_spec = GeneratorSpec(**{"n_attributes": n, "input_channels": 6, **g_sec})
    d_spec = DiscriminatorSpec(**{"n_attributes": n, "input_size": patch, **d_sec})
    _check_attrs(g_spec.n_attributes, g_global.spec.n_attributes, n)
    train_local(train, g_global, g_spec, d_spec, tc, patch_size=patch, global_size=global_size, out_dir=args.out,
                extra={"hr_size": hr, "global_ckpt": str(Path(args.global_ckpt).resolve()),
                       "attribute_names": list(ds.attribute_names)})
    print(f"local checkpoint written to {args.out}")


def cmd_train_classifier(args) -> None:
    from .evaluation import classifier_spec, train_attr_classifier
    from .networks import save_checkpoint

    ds = _load_data(args.data, args.size, seed=args.seed)
    train, _ = ds.split()
    spec = classifier_spec(len(ds.attribute_names), args.size)
    model = train_attr_classifier(train, spec, steps=args.steps, seed=args.seed)
    save_checkpoint(model, args.out, {"stage": "classifier", "attribute_names": list(ds.attribute_names),
                                      "steps": args.steps})
    print(f"classifier written to {args.out}")


def _check_attrs(*counts: int) -> None:
    if len(set(counts)) != 1:
        raise ConfigError(f"attribute counts disagree: {counts}")


def _stage_meta(ckpt) -> dict:
    from .networks import read_manifest

    path = Path(ckpt)
    sub = path / "generator" if (path / "generator").is_dir() else path
    return read_manifest(sub).get("extra", {})


def _load_classifier(path):
    from .networks import Discriminator, load_checkpoint

    model = load_checkpoint(path)
    if not isinstance(model, Discriminator):
        raise ConfigError(f"{path} does not hold a classifier")
    model.eval()
    return model


def _pipeline(global_ckpt, local_ckpt):
    from .training import load_generator

    if local_ckpt is None and global_ckpt is None:
        raise ConfigError("a global or local checkpoint is required")
    local_meta = _stage_meta(local_ckpt) if local_ckpt else {}
    global_ckpt = global_ckpt or local_meta.get("global_ckpt")
    if global_ckpt is None:
        raise ConfigError("cannot locate the global checkpoint; pass --global-ckpt")
    g_global = load_generator(global_ckpt).eval()
    g_local = load_generator(local_ckpt).eval() if local_ckpt else None
    meta = {**_stage_meta(global_ckpt), **local_meta}
    return g_global, g_local, meta


def _read_input_image(path) -> torch.Tensor:
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(f"input image {path} not found") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return torch.from_numpy(arr).permute(2, 0, 1).float() / 127.5 - 1.0


def _parse_labels(text: str, n: int) -> np.ndarray:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"labels must be comma-separated 0/1 values, got {text!r}") from None
    if len(vals) != n or any(v not in (0, 1) for v in vals):
        raise ConfigError(f"expected {n} comma-separated 0/1 labels, got {text!r}")
    return np.array(vals, dtype=np.float32)


def parse_set(text: str, names: list[str]) -> dict[int, int]:
    """Parse ``attr=0|1[,...]``; attributes are given by name or index."""
    out = {}
    for item in filter(None, text.split(",")):
        key, sep, val = item.partition("=")
        if not sep or val not in ("0", "1"):
            raise ConfigError(f"bad --set entry {item!r}; expected attr=0 or attr=1")
        if key in names:
            idx = names.index(key)
        elif key.isdigit() and int(key) < len(names):
            idx = int(key)
        else:
            raise ConfigError(f"unknown attribute {key!r}; known: {', '.join(names)}")
        out[idx] = int(val)
    return out


def cmd_edit(args) -> None:
    from .cooperation import edit_full_image
    from .evaluation import predict_attributes

    g_global, g_local, meta = _pipeline(args.global_ckpt, args.local_ckpt)
    n = g_global.spec.n_attributes
    names = list(meta.get("attribute_names", [str(i) for i in range(n)]))
    x = _read_input_image(args.input)

    if args.source is not None:
        source = _parse_labels(args.source, n)
    elif args.classifier is not None:
        source = predict_attributes(_load_classifier(args.classifier), x.unsqueeze(0))[0].astype(np.float32)
    else:
        raise ConfigError("pass --source labels or a --classifier to infer them")
    target = source.copy()
    for idx, val in parse_set(args.set, names).items():
        target[idx] = val

    def run(t):
        d = (t - source).astype(np.float32)
        if g_local is None:
            with torch.no_grad():
                return g_global(x.unsqueeze(0), d)[0].clamp(-1, 1)
        size = x.shape[-1]
        cfg = RunConfig(global_size=meta.get("global_size", 64), patch_size=meta.get("patch_size", 32),
                        hr_size=size, n_attributes=n, attribute_names=tuple(names))
        return edit_full_image(x, g_global, g_local, d, cfg).clamp(-1, 1)

    edited = run(target)
    Image.fromarray(to_uint8(edited.numpy())).save(args.out)
    print(f"edited image written to {args.out}")
    if args.grid:
        cols = [x, run(source), edited]
        for a in range(n):
            t = source.copy()
            t[a] = 1 - t[a]
            cols.append(run(t))
        Image.fromarray(np.concatenate([to_uint8(c.numpy()) for c in cols], axis=1)).save(args.grid)
        print(f"grid written to {args.grid}")


def cmd_eval(args) -> None:
    from .evaluation import evaluate_editing, evaluate_generator

    g_global, g_local, meta = _pipeline(args.global_ckpt, args.ckpt)
    classifier = _load_classifier(args.classifier)
    global_size = meta.get("global_size", 64)
    if g_local is None:
        ds = _load_data(args.data, global_size, seed=args.seed)
        _, val = ds.split()
        report = evaluate_generator(g_global, val, classifier, args.max_images)
    else:
        hr = meta.get("hr_size", 128)
        ds = _load_data(args.data, global_size, hr, seed=args.seed)
        _, val = ds.split()
        cfg = RunConfig(global_size=global_size, patch_size=meta.get("patch_size", 32), hr_size=hr,
                        n_attributes=g_global.spec.n_attributes, attribute_names=tuple(ds.attribute_names))
        report = evaluate_editing(g_global, g_local, val, classifier, cfg, args.max_images,
                                  zero_snapshot=args.zero_snapshot)
    for name, acc in zip(report.attribute_names, report.accuracy):
        print(f"{name:20s} {acc:.4f}")
    print(f"{'mean':20s} {report.mean_accuracy:.4f}")
    print(f"rec_psnr {report.rec_psnr:.3f}  rec_ssim {report.rec_ssim:.4f}  seam {report.seam:.4f}")
    if args.report:
        report.write_csv(args.report)


def cmd_profile(args) -> None:
    from . import profiler

    if (args.unit is None) == (args.pipeline is None):
        raise ConfigError("pass exactly one of --unit or --pipeline")
    if args.unit is not None:
        channels = [int(c) for c in args.channels.split(",")]
        reports = []
        for base in channels:
            reports += [profiler.skip_unit_report(args.unit, base, args.input_size, n_layers=args.layers)]
        markdown, _ = profiler.emit_report(reports, args.report, args.csv)
        print(markdown)
    else:
        g_spec, l_spec, mono = profiler.full_scale_specs(args.base)
        if args.pipeline == "coogan":
            desc = profiler.coogan_pipeline(g_spec, l_spec, args.global_size, args.patch, args.hr)
        else:
            desc = profiler.monolithic_pipeline(mono, args.hr)
        text = profiler.memory_report([desc])
        print(text)
        if args.report:
            Path(args.report).write_text(text + "\n")


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="coogan", description="Memory-efficient high-resolution attribute editing.",
                                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-toy-data", help="render the procedural toy dataset", formatter_class=fmt)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n", type=int, default=2000, help="number of images")
    s.add_argument("--size", type=int, default=64, help="image side length")
    s.add_argument("--attrs", type=int, default=3, help="number of attributes (1-4)")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.set_defaults(func=cmd_make_toy_data)

    def train_flags(s):
        s.add_argument("--config", default=None, help="JSON config file")
        s.add_argument("--data", required=True, help="dataset directory (images/ + list_attr.txt)")
        s.add_argument("--out", required=True, help="checkpoint directory")
        s.add_argument("--seed", type=int, default=None, help="override train.seed")
        s.add_argument("--steps", type=int, default=None, help="override train.steps")
        s.add_argument("--batch-size", type=int, default=None, help="override train.batch_size")
        s.add_argument("--lr", type=float, default=None, help="override train.lr")

    s = sub.add_parser("train-global", help="train the low-resolution global module", formatter_class=fmt)
    train_flags(s)
    s.set_defaults(func=cmd_train_global)

    s = sub.add_parser("train-local", help="train the patch-level local module", formatter_class=fmt)
    train_flags(s)
    s.add_argument("--global-ckpt", required=True, help="trained global checkpoint")
    s.set_defaults(func=cmd_train_local)

    s = sub.add_parser("train-classifier", help="train the attribute classifier used by eval",
                       formatter_class=fmt)
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True, help="classifier checkpoint directory")
    s.add_argument("--size", type=int, default=64, help="classifier input size")
    s.add_argument("--steps", type=int, default=400, help="optimizer steps")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("edit", help="edit one image", formatter_class=fmt)
    s.add_argument("--global-ckpt", default=None, help="global checkpoint (defaults to the one the local stage used)")
    s.add_argument("--local-ckpt", default=None, help="local checkpoint; omit to edit with the global module only")
    s.add_argument("--input", required=True, help="input image")
    s.add_argument("--set", required=True, help="requested changes, e.g. Stripes=1,Center_Disk=0")
    s.add_argument("--source", default=None, help="source labels as comma-separated 0/1")
    s.add_argument("--classifier", default=None, help="classifier used to predict source labels")
    s.add_argument("--out", required=True, help="edited image path")
    s.add_argument("--grid", default=None, help="optional side-by-side grid path")
    s.set_defaults(func=cmd_edit)

    s = sub.add_parser("profile", help="parameter/FLOPS or memory report", formatter_class=fmt)
    s.add_argument("--unit", choices=("lstu", "stu"), default=None, help="skip unit to profile")
    s.add_argument("--channels", default="16,32,64", help="comma-separated base channel counts")
    s.add_argument("--layers", type=int, default=5, help="generator layers")
    s.add_argument("--input-size", type=int, default=416, help="input side length used for FLOPS")
    s.add_argument("--report", default=None, help="markdown report path")
    s.add_argument("--csv", default=None, help="CSV report path")
    s.add_argument("--pipeline", choices=("coogan", "monolithic"), default=None, help="pipeline to profile")
    s.add_argument("--hr", type=int, default=768, help="high-resolution side length")
    s.add_argument("--patch", type=int, default=128, help="patch side length")
    s.add_argument("--global-size", type=int, default=256, help="global module side length")
    s.add_argument("--base", type=int, default=64, help="base channels of the profiled generators")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("eval", help="evaluate reconstruction, editing accuracy and seams", formatter_class=fmt)
    s.add_argument("--ckpt", default=None, help="local checkpoint (omit to evaluate the global module alone)")
    s.add_argument("--global-ckpt", default=None, help="global checkpoint (defaults to the one the local stage used)")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--classifier", required=True, help="classifier checkpoint")
    s.add_argument("--report", default=None, help="CSV report path")
    s.add_argument("--max-images", type=int, default=None, help="limit on held-out images")
    s.add_argument("--zero-snapshot", action="store_true", help="blank the snapshot channels")
    s.add_argument("--seed", type=int, default=0, help="data shuffling seed")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, DimensionError, TilingError, CooganError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
