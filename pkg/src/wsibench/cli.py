"""Command-line entry point: synth, train, run, bench, normalize, slic.

Exit codes: 0 success (including partial benchmark results), 1 usage error,
2 data error, 3 backend/protocol error. Every command writes a manifest.json
into its output directory before computing, so a rerun with the same manifest
reproduces identical outputs. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import backends as be
from . import evalbench, features
from .augment import augment
from .config import Config, load_config, resolved_synthetic_text
from .errors import BackendError, DataError, ImageFormatError, PipelineError, UsageError
from .imaging import generate_synthetic_wsi, load_image, load_mask, render_overlay, save_image, save_mask
from .optim import train_classifier
from .pipelines import STRATEGIES, run_pipeline
from .stain import normalize_to_reference
from .superpixel import save_superpixel_map, slic, superpixel_ground_truth, aggregate_features
from .tiling import downsample, downsample_mask, extract_patches, make_grid
from .pipelines import is_tissue_patch

OVERLAY_COLOR = (255, 0, 0)
OVERLAY_ALPHA = 0.4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="wsibench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"wsibench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic slide + ground-truth mask")
    p.add_argument("--spec", required=True, help="config file with a [synthetic] section")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a reference backend for a strategy")
    p.add_argument("--strategy", required=True, choices=("patch", "superpixel", "semantic"))
    p.add_argument("--data", required=True, help="directory of slide/mask pairs")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output model path (WSMP)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("run", help="run one segmentation strategy on one slide")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--input", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--prompt", default=None)
    p.add_argument("--prompt-mask", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("bench", help="benchmark strategies over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategies", required=True, help="comma-separated strategy list")
    p.add_argument("--models", default=None, help="directory of <strategy>.wsmp models")
    p.add_argument("--endpoint", default=None, help="external endpoint dir (all strategies)")
    p.add_argument("--prompt", default=None)
    p.add_argument("--prompt-mask", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("normalize", help="stain-normalize an image to a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("slic", help="debug dump of the superpixel segmentation")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--compactness", type=float, default=None)
    p.add_argument("--config", default=None)
    return parser


def _apply_overrides(cfg: Config, args) -> Config:
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.seed = seed
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
        cfg.stain = dataclasses.replace(cfg.stain, seed=seed)
        cfg.augment = dataclasses.replace(cfg.augment, seed=seed)
        if cfg.synthetic is not None:
            cfg.synthetic = dataclasses.replace(cfg.synthetic, seed=seed)
    workers = getattr(args, "workers", None)
    if workers is not None:
        cfg.workers = workers
    return cfg


def _config_dict(cfg: Config) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        out[f.name] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
    return out


def _write_manifest(out_dir: Path, command: str, args_dict: dict, cfg: Config) -> None:
    manifest = {
        "tool": "wsibench",
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in args_dict.items() if k != "command"},
        "seed": cfg.seed,
        "config": _config_dict(cfg),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def discover_pairs(data_dir) -> list[tuple[str, Path, Path]]:
    """Find (name, slide, mask) pairs: subdirs with slide.png/mask.png, flat
    <name>.png + <name>_mask.png pairs, or a bare slide.png + mask.png."""
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    pairs: list[tuple[str, Path, Path]] = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        slide = sub / "slide.png"
        if slide.exists():
            mask = sub / "mask.png"
            if not mask.exists():
                raise DataError(f"missing mask file: {mask}")
            pairs.append((sub.name, slide, mask))
    if (root / "slide.png").exists():
        mask = root / "mask.png"
        if not mask.exists():
            raise DataError(f"missing mask file: {mask}")
        pairs.append(("slide", root / "slide.png", mask))
    for png in sorted(root.glob("*.png")):
        name = png.stem
        if name.endswith("_mask") or png.name in ("slide.png", "mask.png"):
            continue
        mask = root / f"{name}_mask.png"
        if not mask.exists():
            raise DataError(f"missing mask file: {mask}")
        pairs.append((name, png, mask))
    if not pairs:
        raise DataError(f"no slide/mask pairs found in {root}")
    return pairs


def _augment_copies(image, mask, cfg: Config, start_index: int):
    """Yield (image, mask) augmented copies when augmentation is enabled."""
    if not cfg.augment_enabled:
        return []
    return [
        augment(image, mask, cfg.augment, start_index + i)
        for i in range(cfg.augment_copies)
    ]


def build_training_set(strategy: str, pairs, cfg: Config):
    """Assemble (features, labels) for a strategy from slide/mask pairs."""
    xs, ys = [], []
    sample_index = 0
    for _, slide_path, mask_path in pairs:
        image = load_image(slide_path)
        mask = load_mask(mask_path)
        if image.shape[:2] != mask.shape:
            raise DataError(f"{slide_path} and {mask_path} dims differ")

        if strategy == "patch":
            factor = cfg.resolution_factor or 1
            working = downsample(image, factor) if factor > 1 else image
            wmask = downsample_mask(mask, factor) if factor > 1 else mask
            size = cfg.patch_size
            if size > min(working.shape[:2]):
                raise DataError(
                    f"{slide_path}: patch_size {size} exceeds image {working.shape[1]}x{working.shape[0]}"
                )
            grid = make_grid(working.shape[1], working.shape[0], size, size)
            patches = extract_patches(working, grid)
            items = []
            for (x, y), patch in zip(grid.origins, patches):
                if not is_tissue_patch(patch, cfg.tissue_threshold):
                    continue
                mwin = wmask[y : y + size, x : x + size]
                items.append((patch, mwin))
                items.extend(_augment_copies(patch, mwin, cfg, sample_index))
                sample_index += cfg.augment_copies
            for patch, mwin in items:
                xs.append(features.patch_feature_vector(patch))
                ys.append(1 if 2 * int(mwin.sum()) > mwin.size else 0)

        elif strategy == "superpixel":
            factor = cfg.resolution_factor or 16
            working = downsample(image, factor)
            wmask = downsample_mask(mask, factor)
            variants = [(working, wmask)] + _augment_copies(working, wmask, cfg, sample_index)
            sample_index += cfg.augment_copies
            for img, msk in variants:
                spmap = slic(img, cfg.slic)
                xs.extend(aggregate_features(img, spmap))
                ys.extend(superpixel_ground_truth(spmap, msk))

        elif strategy == "semantic":
            factor = cfg.resolution_factor or 16
            working = downsample(image, factor)
            wmask = downsample_mask(mask, factor)
            variants = [(working, wmask)] + _augment_copies(working, wmask, cfg, sample_index)
            sample_index += cfg.augment_copies
            for img, msk in variants:
                fmap = features.pixel_feature_maps(img)
                sub = fmap[::4, ::4].reshape(-1, features.PIXEL_FEATURE_DIM)
                xs.extend(sub)
                ys.extend(msk[::4, ::4].ravel())
        else:
            raise UsageError(f"strategy {strategy!r} is not trainable")

    if not xs:
        raise DataError("training set is empty (all patches filtered as background?)")
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)


def _resolve_backend(strategy: str, args, cfg: Config) -> be.Backend:
    endpoint = getattr(args, "endpoint", None)
    if endpoint:
        input_kind = "image-pair" if strategy == "prompt" else "image-patch"
        return be.Backend(
            be.BackendDescriptor("external", input_kind, endpoint_dir=endpoint)
        )
    if strategy == "prompt":
        return be.Backend(
            be.BackendDescriptor("nn-transfer", "image-pair", window=cfg.prompt_window)
        )
    model_path = getattr(args, "model", None)
    if not model_path:
        raise UsageError(f"strategy {strategy!r} requires --model or --endpoint")
    model = be.load_model(model_path)
    input_kind = "image-patch" if strategy == "semantic" else "feature-vector"
    return be.Backend(
        be.BackendDescriptor(model.arch, input_kind, model_path=str(model_path)), model
    )


def _load_prompt_pair(args):
    prompt_path = getattr(args, "prompt", None)
    mask_path = getattr(args, "prompt_mask", None)
    if not prompt_path or not mask_path:
        raise UsageError("prompt strategy requires --prompt and --prompt-mask")
    return load_image(prompt_path), load_mask(mask_path)


def cmd_synth(args) -> int:
    cfg = _apply_overrides(load_config(args.spec), args)
    if cfg.synthetic is None:
        raise DataError(f"{args.spec}: missing [synthetic] section")
    out = Path(args.out)
    _write_manifest(out, "synth", vars(args), cfg)
    image, mask = generate_synthetic_wsi(cfg.synthetic)
    save_image(image, out / "slide.png")
    save_mask(mask, out / "mask.png")
    (out / "spec.resolved").write_text(resolved_synthetic_text(cfg.synthetic))
    print(f"wrote {out / 'slide.png'} and {out / 'mask.png'}")
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    pairs = discover_pairs(args.data)
    x, y = build_training_set(args.strategy, pairs, cfg)
    if np.unique(y).size < 2:
        raise DataError("training labels are single-class; need tumor and non-tumor examples")
    model, log = be.train_feature_model(x, y, cfg.train_arch, cfg.train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    be.save_model(model, out)
    log_payload = {
        "strategy": args.strategy,
        "arch": cfg.train_arch,
        "feature_dim": int(x.shape[1]),
        "samples": int(x.shape[0]),
        "train_losses": log.train_losses,
        "val_losses": log.val_losses,
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss,
        "stopped_epoch": log.stopped_epoch,
    }
    log_path = out.with_suffix(out.suffix + ".log.json")
    log_path.write_text(json.dumps(log_payload, indent=2) + "\n")
    print(
        f"trained {args.strategy} model on {x.shape[0]} samples "
        f"(best val loss {log.best_val_loss:.4f} at epoch {log.best_epoch}); wrote {out}"
    )
    return 0


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    backend = _resolve_backend(args.strategy, args, cfg)
    prompt_image = prompt_mask = None
    if args.strategy == "prompt" and backend.descriptor.kind != "external":
        prompt_image, prompt_mask = _load_prompt_pair(args)
    elif args.strategy == "prompt":
        prompt_image, prompt_mask = _load_prompt_pair(args)
    image = load_image(args.input)
    out = Path(args.out)
    _write_manifest(out, "run", vars(args), cfg)

    mask, timing = run_pipeline(
        args.strategy, image, backend, cfg.pipeline_config(args.strategy),
        prompt_image=prompt_image, prompt_mask=prompt_mask,
    )
    save_mask(mask, out / "pred.png")
    save_image(render_overlay(image, mask, OVERLAY_COLOR, OVERLAY_ALPHA), out / "overlay.png")
    (out / "timing.json").write_text(
        json.dumps({"stages": timing.stages, "total": timing.total}, indent=2) + "\n"
    )
    print(f"{args.strategy}: wrote {out / 'pred.png'} ({timing.total:.3f}s)")
    return 0


def cmd_bench(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise UsageError("no strategies given")
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}")
    pairs = discover_pairs(args.dataset)
    dataset = [(name, load_image(slide), load_mask(mask)) for name, slide, mask in pairs]

    prompt_pair = None
    if "prompt" in strategies and not args.endpoint:
        prompt_pair = _load_prompt_pair(args)

    out = Path(args.out)
    _write_manifest(out, "bench", vars(args), cfg)

    stage_detail: dict[str, list] = {s: [] for s in strategies}

    def make_runner(strategy: str):
        class _Args:
            model = (
                str(Path(args.models) / f"{strategy}.wsmp") if args.models else None
            )
            endpoint = args.endpoint

        backend = _resolve_backend(strategy, _Args, cfg)
        pcfg = cfg.pipeline_config(strategy)

        def runner(image):
            if strategy == "prompt" and prompt_pair is not None:
                mask, timing = run_pipeline(
                    strategy, image, backend, pcfg,
                    prompt_image=prompt_pair[0], prompt_mask=prompt_pair[1],
                )
            else:
                mask, timing = run_pipeline(strategy, image, backend, pcfg)
            stage_detail[strategy].append({"stages": timing.stages, "total": timing.total})
            return mask, timing

        return runner

    runners = []
    errors = []
    for s in strategies:
        try:
            runners.append((s, make_runner(s)))
        except (BackendError, DataError, UsageError, ValueError, OSError) as exc:
            errors.append((s, exc))

    report_strategies = []
    cells = {}
    if runners:
        report = evalbench.run_benchmark(dataset, runners)
        report_strategies = list(report.strategies)
        cells = dict(report.cells)
    for s, exc in errors:
        report_strategies.append(s)
        for name, _, _ in dataset:
            cells[(name, s)] = evalbench.CellResult(error=f"{type(exc).__name__}: {exc}")
    report = evalbench.EvalReport(
        tuple(name for name, _, _ in dataset),
        tuple(s for s in strategies if s in report_strategies),
        cells,
    )

    (out / "report.md").write_text(evalbench.format_report(report, "markdown"))
    (out / "report.csv").write_text(evalbench.format_report(report, "csv"))
    timings = {
        s: {
            name: detail
            for (name, _, _), detail in zip(dataset, stage_detail[s])
        }
        for s in strategies
        if stage_detail[s]
    }
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")

    n_err = sum(1 for c in report.cells.values() if c.error is not None)
    n_total = len(report.cells)
    print(f"benchmark: {n_total - n_err}/{n_total} cells ok; wrote {out / 'report.md'}")
    if n_err == n_total:
        return 2
    return 0


def cmd_normalize(args) -> int:
    cfg = load_config(args.config)
    reference = load_image(args.reference)
    source = load_image(args.input)
    result = normalize_to_reference(source, reference, cfg.stain)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    save_image(result, args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_slic(args) -> int:
    cfg = load_config(args.config)
    params = cfg.slic
    if args.k is not None:
        params = dataclasses.replace(params, k_target=args.k)
    if args.compactness is not None:
        params = dataclasses.replace(params, compactness=args.compactness)
    image = load_image(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spmap = slic(image, params)
    save_superpixel_map(spmap, out / "superpixels.wspx")
    boundary = np.zeros(spmap.labels.shape, dtype=np.uint8)
    boundary[:, 1:] |= (spmap.labels[:, 1:] != spmap.labels[:, :-1]).astype(np.uint8)
    boundary[1:, :] |= (spmap.labels[1:, :] != spmap.labels[:-1, :]).astype(np.uint8)
    save_image(render_overlay(image, boundary, (255, 255, 0), 1.0), out / "boundaries.png")
    print(f"{spmap.num_segments} superpixels; wrote {out / 'superpixels.wspx'}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "run": cmd_run,
    "bench": cmd_bench,
    "normalize": cmd_normalize,
    "slic": cmd_slic,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ImageFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, PipelineError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
