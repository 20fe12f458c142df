"""INI-style configuration (key-value with sections) for the CLI.

One static config file drives synthesis, training, and pipeline runs; flags
override file values. Unknown keys and malformed values are reported with
the file line number.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import DataError
from .imaging import SyntheticSpec, TextureParams
from .optim import TrainConfig
from .pipelines import PipelineConfig
from .stain import StainConfig
from .superpixel import SlicParams

_SECTIONS = {"synthetic", "slic", "stain", "augment", "train", "pipeline"}


@dataclass
class Config:
    """Resolved configuration with per-section dataclasses."""

    path: str | None = None
    synthetic: SyntheticSpec | None = None
    slic: SlicParams = field(default_factory=lambda: SlicParams(k_target=256))
    stain: StainConfig = field(default_factory=StainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_enabled: bool = False
    augment_copies: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    train_arch: str = "mlp"
    patch_size: int = 256
    semantic_stride: int = 224
    decision_threshold: float = 0.5
    tissue_threshold: float = 0.05
    resolution_factor: int | None = None
    prompt_window: int = 16
    prompt_working_size: int = 448
    workers: int = 1
    seed: int = 0

    def pipeline_config(self, strategy: str) -> PipelineConfig:
        return PipelineConfig(
            strategy=strategy,
            resolution_factor=self.resolution_factor,
            patch_size=self.patch_size,
            semantic_stride=self.semantic_stride,
            decision_threshold=self.decision_threshold,
            tissue_threshold=self.tissue_threshold,
            slic=self.slic,
            stain=self.stain,
            prompt_window=self.prompt_window,
            prompt_working_size=self.prompt_working_size,
            workers=self.workers,
            seed=self.seed,
        )


class _SectionReader:
    """Typed access to one config section with line-numbered errors."""

    def __init__(self, path: str | None, section: str, items: dict[str, str], known: set[str]):
        self.path = path
        self.section = section
        self.items = items
        unknown = set(items) - known
        if unknown:
            key = sorted(unknown)[0]
            raise DataError(
                f"{self._loc(key)}: unknown key {key!r} in section [{section}]"
            )

    def _loc(self, key: str) -> str:
        line = _find_line(self.path, self.section, key)
        return f"{self.path}:{line}" if line else (self.path or "<defaults>")

    def _get(self, key: str, cast, default):
        if key not in self.items:
            return default
        raw = self.items[key]
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{self._loc(key)}: invalid value for {key}: {raw!r} ({exc})") from exc

    def get_int(self, key, default=None):
        return self._get(key, int, default)

    def get_float(self, key, default=None):
        return self._get(key, float, default)

    def get_bool(self, key, default=None):
        def cast(raw: str) -> bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")

        return self._get(key, cast, default)

    def get_str(self, key, default=None):
        return self._get(key, str, default)

    def get_rgb(self, key, default=None):
        def cast(raw: str) -> tuple[int, int, int]:
            parts = [int(p) for p in raw.split()]
            if len(parts) != 3 or any(not 0 <= p <= 255 for p in parts):
                raise ValueError("expected three integers in [0, 255]")
            return tuple(parts)

        return self._get(key, cast, default)

    def get_int_tuple(self, key, default=None):
        return self._get(key, lambda raw: tuple(int(p) for p in raw.split()), default)

    def error(self, key: str, message: str) -> DataError:
        return DataError(f"{self._loc(key)}: {message}")


def _find_line(path: str | None, section: str, key: str) -> int | None:
    if path is None:
        return None
    in_section = False
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*[=:]")
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError:
        return None
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            in_section = stripped[1:-1].strip() == section
        elif in_section and pattern.match(line):
            return i
    return None


def _read_synthetic(sec: _SectionReader) -> SyntheticSpec:
    spec = SyntheticSpec(
        width=sec.get_int("width", 512),
        height=sec.get_int("height", 512),
        blob_count=sec.get_int("blob_count", 3),
        blob_radius_range=(
            sec.get_float("radius_min", 60.0),
            sec.get_float("radius_max", 120.0),
        ),
        tumor_texture=TextureParams(
            base_rgb=sec.get_rgb("tumor_rgb", (150, 80, 160)),
            noise_amp=sec.get_float("tumor_noise", 8.0),
            stripe_freq=sec.get_float("tumor_stripes", 0.12),
        ),
        background_texture=TextureParams(
            base_rgb=sec.get_rgb("background_rgb", (235, 205, 220)),
            noise_amp=sec.get_float("background_noise", 8.0),
            stripe_freq=sec.get_float("background_stripes", 0.0),
        ),
        seed=sec.get_int("seed", 0),
        noise_cell=sec.get_int("noise_cell", 16),
    )
    try:
        spec.validate()
    except ValueError as exc:
        # Point at the radius line when radii are the problem, else the section.
        key = "radius_max" if "radius" in str(exc) else "width"
        raise sec.error(key, str(exc)) from exc
    return spec


_SYNTH_KEYS = {
    "width", "height", "blob_count", "radius_min", "radius_max", "seed", "noise_cell",
    "tumor_rgb", "tumor_noise", "tumor_stripes",
    "background_rgb", "background_noise", "background_stripes",
}
_SLIC_KEYS = {"k_target", "compactness", "max_iter", "connectivity_min_frac"}
_STAIN_KEYS = {"lambda_sparse", "iterations", "seed", "percentile", "luminance_threshold"}
_AUGMENT_KEYS = {
    "enabled", "copies", "rotations", "p_hflip", "p_vflip",
    "brightness_min", "brightness_max", "elastic_alpha", "elastic_sigma", "seed",
}
_TRAIN_KEYS = {
    "learning_rate", "beta1", "beta2", "epsilon", "batch_size",
    "max_epochs", "patience", "val_fraction", "seed", "arch",
}
_PIPELINE_KEYS = {
    "patch_size", "semantic_stride", "decision_threshold", "tissue_threshold",
    "resolution_factor", "prompt_window", "prompt_working_size", "workers", "seed",
}


def load_config(path=None) -> Config:
    """Parse a config file; all sections are optional and default-filled."""
    cfg = Config(path=str(path) if path else None)
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from exc

    for section in parser.sections():
        if section not in _SECTIONS:
            raise DataError(f"{path}: unknown section [{section}]")

    def reader(name: str, known: set[str]) -> _SectionReader:
        items = dict(parser[name]) if parser.has_section(name) else {}
        return _SectionReader(cfg.path, name, items, known)

    if parser.has_section("synthetic"):
        cfg.synthetic = _read_synthetic(reader("synthetic", _SYNTH_KEYS))

    sec = reader("slic", _SLIC_KEYS)
    cfg.slic = SlicParams(
        k_target=sec.get_int("k_target", 256),
        compactness=sec.get_float("compactness", 10.0),
        max_iter=sec.get_int("max_iter", 10),
        connectivity_min_frac=sec.get_float("connectivity_min_frac", 0.25),
    )

    sec = reader("stain", _STAIN_KEYS)
    cfg.stain = StainConfig(
        lambda_sparse=sec.get_float("lambda_sparse", 0.1),
        iterations=sec.get_int("iterations", 200),
        seed=sec.get_int("seed", 0),
        percentile=sec.get_float("percentile", 99.0),
        luminance_threshold=sec.get_float("luminance_threshold", 0.9),
    )

    sec = reader("augment", _AUGMENT_KEYS)
    cfg.augment_enabled = sec.get_bool("enabled", False)
    cfg.augment_copies = sec.get_int("copies", 1)
    cfg.augment = AugmentConfig(
        rotations=sec.get_int_tuple("rotations", (0, 1, 2, 3)),
        p_hflip=sec.get_float("p_hflip", 0.5),
        p_vflip=sec.get_float("p_vflip", 0.5),
        brightness_delta_range=(
            sec.get_float("brightness_min", -20.0),
            sec.get_float("brightness_max", 20.0),
        ),
        elastic_alpha=sec.get_float("elastic_alpha", 8.0),
        elastic_sigma=sec.get_float("elastic_sigma", 4.0),
        seed=sec.get_int("seed", 0),
    )

    sec = reader("train", _TRAIN_KEYS)
    cfg.train = TrainConfig(
        learning_rate=sec.get_float("learning_rate", 0.001),
        beta1=sec.get_float("beta1", 0.9),
        beta2=sec.get_float("beta2", 0.999),
        epsilon=sec.get_float("epsilon", 1e-8),
        batch_size=sec.get_int("batch_size", 32),
        max_epochs=sec.get_int("max_epochs", 200),
        patience=sec.get_int("patience", 15),
        val_fraction=sec.get_float("val_fraction", 0.2),
        seed=sec.get_int("seed", 0),
    )
    cfg.train_arch = sec.get_str("arch", "mlp")
    if cfg.train_arch not in ("linear", "mlp"):
        raise sec.error("arch", f"arch must be 'linear' or 'mlp', got {cfg.train_arch!r}")

    sec = reader("pipeline", _PIPELINE_KEYS)
    cfg.patch_size = sec.get_int("patch_size", 256)
    cfg.semantic_stride = sec.get_int("semantic_stride", 224)
    cfg.decision_threshold = sec.get_float("decision_threshold", 0.5)
    cfg.tissue_threshold = sec.get_float("tissue_threshold", 0.05)
    cfg.resolution_factor = sec.get_int("resolution_factor", None)
    cfg.prompt_window = sec.get_int("prompt_window", 16)
    cfg.prompt_working_size = sec.get_int("prompt_working_size", 448)
    cfg.workers = sec.get_int("workers", 1)
    cfg.seed = sec.get_int("seed", 0)
    return cfg


def resolved_synthetic_text(spec: SyntheticSpec) -> str:
    """Key-value dump of the resolved synthetic spec (for spec.resolved)."""
    lines = [
        "[synthetic]",
        f"width = {spec.width}",
        f"height = {spec.height}",
        f"blob_count = {spec.blob_count}",
        f"radius_min = {spec.blob_radius_range[0]}",
        f"radius_max = {spec.blob_radius_range[1]}",
        f"tumor_rgb = {' '.join(str(v) for v in spec.tumor_texture.base_rgb)}",
        f"tumor_noise = {spec.tumor_texture.noise_amp}",
        f"tumor_stripes = {spec.tumor_texture.stripe_freq}",
        f"background_rgb = {' '.join(str(v) for v in spec.background_texture.base_rgb)}",
        f"background_noise = {spec.background_texture.noise_amp}",
        f"background_stripes = {spec.background_texture.stripe_freq}",
        f"seed = {spec.seed}",
        f"noise_cell = {spec.noise_cell}",
    ]
    return "\n".join(lines) + "\n"
