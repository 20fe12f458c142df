"""wsibench: whole-slide-image tumor segmentation strategies and benchmarks.

Four segmentation strategies (patch classification, superpixel
classification, dense semantic segmentation, visual prompting) share an
imaging core, pluggable inference backends, synthetic ground-truth slides,
and a Dice/timing benchmark harness.
"""

__version__ = "0.1.0"

from .imaging import (
    SyntheticSpec,
    TextureParams,
    generate_synthetic_wsi,
    load_image,
    load_mask,
    render_overlay,
    save_image,
    save_mask,
)
from .tiling import (
    PatchGrid,
    downsample,
    extract_patches,
    make_grid,
    stitch_dense,
    stitch_patch_labels,
    threshold,
)
from .superpixel import (
    SlicParams,
    SuperpixelMap,
    aggregate_features,
    enforce_connectivity,
    paint_labels,
    slic,
    superpixel_ground_truth,
)
from .stain import StainConfig, StainModel, fit_stain_model, normalize_to_reference, to_optical_density
from .augment import AugmentConfig, augment, elastic_deform
from .optim import AdamState, TrainConfig, adam_step, bce_loss, train_classifier
from .backends import (
    Backend,
    BackendDescriptor,
    ExternalRequest,
    external_backend_call,
    in_context_predict,
    load_backend,
    predict,
)
from .pipelines import (
    PipelineConfig,
    TimingRecord,
    run_patch_pipeline,
    run_prompt_pipeline,
    run_semantic_pipeline,
    run_superpixel_pipeline,
)
from .evalbench import EvalReport, confusion, dice, format_report, run_benchmark

__all__ = [name for name in dir() if not name.startswith("_")]
