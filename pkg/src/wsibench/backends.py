"""Pluggable inference backends behind one descriptor/predict contract.

Reference backends are a logistic (linear) model and a one-hidden-layer MLP
(64 tanh units, sigmoid output). Either can score feature vectors directly or,
applied per pixel over box-filtered window features, produce dense probability
maps. The nn-transfer backend performs in-context mask completion by matching
query windows to prompt windows on the handcrafted features and copying the
prompt's window labels. External models plug in via a file protocol: a request
directory with input/prompt PNGs and meta.json, answered by output.png plus a
`done` marker.
"""

from __future__ import annotations

import json
import struct
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import features as feat
from .errors import BackendError, BackendTimeoutError, ProtocolError
from .imaging import require_image, require_mask, save_image, save_mask
from .optim import TrainConfig, bce_loss, sigmoid, train_classifier
from .tiling import make_grid, stitch_patch_labels

_WSMP_MAGIC = b"WSMP"
_WSMP_VERSION = 1
MLP_HIDDEN = 64

KINDS = ("linear", "mlp", "external", "nn-transfer")
INPUT_KINDS = ("feature-vector", "image-patch", "image-pair")


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    input_kind: str
    model_path: str | None = None
    endpoint_dir: str | None = None
    feature_dim: int | None = None
    window: int = 16
    timeout_s: float = 30.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.input_kind not in INPUT_KINDS:
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if self.kind == "nn-transfer" and self.input_kind != "image-pair":
            raise ValueError("nn-transfer backends require input_kind=image-pair")
        if self.kind in ("linear", "mlp") and self.input_kind == "image-pair":
            raise ValueError(f"{self.kind} backends cannot take image pairs")
        if self.kind == "external" and not self.endpoint_dir:
            raise ValueError("external backends require endpoint_dir")


class LinearModel:
    """Logistic regression: p = sigmoid(w.x + b)."""

    arch = "linear"

    def __init__(self, dim: int, params: np.ndarray | None = None):
        self.dim = dim
        self.params = np.zeros(dim + 1) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (dim + 1,):
            raise ValueError("linear parameter vector length must be dim + 1")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.dim, 1)

    def forward(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        return sigmoid(x @ params[: self.dim] + params[self.dim])

    def loss_and_grad(self, params, x, y):
        p = self.forward(params, x)
        loss = float(np.mean(bce_loss(p, y)[0]))
        dz = (p - y) / len(y)  # gradient of mean BCE through the sigmoid
        grads = np.concatenate([x.T @ dz, [dz.sum()]])
        return loss, grads

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(self.params, np.asarray(x, dtype=np.float64))


class MlpModel:
    """One hidden layer of 64 tanh units with a sigmoid output."""

    arch = "mlp"

    def __init__(self, dim: int, params: np.ndarray | None = None, hidden: int = MLP_HIDDEN):
        self.dim = dim
        self.hidden = hidden
        n = hidden * dim + hidden + hidden + 1
        self.params = np.zeros(n) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise ValueError("mlp parameter vector length mismatch")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.dim, self.hidden, 1)

    def _unpack(self, params):
        d, h = self.dim, self.hidden
        w1 = params[: h * d].reshape(h, d)
        b1 = params[h * d : h * d + h]
        w2 = params[h * d + h : h * d + 2 * h]
        b2 = params[-1]
        return w1, b1, w2, b2

    def forward(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(params)
        a = np.tanh(x @ w1.T + b1)
        return sigmoid(a @ w2 + b2)

    def loss_and_grad(self, params, x, y):
        w1, b1, w2, b2 = self._unpack(params)
        a = np.tanh(x @ w1.T + b1)
        p = sigmoid(a @ w2 + b2)
        loss = float(np.mean(bce_loss(p, y)[0]))
        dz2 = (p - y) / len(y)
        gw2 = a.T @ dz2
        gb2 = dz2.sum()
        dz1 = np.outer(dz2, w2) * (1.0 - a**2)
        gw1 = dz1.T @ x
        gb1 = dz1.sum(axis=0)
        grads = np.concatenate([gw1.ravel(), gb1, gw2, [gb2]])
        return loss, grads

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(self.params, np.asarray(x, dtype=np.float64))


def init_model(arch: str, dim: int, rng: np.random.Generator):
    """Fresh model with seeded initialization (zeros for linear, scaled normal for mlp)."""
    if arch == "linear":
        return LinearModel(dim)
    if arch == "mlp":
        h = MLP_HIDDEN
        w1 = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(h, dim))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
        params = np.concatenate([w1.ravel(), np.zeros(h), w2, [0.0]])
        return MlpModel(dim, params)
    raise ValueError(f"unknown architecture {arch!r}")


def model_from_sizes(sizes: tuple[int, ...], params: np.ndarray):
    if len(sizes) == 2 and sizes[1] == 1:
        return LinearModel(sizes[0], params)
    if len(sizes) == 3 and sizes[2] == 1:
        return MlpModel(sizes[0], params, hidden=sizes[1])
    raise ValueError(f"unsupported architecture sizes {sizes}")


def save_model(model, path) -> None:
    """WSMP format: magic, version u32, layer count u32, layer sizes u32 each,
    parameter count u64, then little-endian float32 parameters."""
    sizes = model.layer_sizes
    params = np.asarray(model.params, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_WSMP_MAGIC)
        fh.write(struct.pack("<II", _WSMP_VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.astype("<f4").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _WSMP_MAGIC:
            raise ValueError(f"{path}: not a WSMP model file")
        version, n_sizes = struct.unpack("<II", fh.read(8))
        if version != _WSMP_VERSION:
            raise ValueError(f"{path}: unsupported WSMP version {version}")
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        (count,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    if data.size != count:
        raise ValueError(f"{path}: truncated WSMP parameter block")
    if not np.isfinite(data).all():
        raise ValueError(f"{path}: non-finite parameters")
    return model_from_sizes(sizes, data.astype(np.float64))


def fold_standardization(model, mean: np.ndarray, std: np.ndarray):
    """Fold a feature standardization (x - mean) / std into first-layer weights,
    so the saved model consumes raw features. Dimensions that were constant in
    training (std ~ 0) carried no signal and fold to zero weight."""
    scale = np.where(std > 1e-8, 1.0 / np.maximum(std, 1e-8), 0.0)
    params = model.params.copy()
    if model.arch == "linear":
        w = params[: model.dim] * scale
        b = params[model.dim] - float(w @ mean)
        return LinearModel(model.dim, np.concatenate([w, [b]]))
    w1, b1, w2, b2 = model._unpack(params)
    w1s = w1 * scale[None, :]
    b1s = b1 - w1s @ mean
    return MlpModel(model.dim, np.concatenate([w1s.ravel(), b1s, w2, [b2]]), hidden=model.hidden)


def train_feature_model(x: np.ndarray, y: np.ndarray, arch: str, cfg: TrainConfig = TrainConfig()):
    """Standardize features, train, and fold the standardization back in.

    Returns (model, TrainingLog); the model scores raw feature vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scaled = (x - mean) * np.where(std > 1e-8, 1.0 / np.maximum(std, 1e-8), 0.0)
    model, log = train_classifier((scaled, y), arch, cfg)
    return fold_standardization(model, mean, std), log


# ---------------------------------------------------------------------------
# Runtime backends
# ---------------------------------------------------------------------------


class Backend:
    """Loaded backend: a descriptor plus whatever state it needs to predict."""

    def __init__(self, descriptor: BackendDescriptor, model=None):
        descriptor.validate()
        self.descriptor = descriptor
        self.model = model


def load_backend(descriptor: BackendDescriptor) -> Backend:
    descriptor.validate()
    model = None
    if descriptor.kind in ("linear", "mlp"):
        if descriptor.model_path is None:
            raise ValueError(f"{descriptor.kind} backend requires model_path")
        model = load_model(descriptor.model_path)
        if model.arch != descriptor.kind:
            raise ValueError(
                f"model at {descriptor.model_path} is {model.arch}, descriptor says {descriptor.kind}"
            )
    return Backend(descriptor, model)


def backend_from_model(model, input_kind: str = "feature-vector") -> Backend:
    """Wrap an in-memory reference model as a backend (no file round-trip)."""
    return Backend(BackendDescriptor(kind=model.arch, input_kind=input_kind), model)


def predict(backend: Backend, x):
    """Uniform prediction entry point.

    feature-vector backends map (n, d) feature rows to probabilities in
    [0, 1]; image-patch backends map an RGB patch to a per-pixel probability
    map (reference models score box-filtered window features per pixel,
    external models go through the file protocol).
    """
    d = backend.descriptor
    if d.input_kind == "feature-vector":
        if d.kind not in ("linear", "mlp"):
            raise BackendError(f"{d.kind} backend cannot score feature vectors")
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        probs = backend.model.predict_proba(np.atleast_2d(x))
        return float(probs[0]) if single else probs
    if d.input_kind == "image-patch":
        image = require_image(x)
        if d.kind == "external":
            return external_backend_call(
                d.endpoint_dir, ExternalRequest(kind="image", image=image), timeout_s=d.timeout_s
            )
        if d.kind in ("linear", "mlp"):
            maps = feat.pixel_feature_maps(image)
            h, w, nd = maps.shape
            if nd != backend.model.dim:
                raise BackendError(
                    f"dense backend expects {backend.model.dim}-dim features, got {nd}"
                )
            return backend.model.predict_proba(maps.reshape(-1, nd)).reshape(h, w)
        raise BackendError(f"{d.kind} backend cannot score image patches")
    raise BackendError(f"predict() does not handle input_kind {d.input_kind!r}; use in_context_predict")


def _window_majority(mask: np.ndarray, origins, size: int) -> np.ndarray:
    out = np.empty(len(origins), dtype=np.uint8)
    for i, (x, y) in enumerate(origins):
        window = mask[y : y + size, x : x + size]
        out[i] = 1 if 2 * int(window.sum()) >= window.size else 0
    return out


def in_context_predict(
    backend: Backend,
    prompt_image: np.ndarray,
    prompt_mask: np.ndarray,
    query_image: np.ndarray,
) -> np.ndarray:
    """Complete the query mask from one (prompt image, prompt mask) example.

    Reference nn-transfer: both images are tiled into small windows; each
    query window copies the majority mask label of its nearest prompt window
    (L2 distance on the handcrafted window features, ties to the lowest
    window index in row-major order). External image-pair backends receive
    the triple over the file protocol instead.
    """
    prompt_image = require_image(prompt_image)
    query_image = require_image(query_image)
    prompt_mask = require_mask(prompt_mask)
    if prompt_image.shape[:2] != prompt_mask.shape:
        raise ValueError("prompt image and prompt mask dims differ")
    if prompt_image.shape != query_image.shape:
        raise ValueError("prompt and query images must share dimensions")

    d = backend.descriptor
    if d.kind == "external":
        prob = external_backend_call(
            d.endpoint_dir,
            ExternalRequest(
                kind="image-pair",
                image=query_image,
                prompt_image=prompt_image,
                prompt_mask=prompt_mask,
            ),
            timeout_s=d.timeout_s,
        )
        return (prob >= 0.5).astype(np.uint8)
    if d.kind != "nn-transfer":
        raise BackendError(f"{d.kind} backend cannot complete image pairs")

    h, w = query_image.shape[:2]
    window = min(d.window, h, w)
    grid = make_grid(w, h, window, window)
    prompt_feats = feat.grid_feature_matrix(prompt_image, grid.origins, window)
    query_feats = feat.grid_feature_matrix(query_image, grid.origins, window)
    prompt_labels = _window_majority(prompt_mask, grid.origins, window)

    # Squared L2 distances query x prompt; argmin takes the first (lowest
    # index) among exact ties.
    d2 = (
        (query_feats**2).sum(axis=1)[:, None]
        - 2.0 * query_feats @ prompt_feats.T
        + (prompt_feats**2).sum(axis=1)[None, :]
    )
    nearest = np.argmin(d2, axis=1)
    return stitch_patch_labels(grid, prompt_labels[nearest])


# ---------------------------------------------------------------------------
# External file protocol
# ---------------------------------------------------------------------------


@dataclass
class ExternalRequest:
    kind: str  # "image" | "image-pair"
    image: np.ndarray
    prompt_image: np.ndarray | None = None
    prompt_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def external_backend_call(
    endpoint_dir,
    request: ExternalRequest,
    timeout_s: float = 30.0,
    poll_s: float = 0.02,
) -> np.ndarray:
    """Run one request through the directory protocol and return the
    probability map (grayscale output.png / 255), matching the input dims.

    Layout written: <endpoint>/request-<uuid>/{input.png, meta.json}
    plus prompt.png / prompt_mask.png for image-pair requests. The responder
    writes output.png and then an empty `done` marker file.
    """
    endpoint = Path(endpoint_dir)
    if not endpoint.is_dir():
        raise ProtocolError(f"endpoint directory does not exist: {endpoint}")
    if request.kind not in ("image", "image-pair"):
        raise ValueError(f"unknown request kind {request.kind!r}")
    image = require_image(request.image)
    request_id = f"request-{uuid.uuid4().hex}"
    req_dir = endpoint / request_id
    req_dir.mkdir()
    save_image(image, req_dir / "input.png")
    if request.kind == "image-pair":
        if request.prompt_image is None or request.prompt_mask is None:
            raise ValueError("image-pair requests need prompt_image and prompt_mask")
        save_image(request.prompt_image, req_dir / "prompt.png")
        save_mask(request.prompt_mask, req_dir / "prompt_mask.png")
    meta = {
        "kind": request.kind,
        "width": int(image.shape[1]),
        "height": int(image.shape[0]),
        **request.meta,
    }
    (req_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True))

    deadline = time.monotonic() + timeout_s
    done = req_dir / "done"
    while not done.exists():
        if time.monotonic() >= deadline:
            raise BackendTimeoutError(
                f"external backend timed out after {timeout_s}s on {request_id}"
            )
        time.sleep(poll_s)

    out_path = req_dir / "output.png"
    if not out_path.exists():
        raise ProtocolError(f"{request_id}: done marker present but output.png missing")
    try:
        out = PILImage.open(out_path)
        out.load()
    except Exception as exc:
        raise ProtocolError(f"{request_id}: cannot decode output.png: {exc}") from exc
    if out.mode != "L":
        raise ProtocolError(f"{request_id}: output.png must be 8-bit grayscale, got {out.mode}")
    arr = np.asarray(out, dtype=np.uint8)
    if arr.shape != image.shape[:2]:
        raise ProtocolError(
            f"{request_id}: output dims {arr.shape[::-1]} != requested {image.shape[1::-1]}"
        )
    return arr.astype(np.float64) / 255.0
