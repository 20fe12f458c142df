"""From-scratch training loop: binary cross-entropy, Adam, early stopping.

Hyperparameter defaults follow the benchmark protocol: learning rate 0.001,
an 80/20 train/validation split, and stopping once the validation loss has
not decreased for 15 epochs. The returned parameters are the ones with the
best validation loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_P_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 15
    val_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64))


@dataclass
class TrainingLog:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_epoch: int = 0


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Binary cross-entropy and its gradient dL/dp, elementwise.

    p is clamped to [1e-7, 1 - 1e-7] first, so the loss is finite everywhere.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), _P_EPS, 1.0 - _P_EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = -y / p + (1.0 - y) / (1.0 - p)
    return loss, grad


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    t: int,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[np.ndarray, AdamState]:
    """One Adam update (bias-corrected first/second moments); t starts at 1."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads, and state shapes must match")
    if t < 1:
        raise ValueError("step counter t must be >= 1")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads**2
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new_params, AdamState(m, v)


def train_classifier(
    dataset: tuple[np.ndarray, np.ndarray],
    arch: str,
    cfg: TrainConfig = TrainConfig(),
):
    """Train a reference classifier (linear or tiny MLP) on (features, labels).

    Seeded 80/20 split, minibatch Adam on mean BCE, early stopping on
    validation loss. Returns (model, TrainingLog); the model carries the
    parameters of the best validation epoch. Fully deterministic given
    cfg.seed.
    """
    from .backends import init_model  # local import to avoid a module cycle

    cfg.validate()
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"features {x.shape} and labels {y.shape} do not align")
    if x.shape[0] < 5:
        raise ValueError("dataset must contain at least 5 samples")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("dataset must contain both classes")
    if not np.isin(classes, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(x.shape[0])
    n_val = max(1, int(round(x.shape[0] * cfg.val_fraction)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    model = init_model(arch, x.shape[1], rng)
    params = model.params.copy()
    state = AdamState.zeros_like(params)
    log = TrainingLog()
    best_params = params.copy()
    t = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(x_train.shape[0])
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grad(params, x_train[batch], y_train[batch])
            t += 1
            params, state = adam_step(params, grads, state, t, cfg)
            epoch_losses.append(loss)
        log.train_losses.append(float(np.mean(epoch_losses)))

        val_loss = float(np.mean(bce_loss(model.forward(params, x_val), y_val)[0]))
        log.val_losses.append(val_loss)
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_params = params.copy()
        log.stopped_epoch = epoch
        if epoch - log.best_epoch >= cfg.patience:
            break

    model.params = best_params
    return model, log
