"""AdamW, the one-cycle schedule, the training loop and checkpoint files."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Union

import numpy as np

from . import autodiff as ad
from .augmentation import MixupConfig, mixup_batch
from .autodiff import Tensor
from .data import Dataset, Scaler, Split, fit_scaler, stratified_split
from .losses import LossBreakdown, LossConfig, hybrid_loss
from .metrics import Metrics, classification_metrics
from .model import NO_DECAY_SUFFIXES, ModelConfig, ModelParams, init_params, model_forward, predict
from .rng import STREAM_MIXUP, STREAM_SHUFFLE, STREAM_VALIDATION, make_rng

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no-quantum", "no-mixup", "no-attention")
SELECTION_METRICS = ("accuracy", "maP", "maR", "maF1")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    base_lr: float = 1e-3
    weight_decay: float = 1e-5
    max_lr: float = 1e-2
    schedule: str = "one-cycle"
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 42
    loss: LossConfig = field(default_factory=LossConfig)
    mixup: MixupConfig = field(default_factory=MixupConfig)
    use_quantum: bool = True
    use_mixup: bool = True
    use_attention: bool = True
    selection_metric: str = "maF1"
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.schedule not in ("one-cycle", "constant"):
            raise ValueError("schedule must be 'one-cycle' or 'constant'")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if not 0.0 < self.pct_start < 1.0:
            raise ValueError("pct_start must lie in (0, 1)")

    def ablate(self, variant: str) -> "TrainConfig":
        """Switch off the component named by ``variant`` (in place)."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
        if variant == "no-quantum":
            self.use_quantum = False
        elif variant == "no-mixup":
            self.use_mixup = False
        elif variant == "no-attention":
            self.use_attention = False
        return self

    def model_config(self, input_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            num_classes=num_classes,
            use_quantum=self.use_quantum,
            use_mixup=self.use_mixup,
            use_attention=self.use_attention,
        )

    def flat(self) -> dict:
        """Every setting as a flat name -> value map (loss.* and mixup.* nested keys)."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("loss", "mixup"):
                for sub in fields(value):
                    out[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
            else:
                out[f.name] = value
        return out


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        m = {k: np.zeros_like(t.data) for k, t in params.trainable()}
        v = {k: np.zeros_like(t.data) for k, t in params.trainable()}
        return cls(m, v, 0, beta1, beta2, eps)


def decays(name: str) -> bool:
    return not name.endswith(NO_DECAY_SUFFIXES)


def adamw_step(params: ModelParams, state: OptimizerState, lr: float, weight_decay: float) -> None:
    """Decoupled decay ``p -= lr * wd * p`` then a bias-corrected Adam step.

    Angle vectors and batch-norm affine parameters are not decayed. A missing
    gradient counts as zero.
    """
    named = list(params.trainable())
    grads = {}
    for name, t in named:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise ad.NumericalError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in named:
        g = grads[name]
        if weight_decay and decays(name):
            t.data *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def one_cycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    pct_start: float = 0.3,
    div_factor: float = 25.0,
    final_div_factor: float = 1e4,
) -> float:
    """Cosine warm-up from ``max_lr/div_factor`` to ``max_lr`` at
    ``pct_start * total_steps``, then cosine decay to ``max_lr/final_div_factor``
    at the last step."""
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    start, low = max_lr / div_factor, max_lr / final_div_factor
    peak = pct_start * total_steps
    last = total_steps - 1
    if step <= peak:
        frac = step / peak
        return max_lr + (start - max_lr) * (1.0 + math.cos(math.pi * frac)) / 2.0
    if last <= peak:
        return max_lr
    frac = (step - peak) / (last - peak)
    return low + (max_lr - low) * (1.0 + math.cos(math.pi * frac)) / 2.0


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    losses: dict
    metrics: Metrics


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    lambdas: list[np.ndarray] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = -math.inf

    def rows(self) -> list[dict]:
        out = []
        for r in self.epochs:
            row = {"epoch": r.epoch, "lr": r.lr}
            row.update(r.losses)
            row.update(r.metrics.as_dict())
            out.append(row)
        return out


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index chunks; a trailing chunk of fewer than two rows is dropped."""
    order = rng.permutation(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    return [c for c in chunks if c.size >= 2]


def evaluate(params: ModelParams, X, y) -> Metrics:
    """Eval-mode argmax predictions scored with the macro metrics."""
    return classification_metrics(y, predict(params, np.asarray(X, dtype=np.float64)), params.config.num_classes)


def fit(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_sel: np.ndarray,
    y_sel: np.ndarray,
    num_classes: int,
    config: TrainConfig,
    params: Optional[ModelParams] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train on already-scaled arrays, keeping the epoch best on ``(X_sel, y_sel)``."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if params is None:
        params = init_params(config.model_config(X_train.shape[1], num_classes), config.seed)
    shuffle_rng = make_rng(config.seed, STREAM_SHUFFLE)
    mix_rng = make_rng(config.seed, STREAM_MIXUP)
    state = OptimizerState.for_params(params, config.beta1, config.beta2, config.adam_eps)
    n = X_train.shape[0]
    if n < 2:
        raise ValueError("need at least two training rows")
    per_epoch = len([c for c in range(0, n, config.batch_size) if n - c >= 2])
    total = per_epoch * config.epochs
    history = TrainHistory()
    best = params.copy()
    step = 0
    for epoch in range(config.epochs):
        sums: dict[str, float] = {}
        count = 0
        lr = config.base_lr
        for b, idx in enumerate(batches(n, config.batch_size, shuffle_rng)):
            if config.schedule == "one-cycle":
                lr = one_cycle_lr(step, total, config.max_lr, config.pct_start, config.div_factor, config.final_div_factor)
            xb, yb = X_train[idx], y_train[idx]
            if config.use_mixup and config.mixup.enabled:
                k = min(config.mixup.k_neighbors, idx.size - 1)
                mcfg = MixupConfig(config.mixup.alpha_beta, k, True)
                mixed = mixup_batch(xb, yb, mcfg, mix_rng, num_classes)
                xb = mixed.x_mix
                history.lambdas.append(mixed.lambdas)
            try:
                out = model_forward(Tensor(xb), params, mode="train")
                loss, parts = hybrid_loss(out.logits, out.embedding, yb, params["centroids"], config.loss)
                params.zero_grad()
                ad.backward(loss)
                adamw_step(params, state, lr, config.weight_decay)
            except ad.NumericalError as exc:
                raise ad.NumericalError(f"epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            history.step_losses.append(parts.hybrid)
            for key, val in parts.as_dict().items():
                sums[key] = sums.get(key, 0.0) + float(val)
            count += 1
            step += 1
        metrics = evaluate(params, X_sel, y_sel)
        record = EpochRecord(epoch + 1, lr, {k: v / max(count, 1) for k, v in sums.items()}, metrics)
        history.epochs.append(record)
        score = getattr(metrics, config.selection_metric)
        if score > history.best_score:
            history.best_score = score
            history.best_epoch = epoch + 1
            best = params.copy()
        if on_epoch is not None:
            on_epoch(record)
    return best, history


@dataclass
class TrainResult:
    params: ModelParams
    history: TrainHistory
    scaler: Scaler
    test_metrics: Metrics
    selection: str  # "test" or "validation"


def train(
    dataset: Dataset,
    split: Split,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Scale, train and evaluate on one split.

    By default the epoch best is chosen on the test rows themselves. With
    ``val_fraction > 0`` a stratified slice of the training rows is held out
    for selection instead and the test rows are only scored at the end.
    """
    train_idx, test_idx = split.train, split.test
    selection = "test"
    sel_idx = test_idx
    if config.val_fraction > 0:
        inner = stratified_split(dataset.y[train_idx], config.val_fraction, config.seed, STREAM_VALIDATION)
        sel_idx = train_idx[inner.test]
        train_idx = train_idx[inner.train]
        selection = "validation"
    scaler = fit_scaler(dataset.X[train_idx])
    X_tr = scaler.transform(dataset.X[train_idx])
    best, history = fit(
        X_tr,
        dataset.y[train_idx],
        scaler.transform(dataset.X[sel_idx]),
        dataset.y[sel_idx],
        dataset.num_classes,
        config,
        on_epoch=on_epoch,
    )
    best.buffers["scaler.mean"] = scaler.mean.copy()
    best.buffers["scaler.std"] = scaler.std.copy()
    test_metrics = evaluate(best, scaler.transform(dataset.X[test_idx]), dataset.y[test_idx])
    return TrainResult(best, history, scaler, test_metrics, selection)


# checkpoint files

MAGIC = "QCLMIX-CKPT v1"
FLAGS_KEY = "config.flags"


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def _fmt(a: np.ndarray) -> str:
    return " ".join("%.17g" % v for v in np.asarray(a, dtype=np.float64).ravel())


def save_checkpoint(params: ModelParams, path: Union[str, os.PathLike]) -> None:
    cfg = params.config
    arrays = params.arrays()
    arrays[FLAGS_KEY] = np.array([cfg.use_quantum, cfg.use_mixup, cfg.use_attention], dtype=np.float64)
    lines = [MAGIC]
    for name, a in arrays.items():
        a = np.asarray(a, dtype=np.float64)
        lines.append(" ".join([name, str(a.ndim)] + [str(d) for d in a.shape]))
        lines.append(_fmt(a))
    lines.append("END")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_checkpoint_arrays(path: Union[str, os.PathLike]) -> dict[str, np.ndarray]:
    try:
        with open(path, encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if not lines or lines[0] != MAGIC:
        found = lines[0][:40] if lines else ""
        raise CheckpointError(f"{path}: expected header {MAGIC!r}, found {found!r}")
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while True:
        if i >= len(lines):
            raise CheckpointError(f"{path}: truncated (no END marker)")
        head = lines[i].split()
        if head == ["END"]:
            break
        if i + 1 >= len(lines):
            raise CheckpointError(f"{path}: truncated after {lines[i]!r}")
        try:
            name, ndim = head[0], int(head[1])
            shape = tuple(int(d) for d in head[2:])
            if len(shape) != ndim:
                raise ValueError("ndim does not match dimensions")
            body = lines[i + 1].split()
            values = np.array([float(v) for v in body], dtype=np.float64)
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"{path}:{i + 1}: cannot parse array header/body ({exc})") from None
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(f"{path}: {name} declares {expected} values, found {values.size}")
        arrays[name] = values.reshape(shape)
        i += 2
    return arrays


def load_checkpoint(path: Union[str, os.PathLike]) -> ModelParams:
    arrays = read_checkpoint_arrays(path)
    try:
        d, h1 = arrays["fc1.W"].shape
        h2 = arrays["fc2.W"].shape[1]
        ph = arrays["proj_fc1.W"].shape[1]
        c, de = arrays["centroids"].shape
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: missing or malformed core parameter ({exc})") from None
    flags = arrays.pop(FLAGS_KEY, np.ones(3))
    try:
        cfg = ModelConfig(
            input_dim=d, num_classes=c, hidden1=h1, hidden2=h2, proj_hidden=ph, embed_dim=de,
            use_quantum=bool(flags[0]), use_mixup=bool(flags[1]), use_attention=bool(flags[2]),
        )  # fmt: skip
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    template = init_params(cfg, 0)
    tensors = {}
    for name, t in template.trainable():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        tensors[name] = Tensor(arrays.pop(name), requires_grad=True, name=name)
    for name, buf in template.buffers.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing buffer {name}")
        if arrays[name].shape != buf.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {buf.shape}")
    return ModelParams(cfg, tensors, arrays)


def checkpoint_scaler(params: ModelParams) -> Optional[Scaler]:
    if "scaler.mean" in params.buffers and "scaler.std" in params.buffers:
        return Scaler(params.buffers["scaler.mean"], params.buffers["scaler.std"])
    return None
