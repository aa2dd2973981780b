"""QCL-MixNet: QE layers, attention recalibration, dense trunk and two heads."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import make_rng, STREAM_INIT

# parameters exempt from weight decay
NO_DECAY_SUFFIXES = ("theta1", "theta2", ".gamma", ".beta")


@dataclass
class ModelConfig:
    """Architecture hyperparameters and ablation switches."""

    input_dim: int
    num_classes: int
    hidden1: int = 64
    hidden2: int = 32
    proj_hidden: int = 16
    embed_dim: int = 8
    attention_heads: int = 1
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    use_quantum: bool = True
    use_mixup: bool = True
    use_attention: bool = True

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.attention_heads != 1:
            raise ValueError("only single-head attention is supported")


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, h1, h2 = cfg.input_dim, cfg.hidden1, cfg.hidden2
    ph, de, c = cfg.proj_hidden, cfg.embed_dim, cfg.num_classes
    return {
        "theta1": (d,),
        "attn.W_Q": (d, d), "attn.b_Q": (d,),
        "attn.W_K": (d, d), "attn.b_K": (d,),
        "attn.W_V": (d, d), "attn.b_V": (d,),
        "attn.W_O": (d, d), "attn.b_O": (d,),
        "fc1.W": (d, h1), "fc1.b": (h1,),
        "bn1.gamma": (h1,), "bn1.beta": (h1,),
        "theta2": (h1,),
        "fc2.W": (h1, h2), "fc2.b": (h2,),
        "bn2.gamma": (h2,), "bn2.beta": (h2,),
        "proj_fc1.W": (h2, ph), "proj_fc1.b": (ph,),
        "proj_bn.gamma": (ph,), "proj_bn.beta": (ph,),
        "proj_fc2.W": (ph, de), "proj_fc2.b": (de,),
        "fc3.W": (h2, c), "fc3.b": (c,),
        "centroids": (c, de),
    }  # fmt: skip


BN_LAYERS = ("bn1", "bn2", "proj_bn")


@dataclass
class ModelParams:
    """Learnable tensors plus batch-norm running statistics.

    ``buffers`` holds non-learned arrays (running statistics and, when a
    model is trained from raw data, the feature scaler) that travel with the
    checkpoint.
    """

    config: ModelConfig
    tensors: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        """Every array, learnable first, in checkpoint order."""
        out = {name: t.data for name, t in self.tensors.items()}
        out.update(self.buffers)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
        )


def init_params(cfg: ModelConfig, seed: int = 42) -> ModelParams:
    """Seeded initialisation.

    Dense weights and biases are U(-1/sqrt(fan_in), 1/sqrt(fan_in)), angle
    vectors U(-pi, pi), centroids N(0, 0.1^2), batch-norm affine (1, 0).
    """
    rng = make_rng(seed, STREAM_INIT)
    tensors: dict[str, Tensor] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.startswith("theta"):
            data = rng.uniform(-math.pi, math.pi, size=shape)
        elif name == "centroids":
            data = rng.normal(0.0, 0.1, size=shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith(".beta"):
            data = np.zeros(shape)
        else:
            layer = name.rsplit(".", 1)[0]
            weight = f"{layer}.W" if layer != "attn" else "attn.W_" + name[-1]
            fan_in = _param_shapes(cfg)[weight][0]
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    buffers: dict[str, np.ndarray] = {}
    for layer in BN_LAYERS:
        width = tensors[f"{layer}.gamma"].shape[0]
        buffers[f"{layer}.running_mean"] = np.zeros(width)
        buffers[f"{layer}.running_var"] = np.ones(width)
    return ModelParams(cfg, tensors, buffers)


@dataclass
class ForwardOutput:
    logits: Tensor
    embedding: Tensor
    penultimate: Tensor


def qe_forward(x: Tensor, theta: Tensor) -> Tensor:
    """Quantum-entanglement-inspired layer.

    Rows are scaled by cos(theta); each row then gets one sigmoid gate from
    its dot product with sin(theta).
    """
    x, theta = ad.as_tensor(x), ad.as_tensor(theta)
    if x.ndim != 2 or theta.shape != (x.shape[1],):
        raise ValueError(f"theta of shape {theta.shape} does not match input {x.shape}")
    x_proj = x * ad.cos(theta)
    gate = ad.sigmoid(x_proj @ ad.reshape(ad.sin(theta), (-1, 1)))
    return x_proj * gate


def linear(x: Tensor, params: ModelParams, layer: str) -> Tensor:
    return x @ params[f"{layer}.W"] + params[f"{layer}.b"]


def attention_forward(x: Tensor, params: ModelParams) -> Tensor:
    """Single-head self-attention on a length-1 sequence, with residual.

    Every sample is its own sequence, so the query-key score is a scalar per
    row and its softmax is exactly 1; W_Q and W_K are computed but cannot
    change the output.
    """
    x = ad.as_tensor(x)
    d = params.config.input_dim
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"attention expects B x {d} input, got {x.shape}")
    q = x @ params["attn.W_Q"] + params["attn.b_Q"]
    k = x @ params["attn.W_K"] + params["attn.b_K"]
    v = x @ params["attn.W_V"] + params["attn.b_V"]
    scores = ad.reduce(q * k, "sum", axis=1, keepdims=True) * (1.0 / math.sqrt(d))
    weights = ad.softmax(scores, axis=1)
    attended = weights * v
    out = attended @ params["attn.W_O"] + params["attn.b_O"]
    return x + out


def _bn(x: Tensor, params: ModelParams, layer: str, mode: str) -> Tensor:
    cfg = params.config
    return ad.batchnorm(
        x,
        params[f"{layer}.gamma"],
        params[f"{layer}.beta"],
        params.buffers[f"{layer}.running_mean"],
        params.buffers[f"{layer}.running_var"],
        mode=mode,
        momentum=cfg.bn_momentum,
        eps=cfg.bn_eps,
    )


def model_forward(x, params: ModelParams, mode: str = "train", config: Optional[ModelConfig] = None) -> ForwardOutput:
    """One shared pass producing logits and the projection-head embedding."""
    cfg = config or params.config
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input of width {cfg.input_dim}, got shape {x.shape}")
    if params["fc3.W"].shape[1] != cfg.num_classes or params["fc1.W"].shape[0] != cfg.input_dim:
        raise ValueError("parameters do not match model config")
    slope = cfg.leaky_slope
    h = qe_forward(x, params["theta1"]) if cfg.use_quantum else x
    if cfg.use_attention:
        h = attention_forward(h, params)
    h = ad.leaky_relu(_bn(linear(h, params, "fc1"), params, "bn1", mode), slope)
    if cfg.use_quantum:
        h = qe_forward(h, params["theta2"])
    h = ad.leaky_relu(_bn(linear(h, params, "fc2"), params, "bn2", mode), slope)
    logits = linear(h, params, "fc3")
    p = ad.relu(_bn(linear(h, params, "proj_fc1"), params, "proj_bn", mode))
    embedding = linear(p, params, "proj_fc2")
    return ForwardOutput(logits=logits, embedding=embedding, penultimate=h)


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Eval-mode argmax predictions."""
    out = model_forward(Tensor(X), params, mode="eval")
    return out.logits.data.argmax(axis=1)
