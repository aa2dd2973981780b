"""Seeded finite-difference checks of every op, loss term and the full model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor
from .model import ModelConfig, attention_forward, init_params, model_forward, qe_forward
from .rng import STREAM_GRADCHECK, make_rng

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    group: str
    instances: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _away_from_zero(rng, shape, lo=0.1, hi=2.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _weighted(t: Tensor, w: np.ndarray) -> Tensor:
    # random projection so every output coordinate matters
    return ad.reduce(t * w, "sum")


def _op_cases() -> dict[str, Callable]:
    """name -> builder(rng) returning (f, x)."""

    def unary(fn, sample=None):
        def build(rng):
            x = sample(rng) if sample else rng.normal(size=(3, 4))
            w = rng.normal(size=fn(Tensor(x)).shape)
            return (lambda t: _weighted(fn(t), w)), x

        return build

    def binary(fn):
        def build(rng):
            other = _away_from_zero(rng, (3, 4))
            w = rng.normal(size=(3, 4))
            return (lambda t: _weighted(fn(t, Tensor(other)), w)), _away_from_zero(rng, (3, 4))

        return build

    def broadcast_rhs(fn):
        # gradient of the broadcast operand
        def build(rng):
            left = _away_from_zero(rng, (3, 4))
            w = rng.normal(size=(3, 4))
            return (lambda t: _weighted(fn(Tensor(left), t), w)), _away_from_zero(rng, (4,))

        return build

    def matmul_left(rng):
        b = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))
        return (lambda t: _weighted(t @ Tensor(b), w)), rng.normal(size=(3, 4))

    def matmul_right(rng):
        a = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 2))
        return (lambda t: _weighted(Tensor(a) @ t, w)), rng.normal(size=(4, 2))

    def reduction(op, axis, keepdims=False):
        def build(rng):
            x = rng.normal(size=(3, 4))
            shape = np.sum(x, axis=axis, keepdims=keepdims).shape
            w = rng.normal(size=shape)
            return (lambda t: _weighted(ad.reduce(t, op, axis, keepdims), w)), x

        return build

    def bn(mode, wrt):
        def build(rng):
            x = rng.normal(size=(8, 3)) * 2.0 + 0.5
            gamma, beta = rng.uniform(0.5, 1.5, 3), rng.normal(size=3)
            rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)
            w = rng.normal(size=(8, 3))

            def f(t):
                args = {"x": Tensor(x), "gamma": Tensor(gamma), "beta": Tensor(beta)}
                args[wrt] = t
                out = ad.batchnorm(args["x"], args["gamma"], args["beta"], rm.copy(), rv.copy(), mode=mode)
                return _weighted(out, w)

            return f, {"x": x, "gamma": gamma, "beta": beta}[wrt]

        return build

    def take_rows(rng):
        idx = rng.integers(0, 5, size=7)
        w = rng.normal(size=(7, 3))
        return (lambda t: _weighted(t[idx], w)), rng.normal(size=(5, 3))

    positive = lambda rng: rng.uniform(0.2, 3.0, size=(3, 4))  # noqa: E731
    return {
        "add": binary(ad.add),
        "add_broadcast": broadcast_rhs(ad.add),
        "sub": binary(ad.sub),
        "mul": binary(ad.mul),
        "mul_broadcast": broadcast_rhs(ad.mul),
        "div": binary(ad.div),
        "div_broadcast": broadcast_rhs(ad.div),
        "power": unary(lambda t: ad.power(t, 3.0), positive),
        "matmul_left": matmul_left,
        "matmul_right": matmul_right,
        "cos": unary(ad.cos),
        "sin": unary(ad.sin),
        "sigmoid": unary(ad.sigmoid),
        "exp": unary(ad.exp),
        "log": unary(ad.log, positive),
        "relu": unary(ad.relu, lambda rng: _away_from_zero(rng, (3, 4))),
        "leaky_relu": unary(lambda t: ad.leaky_relu(t, 0.01), lambda rng: _away_from_zero(rng, (3, 4))),
        "neg": unary(ad.neg),
        "square": unary(ad.square),
        "sqrt": unary(ad.sqrt, positive),
        "log_sigmoid": unary(ad.log_sigmoid, lambda rng: rng.normal(size=(3, 4)) * 5),
        "clip": unary(lambda t: ad.clip(t, -0.5, 0.5), lambda rng: _away_from_zero(rng, (3, 4), 0.05, 1.0)),
        "transpose": unary(ad.transpose),
        "reshape": unary(lambda t: ad.reshape(t, (4, 3))),
        "take": take_rows,
        "sum_all": reduction("sum", None),
        "sum_axis0": reduction("sum", 0),
        "mean_axis1_keepdims": reduction("mean", 1, True),
        "mean_all": reduction("mean", None),
        "softmax": unary(lambda t: ad.softmax(t, axis=1)),
        "log_softmax": unary(lambda t: ad.log_softmax(t, axis=1)),
        "batchnorm_train_x": bn("train", "x"),
        "batchnorm_train_gamma": bn("train", "gamma"),
        "batchnorm_train_beta": bn("train", "beta"),
        "batchnorm_eval_x": bn("eval", "x"),
    }


def _batch(rng, n=12, c=3, d=8):
    y = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
    return rng.normal(size=(n, d)), y


def _loss_cases() -> dict[str, Callable]:
    cfg = L.LossConfig()

    def focal(rng):
        logits, y = _batch(rng, d=3)
        return (lambda t: L.focal_loss(t, y, cfg.gamma)), logits * 2

    def intra_emb(rng):
        emb, y = _batch(rng)
        cent = rng.normal(size=(3, 8))
        return (lambda t: L.intra_variance(t, y, Tensor(cent))), emb

    def intra_cent(rng):
        emb, y = _batch(rng)
        return (lambda t: L.intra_variance(Tensor(emb), y, t)), rng.normal(size=(3, 8))

    def inter(rng):
        return (lambda t: L.inter_separation(t, np.arange(4))), rng.normal(size=(4, 8))

    def fvl(rng):
        emb, y = _batch(rng)
        logits, cent = rng.normal(size=(12, 3)), rng.normal(size=(3, 8))
        return (lambda t: L.focal_variance_loss(Tensor(logits), y, t, Tensor(cent), cfg)[0]), emb

    def supcon(rng):
        emb, y = _batch(rng, n=10, c=4)
        return (lambda t: L.supcon_loss(t, y, cfg.tau)[0]), emb

    def triplet(rng):
        emb, y = _batch(rng)
        trip = L.ms_mine_triplets(emb, y, cfg.miner_epsilon)
        return (lambda t: L.triplet_loss(t, trip, cfg.margin)), emb

    def hybrid_emb(rng):
        emb, y = _batch(rng, n=8, c=2)
        logits, cent = rng.normal(size=(8, 2)), rng.normal(size=(2, 8))
        return (lambda t: L.hybrid_loss(Tensor(logits), t, y, Tensor(cent), cfg)[0]), emb

    def hybrid_logits(rng):
        emb, y = _batch(rng, n=8, c=2)
        cent = rng.normal(size=(2, 8))
        return (lambda t: L.hybrid_loss(t, Tensor(emb), y, Tensor(cent), cfg)[0]), rng.normal(size=(8, 2))

    return {
        "focal": focal,
        "intra_embedding": intra_emb,
        "intra_centroids": intra_cent,
        "inter": inter,
        "fvl": fvl,
        "supcon": supcon,
        "triplet": triplet,
        "hybrid_embedding": hybrid_emb,
        "hybrid_logits": hybrid_logits,
    }


def _model_cases() -> dict[str, Callable]:
    def qe_x(rng):
        theta = rng.uniform(-np.pi, np.pi, 5)
        w = rng.normal(size=(6, 5))
        return (lambda t: _weighted(qe_forward(t, Tensor(theta)), w)), rng.normal(size=(6, 5))

    def qe_theta(rng):
        x = rng.normal(size=(6, 5))
        w = rng.normal(size=(6, 5))
        return (lambda t: _weighted(qe_forward(Tensor(x), t), w)), rng.uniform(-np.pi, np.pi, 5)

    def attention_x(rng):
        params = init_params(ModelConfig(input_dim=5, num_classes=2), int(rng.integers(1 << 30)))
        w = rng.normal(size=(6, 5))
        return (lambda t: _weighted(attention_forward(t, params), w)), rng.normal(size=(6, 5))

    def full_input(rng):
        cfg = ModelConfig(input_dim=5, num_classes=3)
        params = init_params(cfg, int(rng.integers(1 << 30)))
        x, y = _batch(rng, n=12, c=3, d=5)

        def f(t):
            out = model_forward(t, params, mode="train")
            return L.hybrid_loss(out.logits, out.embedding, y, params["centroids"], L.LossConfig())[0]

        return f, x

    return {"qe_input": qe_x, "qe_theta": qe_theta, "attention_input": attention_x, "full_model_input": full_input}


def full_model_param_error(rng, coords_per_tensor: int = 3, h: float = STEP) -> float:
    """Hybrid loss through the full model, checked on sampled coordinates of every parameter."""
    cfg = ModelConfig(input_dim=5, num_classes=3)
    params = init_params(cfg, int(rng.integers(1 << 30)))
    x, y = _batch(rng, n=12, c=3, d=5)
    lcfg = L.LossConfig()

    def loss() -> Tensor:
        out = model_forward(Tensor(x), params, mode="train")
        return L.hybrid_loss(out.logits, out.embedding, y, params["centroids"], lcfg)[0]

    params.zero_grad()
    ad.backward(loss())
    worst = 0.0
    for name, t in params.trainable():
        g = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss().item()
            flat[i] = orig - h
            fm = loss().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


GROUPS = {"op": _op_cases, "loss": _loss_cases, "model": _model_cases}


def available_checks() -> list[str]:
    names = [n for build in GROUPS.values() for n in build()]
    return names + ["full_model_params"]


def run_suite(only: Optional[str] = None, instances: int = 20, seed: int = 0) -> list[CheckResult]:
    """Run every check (or those whose name starts with ``only``)."""
    results = []
    for group, build in GROUPS.items():
        for name, case in build().items():
            if only and not name.startswith(only):
                continue
            rng = make_rng(seed, STREAM_GRADCHECK)
            worst = 0.0
            for _ in range(instances):
                f, x = case(rng)
                worst = max(worst, ad.grad_check(f, x, STEP))
            results.append(CheckResult(name, group, instances, worst))
    if not only or "full_model_params".startswith(only):
        rng = make_rng(seed, STREAM_GRADCHECK)
        worst = max(full_model_param_error(rng) for _ in range(instances))
        results.append(CheckResult("full_model_params", "model", instances, worst))
    if only and not results:
        raise ValueError(f"no check named {only!r}; known: {', '.join(available_checks())}")
    return results
