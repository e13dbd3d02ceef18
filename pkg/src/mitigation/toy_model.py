"""
Two-layer dropout MLP with hand-derived gradients.

    z1 = X W1 + b1,  h = relu(z1),  hd = h * mask,  out = hd W2 + b2

`mask` is inverted dropout on the hidden layer (kept units scaled by
1 / (1 - p)). The softmax head reads `out` as class logits; the Gaussian head
reads it as K means followed by K log-variances.

Losses are per-sample weighted sums, sum_i s_i * loss_i; uniform weights
s_i = 1/n give the batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from src.utils.errors import ValidationError


SOFTMAX = "softmax"
GAUSSIAN = "gaussian"
PARAM_BLOCKS = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class ToyModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    head: str = SOFTMAX
    dropout_p: float = 0.2

    def __post_init__(self) -> None:
        if self.head not in (SOFTMAX, GAUSSIAN):
            raise ValidationError(f"unknown head {self.head!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def input_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_width(self) -> int:
        return int(self.w1.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.w2.shape[1])

    @property
    def target_count(self) -> int:
        return self.output_dim // 2 if self.head == GAUSSIAN else 0

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_BLOCKS}

    def with_params(self, params: Dict[str, np.ndarray]) -> "ToyModel":
        return replace(self, **{k: np.asarray(v, dtype=np.float64) for k, v in params.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params().values())


def init_model(input_dim: int, hidden_width: int, output_dim: int, head: str,
               dropout_p: float, rng: np.random.Generator) -> ToyModel:
    w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden_width))
    w2 = rng.normal(0.0, np.sqrt(1.0 / hidden_width), size=(hidden_width, output_dim))
    return ToyModel(
        w1=w1, b1=np.zeros(hidden_width), w2=w2, b2=np.zeros(output_dim),
        head=head, dropout_p=dropout_p,
    )


def dropout_mask(shape: Tuple[int, int], p: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    if p == 0.0 or rng is None:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    mask: np.ndarray
    hd: np.ndarray
    out: np.ndarray


def forward(model: ToyModel, x: np.ndarray, mask: Optional[np.ndarray] = None) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    z1 = x @ model.w1 + model.b1
    if mask is None:
        mask = np.ones_like(z1)
    hd = np.maximum(z1, 0.0) * mask
    out = hd @ model.w2 + model.b2
    return ForwardCache(x, z1, mask, hd, out)


def predict_outputs(model: ToyModel, out: np.ndarray) -> np.ndarray:
    """
    Softmax head: class probabilities [n x C].
    Gaussian head: [n x K x 2] holding (mean, variance).
    """

    if model.head == SOFTMAX:
        return softmax(out, axis=1)
    k = model.target_count
    return np.stack([out[:, :k], np.exp(out[:, k:])], axis=-1)


def per_sample_loss(model: ToyModel, out: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model.head == SOFTMAX:
        logp = log_softmax(out, axis=1)
        return -logp[np.arange(len(y)), np.asarray(y, dtype=np.int64)]
    k = model.target_count
    mu, logvar = out[:, :k], out[:, k:]
    resid = np.asarray(y, dtype=np.float64) - mu
    # Gaussian NLL without the constant 0.5 ln(2 pi)
    return 0.5 * np.sum(logvar + resid * resid * np.exp(-logvar), axis=1)


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def batch_loss(model: ToyModel, x: np.ndarray, y: np.ndarray,
               sample_weight: Optional[np.ndarray] = None,
               mask: Optional[np.ndarray] = None) -> float:
    cache = forward(model, x, mask)
    weights = _uniform(len(cache.x)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    return float(np.dot(weights, per_sample_loss(model, cache.out, y)))


def toy_gradients(model: ToyModel, x: np.ndarray, y: np.ndarray,
                  sample_weight: Optional[np.ndarray] = None,
                  mask: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """
    Analytic gradients of `batch_loss` with respect to every parameter block.
    """

    cache = forward(model, x, mask)
    n = cache.x.shape[0]
    if n == 0:
        raise ValidationError("gradient needs a non-empty batch")
    s = (_uniform(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64))[:, None]

    if model.head == SOFTMAX:
        d_out = softmax(cache.out, axis=1)
        d_out[np.arange(n), np.asarray(y, dtype=np.int64)] -= 1.0
        d_out *= s
    else:
        k = model.target_count
        mu, logvar = cache.out[:, :k], cache.out[:, k:]
        inv_var = np.exp(-logvar)
        resid = np.asarray(y, dtype=np.float64) - mu
        d_mu = -resid * inv_var
        d_logvar = 0.5 * (1.0 - resid * resid * inv_var)
        d_out = np.concatenate([d_mu, d_logvar], axis=1) * s

    d_w2 = cache.hd.T @ d_out
    d_b2 = d_out.sum(axis=0)
    d_hd = d_out @ model.w2.T
    d_z1 = d_hd * cache.mask * (cache.z1 > 0.0)
    return {
        "w1": cache.x.T @ d_z1,
        "b1": d_z1.sum(axis=0),
        "w2": d_w2,
        "b2": d_b2,
    }


def sgd_update(model: ToyModel, grads: Dict[str, np.ndarray], learning_rate: float) -> ToyModel:
    return model.with_params({k: model.params()[k] - learning_rate * grads[k] for k in PARAM_BLOCKS})
