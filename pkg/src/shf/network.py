"""Autoencoder forward pass, reconstruction loss and its gradients.

Inputs are row-major mini-batches ``X`` of shape ``(n, m_1)``. The bias is
handled by adding the last row of each weight matrix instead of appending a
ones column to the activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, NumericError
from .weights import WeightVec


@dataclass
class ForwardCache:
    """Activations ``S_0 .. S_k`` and their derivatives ``S'_1 .. S'_k``."""

    s: list
    sprime: list

    @property
    def n(self) -> int:
        return self.s[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.sprime)

    @property
    def output(self) -> np.ndarray:
        return self.s[-1]


@dataclass
class GradStats:
    """Mini-batch gradient and the entrywise sum of squared per-instance gradients."""

    mean_grad: WeightVec
    sumsq_grad: WeightVec
    n: int


def _check_input(w: WeightVec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"X must be a matrix, got shape {X.shape}")
    if X.shape[1] + 1 != w.shapes[0][0]:
        raise ContractError(
            f"X has {X.shape[1]} columns but the first layer expects {w.shapes[0][0] - 1}"
        )
    if X.shape[0] < 1:
        raise ContractError("X has no rows")
    return X


def affine(S: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``[S 1] @ W`` without materialising the ones column."""
    return S @ W[:-1] + W[-1]


def outer_sum(S: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``[S 1]^T @ F``, shape ``(cols(S) + 1, cols(F))``."""
    return np.vstack((S.T @ F, F.sum(axis=0, keepdims=True)))


def forward(w: WeightVec, X) -> ForwardCache:
    X = _check_input(w, X)
    if not np.isfinite(X).all():
        raise NumericError("input contains non-finite entries", where=0)
    s = [X]
    sprime = []
    for layer, W in enumerate(w.mats, start=1):
        Z = affine(s[-1], W)
        if not np.isfinite(Z).all():
            raise NumericError(f"non-finite pre-activation in layer {layer}", where=layer)
        S = expit(Z)
        s.append(S)
        sprime.append(S * (1.0 - S))
    return ForwardCache(s, sprime)


def residual(cache: ForwardCache) -> np.ndarray:
    """``R = (S_k - S_0) / sqrt(n)``."""
    return (cache.output - cache.s[0]) / np.sqrt(cache.n)


def loss(cache: ForwardCache) -> float:
    """Half the mean squared reconstruction error over the rows of the batch."""
    diff = cache.output - cache.s[0]
    return 0.5 * float(np.vdot(diff, diff)) / cache.n


def loss_at(w: WeightVec, X) -> float:
    return loss(forward(w, X))


def backward_sweep(w: WeightVec, cache: ForwardCache, U: np.ndarray) -> list:
    """Back-propagate ``U`` through the cached network.

    Returns the per-layer sensitivities ``F_1 .. F_k`` (each ``n x m_{l+1}``)
    with ``F_k = U * S'_k`` and ``F_l = (F_{l+1} W_{l+1}^-^T) * S'_l``. No
    ``1/sqrt(n)`` scaling is applied.
    """
    k = cache.depth
    F = [None] * k
    F[k - 1] = U * cache.sprime[k - 1]
    for layer in range(k - 2, -1, -1):
        F[layer] = (F[layer + 1] @ w.mats[layer + 1][:-1].T) * cache.sprime[layer]
    return F


def backward(w: WeightVec, cache: ForwardCache, U: np.ndarray, scale: float = 1.0) -> WeightVec:
    """``scale * [S~_{l-1}^T F_l]_l`` for the sensitivities of ``U``."""
    F = backward_sweep(w, cache, U)
    out = WeightVec(w.shapes)
    for layer, D in enumerate(out.mats):
        D[...] = outer_sum(cache.s[layer], F[layer])
    if scale != 1.0:
        out.data *= scale
    return out


def gradient(w: WeightVec, X) -> WeightVec:
    """Gradient of the mini-batch loss, ``grad R^T R``."""
    cache = forward(w, X)
    return backward(w, cache, residual(cache), scale=1.0 / np.sqrt(cache.n))


def grad_stats(w: WeightVec, X, cache: ForwardCache | None = None) -> GradStats:
    """Mean gradient and summed squared per-instance gradients in one sweep.

    Instance ``i`` contributes the outer product ``s~_{l-1,i} f_{l,i}^T`` to
    layer ``l``; summing squares of those outer products over ``i`` is
    ``(S~ * S~)^T (F * F)``.
    """
    if cache is None:
        cache = forward(w, X)
    n = cache.n
    if n < 2:
        raise ContractError(f"gradient statistics need at least 2 instances, got {n}")
    F = backward_sweep(w, cache, cache.output - cache.s[0])
    total = WeightVec(w.shapes)
    sumsq = WeightVec(w.shapes)
    for layer in range(cache.depth):
        S, Fl = cache.s[layer], F[layer]
        total.mats[layer][...] = outer_sum(S, Fl)
        sumsq.mats[layer][...] = outer_sum(S * S, Fl * Fl)
    total.data /= n
    return GradStats(total, sumsq, n)
