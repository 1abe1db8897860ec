"""Matrix-free Gauss-Newton operator of the reconstruction residual.

``A = grad R(w; X)`` maps a weight direction to an ``n x m_1`` matrix; its
adjoint maps such a matrix back to weight space. Both products reuse one
cached forward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .network import ForwardCache, affine, backward, backward_sweep, forward, outer_sum, residual
from .weights import WeightVec


class GnOperator:
    """Jacobian products of the residual at a fixed ``(w, X)``.

    Parameters
    ----------
    w : WeightVec
        Linearisation point.
    X : ndarray, shape (n, m_1)
        Mini-batch.
    lam : float
        Damping parameter. Stored for the solver; the products ignore it.
    precon_inv : WeightVec, optional
        Reciprocals of the diagonal preconditioner, used by :meth:`apply_pc`
        and :meth:`apply_pc_t`. Defaults to all ones.
    cache : ForwardCache, optional
        A forward pass of ``w`` on ``X`` to reuse.
    """

    def __init__(self, w: WeightVec, X, lam: float = 0.0, precon_inv=None, cache=None):
        self.w = w
        self.cache = cache if cache is not None else forward(w, X)
        self.X = self.cache.s[0]
        self.lam = float(lam)
        if precon_inv is None:
            precon_inv = WeightVec(w.shapes, np.ones(w.data.size))
        w._check(precon_inv)
        if not (precon_inv.data > 0).all():
            raise ContractError("preconditioner entries must be positive")
        self.precon_inv = precon_inv
        self._scale = 1.0 / np.sqrt(self.cache.n)

    @property
    def range_shape(self):
        return self.X.shape

    def residual(self) -> np.ndarray:
        return residual(self.cache)

    def jvp(self, d: WeightVec) -> np.ndarray:
        """Forward mode: ``d -> grad R d``."""
        self.w._check(d)
        cache, w = self.cache, self.w
        F = cache.sprime[0] * affine(cache.s[0], d.mats[0])
        for layer in range(1, cache.depth):
            F = cache.sprime[layer] * (
                F @ w.mats[layer][:-1] + affine(cache.s[layer], d.mats[layer])
            )
        return F * self._scale

    def vjp(self, U) -> WeightVec:
        """Backward mode: ``U -> grad R^T U``."""
        U = np.asarray(U, dtype=np.float64)
        if U.shape != self.range_shape:
            raise ContractError(f"U has shape {U.shape}, expected {self.range_shape}")
        return backward(self.w, self.cache, U, scale=self._scale)

    def apply_pc(self, d: WeightVec) -> np.ndarray:
        """``d -> A (c * d)``."""
        return self.jvp(self.precon_inv * d)

    def apply_pc_t(self, U) -> WeightVec:
        """``U -> c * (A^T U)``."""
        return self.precon_inv * self.vjp(U)


def jvp_forward(op: GnOperator, d: WeightVec) -> np.ndarray:
    return op.jvp(d)


def vjp_backward(op: GnOperator, U) -> WeightVec:
    return op.vjp(U)


def random_signs(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0


def gn_diag_estimate(w: WeightVec, cache: ForwardCache, signs: np.ndarray) -> WeightVec:
    """Randomised estimate of ``diag(A^T A)`` for one row of signs per instance.

    Instance ``i`` contributes ``(s~_{l-1,i} f_{l,i}^T)^2`` where ``f`` is the
    backward sweep of ``signs[i]``; the sum is divided by ``n``, which supplies
    the ``1/sqrt(n)`` factor of ``A`` squared.
    """
    signs = np.asarray(signs, dtype=np.float64)
    if signs.shape != cache.s[0].shape:
        raise ContractError(f"signs have shape {signs.shape}, expected {cache.s[0].shape}")
    F = backward_sweep(w, cache, signs)
    est = WeightVec(w.shapes)
    for layer in range(cache.depth):
        S = cache.s[layer]
        est.mats[layer][...] = outer_sum(S * S, F[layer] * F[layer])
    est.data /= cache.n
    return est


def precon_from_estimate(est: WeightVec) -> WeightVec:
    return est.like(1.0 / (1.0 + est.data))


def precon_compute(w: WeightVec, X, rng: np.random.Generator, cache=None) -> WeightVec:
    """Inverse diagonal preconditioner ``c = 1 / (1 + est)`` (entries in (0, 1])."""
    if cache is None:
        cache = forward(w, X)
    signs = random_signs(rng, cache.s[0].shape)
    return precon_from_estimate(gn_diag_estimate(w, cache, signs))
