"""Diagonally preconditioned, damped LSMR with merit-function monitoring.

Solves ``min ||A x - b||^2 + lam^2 ||y - y_0||^2`` in the preconditioned
coordinates ``y = x / c``, where the operator seen by the Golub-Kahan process
is ``A diag(c)``. Domain vectors may be numpy arrays or
:class:`~shf.weights.WeightVec`; range vectors are numpy arrays.

Besides the usual normal-equation residual test, the solver evaluates a
merit function at geometrically spaced checkpoints and stops when it
stagnates or fails to recover from an increase.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, NumericError
from .weights import WeightVec


class StopReason(str, enum.Enum):
    NORMAL_RESIDUAL = "normal_residual"
    STAGNATION = "stagnation"
    NO_RECOVERY = "no_recovery"
    MAXITER = "maxiter"


@dataclass
class LsmrConfig:
    maxiter: int
    atol: float = 1e-8
    ftol: float = 1e-7
    miniter: int = 50
    recover: int = 100

    def __post_init__(self):
        if self.maxiter < 1:
            raise ContractError(f"maxiter must be >= 1, got {self.maxiter}")
        if self.atol < 0 or self.ftol < 0:
            raise ContractError("atol and ftol must be non-negative")


@dataclass
class LsmrOutcome:
    x: object
    iters: int
    reason: StopReason
    merit_trace: list = field(default_factory=list)
    x_is_min: bool = False
    normar_trace: list = field(default_factory=list)
    norm_a: float = 0.0
    norm_r: float = 0.0


FIRST_CHECKPOINT = 5


def checkpoint_schedule(k_next: int, maxiter: int) -> int:
    """Next merit checkpoint: ``min(ceil(1.25 * k_next), maxiter)``."""
    if k_next < 1:
        raise ContractError(f"k_next must be >= 1, got {k_next}")
    return min((5 * k_next + 3) // 4, maxiter)


def _dot(a, b) -> float:
    if isinstance(a, WeightVec):
        return a.inner(b)
    return float(np.vdot(a, b))


def _norm(a) -> float:
    if isinstance(a, WeightVec):
        return a.norm()
    return float(np.linalg.norm(a))


def _copy(a):
    return a.copy()


def _sym_ortho(a: float, b: float):
    r = math.hypot(a, b)
    return a / r, b / r, r


def lsmr_solve(
    apply_A: Callable,
    apply_At: Callable,
    b: np.ndarray,
    x0,
    lam: float = 0.0,
    c=None,
    cfg: Optional[LsmrConfig] = None,
    merit: Optional[Callable] = None,
) -> LsmrOutcome:
    """Run preconditioned LSMR from ``x0``.

    Parameters
    ----------
    apply_A, apply_At : callable
        ``x -> A x`` and ``u -> A^T u`` in original coordinates.
    b : ndarray
        Right-hand side.
    x0 : domain vector
        Starting point in original coordinates.
    lam : float
        Damping, applied to the preconditioned correction.
    c : domain vector, optional
        Positive reciprocals of the diagonal preconditioner. ``None`` means
        no preconditioning.
    cfg : LsmrConfig
    merit : callable, optional
        ``x -> float`` evaluated at checkpoint iterations. Without it only
        the residual test and ``maxiter`` stop the solver.

    Returns
    -------
    LsmrOutcome
        ``x`` is in original coordinates. On ``no_recovery`` it is the
        checkpoint with the lowest merit value.
    """
    if cfg is None:
        cfg = LsmrConfig(maxiter=100)
    if lam < 0:
        raise ContractError(f"lam must be >= 0, got {lam}")
    if c is None:
        c = np.ones_like(x0.data) if isinstance(x0, WeightVec) else np.ones_like(x0, dtype=np.float64)
        if isinstance(x0, WeightVec):
            c = x0.like(c)
    cdata = c.data if isinstance(c, WeightVec) else np.asarray(c)
    if not (cdata > 0).all():
        raise ContractError("preconditioner entries must be positive")

    def Abar(v):
        return apply_A(c * v)

    def Abar_t(u):
        return c * apply_At(u)

    x = _copy(x0)
    dy = x0 * 0.0
    r0 = b - apply_A(x)
    beta = _norm(r0)
    if not math.isfinite(beta):
        raise NumericError("non-finite initial residual", where=0)
    trace = []
    if beta == 0.0:
        return LsmrOutcome(x, 0, StopReason.NORMAL_RESIDUAL, trace, normar_trace=[0.0])
    u = r0 / beta
    v = Abar_t(u)
    alpha = _norm(v)
    if not math.isfinite(alpha):
        raise NumericError("non-finite initial normal residual", where=0)
    if alpha == 0.0:
        return LsmrOutcome(x, 0, StopReason.NORMAL_RESIDUAL, trace, normar_trace=[0.0],
                           norm_r=beta)
    v = v / alpha

    zetabar = alpha * beta
    alphabar = alpha
    rho = rhobar = cbar = 1.0
    sbar = 0.0
    h = _copy(v)
    hbar = x0 * 0.0

    # running estimate of ||r_bar||
    betadd = beta
    betad = 0.0
    rhodold = 1.0
    tautildeold = 0.0
    thetatilde = 0.0
    zeta = 0.0
    dsum = 0.0

    norm_a2 = alpha * alpha
    norm_a = alpha
    norm_r = beta
    normar_trace = [abs(zetabar)]

    f_min = math.inf
    f_prev = None
    k_min = k_prev = 0
    k_next = FIRST_CHECKPOINT
    x_min = x
    if merit is not None:
        f_prev = float(merit(x))
        trace.append((0, f_prev))

    reason = StopReason.MAXITER
    returned_min = False
    k = 0
    for k in range(1, cfg.maxiter + 1):
        # Golub-Kahan step on A diag(c)
        u = Abar(v) - alpha * u
        beta = _norm(u)
        if beta > 0:
            u = u / beta
            v = Abar_t(u) - beta * v
            alpha = _norm(v)
            if alpha > 0:
                v = v / alpha
        if not (math.isfinite(alpha) and math.isfinite(beta)):
            raise NumericError(f"non-finite bidiagonalisation scalar at iteration {k}", where=k)

        chat, shat, alphahat = _sym_ortho(alphabar, lam)

        rhoold = rho
        cs, sn, rho = _sym_ortho(alphahat, beta)
        thetanew = sn * alpha
        alphabar = cs * alpha

        rhobarold = rhobar
        zetaold = zeta
        thetabar = sbar * rho
        cbar, sbar, rhobar = _sym_ortho(cbar * rho, thetanew)
        zeta = cbar * zetabar
        zetabar = -sbar * zetabar

        hbar = h - (thetabar * rho / (rhoold * rhobarold)) * hbar
        dy = dy + (zeta / (rho * rhobar)) * hbar
        h = v - (thetanew / rho) * h

        # ||r_bar|| estimate
        betaacute = chat * betadd
        betacheck = -shat * betadd
        betahat = cs * betaacute
        betadd = -sn * betaacute
        thetatildeold = thetatilde
        ctildeold, stildeold, rhotildeold = _sym_ortho(rhodold, thetabar)
        thetatilde = stildeold * rhobar
        rhodold = ctildeold * rhobar
        betad = -stildeold * betad + ctildeold * betahat
        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold
        taud = (zeta - thetatilde * tautildeold) / rhodold
        dsum += betacheck * betacheck
        norm_r = math.sqrt(dsum + (betad - taud) ** 2 + betadd * betadd)

        norm_a2 += beta * beta
        norm_a = math.sqrt(norm_a2)
        norm_a2 += alpha * alpha

        normar = abs(zetabar)
        normar_trace.append(normar)
        if not all(map(math.isfinite, (rho, rhobar, zeta, zetabar, norm_r))):
            raise NumericError(f"non-finite LSMR recurrence at iteration {k}", where=k)

        x = x0 + c * dy
        if normar <= cfg.atol * norm_a * norm_r:
            reason = StopReason.NORMAL_RESIDUAL
            break

        if merit is not None and k == k_next:
            f_k = float(merit(x))
            trace.append((k, f_k))
            if f_k < f_min:
                f_min, k_min, x_min = f_k, k, x
            if k > cfg.miniter:
                if f_k == f_min and (
                    f_k <= 0 or (f_prev - f_k) / f_k < (k - k_prev) * cfg.ftol
                ):
                    reason = StopReason.STAGNATION
                    break
                if f_k > f_min and k > k_min + cfg.recover:
                    reason = StopReason.NO_RECOVERY
                    x = x_min
                    returned_min = True
                    break
            k_next = checkpoint_schedule(k_next, cfg.maxiter)
            k_prev, f_prev = k, f_k

    return LsmrOutcome(
        x=x,
        iters=k,
        reason=reason,
        merit_trace=trace,
        x_is_min=returned_min,
        normar_trace=normar_trace,
        norm_a=norm_a,
        norm_r=norm_r,
    )
