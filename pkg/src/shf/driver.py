"""Stochastic Hessian-free training loop.

Each iteration draws a fresh mini-batch, solves the damped Gauss-Newton
system with preconditioned LSMR (warm-started from the decayed previous
step and monitored on the validation loss), adapts the damping with the
Levenberg-Marquardt rule, backtracks along the step, and updates the
batch-size schedule.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .batch import BatchSchedule, predict_batch_size
from .errors import ConfigError, NumericError
from .gn import GnOperator, precon_compute
from .lsmr import LsmrConfig, lsmr_solve
from .network import forward, grad_stats, loss, loss_at
from .weights import NetworkSpec, WeightVec, sparse_init

log = logging.getLogger(__name__)

GAMMA_CAP = 0.95
GAMMA_GROWTH = 1.002


@dataclass
class TrainConfig:
    lambda1: float = 10.0
    drop: float = 0.99
    gamma1: float = 0.7
    maxiter1: int = 200
    atol: float = 1e-8
    ftol: float = 1e-7
    theta: float = 0.5
    n1: int = 250
    n_max: int = 2500
    m0: int = 10
    sigma: float = 1.5
    alpha: float = 1e-4
    seed: int = 0
    patience: int = 50
    max_wall_seconds: float = math.inf
    max_hf_iters: int = 10_000
    max_halvings: int = 20
    growth: float = 1.005
    miniter: int = 50
    recover: int = 100

    def __post_init__(self):
        for name in ("drop", "gamma1", "alpha", "theta"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if not self.lambda1 > 0:
            raise ConfigError(f"lambda1 must be positive, got {self.lambda1}")
        if not 1 <= self.n1 <= self.n_max:
            raise ConfigError(f"need 1 <= n1 <= n_max, got n1={self.n1}, n_max={self.n_max}")
        for name in ("maxiter1", "m0", "patience", "max_hf_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_halvings < 0:
            raise ConfigError("max_halvings must be >= 0")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not self.growth > 1:
            raise ConfigError(f"growth must exceed 1, got {self.growth}")


@dataclass
class TrainState:
    w: WeightVec
    d_prev: WeightVec
    lam: float
    gamma: float
    schedule: BatchSchedule
    batch_rng: np.random.Generator
    precon_rng: np.random.Generator
    i: int = 1
    best_val: float = math.inf
    best_w: Optional[WeightVec] = None
    best_iter: int = 0

    @property
    def n(self) -> int:
        return self.schedule.n

    @property
    def maxiter(self) -> int:
        return self.schedule.maxiter


@dataclass
class IterationRecord:
    iter: int
    t_wall: float
    n: int
    maxiter: int
    lambda_: float
    gamma: float
    lsmr_iters: int
    lsmr_reason: str
    f_batch_pre: float
    f_batch_post: float
    f_val: float
    step: float
    accepted: bool
    rho: Optional[float]
    n_hat: int

    def as_dict(self, timing: bool = True) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lambda_")
        if not timing:
            out["t_wall"] = None
        return out


@dataclass
class TrainReport:
    best_w: WeightVec
    best_iter: int
    train_loss: float
    val_loss: float
    test_loss: float
    initial_train_loss: float
    stopped_by: str
    wall_time: float
    records: list = field(default_factory=list)


def lm_update(lam: float, rho: float, drop: float) -> float:
    """Levenberg-Marquardt damping rule; a non-finite ``rho`` counts as poor."""
    if not math.isfinite(rho) or rho < 0.25:
        return lam / drop
    if rho > 0.75:
        return drop * lam
    return lam


def gamma_update(gamma: float) -> float:
    return min(GAMMA_GROWTH * gamma, GAMMA_CAP)


def line_search(phi: Callable[[float], float], f0: float, slope: float,
                alpha: float = 1e-4, max_halvings: int = 20):
    """Backtrack ``s = 1, 1/2, 1/4, ...`` until ``phi(s) <= f0 + alpha*s*slope``.

    ``phi(s)`` is the objective at ``w + s*d`` and ``slope`` the directional
    derivative along ``d``. Probes that raise :class:`NumericError` or return
    a non-finite value fail. Returns ``(s, accepted, phi(s))``; when every
    probe fails, ``accepted`` is False and ``s`` is the last probe.
    """
    s = 1.0
    f_s = math.inf
    for _ in range(max_halvings + 1):
        try:
            f_s = float(phi(s))
        except NumericError:
            f_s = math.inf
        if math.isfinite(f_s) and f_s <= f0 + alpha * s * slope:
            return s, True, f_s
        s *= 0.5
    return 2.0 * s, False, f_s


def init_state(cfg: TrainConfig, spec: NetworkSpec, n_train: int) -> TrainState:
    init_seq, batch_seq, precon_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    w = sparse_init(spec, cfg.m0, cfg.sigma, np.random.default_rng(init_seq))
    n_max = min(cfg.n_max, n_train)
    schedule = BatchSchedule(
        n=min(cfg.n1, n_max),
        n_max=n_max,
        theta=cfg.theta,
        maxiter=cfg.maxiter1,
        growth=cfg.growth,
    )
    return TrainState(
        w=w,
        d_prev=WeightVec(w.shapes),
        lam=cfg.lambda1,
        gamma=cfg.gamma1,
        schedule=schedule,
        batch_rng=np.random.default_rng(batch_seq),
        precon_rng=np.random.default_rng(precon_seq),
    )


def shf_iteration(state: TrainState, cfg: TrainConfig, train: np.ndarray, val: np.ndarray,
                  t0: Optional[float] = None) -> IterationRecord:
    """Advance ``state`` by one Hessian-free iteration and describe it."""
    if t0 is None:
        t0 = time.perf_counter()
    i, n, maxiter = state.i, state.n, state.maxiter
    N = train.shape[0]
    w, lam, gamma = state.w, state.lam, state.gamma

    idx = state.batch_rng.choice(N, size=n, replace=False)
    X = train[idx]
    cache = forward(w, X)
    f_pre = loss(cache)
    c = precon_compute(w, X, state.precon_rng, cache=cache)
    op = GnOperator(w, X, lam, c, cache=cache)
    b = -op.residual()

    def merit(d):
        return loss_at(w + d, val)

    probes = {}

    def phi(s):
        cache_s = forward(w + s * d, X)
        probes[s] = cache_s
        return loss(cache_s)

    lsmr_cfg = LsmrConfig(maxiter=maxiter, atol=cfg.atol, ftol=cfg.ftol,
                          miniter=cfg.miniter, recover=cfg.recover)
    rho = None
    try:
        out = lsmr_solve(op.jvp, op.vjp, b, state.d_prev, lam, c, lsmr_cfg, merit)
        d = out.x
        lsmr_iters, lsmr_reason = out.iters, out.reason.value
    except NumericError as exc:
        log.warning("iteration %d: LSMR failed (%s); step skipped", i, exc)
        d = WeightVec(w.shapes)
        lsmr_iters, lsmr_reason = 0, "numeric_failure"

    if lsmr_reason == "numeric_failure":
        s, accepted, f_post = 0.0, False, f_pre
    else:
        Ad = op.jvp(d)
        Ad_b = float(np.vdot(Ad, b))
        predicted = 0.5 * float(np.vdot(Ad, Ad)) - Ad_b
        try:
            f_full = phi(1.0)
        except NumericError:
            f_full = math.inf
        # the model must predict a decrease for the ratio to mean anything
        rho = (f_full - f_pre) / predicted if predicted < 0 else -math.inf
        if not math.isfinite(rho):
            rho = -math.inf
        state.lam = lm_update(lam, rho, cfg.drop)

        def probe(s):
            return f_full if s == 1.0 else phi(s)

        s, accepted, f_post = line_search(probe, f_pre, -Ad_b, cfg.alpha, cfg.max_halvings)

    if accepted:
        state.w = w + s * d
        post_cache = probes[s]
    else:
        state.lam = lam / cfg.drop
        f_post = f_pre
        post_cache = cache

    state.d_prev = gamma * d
    state.gamma = gamma_update(gamma)

    f_val = loss_at(state.w, val)
    if f_val < state.best_val:
        state.best_val = f_val
        state.best_w = state.w.copy()
        state.best_iter = i

    n_hat = predict_batch_size(grad_stats(state.w, X, cache=post_cache), N, cfg.theta) if n >= 2 else n
    if f_val > 0:
        state.schedule.step(n_hat, f_val, i)
    state.i += 1

    return IterationRecord(
        iter=i,
        t_wall=time.perf_counter() - t0,
        n=n,
        maxiter=maxiter,
        lambda_=state.lam,
        gamma=gamma,
        lsmr_iters=lsmr_iters,
        lsmr_reason=lsmr_reason,
        f_batch_pre=f_pre,
        f_batch_post=f_post,
        f_val=f_val,
        step=s,
        accepted=accepted,
        rho=rho if rho is not None and math.isfinite(rho) else None,
        n_hat=n_hat,
    )


def train(cfg: TrainConfig, spec: NetworkSpec, train: np.ndarray, val: np.ndarray,
          test: np.ndarray, on_record: Optional[Callable[[IterationRecord], None]] = None) -> TrainReport:
    """Run Hessian-free iterations until a stopping rule fires.

    Stops after ``cfg.patience`` consecutive iterations without a new best
    validation loss, after ``cfg.max_hf_iters`` iterations, once
    ``cfg.max_wall_seconds`` have elapsed, or when the validation loss hits
    zero. Losses in the report are evaluated on the full splits at the
    weights with the lowest validation loss.
    """
    for name, data in (("train", train), ("val", val), ("test", test)):
        if data is None or data.ndim != 2 or data.shape[0] == 0:
            raise ConfigError(f"{name} split is empty")
        if data.shape[1] != spec.layer_dims[0]:
            raise ConfigError(
                f"{name} split has {data.shape[1]} columns, network expects {spec.layer_dims[0]}"
            )

    t0 = time.perf_counter()
    state = init_state(cfg, spec, train.shape[0])
    initial_train_loss = loss_at(state.w, train)
    records = []
    stale = 0
    stopped_by = "max_iters"
    while True:
        rec = shf_iteration(state, cfg, train, val, t0=t0)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        log.info("iter %d n=%d lambda=%.4g f_batch=%.5g f_val=%.5g lsmr=%d/%s",
                 rec.iter, rec.n, rec.lambda_, rec.f_batch_post, rec.f_val,
                 rec.lsmr_iters, rec.lsmr_reason)
        stale = 0 if state.best_iter == rec.iter else stale + 1
        if rec.f_val <= 0:
            stopped_by = "converged"
            break
        if stale >= cfg.patience:
            stopped_by = "patience"
            break
        if rec.iter >= cfg.max_hf_iters:
            stopped_by = "max_iters"
            break
        if time.perf_counter() - t0 >= cfg.max_wall_seconds:
            stopped_by = "wall_clock"
            break

    best = state.best_w
    return TrainReport(
        best_w=best,
        best_iter=state.best_iter,
        train_loss=loss_at(best, train),
        val_loss=loss_at(best, val),
        test_loss=loss_at(best, test),
        initial_train_loss=initial_train_loss,
        stopped_by=stopped_by,
        wall_time=time.perf_counter() - t0,
        records=records,
    )
