"""Adaptive mini-batch sizing.

The size predicted from gradient variance is smoothed over the last five
iterations; if the smoothed prediction does not grow the batch, a stalled
validation loss grows it by a fixed factor instead. The LSMR iteration cap is
rescaled in proportion to the batch size.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .errors import ContractError
from .network import GradStats

WINDOW = 5
STALL_THRESHOLD = 0.005


def sample_variance(stats: GradStats):
    """Entrywise unbiased variance of the per-instance gradients."""
    n = stats.n
    if n < 2:
        raise ContractError(f"variance needs at least 2 instances, got {n}")
    mean = stats.mean_grad.data
    var = (n / (n - 1)) * (stats.sumsq_grad.data / n - mean * mean)
    return stats.mean_grad.like(var)


def predict_batch_size(stats: GradStats, N: int, theta: float) -> int:
    """Smallest batch size that satisfies the variance-based descent test.

    ``ceil(N |V|_1 / (|V|_1 + theta^2 (N - 1) |g|_2))`` with ``V`` the sample
    variance and ``g`` the mini-batch gradient, clamped below at 1.
    """
    if N < stats.n:
        raise ContractError(f"population size {N} is smaller than the sample {stats.n}")
    v1 = sample_variance(stats).norm1()
    g2 = stats.mean_grad.norm()
    denom = v1 + theta * theta * (N - 1) * g2
    if denom <= 0.0:
        return 1
    return max(1, math.ceil(N * v1 / denom))


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass
class BatchSchedule:
    n: int
    n_max: int
    theta: float
    maxiter: int
    growth: float = 1.005
    pred_history: deque = field(default_factory=lambda: deque(maxlen=WINDOW))
    val_history: deque = field(default_factory=lambda: deque(maxlen=WINDOW + 1))

    def __post_init__(self):
        if not 1 <= self.n <= self.n_max:
            raise ContractError(f"need 1 <= n <= n_max, got n={self.n}, n_max={self.n_max}")
        if not 0 < self.theta < 1:
            raise ContractError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.growth > 1:
            raise ContractError(f"growth factor must exceed 1, got {self.growth}")

    def step(self, n_hat: int, f_val: float, i: int) -> tuple[int, int]:
        """Record iteration ``i``'s prediction and validation loss, then resize.

        Returns the batch size and LSMR iteration cap for iteration ``i + 1``.
        Nothing changes during the first five iterations.
        """
        if not f_val > 0:
            raise ContractError(f"validation loss must be positive, got {f_val}")
        self.pred_history.append(int(n_hat))
        self.val_history.append(float(f_val))
        if i <= WINDOW:
            return self.n, self.maxiter

        n_avg = _ceil_div(sum(self.pred_history), WINDOW)
        r_rel = (self.val_history[0] - self.val_history[-1]) / self.val_history[-1]
        if n_avg > self.n:
            n_next = min(n_avg, self.n_max)
        elif r_rel < STALL_THRESHOLD:
            n_next = min(math.ceil(self.growth * self.n), self.n_max)
        else:
            n_next = self.n
        if n_next != self.n:
            self.maxiter = _ceil_div(n_next * self.maxiter, self.n)
            self.n = n_next
        return self.n, self.maxiter


def schedule_next(sched: BatchSchedule, n_hat_i: int, f_val_i: float, i: int) -> tuple[int, int]:
    return sched.step(n_hat_i, f_val_i, i)
