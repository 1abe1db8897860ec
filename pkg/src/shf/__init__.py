"""Stochastic Hessian-free training of deep autoencoders.

The Gauss-Newton system of each iteration is solved matrix-free by a
diagonally preconditioned LSMR, and the mini-batch grows adaptively from
gradient-variance estimates and validation progress.
"""

from .batch import BatchSchedule, predict_batch_size, schedule_next
from .data import Dataset, SplitSpec, gen_curves, load_idx, load_rawmat, split
from .driver import TrainConfig, TrainReport, train
from .errors import ConfigError, ContractError, NumericError, ParseError
from .gn import GnOperator, jvp_forward, precon_compute, vjp_backward
from .lsmr import LsmrConfig, LsmrOutcome, StopReason, checkpoint_schedule, lsmr_solve
from .network import ForwardCache, GradStats, forward, grad_stats, gradient, loss, residual
from .weights import (NetworkSpec, WeightVec, sparse_init, ws_axpy, ws_hadamard, ws_inner,
                      ws_norm1, ws_norm2)

__version__ = "0.1.0"
