"""Weight-space algebra and network layout.

A network with layer sizes ``(m_1, ..., m_{k+1})`` owns ``k`` weight matrices,
``W_l`` of shape ``(m_l + 1, m_{l+1})`` whose last row holds the biases. The
matrices of a :class:`WeightVec` are views into a single contiguous buffer so
that vector-space operations (axpy, inner products, norms) cost one numpy call
regardless of depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError

LOGISTIC = "logistic"


@dataclass(frozen=True)
class NetworkSpec:
    """Layer sizes of a reconstruction network, input and output included."""

    layer_dims: tuple[int, ...]
    activation: str = LOGISTIC

    def __post_init__(self):
        dims = tuple(int(m) for m in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ContractError("a network needs at least an input and an output layer")
        if any(m < 1 for m in dims):
            raise ContractError(f"layer sizes must be positive, got {dims}")
        if dims[0] != dims[-1]:
            raise ContractError(
                f"output size {dims[-1]} must equal input size {dims[0]}"
            )
        if self.activation != LOGISTIC:
            raise ContractError(f"unsupported activation {self.activation!r}")

    @classmethod
    def symmetric(cls, encoder_dims: Sequence[int]) -> "NetworkSpec":
        """Mirror ``encoder_dims`` into a full encoder/decoder layout."""
        enc = [int(m) for m in encoder_dims]
        return cls(tuple(enc + enc[-2::-1]))

    @property
    def depth(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def shapes(self) -> tuple[tuple[int, int], ...]:
        d = self.layer_dims
        return tuple((d[i] + 1, d[i + 1]) for i in range(self.depth))

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.shapes)


class WeightVec:
    """An ordered tuple of weight matrices that behaves like a flat vector.

    Supports ``+``, ``-``, unary ``-``, multiplication by a scalar, and the
    entrywise (Hadamard) product ``a * b`` between conforming vectors.
    """

    __slots__ = ("shapes", "data", "mats")

    def __init__(self, shapes, data=None):
        self.shapes = tuple((int(r), int(c)) for r, c in shapes)
        size = sum(r * c for r, c in self.shapes)
        if data is None:
            data = np.zeros(size)
        else:
            data = np.ascontiguousarray(data, dtype=np.float64)
            if data.shape != (size,):
                raise ContractError(
                    f"buffer of shape {data.shape} does not hold shapes {self.shapes}"
                )
        self.data = data
        mats = []
        offset = 0
        for r, c in self.shapes:
            mats.append(data[offset:offset + r * c].reshape(r, c))
            offset += r * c
        self.mats = tuple(mats)

    @classmethod
    def from_mats(cls, mats) -> "WeightVec":
        mats = [np.asarray(m, dtype=np.float64) for m in mats]
        for m in mats:
            if m.ndim != 2:
                raise ContractError("every layer must be a 2-D matrix")
        data = np.concatenate([m.ravel() for m in mats]) if mats else np.zeros(0)
        return cls([m.shape for m in mats], data)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "WeightVec":
        return cls(spec.shapes)

    @classmethod
    def full(cls, spec: NetworkSpec, value: float) -> "WeightVec":
        return cls(spec.shapes, np.full(spec.n_params, float(value)))

    def like(self, data) -> "WeightVec":
        return WeightVec(self.shapes, data)

    def copy(self) -> "WeightVec":
        return self.like(self.data.copy())

    def __len__(self):
        return len(self.mats)

    def __getitem__(self, layer):
        return self.mats[layer]

    def __iter__(self):
        return iter(self.mats)

    def __repr__(self):
        return f"WeightVec(shapes={self.shapes})"

    def _check(self, other):
        if not isinstance(other, WeightVec) or other.shapes != self.shapes:
            got = getattr(other, "shapes", type(other).__name__)
            raise ContractError(f"shape mismatch: {self.shapes} vs {got}")

    def __add__(self, other):
        self._check(other)
        return self.like(self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.data - other.data)

    def __neg__(self):
        return self.like(-self.data)

    def __mul__(self, other):
        if isinstance(other, WeightVec):
            self._check(other)
            return self.like(self.data * other.data)
        return self.like(self.data * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, WeightVec):
            self._check(other)
            return self.like(self.data / other.data)
        return self.like(self.data / float(other))

    def inner(self, other) -> float:
        self._check(other)
        return float(self.data @ other.data)

    def norm(self) -> float:
        return float(np.sqrt(self.data @ self.data))

    def norm1(self) -> float:
        return float(np.abs(self.data).sum())

    def allfinite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def conforms(self, spec: NetworkSpec) -> bool:
        return self.shapes == spec.shapes


def ws_axpy(alpha: float, a: WeightVec, b: WeightVec) -> WeightVec:
    """Return ``alpha * a + b``."""
    a._check(b)
    return a.like(float(alpha) * a.data + b.data)


def ws_inner(a: WeightVec, b: WeightVec) -> float:
    """Sum over layers of the Frobenius products ``A_l . B_l``."""
    return a.inner(b)


def ws_norm2(a: WeightVec) -> float:
    return a.norm()


def ws_norm1(a: WeightVec) -> float:
    return a.norm1()


def ws_hadamard(a: WeightVec, b: WeightVec) -> WeightVec:
    a._check(b)
    return a * b


def sparse_init(spec, m0: int, sigma: float, rng: np.random.Generator) -> WeightVec:
    """Sparse random weights with zero biases.

    Each unit of layer ``l + 1`` receives exactly ``min(m0, m_l)`` nonzero
    incoming weights, drawn from a normal distribution with standard
    deviation ``sigma``; the incoming rows are chosen uniformly without
    replacement, independently per unit. ``spec`` is a :class:`NetworkSpec`
    or any sequence of layer sizes.
    """
    if m0 < 1:
        raise ContractError(f"m0 must be >= 1, got {m0}")
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    dims = spec.layer_dims if isinstance(spec, NetworkSpec) else tuple(int(m) for m in spec)
    if len(dims) < 2 or min(dims) < 1:
        raise ContractError(f"invalid layer sizes {dims}")
    w = WeightVec([(dims[i] + 1, dims[i + 1]) for i in range(len(dims) - 1)])
    for W in w.mats:
        fan_in, units = W.shape[0] - 1, W.shape[1]
        keep = min(m0, fan_in)
        # ranks of iid uniforms give an independent random subset per column
        order = np.argsort(rng.random((fan_in, units)), axis=0, kind="stable")
        rows = order[:keep]
        cols = np.broadcast_to(np.arange(units), rows.shape)
        W[rows, cols] = rng.normal(0.0, sigma, size=rows.shape)
    return w
