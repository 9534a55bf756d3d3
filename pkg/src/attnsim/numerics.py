"""Reference attention numerics, symmetric quantization, and operation counters.

Everything here is the oracle side of the project: plain float64 softmax /
attention that the tiled and distributed engines are checked against, plus the
shared OpCounters substrate the instrumented engines accumulate into.

Counting convention (used consistently across modules): one n_exp per scalar
exponential, one n_cmp per scalar max/compare, one n_shift per barrel shift,
one n_add per scalar add or subtract; matrix operations are charged per scalar
primitive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "OpCounters",
    "QuantTensor",
    "AttentionConfig",
    "round_half_away",
    "softmax_row",
    "dense_attention",
    "quantize",
]


@dataclass
class OpCounters:
    """Tally of scalar primitives. Merging is field-wise sum (commutative monoid)."""

    n_add: int = 0
    n_mul: int = 0
    n_cmp: int = 0
    n_div: int = 0
    n_exp: int = 0
    n_shift: int = 0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def merge(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            **{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        )

    __add__ = merge

    def bump(self, add=0, mul=0, cmp=0, div=0, exp=0, shift=0) -> None:
        """In-place increment; callers own their counter instance."""
        self.n_add += int(add)
        self.n_mul += int(mul)
        self.n_cmp += int(cmp)
        self.n_div += int(div)
        self.n_exp += int(exp)
        self.n_shift += int(shift)

    def copy(self) -> "OpCounters":
        return OpCounters(**self.as_dict())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zero(cls) -> "OpCounters":
        return cls()


@dataclass
class QuantTensor:
    """Signed-integer matrix with a bitwidth and a single symmetric scale.

    real value = data * scale; every integer lies in [-(2^(W-1)-1), 2^(W-1)-1].
    """

    data: np.ndarray
    bitwidth: int
    scale: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.ndim != 2:
            raise ValueError("QuantTensor data must be 2-D")
        if not 2 <= self.bitwidth <= 62:
            raise ValueError(f"unsupported bitwidth {self.bitwidth}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        qmax = (1 << (self.bitwidth - 1)) - 1
        if np.abs(self.data).max(initial=0) > qmax:
            raise ValueError(f"integers exceed {self.bitwidth}-bit symmetric range")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale


@dataclass
class AttentionConfig:
    """Shape bundle for one attention workload.

    seq_len: tokens attended over (columns of the score matrix)
    head_dim: per-head feature width
    n_queries: query rows processed in parallel (defaults to seq_len)
    tile_rows / tile_cols: tile sizes along the query / key dimensions
    """

    seq_len: int
    head_dim: int
    n_heads: int = 1
    n_queries: int | None = None
    tile_rows: int = 16
    tile_cols: int = 16

    def __post_init__(self):
        if self.n_queries is None:
            self.n_queries = self.seq_len
        for name in ("seq_len", "head_dim", "n_heads", "n_queries", "tile_rows", "tile_cols"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def hidden(self) -> int:
        return self.head_dim * self.n_heads

    @property
    def n_col_tiles(self) -> int:
        return -(-self.seq_len // self.tile_cols)

    @property
    def n_row_tiles(self) -> int:
        return -(-self.n_queries // self.tile_rows)

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


def round_half_away(x):
    """Round half away from zero (deterministic across platforms, unlike bankers')."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    if out.ndim == 0:
        return float(out)
    return out


def softmax_row(x) -> np.ndarray:
    """Numerically stable softmax of one row: exp(x - max) normalized to sum 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax_row expects a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax_row expects finite entries")
    e = np.exp(x - x.max())
    return e / e.sum()


def dense_attention(q, k, v, scale: float) -> np.ndarray:
    """Textbook attention: row-wise softmax(scale * q @ k.T) @ v.

    q is (T, d_h); k and v are (S, d_h). This is the oracle every tiled,
    sparse, and distributed variant is measured against.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("dense_attention expects 2-D matrices")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(
            f"shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    scores = scale * (q @ k.T)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    p = e / e.sum(axis=1, keepdims=True)
    return p @ v


def quantize(m, bitwidth: int) -> QuantTensor:
    """Symmetric quantization with half-away-from-zero rounding.

    scale = max|m| / (2^(W-1)-1); an all-zero input gets scale 1 so the
    round trip stays defined.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("quantize expects a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("quantize expects finite entries")
    if not 4 <= bitwidth <= 16:
        raise ValueError(f"bitwidth {bitwidth} outside [4, 16]")
    qmax = (1 << (bitwidth - 1)) - 1
    peak = np.abs(m).max()
    scale = peak / qmax if peak > 0 else 1.0
    ints = round_half_away(m / scale)
    ints = np.clip(ints, -qmax, qmax).astype(np.int64)
    return QuantTensor(data=ints, bitwidth=bitwidth, scale=scale)
