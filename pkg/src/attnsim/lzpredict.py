"""Leading-zero log-domain codes and the multiplier-free score predictor.

A W-bit integer v is approximated as sign(v) * 2^(W - lz) where
lz = W - bitlength(|v|), i.e. the mantissa in [0.5, 1) is rounded up to 1.
Multiplying by such a code is a barrel shift, so the two prediction phases
(input @ key-weights, then queries @ predicted keys) run with zero scalar
multiplications. Only one operand of each product is coded; the other is
shifted as-is, which keeps the per-term overestimate within a factor of 2
(the symmetric both-coded variant, kept here as a baseline, is within 4).

Sign handling pre-negates the shifted operand when the coded operand is
negative (negate-then-shift, never shift-then-negate), charged as one add.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import OpCounters, QuantTensor

__all__ = [
    "LZCode",
    "LZMatrix",
    "lz_encode",
    "lz_encode_matrix",
    "shift_mul",
    "shift_mul_sym",
    "predict_keys",
    "predict_scores",
]


@dataclass(frozen=True)
class LZCode:
    """Sign + leading-zero count of one W-bit integer; zero carries its own flag."""

    sign: int  # +1 or -1 (+1 for zero)
    lz: int
    is_zero: bool = False


def lz_encode(value: int, width: int) -> LZCode:
    """Code = (sign, W - bitlength(|v|)); zero encodes as (is_zero, lz=W)."""
    value = int(value)
    qmax = (1 << (width - 1)) - 1
    if abs(value) > qmax:
        raise ValueError(f"{value} outside {width}-bit symmetric range")
    if value == 0:
        return LZCode(sign=1, lz=width, is_zero=True)
    return LZCode(sign=1 if value > 0 else -1, lz=width - abs(value).bit_length())


@dataclass
class LZMatrix:
    """Matrix of leading-zero codes, stored columnar for vectorized shifts."""

    signs: np.ndarray  # int8, +1/-1 (+1 where zero)
    lz: np.ndarray  # int16
    zero: np.ndarray  # bool
    bitwidth: int

    def __post_init__(self):
        if not (self.signs.shape == self.lz.shape == self.zero.shape):
            raise ValueError("code component shapes differ")
        nz = ~self.zero
        if nz.any() and not (
            (self.lz[nz] >= 1).all() and (self.lz[nz] <= self.bitwidth).all()
        ):
            raise ValueError("nonzero leading-zero counts must lie in [1, W]")
        if self.zero.any() and not (self.lz[self.zero] == self.bitwidth).all():
            raise ValueError("zero codes must carry lz = W")

    @property
    def rows(self) -> int:
        return self.signs.shape[0]

    @property
    def cols(self) -> int:
        return self.signs.shape[1]

    def code_at(self, r: int, c: int) -> LZCode:
        return LZCode(
            sign=int(self.signs[r, c]), lz=int(self.lz[r, c]), is_zero=bool(self.zero[r, c])
        )

    def shift_factors(self) -> np.ndarray:
        """sign * 2^(W - lz) per entry, 0 where the coded value was zero."""
        f = self.signs.astype(np.int64) << (self.bitwidth - self.lz.astype(np.int64))
        return np.where(self.zero, 0, f)

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "bitwidth": self.bitwidth,
            "codes": [
                {"s": int(s), "lz": int(l), "z": bool(z)}
                for s, l, z in zip(self.signs.ravel(), self.lz.ravel(), self.zero.ravel())
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LZMatrix":
        rows, cols = int(obj["rows"]), int(obj["cols"])
        codes = obj["codes"]
        if len(codes) != rows * cols:
            raise ValueError("rows*cols does not match code count")
        signs = np.array([c["s"] for c in codes], dtype=np.int8).reshape(rows, cols)
        lz = np.array([c["lz"] for c in codes], dtype=np.int16).reshape(rows, cols)
        zero = np.array([c["z"] for c in codes], dtype=bool).reshape(rows, cols)
        return cls(signs=signs, lz=lz, zero=zero, bitwidth=int(obj["bitwidth"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "LZMatrix":
        return cls.from_json(json.loads(Path(path).read_text()))


def lz_encode_matrix(t: QuantTensor) -> LZMatrix:
    mag = np.abs(t.data)
    zero = mag == 0
    # bitlength from the float exponent (frexp); exact below 2^53
    _, exp = np.frexp(mag.astype(np.float64))
    bitlen = exp.astype(np.int64)
    signs = np.where(t.data < 0, -1, 1).astype(np.int8)
    lz = np.where(zero, t.bitwidth, t.bitwidth - bitlen).astype(np.int16)
    return LZMatrix(signs=signs, lz=lz, zero=zero, bitwidth=t.bitwidth)


def shift_mul(x: int, code: LZCode, width: int, counters: OpCounters | None = None) -> int:
    """Approximate x * y via one shift of x by the code of y.

    Pre-negates x when the coded operand is negative (one extra add), then
    shifts left by W - lz. The shifted operand may be wider than W bits; only
    the coded operand is range-constrained (at encode time). Zero code: 0.
    """
    if code.is_zero:
        return 0
    operand = int(x)
    preflip = code.sign < 0
    if preflip:
        operand = -operand
    result = operand << (width - code.lz)
    if counters is not None:
        counters.bump(shift=1, add=1 if preflip else 0)
    return result


def shift_mul_sym(x_code: LZCode, y_code: LZCode, width: int) -> int:
    """Both operands coded (the coarser baseline): sign * 2^(2W - lz_x - lz_y)."""
    if x_code.is_zero or y_code.is_zero:
        return 0
    return x_code.sign * y_code.sign * (1 << (2 * width - x_code.lz - y_code.lz))


def _check_same_width(a: int, b: int) -> None:
    if a != b:
        raise ValueError(f"bitwidth mismatch: {a} vs {b}")


def predict_keys(
    x: QuantTensor, w_codes: LZMatrix, counters: OpCounters | None = None
) -> np.ndarray:
    """Phase one: predicted keys as shift-accumulate of the input rows.

    khat[s, d] = sum_h shift_mul(x[s, h], w_codes[h, d]). The weight codes are
    pre-converted offline, so this phase performs no coding and no multiplies.
    Accumulation is int64 (no overflow for seq_len, head_dim <= 4096 at W<=16).

    Counter model: one shift per (row, nonzero code) application, one add per
    pre-negated application, and a fixed H-1 accumulation adds per output
    element (the adder tree runs regardless of zero terms).
    """
    _check_same_width(x.bitwidth, w_codes.bitwidth)
    if x.cols != w_codes.rows:
        raise ValueError(f"shape mismatch: input {x.data.shape} vs codes "
                         f"({w_codes.rows}, {w_codes.cols})")
    factors = w_codes.shift_factors()
    khat = x.data @ factors
    if counters is not None:
        nnz = int((~w_codes.zero).sum())
        neg = int(((w_codes.signs < 0) & ~w_codes.zero).sum())
        counters.bump(
            shift=x.rows * nnz,
            add=x.rows * neg + x.rows * w_codes.cols * (x.cols - 1),
        )
    return khat


def predict_scores(
    q: QuantTensor, khat: np.ndarray, counters: OpCounters | None = None
) -> np.ndarray:
    """Phase two: estimated attention scores, coding the queries on the fly.

    ahat[t, s] = sum_d shift_mul(khat[s, d], lz_encode(q[t, d])). The wide
    phase-one accumulators are the shifted operands here; the W-bit queries
    are the coded ones, which keeps per-term error within (1, 2]. No scale is
    applied: selection only consumes per-row ranking.
    """
    khat = np.asarray(khat, dtype=np.int64)
    if q.cols != khat.shape[1]:
        raise ValueError(f"shape mismatch: queries {q.data.shape} vs khat {khat.shape}")
    q_codes = lz_encode_matrix(q)
    factors = q_codes.shift_factors()  # (T, d_h)
    ahat = factors @ khat.T
    if counters is not None:
        seq_len = khat.shape[0]
        nnz = int((~q_codes.zero).sum())
        neg = int(((q_codes.signs < 0) & ~q_codes.zero).sum())
        counters.bump(
            shift=seq_len * nnz,
            add=seq_len * neg + q.rows * seq_len * (q.cols - 1),
        )
    return ahat
