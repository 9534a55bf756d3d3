"""Tiled attention over a retained column set, with four update policies.

vanilla  - single gather, one max/exp/normalize pass (no tiling)
online   - classic streaming softmax: the running max is refreshed per tile
           and the accumulators rescaled (FlashAttention-style)
desc     - tiles arrive in descending estimated-max order; the max is fixed
           by the first tile, so later tiles skip the cross-tile compare and
           rescale entirely. An overflow guard rescales once if a later
           tile's true max beats the assumed one (estimation error).
asc      - tiles in ascending order; structurally the online update, kept
           separate to expose the extra multiply per step versus desc.

All four agree with the dense oracle to ~1e-12; they differ only in
operation counts. Counter model (per tile of length L, R rows, width D):
scores cost R*L*(D+1) muls and R*L*(D-1) adds; the in-tile row max costs
R*L cmps in every mode (running-register max, one compare per element; desc
uses it for the guard, charged the same so count differences isolate
cross-tile work); exponentials cost R*L exps plus R*L subtract-adds;
accumulation costs R*L*D muls and the usual reduce adds.
Online/asc additionally charge, per tile after the first, 1 cross-tile cmp,
1 rescale exp, 1 exponent-subtract add and (D+1) rescale muls per row. The
guard test in desc is a sign check on an already-computed difference and is
not charged; a fired guard charges one full rescale and bumps guard_events.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import OpCounters

log = logging.getLogger(__name__)

MODES = ("vanilla", "online", "desc", "asc")

__all__ = [
    "MODES",
    "Tile",
    "Accumulator",
    "build_tiles",
    "attend_vanilla",
    "attend_online",
    "attend_desc",
    "attend_asc",
    "attend_selection",
    "counter_report_row",
]


@dataclass
class Tile:
    indices: np.ndarray  # retained column ids (<= tile_cols of them)
    keys: np.ndarray  # (L, D) gathered key rows
    values: np.ndarray  # (L, D) gathered value rows
    est_max: float  # max estimated score, drives the stream order


@dataclass
class Accumulator:
    """Streaming softmax state: running max m, normalizer l, output o."""

    m: np.ndarray  # (R,)
    l: np.ndarray  # (R,)
    o: np.ndarray  # (R, D)
    guard_events: int = 0

    @classmethod
    def empty(cls, rows: int, head_dim: int) -> "Accumulator":
        return cls(
            m=np.full(rows, -np.inf),
            l=np.zeros(rows),
            o=np.zeros((rows, head_dim)),
        )

    @property
    def fresh(self) -> bool:
        return bool(np.all(np.isneginf(self.m)))

    def merge(self, other: "Accumulator", counters: OpCounters | None = None) -> "Accumulator":
        """Associative combine of two partial states (order independent)."""
        m = np.maximum(self.m, other.m)
        with np.errstate(invalid="ignore"):  # -inf minus -inf when both sides are empty
            ca = np.where(np.isneginf(self.m), 0.0, np.exp(self.m - m))
            cb = np.where(np.isneginf(other.m), 0.0, np.exp(other.m - m))
        if counters is not None:
            rows, d = self.o.shape
            counters.bump(
                cmp=rows,
                exp=2 * rows,
                add=rows * 2 + rows + rows * d,  # exponent subs + l add + o adds
                mul=2 * rows + 2 * rows * d,
            )
        return Accumulator(
            m=m,
            l=ca * self.l + cb * other.l,
            o=ca[:, None] * self.o + cb[:, None] * other.o,
            guard_events=self.guard_events + other.guard_events,
        )

    def finalize(self, counters: OpCounters | None = None) -> np.ndarray:
        """Normalized output o / l; rows that never saw a tile come out zero."""
        if counters is not None:
            counters.bump(div=self.o.shape[0] * self.o.shape[1])
        safe_l = np.where(self.l > 0, self.l, 1.0)
        return self.o / safe_l[:, None]


def build_tiles(indices, scores, keys, values, tile_cols: int, order: str = "desc"):
    """Group retained columns into tiles of at most tile_cols, in stream order.

    desc: score descending (ties to lowest index); asc: the exact reverse of
    the desc sequence; given: caller's order as-is. Empty selection gives an
    empty stream.
    """
    indices = np.asarray(indices, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(indices) == 0:
        return []
    if order == "desc":
        perm = np.lexsort((indices, -scores))
    elif order == "asc":
        perm = np.lexsort((indices, -scores))[::-1]
    elif order == "given":
        perm = np.arange(len(indices))
    else:
        raise ValueError(f"unknown order {order!r}")
    idx = indices[perm]
    sc = scores[perm]
    tiles = []
    for lo in range(0, len(idx), tile_cols):
        sel = idx[lo : lo + tile_cols]
        tiles.append(
            Tile(
                indices=sel,
                keys=keys[sel],
                values=values[sel],
                est_max=float(sc[lo : lo + tile_cols].max()),
            )
        )
    return tiles


def _as_rows(q: np.ndarray):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        return q[None, :], True
    return q, False


def _tile_scores(q2, tile: Tile, scale: float, counters: OpCounters | None):
    s = (q2 @ tile.keys.T) * scale
    if counters is not None:
        rows, d = q2.shape
        L = len(tile.indices)
        counters.bump(mul=rows * L * d + rows * L, add=rows * L * (d - 1))
    return s


def _tile_max(s, counters: OpCounters | None):
    tmax = s.max(axis=1)
    if counters is not None:
        rows, L = s.shape
        counters.bump(cmp=rows * L)
    return tmax


def _apply_tile(acc: Accumulator, s, tile: Tile, counters: OpCounters | None, first: bool):
    """Shared exp/accumulate step once the running max has been settled."""
    rows, L = s.shape
    d = acc.o.shape[1]
    p = np.exp(s - acc.m[:, None])
    row_sum = p.sum(axis=1)
    pv = p @ tile.values
    if counters is not None:
        counters.bump(
            exp=rows * L,
            add=rows * L + rows * (L - 1) + rows * (L - 1) * d,
            mul=rows * L * d,
        )
    if first:
        acc.l = row_sum
        acc.o = pv
    else:
        acc.l = acc.l + row_sum
        acc.o = acc.o + pv
        if counters is not None:
            counters.bump(add=rows + rows * d)


def stream_tiles(
    acc: Accumulator,
    q,
    tiles,
    scale: float,
    mode: str,
    counters: OpCounters | None = None,
):
    """Feed a tile stream into an accumulator. Mutates and returns acc.

    mode 'online'/'asc': refresh the running max and rescale every tile after
    the first. mode 'desc': never refresh; fall back to one rescale only when
    the guard detects a later tile exceeding the assumed max.
    """
    q2, _ = _as_rows(q)
    rows, d = q2.shape
    for tile in tiles:
        s = _tile_scores(q2, tile, scale, counters)
        tmax = _tile_max(s, counters)
        first = acc.fresh
        if first:
            acc.m = tmax
        elif mode in ("online", "asc"):
            new_m = np.maximum(acc.m, tmax)
            c = np.exp(acc.m - new_m)
            acc.l = acc.l * c
            acc.o = acc.o * c[:, None]
            acc.m = new_m
            if counters is not None:
                counters.bump(cmp=rows, exp=rows, add=rows, mul=rows * (d + 1))
        elif mode == "desc":
            viol = tmax > acc.m  # sign test on s - m, not charged as a compare
            nv = int(viol.sum())
            if nv:
                acc.guard_events += nv
                new_m = np.where(viol, tmax, acc.m)
                c = np.exp(acc.m[viol] - new_m[viol])
                acc.l[viol] *= c
                acc.o[viol] *= c[:, None]
                acc.m = new_m
                if counters is not None:
                    counters.bump(exp=nv, add=nv, mul=nv * (d + 1))
        else:
            raise ValueError(f"unknown streaming mode {mode!r}")
        _apply_tile(acc, s, tile, counters, first)
    return acc


def _attend_mode(q, tiles, scale, mode, counters):
    q2, squeeze = _as_rows(q)
    if not tiles:
        log.warning("empty selection: returning zero output")
        out = np.zeros_like(q2)
        return (out[0] if squeeze else out), Accumulator.empty(*q2.shape)
    acc = Accumulator.empty(q2.shape[0], q2.shape[1])
    stream_tiles(acc, q2, tiles, scale, mode, counters)
    out = acc.finalize(counters)
    return (out[0] if squeeze else out), acc


def attend_online(q, tiles, scale: float, counters: OpCounters | None = None):
    """Classic streaming softmax; result is independent of tile order."""
    return _attend_mode(q, tiles, scale, "online", counters)


def attend_desc(q, tiles, scale: float, counters: OpCounters | None = None):
    """Descending stream: fixed max, zero cross-tile compares, guarded rescale."""
    return _attend_mode(q, tiles, scale, "desc", counters)


def attend_asc(q, tiles, scale: float, counters: OpCounters | None = None):
    """Ascending stream: the max refresh (and its multiply) runs every step."""
    return _attend_mode(q, tiles, scale, "asc", counters)


def attend_vanilla(q, indices, keys, values, scale: float, counters: OpCounters | None = None):
    """Gathered single-pass softmax over the retained set.

    Normalization happens once at the end (o = (e @ V) / l), which makes the
    operation counts of a one-tile stream and vanilla identical; values agree
    with textbook softmax-then-matmul to float64 roundoff.
    """
    q2, squeeze = _as_rows(q)
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        log.warning("empty selection: returning zero output")
        out = np.zeros_like(q2)
        return out[0] if squeeze else out
    rows, d = q2.shape
    L = len(indices)
    s = (q2 @ keys[indices].T) * scale
    m = s.max(axis=1)
    e = np.exp(s - m[:, None])
    l = e.sum(axis=1)
    o = e @ values[indices]
    if counters is not None:
        counters.bump(
            mul=rows * L * d + rows * L + rows * L * d,
            add=rows * L * (d - 1) + rows * L + rows * (L - 1) + rows * (L - 1) * d,
            cmp=rows * L,
            exp=rows * L,
            div=rows * d,
        )
    out = o / l[:, None]
    return out[0] if squeeze else out


def attend_selection(
    mode: str,
    q,
    indices,
    scores,
    keys,
    values,
    scale: float,
    tile_cols: int,
    counters: OpCounters | None = None,
    order: str | None = None,
):
    """Build the tile stream for `mode` and run it; returns (output, guard_events)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "vanilla":
        return attend_vanilla(q, indices, keys, values, scale, counters), 0
    tile_order = order if order is not None else ("asc" if mode == "asc" else "desc")
    tiles = build_tiles(indices, scores, keys, values, tile_cols, tile_order)
    fn = {"online": attend_online, "desc": attend_desc, "asc": attend_asc}[mode]
    out, acc = fn(q, tiles, scale, counters)
    return out, acc.guard_events


def counter_report_row(
    mode: str,
    seq_len: int,
    head_dim: int,
    tile_cols: int,
    n_col_tiles: int,
    counters: OpCounters,
    guard_events: int = 0,
) -> dict:
    """One record of the counter report (fixed column order for the CSV)."""
    row = {
        "mode": mode,
        "S": seq_len,
        "d_h": head_dim,
        "B_c": tile_cols,
        "T_c": n_col_tiles,
    }
    row.update(counters.as_dict())
    row["guard_events"] = guard_events
    return row
