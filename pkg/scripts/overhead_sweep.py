#!/usr/bin/env python3
"""Sweep the online-softmax tiling overhead against sequence length.

Shows the per-tile rescale costs growing with the tile count, under both the
scalar convention (one exp per transition) and the per-lane convention.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from attnsim.cost import tiling_overhead_curve  # noqa: E402


def main():
    for tile_cols in (16, 64):
        print(f"\ntile_cols = {tile_cols}")
        print(f"{'S':>6} {'T_c':>5} {'extra_exp':>10} {'extra_cmp':>10} "
              f"{'extra_equiv':>12} {'per-lane exp':>12}")
        rows = tiling_overhead_curve(
            [s for s in (64, 128, 256, 512, 1024, 2048) if s % tile_cols == 0],
            tile_cols, 32,
        )
        for r in rows:
            print(f"{r['S']:>6} {r['T_c']:>5} {r['extra_exp']:>10} "
                  f"{r['extra_cmp']:>10} {r['extra_equiv_adds']:>12.3e} "
                  f"{r['extra_exp_lanes']:>12.3e}")


if __name__ == "__main__":
    main()
