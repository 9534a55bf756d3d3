#!/usr/bin/env python3
"""Run the end-to-end demo (predict -> select -> attend) and print the report.

Equivalent to `attnsim pipeline --config configs/pipeline_demo.json`, kept as
a script so the stages can be poked at interactively.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from attnsim.pipeline import PipelineConfig, run_pipeline  # noqa: E402


def main():
    cfg = PipelineConfig(seq_len=1024, head_dim=64, n_queries=128,
                         k_ratio=0.2, n_segments=4, radius=5.0,
                         mode="desc", tile_cols=16, seed=0)
    result = run_pipeline(cfg)
    print(json.dumps(result.report, indent=2, sort_keys=True))
    print(f"\nmean hit rate: {result.report['selection']['mean_hit_rate']:.4f}")
    print(f"guard events:  {result.guard_events}")
    print(f"equivalent adds (predict/select/attend): "
          f"{result.report['prediction']['equivalent_adds']:.3e} / "
          f"{result.report['selection']['equivalent_adds']:.3e} / "
          f"{result.report['attention']['equivalent_adds']:.3e}")


if __name__ == "__main__":
    main()
