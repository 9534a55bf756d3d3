"""Command-line entry point.

Subcommands: pipeline | curves | mesh | encode-weights | validate-mrca.
Every command reads a JSON config (--config), writes machine-readable reports
under --out, and is byte-stable across reruns at a fixed --seed: reports
carry the tool version and the fully resolved config, never timestamps.

Exit codes: 0 success, 2 config error (message names the offending field
path), 3 numeric or runtime failure. Log verbosity comes from the
ATTNSIM_LOG environment variable (debug|info|warning).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cost import DseConfig, dse_search, selection_cost_model, tiling_overhead_curve
from .lzpredict import lz_encode_matrix
from .matrix_io import load_matrix_csv
from .mesh_sim import (
    MeshConfig,
    MeshWorkload,
    calibrate_compute,
    run_kv_ring,
    run_query_ring,
)
from .numerics import OpCounters, quantize
from .pipeline import PipelineConfig, run_pipeline
from .ring_schedule import ring_schedule, validate_schedule
from .tiled_attention import MODES, attend_selection, counter_report_row
from .topkselect import SelectionParams, select_row, selection_summary_rows, selection_to_json
from .workload import RowProfile, sample_attention_case, sample_score_rows

log = logging.getLogger("attnsim")


class ConfigError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"config error at '{path}': {message}")
        self.path = path


class NumericError(Exception):
    pass


# ---------------------------------------------------------------- schemas

def _join(path, key):
    return f"{path}.{key}" if path else key


def check_config(obj, schema: dict, path: str = "") -> dict:
    """Validate and default-fill one config object. Unknown keys are rejected."""
    if not isinstance(obj, dict):
        raise ConfigError(path or "<root>", "expected a JSON object")
    for key in obj:
        if key not in schema:
            raise ConfigError(_join(path, key), "unknown key")
    out = {}
    for key, (ftype, required, default) in schema.items():
        if key not in obj:
            if required:
                raise ConfigError(_join(path, key), "missing required field")
            out[key] = default
            continue
        val = obj[key]
        where = _join(path, key)
        if isinstance(ftype, dict):
            out[key] = check_config(val, ftype, where)
        elif ftype == "float":
            if val == "inf":
                out[key] = math.inf
            elif isinstance(val, (int, float)) and not isinstance(val, bool):
                out[key] = float(val)
            else:
                raise ConfigError(where, "expected a number")
        elif ftype == "int":
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(where, "expected an integer")
            out[key] = val
        elif ftype == "str":
            if not isinstance(val, str):
                raise ConfigError(where, "expected a string")
            out[key] = val
        elif ftype == "bool":
            if not isinstance(val, bool):
                raise ConfigError(where, "expected a boolean")
            out[key] = val
        elif ftype == "list[int]":
            if not isinstance(val, list) or not all(
                isinstance(x, int) and not isinstance(x, bool) for x in val
            ):
                raise ConfigError(where, "expected a list of integers")
            out[key] = list(val)
        else:  # pragma: no cover - schema author error
            raise ConfigError(where, f"unhandled schema type {ftype}")
    return out


PIPELINE_SCHEMA = {
    "seq_len": ("int", True, None),
    "head_dim": ("int", True, None),
    "n_heads": ("int", False, 1),
    "n_queries": ("int", False, None),
    "bitwidth": ("int", False, 8),
    "k_ratio": ("float", False, 0.2),
    "n_segments": ("int", False, 4),
    "radius": ("float", False, 5.0),
    "mode": ("str", False, "desc"),
    "tile_cols": ("int", False, 16),
    "seed": ("int", False, 0),
}

CURVES_SCHEMA = {
    "overhead": (
        {
            "seq_lens": ("list[int]", False, [64, 128, 256, 512, 1024, 2048]),
            "tile_cols": ("int", False, 16),
            "head_dim": ("int", False, 32),
            "rows": ("int", False, None),
        },
        False,
        None,
    ),
    "selection": (
        {
            "seq_len": ("int", False, 1024),
            "k_ratio": ("float", False, 0.25),
            "segment_counts": ("list[int]", False, [1, 2, 4, 8, 16]),
            "base_std": ("float", False, 2.0),
            "n_rows": ("int", False, 16),
            "radius": ("float", False, 5.0),
        },
        False,
        None,
    ),
    "order_gap": (
        {
            "seq_lens": ("list[int]", False, [256, 1024, 8192]),
            "tile_cols": ("int", False, 32),
            "head_dim": ("int", False, 64),
            "rows": ("int", False, 128),
        },
        False,
        None,
    ),
    "dse": (
        {
            "segment_counts": ("list[int]", False, [1, 2, 4, 8, 16]),
            "tile_sizes": ("list[int]", False, [16]),
            "dse_alpha": ("float", False, 0.58),
            "dse_beta": ("float", False, 0.63),
            "seq_len": ("int", False, 1024),
            "head_dim": ("int", False, 64),
            "n_rows": ("int", False, 8),
            "k_ratio": ("float", False, 0.15),
            "radius": ("float", False, 5.0),
            "base_std": ("float", False, 1.9),
            "spike_fraction": ("float", False, 0.0),
            "spike_mean": ("float", False, 8.0),
        },
        False,
        None,
    ),
    "seed": ("int", False, 0),
}

MESH_SCHEMA = {
    "mesh": (
        {
            "rows": ("int", False, 5),
            "cols": ("int", False, 5),
            "link_bandwidth": ("float", False, 250e9),
            "link_latency": ("float", False, 20e-9),
            "link_energy": ("float", False, 1.0e-12),
            "dram_bandwidth": ("float", False, 512e9),
            "dram_latency": ("float", False, 100e-9),
            "dram_energy": ("float", False, 6.0e-12),
            "cu_throughput": ("float", False, 1e12),
            "cu_energy": ("float", False, 1e-12),
            "payload_bytes": ("int", False, 2),
        },
        False,
        None,
    ),
    "workload": (
        {
            "seq_len": ("int", True, None),
            "head_dim": ("int", True, None),
            "n_queries": ("int", False, None),
            "mode": ("str", False, "desc"),
            "tile_cols": ("int", False, 16),
            "dense": ("bool", False, True),
            "k_ratio": ("float", False, 0.25),
            "n_segments": ("int", False, 4),
            "radius": ("float", False, 5.0),
            "profile": ("str", False, "spread"),
        },
        False,
        None,
    ),
    "validate_ns": ("list[int]", False, [1, 3, 5, 7]),
    "calibrate": ("bool", False, True),
    "trace": ("bool", False, False),
    "seed": ("int", False, 0),
}

ENCODE_SCHEMA = {
    "weights_csv": ("str", True, None),
    "bitwidth": ("int", False, 8),
    "output": ("str", False, "weights_lz.json"),
}

VALIDATE_SCHEMA = {
    "ring_lengths": ("list[int]", False, [1, 3, 5, 7, 9, 11]),
}


# ---------------------------------------------------------------- writers

def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _dump_table(path_base: Path, rows: list[dict], fmt: str) -> Path:
    if fmt == "csv":
        path = path_base.with_suffix(".csv")
        if rows:
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                writer.writerows(rows)
        else:
            path.write_text("")
    else:
        path = path_base.with_suffix(".json")
        _dump_json(path, rows)
    return path


def _report_envelope(command: str, config: dict, body: dict) -> dict:
    cfg = json.loads(json.dumps(config, default=_json_default))
    return {"tool": "attnsim", "version": __version__, "command": command,
            "resolved_config": cfg, **body}


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"not serializable: {type(x)}")


def _finite_or_raise(arr, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")


# ---------------------------------------------------------------- commands

def cmd_pipeline(config: dict, seed: int | None, out: Path, fmt: str) -> int:
    cfg = check_config(config, PIPELINE_SCHEMA)
    if seed is not None:
        cfg["seed"] = seed
    if cfg["n_queries"] is None:
        cfg.pop("n_queries")
    if cfg["mode"] not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    pc = PipelineConfig(**cfg)
    result = run_pipeline(pc)
    _finite_or_raise(result.outputs, "pipeline output")

    _dump_json(out / "pipeline_report.json",
               _report_envelope("pipeline", result.report["config"], result.report))
    _dump_table(out / "selection_summary",
                selection_summary_rows(result.selections, result.hit_rates), fmt)
    _dump_json(out / "selection.json", selection_to_json(result.selections))
    counters = [
        counter_report_row(pc.mode, pc.seq_len, pc.head_dim, pc.tile_cols,
                           -(-int(np.mean([len(s) for s in result.selections])) // pc.tile_cols),
                           result.attend_counters, result.guard_events)
    ]
    _dump_table(out / "attend_counters", counters, fmt)
    np.savetxt(out / "outputs.csv", result.outputs, delimiter=",")
    print(f"pipeline: wrote {out}/pipeline_report.json "
          f"(mean hit rate {result.report['selection']['mean_hit_rate']:.4f}, "
          f"guards {result.guard_events})")
    return 0


def _curves_overhead(block: dict, out: Path, fmt: str) -> dict:
    rows = tiling_overhead_curve(
        block["seq_lens"], block["tile_cols"], block["head_dim"], block["rows"]
    )
    long_rows = [
        {"S": r["S"], "B_c": r["B_c"], "T_c": r["T_c"], "metric": metric,
         "value": r[metric]}
        for r in rows
        for metric in ("extra_exp", "extra_cmp", "extra_equiv_adds", "extra_exp_lanes")
    ]
    _dump_table(out / "overhead_curve", long_rows, fmt)
    anchor = next((r for r in rows if r["S"] == 2048 and r["B_c"] == 16), None)
    summary = {"rows": len(rows)}
    if anchor:
        summary["extra_exp_lanes_at_2048"] = anchor["extra_exp_lanes"]
    return summary


def _curves_selection(block: dict, seed: int, out: Path, fmt: str) -> dict:
    rng = np.random.default_rng(seed)
    rows_out = []
    for n_seg in block["segment_counts"]:
        params = SelectionParams(n_segments=n_seg, k_ratio=block["k_ratio"],
                                 radius=block["radius"])
        data = rng.normal(0.0, block["base_std"], size=(block["n_rows"], block["seq_len"]))
        measured, rho = 0, 0.0
        for r in range(block["n_rows"]):
            sel = select_row(data[r], params)
            measured += sel.comparisons
            rho += sel.survivor_ratio
        rho /= block["n_rows"]
        measured /= block["n_rows"]
        model = selection_cost_model(block["seq_len"], block["k_ratio"], n_seg, rho)
        baseline = block["seq_len"] ** 2 * block["k_ratio"]
        rows_out.append({
            "n_segments": n_seg,
            "measured_cmp_per_row": measured,
            "model_cmp_per_row": model,
            "survivor_ratio": rho,
            "ratio_vs_full_sort": measured / baseline,
        })
    _dump_table(out / "selection_complexity", rows_out, fmt)
    return {"rows": len(rows_out)}


def _curves_order_gap(block: dict, seed: int, out: Path, fmt: str) -> dict:
    rng = np.random.default_rng(seed)
    rows_out = []
    for seq_len in block["seq_lens"]:
        q, k, v = sample_attention_case(rng, block["rows"], seq_len, block["head_dim"])
        scale = 1.0 / math.sqrt(block["head_dim"])
        idx = np.arange(seq_len)
        sc = np.zeros(seq_len)
        per_mode = {}
        for mode in ("desc", "asc", "online"):
            counters = OpCounters()
            attend_selection(mode, q, idx, sc, k, v, scale, block["tile_cols"], counters)
            per_mode[mode] = counters
        n_tiles = -(-seq_len // block["tile_cols"])
        rows_out.append({
            "S": seq_len,
            "rows": block["rows"],
            "B_c": block["tile_cols"],
            "T_c": n_tiles,
            "d_h": block["head_dim"],
            "mul_gap_asc_minus_desc": per_mode["asc"].n_mul - per_mode["desc"].n_mul,
            "mul_gap_online_minus_desc": per_mode["online"].n_mul - per_mode["desc"].n_mul,
            "exp_gap_online_minus_desc": per_mode["online"].n_exp - per_mode["desc"].n_exp,
            "closed_form_mul_gap": block["rows"] * (n_tiles - 1) * (block["head_dim"] + 1),
        })
    _dump_table(out / "order_gap", rows_out, fmt)
    return {"rows": len(rows_out)}


def _curves_dse(block: dict, seed: int, out: Path, fmt: str) -> dict:
    block = dict(block)
    profile = RowProfile(
        base_std=block.pop("base_std"),
        spike_fraction=block.pop("spike_fraction"),
        spike_mean=block.pop("spike_mean"),
    )
    dse_cfg = DseConfig(seed=seed, profile=profile, **block)
    result = dse_search(dse_cfg)
    table = [dict(r, best=(r["n_segments"] == result.best_segments
                           and r["tile_cols"] == result.best_tile_cols))
             for r in result.table]
    _dump_table(out / "dse_table", table, fmt)
    _dump_json(out / "dse_result.json", {
        "best_segments": result.best_segments,
        "best_tile_cols": result.best_tile_cols,
        "table": table,
    })
    return {"best_segments": result.best_segments, "best_tile_cols": result.best_tile_cols}


def cmd_curves(config: dict, seed: int | None, out: Path, fmt: str) -> int:
    cfg = check_config(config, CURVES_SCHEMA)
    if seed is not None:
        cfg["seed"] = seed
    summary = {}
    defaults = {k: check_config({}, CURVES_SCHEMA[k][0]) for k in
                ("overhead", "selection", "order_gap", "dse")}
    blocks = {k: cfg[k] if cfg[k] is not None else defaults[k] for k in defaults}
    summary["overhead"] = _curves_overhead(blocks["overhead"], out, fmt)
    summary["selection"] = _curves_selection(blocks["selection"], cfg["seed"], out, fmt)
    summary["order_gap"] = _curves_order_gap(blocks["order_gap"], cfg["seed"], out, fmt)
    summary["dse"] = _curves_dse(blocks["dse"], cfg["seed"], out, fmt)
    _dump_json(out / "curves_report.json",
               _report_envelope("curves", blocks | {"seed": cfg["seed"]}, summary))
    print(f"curves: wrote 4 tables under {out} "
          f"(dse best n={summary['dse']['best_segments']})")
    return 0


def _build_mesh_workload(block: dict, seed: int):
    rng = np.random.default_rng(seed)
    n_queries = block["n_queries"] or block["seq_len"]
    q, k, v = sample_attention_case(rng, n_queries, block["seq_len"], block["head_dim"])
    selections = None
    if not block["dense"]:
        est = sample_score_rows(rng, n_queries, block["seq_len"], block["profile"])
        params = SelectionParams(n_segments=block["n_segments"],
                                 k_ratio=block["k_ratio"], radius=block["radius"])
        selections = []
        for r in range(n_queries):
            sel = select_row(est[r], params)
            selections.append((sel.indices, sel.scores))
    return MeshWorkload(q=q, k=k, v=v, scale=1.0 / math.sqrt(block["head_dim"]),
                        mode=block["mode"], tile_cols=block["tile_cols"],
                        selections=selections)


def cmd_mesh(config: dict, seed: int | None, out: Path, fmt: str) -> int:
    cfg = check_config(config, MESH_SCHEMA)
    if seed is not None:
        cfg["seed"] = seed
    if cfg["workload"] is None:
        raise ConfigError("workload", "missing required field")
    mesh = MeshConfig(**cfg["mesh"]) if cfg["mesh"] else MeshConfig()

    validations = []
    for n in cfg["validate_ns"]:
        validations.append(validate_schedule(ring_schedule(n)).to_json())
    _dump_json(out / "schedule_validation.json", validations)

    wl = _build_mesh_workload(cfg["workload"], cfg["seed"])
    if cfg["calibrate"]:
        mesh = calibrate_compute(mesh, wl)
    trace_q = out / "trace_query_ring.jsonl" if cfg["trace"] else None
    trace_k = out / "trace_kv_ring.jsonl" if cfg["trace"] else None
    out_q, rep_q = run_query_ring(mesh, wl, trace_q)
    out_k, rep_k = run_kv_ring(mesh, wl, trace_k)
    _finite_or_raise(out_q, "query-ring output")
    _finite_or_raise(out_k, "kv-ring output")

    comparison = {
        "query_ring": rep_q.to_json(),
        "kv_ring": rep_k.to_json(),
        "throughput_gain": rep_q.throughput / rep_k.throughput,
        "per_step_payload_ratio": rep_q.q_chunk_bytes / rep_k.kv_partition_bytes,
        "max_output_difference": float(np.abs(out_q - out_k).max()),
        "calibrated_cu_throughput": mesh.cu_throughput,
    }
    _dump_json(out / "mesh_report.json",
               _report_envelope("mesh", cfg, comparison))
    print(f"mesh: wrote {out}/mesh_report.json "
          f"(throughput gain {comparison['throughput_gain']:.3f})")
    return 0


def cmd_encode_weights(config: dict, seed: int | None, out: Path, fmt: str) -> int:
    cfg = check_config(config, ENCODE_SCHEMA)
    weights = load_matrix_csv(cfg["weights_csv"])
    qt = quantize(weights, cfg["bitwidth"])
    codes = lz_encode_matrix(qt)
    dest = out / cfg["output"]
    codes.save(dest)
    _dump_json(out / "encode_report.json", _report_envelope("encode-weights", cfg, {
        "rows": codes.rows,
        "cols": codes.cols,
        "bitwidth": codes.bitwidth,
        "scale": qt.scale,
        "zero_codes": int(codes.zero.sum()),
        "output": cfg["output"],
    }))
    print(f"encode-weights: {weights.shape[0]}x{weights.shape[1]} weights -> {dest}")
    return 0


def cmd_validate_mrca(config: dict, seed: int | None, out: Path, fmt: str) -> int:
    cfg = check_config(config, VALIDATE_SCHEMA)
    reports = []
    for n in cfg["ring_lengths"]:
        reports.append(validate_schedule(ring_schedule(n)).to_json())
    _dump_json(out / "schedule_validation.json",
               _report_envelope("validate-mrca", cfg, {"reports": reports}))
    for rep in reports:
        status = "ok" if rep["ok"] else "FAILED"
        fails = [c["name"] for c in rep["checks"] if not c["passed"]]
        print(f"validate-mrca: N={rep['n']} {status}"
              + (f" ({', '.join(fails)})" if fails else ""))
    return 0


COMMANDS = {
    "pipeline": (cmd_pipeline, PIPELINE_SCHEMA),
    "curves": (cmd_curves, CURVES_SCHEMA),
    "mesh": (cmd_mesh, MESH_SCHEMA),
    "encode-weights": (cmd_encode_weights, ENCODE_SCHEMA),
    "validate-mrca": (cmd_validate_mrca, VALIDATE_SCHEMA),
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("ATTNSIM_LOG", "WARNING").upper(), logging.WARNING),
        stream=sys.stderr,
    )
    parser = argparse.ArgumentParser(prog="attnsim", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="format for tabular outputs")
    args = parser.parse_args(argv)

    try:
        if args.config is not None:
            try:
                config = json.loads(Path(args.config).read_text())
            except FileNotFoundError:
                raise ConfigError(str(args.config), "config file not found")
            except json.JSONDecodeError as exc:
                raise ConfigError(str(args.config), f"invalid JSON: {exc}")
        else:
            config = {}
        args.out.mkdir(parents=True, exist_ok=True)
        fn, _ = COMMANDS[args.command]
        return fn(config, args.seed, args.out, args.format)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except Exception as exc:  # numeric / runtime failures
        log.debug("failure detail", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
