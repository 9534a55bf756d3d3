"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
status lines alongside the pytest verdicts.
"""

import filecmp
import json
import math
import time

import numpy as np
import pytest

from attnsim.cli import main as cli_main
from attnsim.cost import tiling_overhead_curve
from attnsim.lzpredict import lz_encode, shift_mul, shift_mul_sym
from attnsim.matrix_io import save_matrix_csv
from attnsim.mesh_sim import (
    MeshConfig,
    MeshWorkload,
    calibrate_compute,
    reference_outputs,
    run_kv_ring,
    run_query_ring,
)
from attnsim.numerics import OpCounters
from attnsim.ring_schedule import ring_schedule, validate_schedule
from attnsim.tiled_attention import attend_selection
from attnsim.topkselect import (
    SelectionParams,
    exact_topk,
    pruned_weight_bound,
    select_row,
)
from attnsim.workload import sample_score_rows


def report(num: int, text: str) -> None:
    print(f"\nACCEPTANCE {num:02d} PASS: {text}")


def test_c01_tiled_modes_agree_with_oracle():
    """1000 random cases: vanilla/online/desc/asc agree pairwise within 1e-10."""
    start = time.monotonic()
    rng = np.random.default_rng(101)
    guard_cases = 0
    for case in range(1000):
        seq_len = int(rng.choice([16, 32, 64, 128, 256, 512]))
        head_dim = int(rng.choice([4, 8, 16, 32, 64]))
        k_ratio = float(rng.choice([0.1, 0.25, 1.0]))
        tile_cols = int(rng.choice([4, 16]))
        retained = max(1, round(k_ratio * seq_len))

        q = rng.normal(size=head_dim)
        k = rng.normal(size=(seq_len, head_dim))
        v = rng.normal(size=(seq_len, head_dim))
        scale = 1 / math.sqrt(head_dim)
        idx = rng.choice(seq_len, size=retained, replace=False)
        true_scores = scale * (q @ k[idx].T)
        if case % 2 == 0:
            est = true_scores
        else:
            # adversarial estimates: ordering noise plus a buried maximum
            est = true_scores + rng.normal(scale=2.0, size=retained)
            est[np.argmax(true_scores)] = est.min() - 1.0

        outs = {}
        guards = 0
        for mode in ("vanilla", "online", "desc", "asc"):
            out, g = attend_selection(mode, q, idx, est, k, v, scale, tile_cols)
            outs[mode] = out
            guards += g
        guard_cases += guards > 0
        for a in outs:
            for b in outs:
                np.testing.assert_allclose(outs[a], outs[b], rtol=1e-10, atol=1e-12,
                                           err_msg=f"case {case}: {a} vs {b}")
    elapsed = time.monotonic() - start
    assert elapsed < 60, f"took {elapsed:.1f}s"
    assert guard_cases > 100  # the adversarial half exercises the guard path
    report(1, f"1000 cases, 4 modes pairwise within 1e-10, "
              f"{guard_cases} guard-firing cases, {elapsed:.1f}s")


def test_c02_shift_multiply_bounds():
    """Exhaustive W=8 ratio/sign bounds; one-sided beats symmetric on average."""
    start = time.monotonic()
    values = [v for v in range(-127, 128) if v != 0]
    codes = {y: lz_encode(y, 8) for y in values}
    for y in values:
        ratio_one = abs(shift_mul(1, codes[y], 8)) / abs(y)
        assert 1.0 < ratio_one <= 2.0
        for x in values:
            approx = shift_mul(x, codes[y], 8)
            assert np.sign(approx) == np.sign(x * y)
            ratio = abs(approx) / abs(x * y)
            assert 1.0 < ratio <= 2.0, (x, y)
            sym = shift_mul_sym(codes[x], codes[y], 8)
            sym_ratio = abs(sym) / abs(x * y)
            assert 1.0 < sym_ratio <= 4.0, (x, y)
            assert np.sign(sym) == np.sign(x * y)

    rng = np.random.default_rng(202)
    xs = rng.integers(1, 128, size=1_000_000) * rng.choice([-1, 1], size=1_000_000)
    ys = rng.integers(1, 128, size=1_000_000) * rng.choice([-1, 1], size=1_000_000)
    _, bl_x = np.frexp(np.abs(xs).astype(np.float64))
    _, bl_y = np.frexp(np.abs(ys).astype(np.float64))
    one_sided = (2.0 ** bl_y) / np.abs(ys)
    symmetric = (2.0 ** (bl_x + bl_y)) / np.abs(xs * ys)
    # spot-check the vectorized ratios against the scalar routines
    for i in range(0, 1_000_000, 100_000):
        x, y = int(xs[i]), int(ys[i])
        assert one_sided[i] == abs(shift_mul(x, lz_encode(y, 8), 8)) / abs(x * y)
        assert symmetric[i] == abs(
            shift_mul_sym(lz_encode(x, 8), lz_encode(y, 8), 8)) / abs(x * y)
    mean_one = np.abs(np.log(one_sided)).mean()
    mean_sym = np.abs(np.log(symmetric)).mean()
    assert mean_one < mean_sym
    elapsed = time.monotonic() - start
    assert elapsed < 30, f"took {elapsed:.1f}s"
    report(2, f"W=8 exhaustive: one-sided ratio in (1,2], symmetric in (1,4], "
              f"sign exact; mean|log ratio| {mean_one:.4f} < {mean_sym:.4f}, "
              f"{elapsed:.1f}s")


def test_c03_pruning_threshold_constant():
    """Radius-5 pruning bound equals 1/e^5 = 0.006738; pruned weights below it."""
    bound = pruned_weight_bound(5.0)
    assert f"{bound:.4g}" == "0.006738"
    rng = np.random.default_rng(303)
    params = SelectionParams(n_segments=4, k_ratio=1.0, radius=5.0)
    checked = 0
    for _ in range(60):
        row = rng.normal(size=256) * rng.uniform(2.0, 5.0)
        sel = select_row(row, params)
        chosen = set(sel.indices.tolist())
        seg_len = 256 // 4
        for lo in range(0, 256, seg_len):
            seg = row[lo : lo + seg_len]
            weights = np.exp(seg - seg.max())
            weights /= weights.sum()
            for j in range(seg_len):
                if lo + j not in chosen:
                    assert weights[j] < bound
                    checked += 1
    assert checked > 1000
    report(3, f"threshold {bound:.6f} = 1/e^5 to 4 significant figures; "
              f"{checked} pruned elements all below it")


def test_c04_degenerate_selection_equals_exact_topk():
    """n=1, r=inf reproduces exact top-k bit-identically on 1e4 rows with ties."""
    rng = np.random.default_rng(404)
    params = SelectionParams(n_segments=1, k_ratio=0.25, radius=math.inf)
    rows = rng.integers(0, 8, size=(10_000, 64)).astype(float)  # heavy ties
    for row in rows:
        sel = select_row(row, params)
        oracle = exact_topk(row, 16)
        assert np.array_equal(sel.indices, oracle)
        assert np.array_equal(sel.scores, row[oracle])
    report(4, "10000 tie-heavy rows: degenerate selection bit-identical to exact top-k")


def test_c05_selection_complexity():
    """Measured compares about a tenth of full sorting; model within 10%."""
    from attnsim.cost import selection_cost_model

    rng = np.random.default_rng(505)
    seq_len, n_seg, k = 1024, 4, 0.25
    params = SelectionParams(n_segments=n_seg, k_ratio=k, radius=5.0)
    rows = rng.normal(0.0, 2.0, size=(40, seq_len))
    measured = model = rho_sum = 0.0
    for row in rows:
        sel = select_row(row, params)
        measured += sel.comparisons
        model += selection_cost_model(seq_len, k, n_seg, sel.survivor_ratio)
        rho_sum += sel.survivor_ratio
    mean_rho = rho_sum / len(rows)
    assert 0.35 <= mean_rho <= 0.45, mean_rho
    baseline = len(rows) * seq_len**2 * k
    ratio = measured / baseline
    assert 0.07 <= ratio <= 0.13, ratio
    assert measured == pytest.approx(model, rel=0.10)
    report(5, f"rho {mean_rho:.3f}, measured/full-sort {ratio:.4f} in [0.07, 0.13], "
              f"measured vs model within {abs(measured / model - 1) * 100:.2f}%")


def test_c06_counter_identities_and_overhead_anchor():
    """Exact mode-gap identities over 20 configs; curve extras match closed form."""
    rng = np.random.default_rng(606)
    configs = [
        (seq_len, tile_cols, head_dim, rows)
        for seq_len in (32, 64, 128, 256)
        for tile_cols, head_dim, rows in ((4, 8, 1), (16, 16, 2), (8, 32, 3),
                                          (16, 64, 1), (4, 4, 2))
    ]
    assert len(configs) == 20
    for seq_len, tile_cols, head_dim, rows in configs:
        base = rng.normal(size=head_dim)
        q = np.outer(rng.uniform(0.5, 2.0, size=rows), base) if rows > 1 else base
        k = rng.normal(size=(seq_len, head_dim))
        v = rng.normal(size=(seq_len, head_dim))
        scale = 1 / math.sqrt(head_dim)
        idx = np.arange(seq_len)
        est = scale * (base @ k.T)  # shared order: guard-free descent
        counters = {}
        for mode in ("online", "desc", "asc"):
            c = OpCounters()
            _, guards = attend_selection(mode, q, idx, est, k, v, scale, tile_cols, c)
            counters[mode] = c
            if mode == "desc":
                assert guards == 0
        n_tiles = math.ceil(seq_len / tile_cols)
        gap = rows * (n_tiles - 1) * (head_dim + 1)
        assert counters["asc"].n_mul - counters["desc"].n_mul == gap
        assert counters["online"].n_mul - counters["desc"].n_mul == gap
        assert counters["online"].n_exp - counters["desc"].n_exp == rows * (n_tiles - 1)
        assert counters["asc"].n_exp - counters["desc"].n_exp == rows * (n_tiles - 1)

    curve = tiling_overhead_curve([16, 64, 256, 2048], 16, 32)
    for entry in curve:
        assert entry["extra_exp"] == entry["closed_form_extra_exp"]
        assert entry["extra_cmp"] == entry["closed_form_extra_cmp"]
        assert entry["extra_equiv_adds"] >= 0
        assert (entry["extra_equiv_adds"] == 0) == (entry["T_c"] == 1)
        # per transition: 1 rescale exp, 1 cross cmp, 1 exponent-sub add,
        # (d_h+1) rescale muls; priced at (25, 1, 1, 3)
        per_transition = 25 + 1 + 1 + 3 * (entry["d_h"] + 1)
        closed_equiv = entry["rows"] * (entry["T_c"] - 1) * per_transition
        assert entry["extra_equiv_adds"] == closed_equiv
    anchor = next(e for e in curve if e["S"] == 2048)
    # published overhead figures for this configuration are in the millions;
    # agreement is order-of-magnitude only (lane conventions are model-side)
    lanes = anchor["extra_exp_lanes"]
    assert 8e5 <= lanes <= 8e7
    report(6, f"20-config gaps exact; curve extras match closed form; "
              f"S=2048 extra exps {anchor['extra_exp']} scalar / {lanes:.2e} per-lane "
              f"(published anchor ~8e6, same order)")


def test_c07_ring_schedule_validity():
    """Odd ring lengths pass every invariant; the N=5 step-4 events are verbatim."""
    start = time.monotonic()
    for n in (1, 3, 5, 7, 9, 11):
        rep = validate_schedule(ring_schedule(n))
        assert rep.ok, (n, [c.name for c in rep.checks if not c.passed])
    sends4 = {(s.src, s.dest, s.chunk) for s in ring_schedule(5).sends_at(4)}
    assert (3, 2, 1) in sends4 and (3, 4, 5) in sends4

    even_outcomes = {}
    for n in (2, 4, 6):
        rep = validate_schedule(ring_schedule(n))
        even_outcomes[n] = rep.ok
    assert even_outcomes[2] is True
    assert even_outcomes[4] is False and even_outcomes[6] is False
    elapsed = time.monotonic() - start
    assert elapsed < 5, f"took {elapsed:.1f}s"
    report(7, f"N in {{1,3,5,7,9,11}} all invariants pass; N=5 step-4 includes "
              f"CU_3->CU_2 chunk1 and CU_3->CU_4 chunk5; even outcomes {even_outcomes}; "
              f"{elapsed:.2f}s")


def test_c08_distributed_equals_centralized():
    """50 random 5x5 workloads match the single-node pipeline within 1e-10."""
    rng = np.random.default_rng(808)
    mesh = MeshConfig(rows=5, cols=5)
    for case in range(50):
        seq_len = int(rng.choice([50, 75, 100, 150]))
        head_dim = int(rng.choice([4, 8, 16]))
        mode = str(rng.choice(["desc", "online", "asc"]))
        q = rng.normal(size=(seq_len, head_dim))
        k = rng.normal(size=(seq_len, head_dim))
        v = rng.normal(size=(seq_len, head_dim))
        selections = None
        if case % 2 == 0:
            est = sample_score_rows(rng, seq_len, seq_len, "spread")
            params = SelectionParams(n_segments=2, k_ratio=0.25, radius=5.0)
            selections = []
            for r in range(seq_len):
                sel = select_row(est[r], params)
                selections.append((sel.indices, sel.scores))
        wl = MeshWorkload(q=q, k=k, v=v, scale=1 / math.sqrt(head_dim),
                          mode=mode, tile_cols=8, selections=selections)
        ref = reference_outputs(wl)
        out_q, _ = run_query_ring(mesh, wl)
        out_k, _ = run_kv_ring(mesh, wl)
        np.testing.assert_allclose(out_q, ref, rtol=1e-10, atol=1e-12,
                                   err_msg=f"case {case} query-ring")
        np.testing.assert_allclose(out_k, ref, rtol=1e-10, atol=1e-12,
                                   err_msg=f"case {case} kv-ring")

    wl = MeshWorkload(q=rng.normal(size=(16, 8)), k=rng.normal(size=(16, 8)),
                      v=rng.normal(size=(16, 8)), scale=1 / math.sqrt(8))
    out11, _ = run_query_ring(MeshConfig(rows=1, cols=1), wl)
    assert np.array_equal(out11, reference_outputs(wl))
    report(8, "50 mixed dense/sparse 5x5 workloads within 1e-10 on both dataflows; "
              "1x1 mesh exact")


def test_c09_communication_volume_and_gain():
    """Q-chunk:KV-partition payload is 1:10 on 5x5; calibrated gain above 1."""
    rng = np.random.default_rng(909)
    q = rng.normal(size=(100, 16))
    k = rng.normal(size=(100, 16))
    v = rng.normal(size=(100, 16))
    wl = MeshWorkload(q=q, k=k, v=v, scale=0.25, mode="desc", tile_cols=8)
    _, rep = run_query_ring(MeshConfig(), wl)
    assert rep.q_chunk_bytes / rep.kv_partition_bytes == pytest.approx(0.1)

    mesh = calibrate_compute(MeshConfig(), wl)
    _, rq = run_query_ring(mesh, wl)
    _, rk = run_kv_ring(mesh, wl)
    gain = rq.throughput / rk.throughput
    assert gain > 1.0
    report(9, f"per-step payload ratio exactly 0.1; calibrated throughput gain "
              f"{gain:.2f} > 1 (published ablations report 3.6x/3.1x on "
              f"unpublished workload details)")


def test_c10_cli_byte_stability(tmp_path):
    """Every CLI command is byte-identical across reruns at a fixed seed."""
    rng = np.random.default_rng(1010)
    save_matrix_csv(tmp_path / "w.csv", rng.normal(size=(8, 4)))
    cases = {
        "pipeline": {"seq_len": 128, "head_dim": 8, "n_queries": 8, "k_ratio": 0.25},
        "curves": {
            "overhead": {"seq_lens": [32, 64], "tile_cols": 16, "head_dim": 8, "rows": 4},
            "selection": {"seq_len": 128, "segment_counts": [1, 2], "n_rows": 2},
            "order_gap": {"seq_lens": [64], "tile_cols": 8, "head_dim": 8, "rows": 2},
            "dse": {"segment_counts": [1, 2], "seq_len": 256, "head_dim": 8, "n_rows": 2},
        },
        "mesh": {"workload": {"seq_len": 45, "head_dim": 8},
                 "mesh": {"rows": 3, "cols": 3}, "validate_ns": [1, 3], "trace": True},
        "encode-weights": {"weights_csv": str(tmp_path / "w.csv")},
        "validate-mrca": {"ring_lengths": [1, 3, 5]},
    }
    for command, config in cases.items():
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(config))
        out_a = tmp_path / f"{command}_a"
        out_b = tmp_path / f"{command}_b"
        assert cli_main([command, "--config", str(cfg), "--out", str(out_a),
                         "--seed", "11"]) == 0
        assert cli_main([command, "--config", str(cfg), "--out", str(out_b),
                         "--seed", "11"]) == 0
        names = sorted(p.name for p in out_a.iterdir())
        assert names == sorted(p.name for p in out_b.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(out_a, out_b, names, shallow=False)
        assert not mismatch and not errors, (command, mismatch, errors)
    report(10, f"{len(cases)} commands byte-identical across reruns at fixed seed")
