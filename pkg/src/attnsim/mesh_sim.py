"""Discrete-step simulator of the 2D-mesh spatial dataflow.

Queries are split into rows*cols sub-blocks ("chunks"); tokens are split into
cols partitions whose K/V stay resident, one partition per mesh column. Each
grid row runs an independent ring-on-mesh schedule over its cols chunks: a
compute step attends the local chunk against the local partition's retained
columns, continuing the chunk-borne streaming-softmax accumulator. When a
chunk forks (both-ways wave send or the replicate step), the accumulator
follows exactly one branch and the other branches start empty, so every
partition's contribution reaches the final merge exactly once. After the ring
finishes, surviving partial accumulators converge on the chunk's home CU in
one extra step and merge associatively.

The baseline dataflow keeps queries resident and rotates K/V partitions
around the same ring, with the wrap-around transfer routed across the mesh
row (cols-1 hops). Compute is identical; only movement differs.

Timing is bulk-synchronous: step time = max(compute time, communication
time); per-hop transfer time is latency + bytes/bandwidth. Energy charges
J/bit on moved bits and J/equivalent-add on compute.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cost import equivalent_adds
from .numerics import OpCounters
from .ring_schedule import (
    KIND_REFLUX_DOWN,
    KIND_REFLUX_UP,
    KIND_WAVE_DOWN,
    KIND_WAVE_UP,
    assign_compute,
    ring_schedule,
    validate_schedule,
)
from .tiled_attention import Accumulator, build_tiles, stream_tiles

__all__ = [
    "MeshConfig",
    "MeshWorkload",
    "SimReport",
    "estimate_step",
    "run_query_ring",
    "run_kv_ring",
    "reference_outputs",
    "calibrate_compute",
]

_KIND_PRIORITY = {KIND_WAVE_UP: 0, KIND_WAVE_DOWN: 1, KIND_REFLUX_UP: 2, KIND_REFLUX_DOWN: 3}


@dataclass
class MeshConfig:
    """Grid dimensions plus link/DRAM/compute-unit parameters.

    Link and DRAM defaults follow the reference spatial configuration
    (250 GB/s, 20 ns, 1.0 pJ/bit die-to-die; 512 GB/s, 100 ns, 6.0 pJ/bit
    DRAM). Compute-unit throughput and energy are free parameters of the
    model, not part of that table.
    """

    rows: int = 5
    cols: int = 5
    link_bandwidth: float = 250e9  # bytes/s
    link_latency: float = 20e-9  # s
    link_energy: float = 1.0e-12  # J/bit
    dram_bandwidth: float = 512e9
    dram_latency: float = 100e-9
    dram_energy: float = 6.0e-12
    cu_throughput: float = 1e12  # equivalent-adds/s
    cu_energy: float = 1e-12  # J/equivalent-add
    payload_bytes: int = 2  # element width on the wire

    def __post_init__(self):
        for f in (
            "rows", "cols", "link_bandwidth", "link_latency", "link_energy",
            "dram_bandwidth", "dram_latency", "dram_energy",
            "cu_throughput", "cu_energy", "payload_bytes",
        ):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, obj: dict) -> "MeshConfig":
        return cls(**obj)


@dataclass
class MeshWorkload:
    """Inputs for one distributed run. selections=None means dense."""

    q: np.ndarray  # (n_queries, head_dim)
    k: np.ndarray  # (seq_len, head_dim)
    v: np.ndarray  # (seq_len, head_dim)
    scale: float
    mode: str = "desc"  # vanilla maps to a single online pass per partition
    tile_cols: int = 16
    selections: list | None = None  # per query row: (indices, scores)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.k = np.asarray(self.k, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.selections is not None and len(self.selections) != len(self.q):
            raise ValueError("one selection per query row required")

    @property
    def stream_mode(self) -> str:
        return "online" if self.mode in ("vanilla", "online", "asc") else "desc"


def estimate_step(compute_work: float, moved_bytes: float, mesh: MeshConfig, hops: int = 1):
    """(step time, energy) for one bulk-synchronous step.

    t_comm = hops * (latency + bytes/bandwidth); t_comp = work/throughput;
    the step takes max of the two (full overlap), energy takes both.
    """
    if compute_work < 0 or moved_bytes < 0 or hops < 0:
        raise ValueError("inputs must be non-negative")
    t_comm = hops * (mesh.link_latency + moved_bytes / mesh.link_bandwidth) if moved_bytes else 0.0
    t_comp = compute_work / mesh.cu_throughput
    energy = moved_bytes * 8 * mesh.link_energy + compute_work * mesh.cu_energy
    return max(t_comm, t_comp), energy


@dataclass
class SimReport:
    steps: list = field(default_factory=list)
    latency: float = 0.0
    work: float = 0.0
    bytes_by_class: dict = field(default_factory=lambda: {
        "q_ring": 0, "kv_ring": 0, "accumulator": 0, "dram": 0,
    })
    energy_by_class: dict = field(default_factory=lambda: {
        "link": 0.0, "dram": 0.0, "compute": 0.0,
    })
    guard_events: int = 0
    q_chunk_bytes: int = 0
    kv_partition_bytes: int = 0
    schedule_ok: bool = True

    @property
    def throughput(self) -> float:
        return self.work / self.latency if self.latency > 0 else 0.0

    @property
    def energy(self) -> float:
        return sum(self.energy_by_class.values())

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_by_class.values())

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "latency": self.latency,
            "work_equivalent_adds": self.work,
            "bytes_by_class": self.bytes_by_class,
            "energy_by_class": self.energy_by_class,
            "energy": self.energy,
            "throughput": self.throughput,
            "guard_events": self.guard_events,
            "q_chunk_bytes": self.q_chunk_bytes,
            "kv_partition_bytes": self.kv_partition_bytes,
            "schedule_ok": self.schedule_ok,
        }


class _Tracer:
    def __init__(self, path=None):
        self.fh = open(path, "w") if path else None

    def emit(self, **event):
        if self.fh:
            self.fh.write(json.dumps(event, sort_keys=True) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _pad_rows(m: np.ndarray, multiple: int) -> np.ndarray:
    extra = (-len(m)) % multiple
    if extra == 0:
        return m
    return np.vstack([m, np.zeros((extra, m.shape[1]))])


class _Partitioned:
    """Padded workload split into query chunks and token partitions."""

    def __init__(self, mesh: MeshConfig, wl: MeshWorkload):
        self.mesh = mesh
        self.wl = wl
        self.n_queries = len(wl.q)
        self.seq_len = len(wl.k)
        self.q = _pad_rows(wl.q, mesh.rows * mesh.cols)
        self.k = _pad_rows(wl.k, mesh.cols)
        self.v = _pad_rows(wl.v, mesh.cols)
        self.chunk_rows = len(self.q) // (mesh.rows * mesh.cols)
        self.part_len = len(self.k) // mesh.cols
        self.head_dim = wl.q.shape[1]
        # padded tokens are never selected: dense selection covers real ones only
        if wl.selections is None:
            idx = np.arange(self.seq_len)
            sc = np.zeros(self.seq_len)
            self.selections = None
            self._dense = (idx, sc)
        else:
            self.selections = [
                (np.asarray(i, dtype=np.int64), np.asarray(s, dtype=np.float64))
                for i, s in wl.selections
            ]
            self._dense = None
        self.q_chunk_bytes = self.chunk_rows * self.head_dim * mesh.payload_bytes
        self.acc_bytes = self.chunk_rows * (self.head_dim + 2) * mesh.payload_bytes
        self.kv_partition_bytes = 2 * self.part_len * self.head_dim * mesh.payload_bytes

    def chunk_slice(self, grid_row: int, position: int) -> slice:
        base = (grid_row * self.mesh.cols + position - 1) * self.chunk_rows
        return slice(base, base + self.chunk_rows)

    def part_range(self, position: int) -> tuple[int, int]:
        return (position - 1) * self.part_len, position * self.part_len

    def row_selection_in(self, query_row: int, lo: int, hi: int):
        if self.selections is None:
            idx, sc = self._dense
        else:
            idx, sc = self.selections[query_row]
        mask = (idx >= lo) & (idx < hi)
        return idx[mask], sc[mask]

    def partition_pass(self, grid_row: int, position: int, part_position: int,
                       acc: Accumulator, counters: OpCounters) -> None:
        """Stream one chunk against one partition's retained columns."""
        qs = self.chunk_slice(grid_row, position)
        lo, hi = self.part_range(part_position)
        mode = self.wl.stream_mode
        order = "asc" if self.wl.mode == "asc" else ("given" if self.wl.mode == "vanilla" else "desc")
        if self.selections is None:
            idx, sc = self._dense
            mask = (idx >= lo) & (idx < hi)
            tiles = build_tiles(idx[mask], sc[mask], self.k, self.v,
                                self._pass_tile_cols(int(mask.sum())), order)
            stream_tiles(acc, self.q[qs], tiles, self.wl.scale, mode, counters)
            return
        for r in range(self.chunk_rows):
            query_row = qs.start + r
            if query_row >= self.n_queries:
                break
            idx, sc = self.row_selection_in(query_row, lo, hi)
            if len(idx) == 0:
                continue
            tiles = build_tiles(idx, sc, self.k, self.v,
                                self._pass_tile_cols(len(idx)), order)
            sub = Accumulator(
                m=acc.m[r : r + 1].copy(), l=acc.l[r : r + 1].copy(),
                o=acc.o[r : r + 1].copy(),
            )
            stream_tiles(sub, self.q[query_row], tiles, self.wl.scale, mode, counters)
            acc.m[r] = sub.m[0]
            acc.l[r] = sub.l[0]
            acc.o[r] = sub.o[0]
            acc.guard_events += sub.guard_events

    def _pass_tile_cols(self, n_selected: int) -> int:
        # vanilla means one undivided pass per partition
        if self.wl.mode == "vanilla":
            return max(n_selected, 1)
        return self.wl.tile_cols


def _charge_dram(part: _Partitioned, mesh: MeshConfig, report: SimReport) -> float:
    q_bytes = part.q.shape[0] * part.head_dim * mesh.payload_bytes
    kv_bytes = mesh.rows * mesh.cols * part.kv_partition_bytes  # per-CU fetches
    total = q_bytes + kv_bytes
    report.bytes_by_class["dram"] += total
    report.energy_by_class["dram"] += total * 8 * mesh.dram_energy
    return mesh.dram_latency + total / mesh.dram_bandwidth


def run_query_ring(mesh: MeshConfig, wl: MeshWorkload, trace_path=None):
    """Chunks circulate over resident K/V partitions; accumulators ride along."""
    part = _Partitioned(mesh, wl)
    n = mesh.cols
    sched = ring_schedule(n)
    validation = validate_schedule(sched)
    if not validation.ok:
        raise ValueError(f"ring schedule invalid for n={n}; see validation report")
    plan = assign_compute(sched)

    tracer = _Tracer(trace_path)
    report = SimReport(q_chunk_bytes=part.q_chunk_bytes,
                       kv_partition_bytes=part.kv_partition_bytes,
                       schedule_ok=validation.ok)
    latency = _charge_dram(part, mesh, report)

    # copies[(grid_row, cu)] -> {chunk: Accumulator}
    copies = {
        (g, cu): {cu: Accumulator.empty(part.chunk_rows, part.head_dim)}
        for g in range(mesh.rows)
        for cu in range(1, n + 1)
    }

    for t in range(1, n + 1):
        compute_times, comm_times = [], []
        deliveries = []
        for g in range(mesh.rows):
            for cu in range(1, n + 1):
                chunk = plan[cu][t - 1]
                acc = copies[(g, cu)][chunk]
                counters = OpCounters()
                part.partition_pass(g, chunk, cu, acc, counters)
                work = equivalent_adds(counters)
                report.work += work
                report.energy_by_class["compute"] += work * mesh.cu_energy
                compute_times.append(work / mesh.cu_throughput)
                tracer.emit(t=t, kind="compute", ring=g, cu=cu, chunk=chunk)

            groups: dict[tuple[int, int], list] = {}
            for ev in sched.sends_at(t):
                groups.setdefault((ev.src, ev.chunk), []).append(ev)
            for (src, chunk), group in sorted(groups.items()):
                group.sort(key=lambda ev: _KIND_PRIORITY[ev.kind])
                acc = copies[(g, src)].pop(chunk)
                keep_local = t == sched.replicate_step
                if keep_local:
                    copies[(g, src)][chunk] = acc  # acc stays with the kept copy
                    tracer.emit(t=t, kind="replicate", ring=g, cu=src, chunk=chunk)
                for i, ev in enumerate(group):
                    carries_acc = (not keep_local) and i == 0 and not acc.fresh
                    payload = acc if carries_acc else Accumulator.empty(
                        part.chunk_rows, part.head_dim
                    )
                    nbytes = part.q_chunk_bytes + (part.acc_bytes if carries_acc else 0)
                    report.bytes_by_class["q_ring"] += part.q_chunk_bytes
                    if carries_acc:
                        report.bytes_by_class["accumulator"] += part.acc_bytes
                    report.energy_by_class["link"] += nbytes * 8 * mesh.link_energy
                    comm_times.append(mesh.link_latency + nbytes / mesh.link_bandwidth)
                    deliveries.append((g, ev.dest, ev.chunk, payload))
                    tracer.emit(t=t, kind="send", ring=g, src=src, dest=ev.dest,
                                chunk=chunk, bytes=nbytes, send_kind=ev.kind)
        for g, dest, chunk, payload in deliveries:
            if chunk in copies[(g, dest)]:
                # same-chunk collision: merge on the spot (associative)
                copies[(g, dest)][chunk] = copies[(g, dest)][chunk].merge(payload)
            else:
                copies[(g, dest)][chunk] = payload
        step_comp = max(compute_times, default=0.0)
        step_comm = max(comm_times, default=0.0)
        report.steps.append({"step": t, "compute_time": step_comp,
                             "comm_time": step_comm,
                             "step_time": max(step_comp, step_comm)})
        latency += max(step_comp, step_comm)

    # merge step: partial accumulators converge on each chunk's home CU
    outputs = np.zeros_like(part.q)
    comm_times, compute_times = [], []
    for g in range(mesh.rows):
        merge_counters = OpCounters()
        for chunk in range(1, n + 1):
            parts = []
            for cu in range(1, n + 1):
                acc = copies[(g, cu)].get(chunk)
                if acc is None or acc.fresh:
                    continue
                hops = abs(cu - chunk)
                if hops:
                    report.bytes_by_class["accumulator"] += part.acc_bytes
                    report.energy_by_class["link"] += part.acc_bytes * 8 * mesh.link_energy
                    comm_times.append(
                        hops * (mesh.link_latency + part.acc_bytes / mesh.link_bandwidth)
                    )
                    tracer.emit(t=n + 1, kind="merge", ring=g, src=cu, dest=chunk,
                                chunk=chunk, bytes=part.acc_bytes)
                parts.append(acc)
            merged = parts[0]
            for extra in parts[1:]:
                merged = merged.merge(extra, merge_counters)
            report.guard_events += merged.guard_events
            outputs[part.chunk_slice(g, chunk)] = merged.finalize(merge_counters)
        work = equivalent_adds(merge_counters)
        report.work += work
        report.energy_by_class["compute"] += work * mesh.cu_energy
        compute_times.append(work / mesh.cu_throughput)
    step_comp = max(compute_times, default=0.0)
    step_comm = max(comm_times, default=0.0)
    report.steps.append({"step": n + 1, "compute_time": step_comp,
                         "comm_time": step_comm,
                         "step_time": max(step_comp, step_comm)})
    latency += max(step_comp, step_comm)

    report.latency = latency
    tracer.close()
    return outputs[: part.n_queries], report


def run_kv_ring(mesh: MeshConfig, wl: MeshWorkload, trace_path=None):
    """Baseline: queries stay resident, K/V partitions rotate around the ring.

    The wrap-around transfer has no physical link and is routed across the
    mesh row at cols-1 hops. Partitions move whole (no topology awareness,
    no selection masking of the payload).
    """
    part = _Partitioned(mesh, wl)
    n = mesh.cols
    tracer = _Tracer(trace_path)
    report = SimReport(q_chunk_bytes=part.q_chunk_bytes,
                       kv_partition_bytes=part.kv_partition_bytes)
    latency = _charge_dram(part, mesh, report)

    accs = {
        (g, cu): Accumulator.empty(part.chunk_rows, part.head_dim)
        for g in range(mesh.rows)
        for cu in range(1, n + 1)
    }
    for t in range(1, n + 1):
        compute_times, comm_times = [], []
        for g in range(mesh.rows):
            for cu in range(1, n + 1):
                part_position = (cu - 1 - (t - 1)) % n + 1
                counters = OpCounters()
                part.partition_pass(g, cu, part_position, accs[(g, cu)], counters)
                work = equivalent_adds(counters)
                report.work += work
                report.energy_by_class["compute"] += work * mesh.cu_energy
                compute_times.append(work / mesh.cu_throughput)
                tracer.emit(t=t, kind="compute", ring=g, cu=cu, chunk=cu,
                            partition=part_position)
            if t < n:
                for pos in range(1, n + 1):
                    dest = pos + 1 if pos < n else 1
                    hops = 1 if pos < n else n - 1
                    nbytes = part.kv_partition_bytes
                    report.bytes_by_class["kv_ring"] += nbytes
                    report.energy_by_class["link"] += nbytes * 8 * mesh.link_energy
                    comm_times.append(
                        hops * (mesh.link_latency + nbytes / mesh.link_bandwidth)
                    )
                    tracer.emit(t=t, kind="send", ring=g, src=pos, dest=dest,
                                bytes=nbytes, send_kind="kv-rotate")
        step_comp = max(compute_times, default=0.0)
        step_comm = max(comm_times, default=0.0)
        report.steps.append({"step": t, "compute_time": step_comp,
                             "comm_time": step_comm,
                             "step_time": max(step_comp, step_comm)})
        latency += max(step_comp, step_comm)

    outputs = np.zeros_like(part.q)
    compute_times = []
    for g in range(mesh.rows):
        for cu in range(1, n + 1):
            acc = accs[(g, cu)]
            report.guard_events += acc.guard_events
            counters = OpCounters()
            outputs[part.chunk_slice(g, cu)] = acc.finalize(counters)
            work = equivalent_adds(counters)
            report.work += work
            report.energy_by_class["compute"] += work * mesh.cu_energy
            compute_times.append(work / mesh.cu_throughput)
    step_comp = max(compute_times, default=0.0)
    report.steps.append({"step": n + 1, "compute_time": step_comp,
                         "comm_time": 0.0, "step_time": step_comp})
    latency += step_comp
    report.latency = latency
    tracer.close()
    return outputs[: part.n_queries], report


def reference_outputs(wl: MeshWorkload):
    """Single-node equivalent: one pass per query over the full retained set."""
    mesh = MeshConfig(rows=1, cols=1)
    part = _Partitioned(mesh, wl)
    acc = Accumulator.empty(len(part.q), part.head_dim)
    counters = OpCounters()
    part.partition_pass(0, 1, 1, acc, counters)
    return acc.finalize()[: part.n_queries]


def calibrate_compute(mesh: MeshConfig, wl: MeshWorkload) -> MeshConfig:
    """Set cu_throughput so the mean compute step matches the Q-chunk send time."""
    part = _Partitioned(mesh, wl)
    _, report = run_query_ring(mesh, wl)
    per_cu_step = report.work / (mesh.rows * mesh.cols * (mesh.cols + 1))
    send_bytes = part.q_chunk_bytes + part.acc_bytes
    t_send = mesh.link_latency + send_bytes / mesh.link_bandwidth
    return MeshConfig(**{**mesh.to_json(), "cu_throughput": max(per_cu_step / t_send, 1.0)})
