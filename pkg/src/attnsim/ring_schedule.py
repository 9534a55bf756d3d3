"""Ring-equivalent communication schedule for a wrap-around-free 1-D mesh.

N compute units, CU_1..CU_N, each start holding their own chunk and must each
compute against all N chunks in exactly N steps, moving data only between
immediate neighbors. The schedule has two families of sends:

  waves    - from step t, CU src with t <= src < N sends chunk[src - t + 1]
             up, and 1 < src <= N - t + 1 sends chunk[src + t - 1] down;
             chunks spread outward from the center.
  refluxes - after the midpoint, late sends run back toward the center so
             every CU sees the chunks it skipped while forwarding.

At the replicate step (floor(N/2) + 1) senders keep local copies; every other
send moves its chunk. Sends land at the end of step t and become usable at
step t + 1. A CU may send a chunk it holds to both neighbors in one step
(physical duplication); each directed link carries at most one chunk per step.

Assignment of which held chunk each CU computes per step is not part of the
send rules; it is constructed here by greedy feasibility matching (fewest
remaining holding steps first) with an augmenting-path fallback, then checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

KIND_WAVE_UP = "wave-up"
KIND_WAVE_DOWN = "wave-down"
KIND_REFLUX_UP = "reflux-up"
KIND_REFLUX_DOWN = "reflux-down"

__all__ = [
    "SendEvent",
    "RingSchedule",
    "ring_schedule",
    "HoldWindow",
    "derive_windows",
    "assign_compute",
    "ScheduleInfeasible",
    "CheckResult",
    "ValidationReport",
    "validate_schedule",
]


@dataclass(frozen=True)
class SendEvent:
    step: int
    src: int
    dest: int
    chunk: int
    kind: str


@dataclass
class RingSchedule:
    n: int
    sends: tuple
    replicate_step: int

    def sends_at(self, step: int) -> list:
        return [s for s in self.sends if s.step == step]


def ring_schedule(n: int) -> RingSchedule:
    """Generate the full send schedule for an N-unit ring-on-mesh."""
    if n < 1:
        raise ValueError("ring length must be >= 1")
    half = n // 2
    replicate_step = half + 1
    sends = []
    for t in range(1, n + 1):
        for src in range(1, n + 1):
            if t <= src < n:
                sends.append(SendEvent(t, src, src + 1, src - t + 1, KIND_WAVE_UP))
            if 1 < src <= n - t + 1:
                sends.append(SendEvent(t, src, src - 1, src + t - 1, KIND_WAVE_DOWN))
            if t > replicate_step:
                if t - half <= src < t:
                    sends.append(SendEvent(t, src, src + 1, src + n - t + 1, KIND_REFLUX_UP))
                if n - t + 1 < src <= n - t + 1 + half:
                    sends.append(SendEvent(t, src, src - 1, src - n + t - 1, KIND_REFLUX_DOWN))
    return RingSchedule(n=n, sends=tuple(sends), replicate_step=replicate_step)


@dataclass
class HoldWindow:
    """One residency of one chunk at one CU.

    visible_from: first step the data is usable (home chunks: step 1; a
    received chunk: send step + 1). consumed_at: step of the move-send that
    took it away, or None if it stays. send_steps / compute_steps: uses.
    """

    cu: int
    chunk: int
    visible_from: int
    consumed_at: int | None = None
    send_steps: list = field(default_factory=list)
    compute_steps: list = field(default_factory=list)

    def available_at(self, step: int, horizon: int) -> bool:
        end = self.consumed_at if self.consumed_at is not None else horizon
        return self.visible_from <= step <= end


def derive_windows(sched: RingSchedule):
    """Replay the sends into per-(CU, chunk) hold windows.

    Returns (windows, errors): errors collect holds-before-send violations
    and same-chunk collisions; offending sends deliver nothing, so even
    broken (even-N) schedules replay deterministically for reporting.
    """
    windows: list[HoldWindow] = []
    open_idx: dict[tuple[int, int], int] = {}
    errors: list[str] = []

    def open_window(cu, chunk, visible_from):
        if (cu, chunk) in open_idx:
            errors.append(
                f"step {visible_from - 1}: CU_{cu} would hold two copies of chunk{chunk}"
            )
            return
        open_idx[(cu, chunk)] = len(windows)
        windows.append(HoldWindow(cu=cu, chunk=chunk, visible_from=visible_from))

    for cu in range(1, sched.n + 1):
        open_window(cu, cu, 1)

    for t in range(1, sched.n + 1):
        deliveries = []
        by_src_chunk: dict[tuple[int, int], list[SendEvent]] = {}
        for ev in sched.sends_at(t):
            by_src_chunk.setdefault((ev.src, ev.chunk), []).append(ev)
        for (src, chunk), group in sorted(by_src_chunk.items()):
            widx = open_idx.get((src, chunk))
            window = windows[widx] if widx is not None else None
            if window is None or window.visible_from > t:
                errors.append(
                    f"step {t}: CU_{src} sends chunk{chunk} it does not hold"
                )
                continue
            window.send_steps.append(t)
            if t != sched.replicate_step:
                window.consumed_at = t
                del open_idx[(src, chunk)]
            deliveries.extend(group)
        for ev in deliveries:
            open_window(ev.dest, ev.chunk, ev.step + 1)
    return windows, errors


class ScheduleInfeasible(Exception):
    pass


def _feasible_steps(windows, cu, n):
    """Per chunk, the set of steps at which `cu` holds it."""
    table: dict[int, set] = {c: set() for c in range(1, n + 1)}
    for w in windows:
        if w.cu != cu:
            continue
        end = w.consumed_at if w.consumed_at is not None else n
        for t in range(w.visible_from, min(end, n) + 1):
            table[w.chunk].add(t)
    return table


def _match_cu(table: dict[int, set], n: int):
    """Perfect matching chunk -> step. Greedy first, augmenting paths after."""
    assignment: dict[int, int] = {}  # chunk -> step
    taken: dict[int, int] = {}  # step -> chunk
    remaining = set(table)
    while remaining:
        chunk = min(
            remaining, key=lambda c: (len(table[c] - set(taken)), c)
        )
        options = sorted(table[chunk] - set(taken))
        if not options:
            break  # greedy stuck; fall through to augmenting search
        assignment[chunk] = options[0]
        taken[options[0]] = chunk
        remaining.remove(chunk)

    def augment(chunk, visited):
        for step in sorted(table[chunk]):
            if step in visited:
                continue
            visited.add(step)
            holder = taken.get(step)
            if holder is None or augment(holder, visited):
                taken[step] = chunk
                assignment[chunk] = step
                return True
        return False

    for chunk in sorted(remaining):
        if not augment(chunk, set()):
            return None, chunk
    return assignment, None


def assign_compute(sched: RingSchedule, windows=None) -> dict[int, list[int]]:
    """Per CU, the chunk to compute at each step (plan[cu][t-1]).

    Raises ScheduleInfeasible naming the CU and chunk if no step<->chunk
    bijection exists over the hold windows.
    """
    if windows is None:
        windows, _ = derive_windows(sched)
    plan = {}
    for cu in range(1, sched.n + 1):
        table = _feasible_steps(windows, cu, sched.n)
        assignment, stuck = _match_cu(table, sched.n)
        if assignment is None:
            steps = sorted(table[stuck])
            raise ScheduleInfeasible(
                f"CU_{cu}: no feasible compute step for chunk{stuck} "
                f"(holds it at steps {steps or 'never'})"
            )
        order = [0] * sched.n
        for chunk, step in assignment.items():
            order[step - 1] = chunk
        plan[cu] = order
    return plan


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    n: int
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
        }


def validate_schedule(sched: RingSchedule) -> ValidationReport:
    """Check every schedule invariant; failures carry the first counterexample."""
    checks = []
    windows, errors = derive_windows(sched)

    hold_errors = [e for e in errors if "does not hold" in e]
    checks.append(
        CheckResult("holds-before-send", not hold_errors, hold_errors[0] if hold_errors else "")
    )
    copy_errors = [e for e in errors if "two copies" in e]
    checks.append(
        CheckResult("single-copy-per-cu", not copy_errors, copy_errors[0] if copy_errors else "")
    )

    bad_dest = [s for s in sched.sends if abs(s.dest - s.src) != 1]
    checks.append(
        CheckResult(
            "neighbor-sends-only",
            not bad_dest,
            f"{bad_dest[0]}" if bad_dest else "",
        )
    )

    link_load: dict[tuple[int, int, int], int] = {}
    for s in sched.sends:
        link_load[(s.step, s.src, s.dest)] = link_load.get((s.step, s.src, s.dest), 0) + 1
    overloaded = [k for k, v in link_load.items() if v > 1]
    checks.append(
        CheckResult(
            "one-chunk-per-link-per-step",
            not overloaded,
            f"step {overloaded[0][0]}: link CU_{overloaded[0][1]}->CU_{overloaded[0][2]}"
            if overloaded
            else "",
        )
    )

    out_of_range = [s for s in sched.sends if not (1 <= s.step <= sched.n)]
    checks.append(
        CheckResult(
            "completes-in-n-steps",
            not out_of_range,
            f"{out_of_range[0]}" if out_of_range else "",
        )
    )

    plan = None
    try:
        plan = assign_compute(sched, windows)
        checks.append(CheckResult("compute-coverage", True))
    except ScheduleInfeasible as exc:
        checks.append(CheckResult("compute-coverage", False, str(exc)))

    # Holdings limit: a window is live from arrival until its last use
    # (send or assigned compute); an unused window occupies its buffer for
    # the first visible step. Partial-output storage is not Q-chunk holding.
    if plan is not None:
        for w in windows:
            end = w.consumed_at if w.consumed_at is not None else sched.n
            for t in range(w.visible_from, min(end, sched.n) + 1):
                if plan[w.cu][t - 1] == w.chunk:
                    w.compute_steps.append(t)
    peak = (0, None)
    for t in range(1, sched.n + 1):
        per_cu: dict[int, int] = {}
        for w in windows:
            uses = w.send_steps + w.compute_steps
            live_until = max(uses) if uses else w.visible_from
            if w.visible_from <= t <= live_until:
                per_cu[w.cu] = per_cu.get(w.cu, 0) + 1
        for cu, count in per_cu.items():
            if count > peak[0]:
                peak = (count, f"step {t}: CU_{cu} holds {count} chunks")
    checks.append(
        CheckResult(
            "at-most-two-held-chunks",
            peak[0] <= 2,
            peak[1] if peak[0] > 2 else f"peak {peak[0]}",
        )
    )

    slack = [w for w in windows if not w.send_steps and not w.compute_steps]
    late = sum(1 for w in slack if w.visible_from > sched.n)
    checks.append(
        CheckResult(
            "slack-deliveries",
            True,
            f"{len(slack)} deliveries never used ({late} land after step {sched.n};"
            " boundary refluxes, simulated verbatim)",
        )
    )
    return ValidationReport(n=sched.n, checks=checks)
