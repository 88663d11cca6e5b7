"""Thread placement inside one core complex (CCX).

Positions are numbered relative to the logical core that services the NIC
interrupt:

* position 0 -- the interrupt's logical core
* position 1 -- its SMT sibling
* positions 2, 3 -- the logical cores of the second physical core

A plan places one receiving/management thread and one worker per stream.
Workers are listed in stream order and must sit on ascending positions.
"Rule W": every worker needs a position of its own, shared neither with the
interrupt nor with the receiving thread nor with another worker.
"""

from __future__ import annotations

import itertools
import os
import warnings
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CcxLayout:
    physical_cores: int = 2
    logical_per_physical: int = 2
    interrupt_position: int = 0

    @property
    def positions(self) -> range:
        return range(self.physical_cores * self.logical_per_physical)

    def physical_core(self, position: int) -> int:
        return position // self.logical_per_physical


DEFAULT_LAYOUT = CcxLayout()


@dataclass(frozen=True)
class AssignmentPlan:
    receiver: int
    workers: tuple[int, ...]
    stream_rates: tuple[float, ...] = field(default=(), compare=False)  # bits/s, informational

    @property
    def n_streams(self) -> int:
        return len(self.workers)

    def __str__(self):
        return f"recv@{self.receiver} workers@{','.join(map(str, self.workers))}"

    def to_dict(self) -> dict:
        d = {"receiver": self.receiver, "workers": list(self.workers)}
        if self.stream_rates:
            d["stream_rates"] = list(self.stream_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AssignmentPlan":
        return cls(int(d["receiver"]), tuple(int(w) for w in d["workers"]),
                   tuple(float(r) for r in d.get("stream_rates", ())))


# a two-stream placement with per-stream payload rates that ran without loss
PRESETS = {
    "paper-2stream": AssignmentPlan(receiver=2, workers=(1, 3), stream_rates=(7.5e9, 8.0e9)),
}


def enumerate_assignments(n_streams: int, apply_rule_w: bool, layout: CcxLayout = DEFAULT_LAYOUT) -> list[AssignmentPlan]:
    """All plans for ``n_streams`` in a fixed order (receiver, then workers).

    Without Rule W workers may share positions but still appear in
    non-decreasing stream order. With Rule W the remaining positions are
    handed out in ascending stream order.
    """
    if n_streams < 1:
        raise ValueError("n_streams must be >= 1")
    positions = list(layout.positions)
    plans = []
    for recv in positions:
        if apply_rule_w:
            free = [p for p in positions if p != recv and p != layout.interrupt_position]
            worker_sets = itertools.combinations(free, n_streams)
        else:
            worker_sets = itertools.combinations_with_replacement(positions, n_streams)
        plans.extend(AssignmentPlan(recv, tuple(ws)) for ws in worker_sets)
    return plans


def validate(plan: AssignmentPlan, layout: CcxLayout = DEFAULT_LAYOUT) -> list[str]:
    """Every rule the plan violates; an empty list means the plan is valid."""
    problems = []
    valid = set(layout.positions)
    if plan.receiver not in valid:
        problems.append(f"receiver position {plan.receiver} out of range")
    for s, w in enumerate(plan.workers):
        if w not in valid:
            problems.append(f"worker {s} position {w} out of range")
    if not plan.workers:
        problems.append("plan has no worker threads")
    for s, w in enumerate(plan.workers):
        if w == layout.interrupt_position:
            problems.append(f"worker {s} shares position {w} with the interrupt thread")
        if w == plan.receiver:
            problems.append(f"worker {s} shares position {w} with the receiving thread")
    counts = {}
    for w in plan.workers:
        counts[w] = counts.get(w, 0) + 1
    for w, c in sorted(counts.items()):
        if c > 1:
            problems.append(f"{c} workers share position {w}")
    if any(b < a for a, b in zip(plan.workers, plan.workers[1:])):
        problems.append(f"workers {plan.workers} not in ascending stream order")
    return problems


def format_plans(plans: list[AssignmentPlan]) -> str:
    n = max((p.n_streams for p in plans), default=0)
    header = ["#", "recv"] + [f"w{s}" for s in range(n)]
    lines = ["  ".join(f"{h:>4}" for h in header)]
    for i, p in enumerate(plans):
        cells = [str(i), str(p.receiver)] + [str(w) for w in p.workers]
        lines.append("  ".join(f"{c:>4}" for c in cells))
    return "\n".join(lines)


def core_for(position: int, core_map: dict[int, list[int]], ccx: int = 0) -> int:
    """Look up the OS logical core id for ``position`` on ``ccx``.

    ``core_map[ccx]`` lists logical core ids in position order.
    """
    try:
        cores = core_map[ccx]
    except KeyError:
        raise ConfigError(f"core map has no entry for CCX {ccx}") from None
    if not 0 <= position < len(cores):
        raise ConfigError(f"position {position} not mapped for CCX {ccx} (map {cores})")
    return int(cores[position])


def pin_current_thread(position: int, core_map: dict[int, list[int]], ccx: int = 0,
                       layout: CcxLayout = DEFAULT_LAYOUT) -> bool:
    """Restrict the calling thread to the logical core behind ``position``.

    Returns False (with a warning) where the OS offers no affinity control.
    """
    if position not in layout.positions:
        raise ConfigError(f"position {position} outside layout positions {list(layout.positions)}")
    core = core_for(position, core_map, ccx)
    if not hasattr(os, "sched_setaffinity"):
        warnings.warn("thread affinity not supported on this platform; thread left unpinned", RuntimeWarning)
        return False
    try:
        os.sched_setaffinity(0, {core})
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot pin to logical core {core}: {exc}") from exc
    return True


def current_affinity() -> set[int] | None:
    if not hasattr(os, "sched_getaffinity"):
        return None
    return set(os.sched_getaffinity(0))
