"""Report tables over simulation results.

The central table counts, per capacity tier, how many traces each policy
wins (highest object hit rate; exact ties credit every tied policy).  It is
emitted three ways: CSV for machines, an aligned text table for humans, and
a grouped bar chart rendered to a file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


@dataclass(frozen=True)
class ResultRow:
    trace: str
    policy: str
    capacity_spec: str
    object_hit_rate: float


def read_results_csv(path: str) -> list[ResultRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(rec["trace"], rec["policy"], rec["capacity_spec"],
                                  float(rec["object_hit_rate"])))
    return rows


@dataclass(frozen=True)
class BestCounts:
    capacities: tuple[str, ...]
    policies: tuple[str, ...]
    counts: dict  # (capacity_spec, policy) -> wins
    traces_per_capacity: dict  # capacity_spec -> number of traces


def best_counts(rows: Iterable[ResultRow]) -> BestCounts:
    """Per-capacity 'best on N traces' counts; ties credit all tied policies."""
    by_capacity: dict[str, dict[str, dict[str, float]]] = {}
    for row in rows:
        by_capacity.setdefault(row.capacity_spec, {}) \
                   .setdefault(row.policy, {})[row.trace] = row.object_hit_rate

    policies = sorted({row.policy for row in rows})
    if len(policies) < 2:
        raise ValueError("best-counts needs results for at least two policies")
    counts: dict[tuple[str, str], int] = {}
    traces_per_capacity = {}
    for cap, per_policy in sorted(by_capacity.items()):
        trace_sets = [frozenset(t) for t in per_policy.values()]
        common = trace_sets[0]
        for ts in trace_sets[1:]:
            if ts != common:
                raise ValueError(
                    f"policies cover different traces at capacity {cap!r}; "
                    "rerun simulate over a common trace set")
        if len(per_policy) < 2:
            raise ValueError(f"capacity {cap!r} has results for fewer than two policies")
        traces_per_capacity[cap] = len(common)
        for policy in per_policy:
            counts[(cap, policy)] = 0
        for trace in sorted(common):
            rates = {policy: per_policy[policy][trace] for policy in per_policy}
            best = max(rates.values())
            for policy, rate in rates.items():
                if rate == best:
                    counts[(cap, policy)] += 1
    return BestCounts(tuple(sorted(by_capacity)), tuple(policies), counts,
                      traces_per_capacity)


def write_best_counts_csv(table: BestCounts, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["capacity_spec", "policy", "best_on"])
        for cap in table.capacities:
            for policy in table.policies:
                writer.writerow([cap, policy, table.counts.get((cap, policy), 0)])


def render_best_counts_text(table: BestCounts) -> str:
    width = max(len("policy"), max(len(p) for p in table.policies))
    cap_width = {cap: max(len(cap), 7) for cap in table.capacities}
    lines = []
    header = "policy".ljust(width) + "".join(
        f"  {cap.rjust(cap_width[cap])}" for cap in table.capacities)
    lines.append(header)
    lines.append("-" * len(header))
    for policy in table.policies:
        cells = "".join(
            f"  {str(table.counts.get((cap, policy), 0)).rjust(cap_width[cap])}"
            for cap in table.capacities)
        lines.append(policy.ljust(width) + cells)
    totals = "".join(
        f"  {str(table.traces_per_capacity[cap]).rjust(cap_width[cap])}"
        for cap in table.capacities)
    lines.append("-" * len(header))
    lines.append("traces".ljust(width) + totals)
    return "\n".join(lines)


def render_best_counts_figure(table: BestCounts, path: str) -> None:
    fig, ax = plt.subplots(figsize=(max(6.0, 1.0 + 0.9 * len(table.policies)), 4.0))
    n_caps = len(table.capacities)
    group_width = 0.8
    bar_width = group_width / n_caps
    xs = range(len(table.policies))
    for ci, cap in enumerate(table.capacities):
        offsets = [x - group_width / 2 + bar_width * (ci + 0.5) for x in xs]
        heights = [table.counts.get((cap, policy), 0) for policy in table.policies]
        ax.bar(offsets, heights, width=bar_width, label=cap)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(table.policies, rotation=30, ha="right")
    ax.set_ylabel("traces where policy is best")
    ax.legend(title="capacity")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
