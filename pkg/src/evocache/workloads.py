"""Bundled synthetic workloads and policy fixtures.

Every builder here is deterministic, so hit rates measured on these traces
can be frozen as regression values.  The five named traces are the standard
evaluation suite; the three generator families feed the clustering tests;
``search_instance`` is a churn workload with periodic scans, built so
frequency-aware policies beat LRU by a comfortable margin at the bundled
capacity.
"""

from __future__ import annotations

import importlib.resources

from .topology import Topology
from .trace import (ConstantSize, LognormalSize, Request, generate_phase_trace,
                    generate_zipf_trace)
from . import dsl


def _s1() -> list[Request]:
    """Mixed skewed workload: 2000 objects, lognormal sizes."""
    return generate_zipf_trace(2000, 30_000, 0.9, LognormalSize(6.0, 1.0), seed=101)


def _s2() -> list[Request]:
    """Uniform popularity over a small population."""
    return generate_zipf_trace(600, 15_000, 0.0, ConstantSize(64), seed=102)


def _s3() -> list[Request]:
    """Skewed churn interleaved with one-pass scans.

    Opens with two sequential passes over the hot population so every hot
    object is re-referenced before evictions start.
    """
    sizes = {"kind": "lognormal", "mu": 5.0, "sigma": 0.8}
    lap = {"kind": "loop", "num_objects": 500, "repeats": 2, "size_model": sizes,
           "id_prefix": "hot"}
    hot = {"kind": "zipf", "num_objects": 500, "alpha": 1.0,
           "size_model": sizes, "id_prefix": "hot"}
    scan = {"kind": "scan", "size_model": sizes}
    return generate_phase_trace(
        [(lap, 1000), (hot, 4000), (scan, 1500), (hot, 4000), (scan, 1500), (hot, 4000)],
        seed=103)


def _loop() -> list[Request]:
    """Cyclic scan over 400 objects; worst case for recency policies."""
    lap = {"kind": "loop", "num_objects": 400, "id_prefix": "obj"}
    return generate_phase_trace([(lap, 12_000)], seed=0)


def _zipf_scan() -> list[Request]:
    """The bundled search instance: hot Zipf phases with scan bursts, after
    a double pass over the top of the hot population."""
    lap = {"kind": "loop", "num_objects": 150, "repeats": 2, "id_prefix": "hot"}
    hot = {"kind": "zipf", "num_objects": 300, "alpha": 1.1, "id_prefix": "hot"}
    scan = {"kind": "scan"}
    return generate_phase_trace(
        [(lap, 300), (hot, 2500), (scan, 800), (hot, 2500), (scan, 800),
         (hot, 2500), (scan, 800), (hot, 2500)],
        seed=104)


BUNDLED_TRACES = {
    "s1": _s1,
    "s2": _s2,
    "s3": _s3,
    "loop": _loop,
    "zipf_scan": _zipf_scan,
}


def bundled_names() -> tuple[str, ...]:
    return tuple(BUNDLED_TRACES)


def bundled_trace(name: str) -> list[Request]:
    try:
        return BUNDLED_TRACES[name]()
    except KeyError:
        raise ValueError(f"unknown bundled trace {name!r}; "
                         f"known: {', '.join(BUNDLED_TRACES)}") from None


# Search-instance capacity (slots, size-agnostic): small enough that scan
# bursts wipe a recency-ordered cache but a frequency-aware one keeps the
# hot set.
SEARCH_INSTANCE_CAPACITY = 150


def search_instance() -> tuple[list[Request], int]:
    return _zipf_scan(), SEARCH_INSTANCE_CAPACITY


# --- clustering families -----------------------------------------------------

CLUSTER_FAMILIES = ("hot", "scan", "uniform")


def cluster_family_trace(family: str, index: int) -> list[Request]:
    """One of the bundled synthetic clustering traces (index >= 0)."""
    seed = 1000 + index
    if family == "hot":
        return generate_zipf_trace(400 + 10 * index, 8000, 1.3,
                                   ConstantSize(100), seed=seed)
    if family == "scan":
        scan = {"kind": "scan", "size_model": {"kind": "lognormal", "mu": 7.0, "sigma": 0.7}}
        return generate_phase_trace([(scan, 4000), (scan, 4000)], seed=seed)
    if family == "uniform":
        return generate_zipf_trace(2000 + 50 * index, 8000, 0.0,
                                   ConstantSize(1000), seed=seed)
    raise ValueError(f"unknown family {family!r}; known: {CLUSTER_FAMILIES}")


def cluster_suite(per_family: int = 10) -> tuple[list[list[Request]], list[str]]:
    traces, labels = [], []
    for family in CLUSTER_FAMILIES:
        for i in range(per_family):
            traces.append(cluster_family_trace(family, i))
            labels.append(family)
    return traces, labels


def report_suite() -> dict[str, list[Request]]:
    """Twelve traces spanning the three families, for report-table tests."""
    out = {}
    for family in CLUSTER_FAMILIES:
        for i in range(4):
            out[f"{family}{i}"] = cluster_family_trace(family, i)
    return out


# --- policy fixtures -----------------------------------------------------------

def fixture_text(name: str) -> str:
    return importlib.resources.files("evocache.fixtures").joinpath(name).read_text("utf-8")


def evolved_score_program() -> dsl.ScoreProgram:
    """A bundled evolved scoring function combining frequency, recency, size,
    resident percentiles, and eviction-history features."""
    return dsl.parse(fixture_text("evolved_score.dsl"), dsl.RANK_SCORE)


def staged_fifo_topology() -> Topology:
    """A bundled three-stage FIFO pipeline (probation / mid / main) with a
    ghost queue and a transition budget of 4."""
    import json
    return Topology.from_json(json.loads(fixture_text("staged_fifo_topology.json")))


def s3fifo_topology(max_transitions: int = 1_000_000) -> Topology:
    """Queue-topology encoding of the small/main/ghost FIFO state machine:
    10% probation, 90% main, 90% ghost; one probation re-reference promotes,
    one main re-reference reinserts at the head, else evict (probation tails
    are remembered in the ghost, main tails are not)."""
    return Topology(
        queue_types=("fifo", "fifo"),
        queue_fractions=(0.1, 0.9),
        ghost_fraction=0.9,
        max_transitions_allowed=max_transitions,
        init_program=dsl.parse("if in_ghost then 1 else 0", dsl.QT_INIT),
        transition_programs=(
            dsl.parse("if obj.queue_access_count >= 1 then 1 else -1", dsl.QT_TRANSITION),
            dsl.parse("if obj.queue_access_count >= 1 then 1 else -2", dsl.QT_TRANSITION),
        ),
    )
