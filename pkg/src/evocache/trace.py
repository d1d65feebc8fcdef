"""Request traces: CSV ingest/emit, synthetic workload generators, summaries.

The on-disk format is one request per line, ``object_id,size`` (or bare
``object_id`` for unit-sized objects), in arrival order.  Virtual time is
the 0-based request index; all recency/age arithmetic elsewhere in the
package is expressed in this unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np


class Request(NamedTuple):
    vtime: int
    object_id: str
    size: int


@dataclass(frozen=True)
class TraceSummary:
    total_requests: int
    unique_objects: int
    footprint_bytes: int
    one_hit_wonder_fraction: float


class TraceParseError(ValueError):
    """Raised for malformed trace files; carries the offending line number."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def parse_csv_trace(path: str) -> Iterator[Request]:
    """Yield Requests from a CSV trace, assigning vtime sequentially from 0.

    Blank lines and lines starting with ``#`` are skipped and do not consume
    virtual time.
    """
    vtime = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            if len(fields) > 2:
                raise TraceParseError(path, line_no, f"expected 1 or 2 fields, got {len(fields)}")
            object_id = fields[0].strip()
            if not object_id:
                raise TraceParseError(path, line_no, "empty object id")
            if len(fields) == 2:
                try:
                    size = int(fields[1].strip())
                except ValueError:
                    raise TraceParseError(path, line_no, f"bad size {fields[1].strip()!r}") from None
                if size <= 0:
                    raise TraceParseError(path, line_no, f"size must be >= 1, got {size}")
            else:
                size = 1
            yield Request(vtime, object_id, size)
            vtime += 1


def write_csv_trace(trace: Iterable[Request], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for req in trace:
            fh.write(f"{req.object_id},{req.size}\n")


# --- synthetic generators ------------------------------------------------

@dataclass(frozen=True)
class ConstantSize:
    value: int = 1

    def draw(self, rng: np.random.Generator) -> int:
        return self.value


@dataclass(frozen=True)
class LognormalSize:
    mu: float
    sigma: float

    def draw(self, rng: np.random.Generator) -> int:
        return max(1, int(round(math.exp(rng.normal(self.mu, self.sigma)))))


def size_model_from_spec(spec) -> "ConstantSize | LognormalSize":
    """Accepts a size model instance or a JSON-ish dict spec."""
    if isinstance(spec, (ConstantSize, LognormalSize)):
        return spec
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantSize(int(spec["value"]))
    if kind == "lognormal":
        return LognormalSize(float(spec["mu"]), float(spec["sigma"]))
    raise ValueError(f"unknown size model kind {kind!r}")


def zipf_pmf(num_objects: int, alpha: float) -> np.ndarray:
    """Normalized Zipf probabilities over ranks 1..num_objects (rank 1 hottest)."""
    ranks = np.arange(1, num_objects + 1, dtype=float)
    weights = ranks ** (-alpha)
    return weights / weights.sum()


def generate_zipf_trace(
    num_objects: int,
    num_requests: int,
    alpha: float,
    size_model=ConstantSize(1),
    seed: int = 0,
    id_prefix: str = "",
) -> list[Request]:
    """I.i.d. Zipf(alpha) draws over `num_objects` ids; per-id size fixed at
    first appearance.  Pure in (seed, params); alpha=0 is uniform."""
    if num_objects < 1 or num_requests < 1:
        raise ValueError("num_objects and num_requests must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    size_model = size_model_from_spec(size_model)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(zipf_pmf(num_objects, alpha))
    draws = np.searchsorted(cdf, rng.random(num_requests), side="right")
    sizes: dict[int, int] = {}
    out = []
    for vt, rank in enumerate(draws):
        rank = int(rank)
        if rank not in sizes:
            sizes[rank] = size_model.draw(rng)
        out.append(Request(vt, f"{id_prefix}{rank + 1}", sizes[rank]))
    return out


def generate_scan_trace(
    num_objects: int,
    size_model=ConstantSize(1),
    seed: int = 0,
    id_prefix: str = "scan",
) -> list[Request]:
    """One pass over `num_objects` fresh ids, each accessed exactly once."""
    if num_objects < 1:
        raise ValueError("num_objects must be >= 1")
    size_model = size_model_from_spec(size_model)
    rng = np.random.default_rng(seed)
    return [
        Request(i, f"{id_prefix}{i}", size_model.draw(rng))
        for i in range(num_objects)
    ]


def generate_phase_trace(phases: Sequence[tuple[dict, int]], seed: int = 0) -> list[Request]:
    """Concatenate per-phase sub-traces with global vtime renumbering.

    Each phase is ``(generator_spec, length)`` where the spec is a dict with
    ``kind`` in {"zipf", "scan", "loop"} plus that generator's parameters
    (minus the request count, which comes from ``length``).  ``loop`` cycles
    sequentially over ``num_objects`` ids.  Phase sub-generators are seeded
    from ``seed`` plus the phase index, so the whole trace is pure in
    (phases, seed).  Distinct ``id_prefix`` values keep phase populations
    disjoint; identical prefixes share objects across phases.
    """
    if not phases:
        raise ValueError("at least one phase is required")
    out: list[Request] = []
    for idx, (spec, length) in enumerate(phases):
        kind = spec.get("kind", "zipf")
        prefix = spec.get("id_prefix", "")
        size_model = size_model_from_spec(spec.get("size_model", {"kind": "constant", "value": 1}))
        phase_seed = seed + idx
        if kind == "zipf":
            sub = generate_zipf_trace(
                spec["num_objects"], length, spec.get("alpha", 1.0),
                size_model=size_model, seed=phase_seed, id_prefix=prefix,
            )
        elif kind == "scan":
            sub = generate_scan_trace(length, size_model=size_model, seed=phase_seed,
                                      id_prefix=prefix or f"scan{idx}_")
        elif kind == "loop":
            n = spec["num_objects"]
            repeats = spec.get("repeats", 1)
            rng = np.random.default_rng(phase_seed)
            sizes = [size_model.draw(rng) for _ in range(n)]
            sub = [Request(i, f"{prefix}{((i // repeats) % n) + 1}", sizes[(i // repeats) % n])
                   for i in range(length)]
        else:
            raise ValueError(f"unknown phase kind {kind!r}")
        for req in sub:
            out.append(Request(len(out), req.object_id, req.size))
    return out


def summarize(trace: Iterable[Request]) -> TraceSummary:
    """Single-pass trace summary; footprint uses the last-seen size per id."""
    total = 0
    counts: dict[str, int] = {}
    sizes: dict[str, int] = {}
    for req in trace:
        total += 1
        counts[req.object_id] = counts.get(req.object_id, 0) + 1
        sizes[req.object_id] = req.size
    unique = len(counts)
    if unique == 0:
        return TraceSummary(0, 0, 0, 0.0)
    one_hit = sum(1 for c in counts.values() if c == 1)
    return TraceSummary(total, unique, sum(sizes.values()), one_hit / unique)
