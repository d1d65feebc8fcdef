"""Trace-replay cache simulator.

The engine owns residency bookkeeping, per-object metadata, exact aggregate
statistics over residents, a bounded eviction-history (ghost metadata), and
hit/miss accounting.  Eviction decisions are delegated to a policy object:

* rank-style policies (see :mod:`evocache.rank`, :mod:`evocache.baselines`)
  implement ``bind/on_insert/on_access/select_victims/discard`` and the
  engine drives insertion and capacity;
* self-managed caches (queue topologies) expose ``make_replayer(config)``
  and run their own placement/eviction state machine while the engine keeps
  the counters.

Replays are single-threaded and bit-deterministic for fixed inputs; distinct
simulations share no mutable state.
"""

from __future__ import annotations

import math
import time
from bisect import bisect_left, insort
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Optional

from .trace import Request, TraceSummary

SIZE_AWARE = "size_aware"
SIZE_AGNOSTIC = "size_agnostic"

CAPACITY_PRESETS = {"tiny": 0.001, "small": 0.01, "large": 0.1}


class CandidateFailure(RuntimeError):
    """A policy raised during replay; the simulation aborts as an early failure."""


@dataclass(frozen=True)
class CacheConfig:
    capacity: int
    mode: str = SIZE_AWARE
    history_capacity: int = 4096

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.mode not in (SIZE_AWARE, SIZE_AGNOSTIC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.history_capacity < 0:
            raise ValueError("history_capacity must be >= 0")


def resolve_capacity(summary: TraceSummary, spec: str, mode: str = SIZE_AWARE) -> int:
    """Turn a capacity spec into a concrete capacity for one trace.

    Specs: ``abs:<n>`` (bytes or slots), ``frac:<f>`` (fraction of the trace
    footprint: bytes in size-aware mode, unique objects in size-agnostic
    mode), or a preset name among tiny/small/large (0.1%/1%/10%).
    """
    if spec in CAPACITY_PRESETS:
        frac = CAPACITY_PRESETS[spec]
    elif spec.startswith("frac:"):
        frac = float(spec.split(":", 1)[1])
        if not 0 < frac <= 1:
            raise ValueError(f"capacity fraction must be in (0, 1], got {frac}")
    elif spec.startswith("abs:"):
        return max(1, int(spec.split(":", 1)[1]))
    else:
        raise ValueError(f"bad capacity spec {spec!r}")
    base = summary.footprint_bytes if mode == SIZE_AWARE else summary.unique_objects
    return max(1, int(frac * base))


class ObjectMeta:
    """Per-resident-object features exposed to scoring functions."""

    __slots__ = ("count", "last_access_vtime", "addition_to_cache_vtime", "size")

    def __init__(self, count: int, last_access_vtime: int,
                 addition_to_cache_vtime: int, size: int):
        self.count = count
        self.last_access_vtime = last_access_vtime
        self.addition_to_cache_vtime = addition_to_cache_vtime
        self.size = size


@dataclass(frozen=True)
class EvictionRecord:
    object_id: str
    eviction_vtime: int
    count_at_eviction: int
    age_at_eviction_time: int


class Multiset:
    """Exact order-statistic multiset over a sorted list."""

    __slots__ = ("_values",)

    def __init__(self):
        self._values: list = []

    def __len__(self):
        return len(self._values)

    def add(self, x):
        insort(self._values, x)

    def remove(self, x):
        i = bisect_left(self._values, x)
        if i >= len(self._values) or self._values[i] != x:
            raise KeyError(x)
        del self._values[i]

    def select(self, rank: int):
        """1-indexed ascending order statistic."""
        return self._values[rank - 1]

    def values(self) -> list:
        return list(self._values)


def nearest_rank(p: float, n: int) -> int:
    """Nearest-rank index (1-based) for percentile p over n values."""
    if p < 0:
        p = 0.0
    elif p > 1:
        p = 1.0
    r = math.ceil(p * n - 1e-9)
    return min(max(r, 1), n)


class CacheState:
    """Mutable simulation state shared between the engine and rank policies."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.vtime = 0
        self.used = 0
        self._meta: dict[str, ObjectMeta] = {}
        self.counts = Multiset()
        self.additions = Multiset()
        self.sizes = Multiset()
        self._history: OrderedDict[str, EvictionRecord] = OrderedDict()

    # -- residency ---------------------------------------------------------
    def resident(self, object_id: str) -> bool:
        return object_id in self._meta

    def meta(self, object_id: str) -> ObjectMeta:
        return self._meta[object_id]

    def residents(self):
        return self._meta.keys()

    @property
    def resident_count(self) -> int:
        return len(self._meta)

    def effective_size(self, size: int) -> int:
        return 1 if self.config.mode == SIZE_AGNOSTIC else size

    # -- aggregate statistics -----------------------------------------------
    def percentile(self, stat: str, p: float) -> float:
        """Nearest-rank percentile over the resident multiset; 0 when empty.

        Ages are derived from addition vtimes: the rank-r smallest age is
        vtime minus the rank-(n-r+1) smallest addition vtime, so no per-tick
        updates are needed.
        """
        n = len(self.counts)
        if n == 0:
            return 0.0
        r = nearest_rank(p, n)
        if stat == "counts":
            return float(self.counts.select(r))
        if stat == "sizes":
            return float(self.sizes.select(r))
        if stat == "ages":
            return float(self.vtime - self.additions.select(n - r + 1))
        raise KeyError(stat)

    # -- eviction history ----------------------------------------------------
    def history_lookup(self, object_id: str) -> Optional[EvictionRecord]:
        return self._history.get(object_id)

    def _history_push(self, record: EvictionRecord) -> None:
        cap = self.config.history_capacity
        if cap == 0:
            return
        self._history.pop(record.object_id, None)
        self._history[record.object_id] = record
        while len(self._history) > cap:
            self._history.popitem(last=False)

    def _history_drop(self, object_id: str) -> None:
        self._history.pop(object_id, None)

    # -- mutations (engine only) ----------------------------------------------
    def _insert(self, object_id: str, size: int) -> ObjectMeta:
        m = ObjectMeta(1, self.vtime, self.vtime, size)
        self._meta[object_id] = m
        self.counts.add(1)
        self.additions.add(self.vtime)
        self.sizes.add(size)
        self.used += self.effective_size(size)
        return m

    def _remove(self, object_id: str) -> ObjectMeta:
        m = self._meta.pop(object_id)
        self.counts.remove(m.count)
        self.additions.remove(m.addition_to_cache_vtime)
        self.sizes.remove(m.size)
        self.used -= self.effective_size(m.size)
        return m

    def _touch(self, object_id: str, size: int) -> ObjectMeta:
        m = self._meta[object_id]
        self.counts.remove(m.count)
        m.count += 1
        self.counts.add(m.count)
        m.last_access_vtime = self.vtime
        if size != m.size:
            self.sizes.remove(m.size)
            self.sizes.add(size)
            self.used += self.effective_size(size) - self.effective_size(m.size)
            m.size = size
        return m


@dataclass(frozen=True)
class SimResult:
    requests: int
    hits: int
    misses: int
    object_hit_rate: float
    byte_hit_rate: float
    evictions: int
    wall_time_s: float

    def to_json(self) -> dict:
        return {
            "requests": self.requests,
            "hits": self.hits,
            "misses": self.misses,
            "object_hit_rate": self.object_hit_rate,
            "byte_hit_rate": self.byte_hit_rate,
            "evictions": self.evictions,
            "wall_time_s": self.wall_time_s,
        }

    def same_replay(self, other: "SimResult") -> bool:
        """Equality on everything except wall time."""
        return (self.requests, self.hits, self.misses, self.object_hit_rate,
                self.byte_hit_rate, self.evictions) == \
               (other.requests, other.hits, other.misses, other.object_hit_rate,
                other.byte_hit_rate, other.evictions)


class EventLog:
    """Optional recorder for per-request hits and the eviction sequence.

    After a rank-policy run, ``final_state`` holds the CacheState for
    post-hoc invariant checks.
    """

    def __init__(self):
        self.hits: list[bool] = []
        self.evictions: list[str] = []
        self.final_state = None


def run_simulation(trace: Iterable[Request], policy, config: CacheConfig,
                   events: Optional[EventLog] = None) -> SimResult:
    """Replay a trace against a policy and return aggregate metrics.

    Any exception raised from policy code is re-raised as CandidateFailure;
    per the search contract such runs are discarded, not scored.
    """
    if hasattr(policy, "make_replayer"):
        return _run_self_managed(trace, policy, config, events)
    return _run_rank(trace, policy, config, events)


def _run_self_managed(trace, policy, config, events):
    replayer = policy.make_replayer(config, events=events)
    requests = hits = 0
    hit_bytes = total_bytes = 0
    started = time.perf_counter()
    try:
        for vt, req in enumerate(trace):
            requests += 1
            total_bytes += req.size
            if replayer.access(vt, req.object_id, req.size):
                hits += 1
                hit_bytes += req.size
                if events is not None:
                    events.hits.append(True)
            elif events is not None:
                events.hits.append(False)
    except CandidateFailure:
        raise
    except Exception as err:
        raise CandidateFailure(f"policy failed during replay: {err}") from err
    elapsed = time.perf_counter() - started
    return _result(requests, hits, hit_bytes, total_bytes, replayer.evictions, elapsed)


def _run_rank(trace, policy, config, events):
    state = CacheState(config)
    requests = hits = evictions = 0
    hit_bytes = total_bytes = 0
    started = time.perf_counter()

    def free_space(needed: int, pinned: frozenset) -> None:
        nonlocal evictions
        while state.used + needed > config.capacity:
            victims = policy.select_victims(state.used + needed - config.capacity, pinned)
            if not victims:
                raise RuntimeError("policy returned no victims while space is needed")
            for victim in victims:
                m = state._remove(victim)
                state._history_push(EvictionRecord(
                    victim, state.vtime, m.count, state.vtime - m.addition_to_cache_vtime))
                evictions += 1
                if events is not None:
                    events.evictions.append(victim)

    try:
        policy.bind(state)
        for vt, req in enumerate(trace):
            state.vtime = vt
            requests += 1
            total_bytes += req.size
            oid = req.object_id
            if state.resident(oid):
                hits += 1
                hit_bytes += req.size
                if events is not None:
                    events.hits.append(True)
                old_effective = state.effective_size(state.meta(oid).size)
                state._touch(oid, req.size)
                # A growing object may push the cache over capacity; it is
                # pinned so the policy cannot evict the object being accessed.
                if state.effective_size(req.size) > config.capacity:
                    m = state._remove(oid)
                    state._history_push(EvictionRecord(
                        oid, vt, m.count, vt - m.addition_to_cache_vtime))
                    evictions += 1
                    if events is not None:
                        events.evictions.append(oid)
                    policy.discard(oid)
                    continue
                if state.effective_size(req.size) > old_effective:
                    free_space(0, frozenset((oid,)))
                policy.on_access(oid)
            else:
                if events is not None:
                    events.hits.append(False)
                esize = state.effective_size(req.size)
                if esize > config.capacity:
                    continue  # larger than the whole cache: bypass
                free_space(esize, frozenset())
                state._insert(oid, req.size)
                policy.on_insert(oid)
                state._history_drop(oid)
    except CandidateFailure:
        raise
    except Exception as err:
        raise CandidateFailure(f"policy failed during replay: {err}") from err
    elapsed = time.perf_counter() - started
    if events is not None:
        events.final_state = state
    return _result(requests, hits, hit_bytes, total_bytes, evictions, elapsed)


def _result(requests, hits, hit_bytes, total_bytes, evictions, elapsed) -> SimResult:
    return SimResult(
        requests=requests,
        hits=hits,
        misses=requests - hits,
        object_hit_rate=hits / requests if requests else 0.0,
        byte_hit_rate=hit_bytes / total_bytes if total_bytes else 0.0,
        evictions=evictions,
        wall_time_s=elapsed,
    )


def miss_rate_reduction(policy_result: SimResult, fifo_result: SimResult) -> float:
    """(miss_rate_fifo - miss_rate_policy) / miss_rate_fifo; 0 when FIFO never misses."""
    if policy_result.requests != fifo_result.requests:
        raise ValueError("results are not from the same trace")
    if fifo_result.requests == 0:
        return 0.0
    fifo_rate = fifo_result.misses / fifo_result.requests
    policy_rate = policy_result.misses / policy_result.requests
    if fifo_rate == 0:
        return 0.0
    return (fifo_rate - policy_rate) / fifo_rate
