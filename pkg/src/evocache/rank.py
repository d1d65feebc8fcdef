"""Rank-style eviction policies: a scoring function plus a selection mechanism.

A policy scores resident objects and evicts ascending by score (lowest first;
higher scores are more likely to stay in cache).  Three mechanisms exist:

* ``pq``          -- a maintained indexed priority queue; entries are rescored
                     and repositioned on every access, victims pop off the top.
* ``fullsort``    -- score every resident at decision time, sort, take a prefix.
* ``samplesort:S``-- score a uniform random sample of min(S, N) residents at
                     decision time and take the lowest among them.

Ties break by cache-insertion sequence (FIFO among equals).  The scoring
function is either a builtin or a sandboxed DSL program (kind ``rank_score``);
its feature surface is the per-object metadata, resident percentiles, the
eviction history, and the policy-global aging value ``L_aging`` (updated to
the score of the most recently evicted object, as in greedy-dual policies).
"""

from __future__ import annotations

import random

from . import dsl
from .engine import CacheState

MECH_PQ = "pq"
MECH_FULLSORT = "fullsort"
MECH_SAMPLESORT = "samplesort"
MECHANISMS = (MECH_PQ, MECH_FULLSORT, MECH_SAMPLESORT)

# Builtins expressible as scoring programs.
BUILTIN_SCORES = {
    "fifo": "obj.addition_vtime",
    "lru": "obj.last_access_vtime",
    "mru": "-obj.last_access_vtime",
    "lfu": "obj.count",
    "gdsf": "obj.count / obj.size + L_aging",
}


class IndexedPriorityQueue:
    """Binary min-heap keyed by (priority, sequence) with an id->slot index.

    Pop order is ascending priority, ties broken by lower sequence number
    (the older insertion wins eviction).  Every resident object appears
    exactly once; reposition is remove+sift in place.
    """

    __slots__ = ("_heap", "_pos")

    def __init__(self):
        self._heap: list[list] = []  # [priority, seq, object_id]
        self._pos: dict[str, int] = {}

    def __len__(self):
        return len(self._heap)

    def __contains__(self, object_id):
        return object_id in self._pos

    def push(self, object_id: str, priority: float, seq: int) -> None:
        entry = [priority, seq, object_id]
        self._heap.append(entry)
        self._pos[object_id] = len(self._heap) - 1
        self._sift_up(len(self._heap) - 1)

    def pop(self) -> tuple[str, float]:
        top = self._heap[0]
        last = self._heap.pop()
        if self._heap:
            self._heap[0] = last
            self._pos[last[2]] = 0
            self._sift_down(0)
        del self._pos[top[2]]
        return top[2], top[0]

    def update(self, object_id: str, priority: float, seq: int) -> None:
        i = self._pos[object_id]
        self._heap[i][0] = priority
        self._heap[i][1] = seq
        self._sift_up(i)
        self._sift_down(self._pos[object_id])

    def discard(self, object_id: str) -> None:
        i = self._pos.pop(object_id, None)
        if i is None:
            return
        last = self._heap.pop()
        if i < len(self._heap):
            self._heap[i] = last
            self._pos[last[2]] = i
            self._sift_up(i)
            self._sift_down(self._pos[last[2]])

    def _key(self, i):
        e = self._heap[i]
        return (e[0], e[1])

    def _sift_up(self, i):
        heap, pos = self._heap, self._pos
        entry = heap[i]
        key = (entry[0], entry[1])
        while i > 0:
            parent = (i - 1) >> 1
            pe = heap[parent]
            if (pe[0], pe[1]) <= key:
                break
            heap[i] = pe
            pos[pe[2]] = i
            i = parent
        heap[i] = entry
        pos[entry[2]] = i

    def _sift_down(self, i):
        heap, pos = self._heap, self._pos
        n = len(heap)
        entry = heap[i]
        key = (entry[0], entry[1])
        while True:
            child = 2 * i + 1
            if child >= n:
                break
            right = child + 1
            if right < n and (heap[right][0], heap[right][1]) < (heap[child][0], heap[child][1]):
                child = right
            ce = heap[child]
            if key <= (ce[0], ce[1]):
                break
            heap[i] = ce
            pos[ce[2]] = i
            i = child
        heap[i] = entry
        pos[entry[2]] = i


class RankPolicy:
    """A validated scoring program bound to one of the three mechanisms."""

    def __init__(self, score, mechanism: str = MECH_PQ, sample_size: int | None = None,
                 seed: int = 0, name: str | None = None):
        if isinstance(score, str):
            score = dsl.parse(score, dsl.RANK_SCORE)
        if score.kind != dsl.RANK_SCORE:
            raise ValueError(f"rank policies need a {dsl.RANK_SCORE} program, got {score.kind}")
        if mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {mechanism!r}")
        if mechanism == MECH_SAMPLESORT:
            if sample_size is None or sample_size < 1:
                raise ValueError("samplesort needs sample_size >= 1")
        self.program = score
        self.mechanism = mechanism
        self.sample_size = sample_size
        self.seed = seed
        self.name = name or f"dsl:{score.source}"
        self._state: CacheState | None = None

    # -- engine protocol ------------------------------------------------------
    def bind(self, state: CacheState) -> None:
        self._state = state
        self.aging = 0.0
        self._seq = {}
        self._next_seq = 0
        self._pq = IndexedPriorityQueue() if self.mechanism == MECH_PQ else None
        self._rng = random.Random(self.seed)
        self._record = None
        ctx = {
            "vtime": 0.0,
            "obj.count": 0.0,
            "obj.last_access_vtime": 0.0,
            "obj.addition_vtime": 0.0,
            "obj.size": 0.0,
            "L_aging": 0.0,
            "percentile": state.percentile,
            "ghost_contains": lambda: 0.0 if self._record is None else 1.0,
            "ghost_count": lambda: 0.0 if self._record is None else float(self._record.count_at_eviction),
            "ghost_age": lambda: 0.0 if self._record is None else float(self._record.age_at_eviction_time),
        }
        self._ctx = ctx
        self._run = self.program._run

    def score(self, object_id: str) -> float:
        state = self._state
        m = state.meta(object_id)
        ctx = self._ctx
        ctx["vtime"] = float(state.vtime)
        ctx["obj.count"] = float(m.count)
        ctx["obj.last_access_vtime"] = float(m.last_access_vtime)
        ctx["obj.addition_vtime"] = float(m.addition_to_cache_vtime)
        ctx["obj.size"] = float(m.size)
        ctx["L_aging"] = self.aging
        self._record = state.history_lookup(object_id)
        return self._run(ctx, None)

    def on_insert(self, object_id: str) -> None:
        seq = self._next_seq
        self._next_seq += 1
        self._seq[object_id] = seq
        if self._pq is not None:
            self._pq.push(object_id, self.score(object_id), seq)

    def on_access(self, object_id: str) -> None:
        if self._pq is not None:
            self._pq.update(object_id, self.score(object_id), self._seq[object_id])

    def discard(self, object_id: str) -> None:
        self._seq.pop(object_id, None)
        if self._pq is not None:
            self._pq.discard(object_id)

    def select_victims(self, space_needed: int, pinned: frozenset) -> list[str]:
        state = self._state
        if self.mechanism == MECH_PQ:
            return self._select_pq(state, space_needed, pinned)
        if self.mechanism == MECH_FULLSORT:
            ranked = sorted(
                (self.score(oid), self._seq[oid], oid)
                for oid in state.residents() if oid not in pinned
            )
        else:
            population = [oid for oid in state.residents() if oid not in pinned]
            sample = self._rng.sample(population, min(self.sample_size, len(population)))
            ranked = sorted((self.score(oid), self._seq[oid], oid) for oid in sample)
        victims = []
        freed = 0
        for score, _seq, oid in ranked:
            victims.append(oid)
            self._seq.pop(oid, None)
            self.aging = score
            freed += state.effective_size(state.meta(oid).size)
            if freed >= space_needed:
                break
        return victims

    def _select_pq(self, state, space_needed, pinned):
        victims = []
        stashed = []
        freed = 0
        pq = self._pq
        while freed < space_needed and len(pq):
            oid, priority = pq.pop()
            if oid in pinned:
                stashed.append((oid, priority))
                continue
            victims.append(oid)
            del self._seq[oid]
            self.aging = priority
            freed += state.effective_size(state.meta(oid).size)
        for oid, priority in stashed:
            pq.push(oid, priority, self._seq[oid])
        return victims


def builtin(name: str, mechanism: str | None = None, sample_size: int | None = None,
            seed: int = 0):
    """Construct a baseline policy by name.

    fifo/lru/mru/lfu/gdsf are scoring programs (default mechanism: pq);
    fifo_reinsertion, sieve, s3fifo, and twoq are native implementations.
    """
    if name in BUILTIN_SCORES:
        return RankPolicy(BUILTIN_SCORES[name], mechanism or MECH_PQ,
                          sample_size=sample_size, seed=seed, name=f"builtin:{name}")
    from . import baselines
    native = {
        "fifo_reinsertion": baselines.FifoReinsertion,
        "sieve": baselines.Sieve,
        "s3fifo": baselines.S3Fifo,
        "twoq": baselines.TwoQ,
    }
    if name not in native:
        known = sorted(list(BUILTIN_SCORES) + list(native))
        raise ValueError(f"unknown builtin policy {name!r}; known: {', '.join(known)}")
    if mechanism is not None:
        raise ValueError(f"builtin {name!r} is a native policy; mechanisms do not apply")
    return native[name]()


BUILTIN_NAMES = tuple(sorted(list(BUILTIN_SCORES) +
                             ["fifo_reinsertion", "sieve", "s3fifo", "twoq"]))
