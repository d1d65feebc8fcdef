"""Queue-topology caches: up to five FIFO/LRU queues plus a ghost FIFO.

A topology fixes the queue structure (types, capacity fractions, ghost size,
per-request transition budget) and supplies two interpreted routing programs:
an initial-placement function run on every miss, and one transition function
per queue run on each object displaced from that queue's tail.  Transition
results route to a resident queue (including back to the same queue's head),
to the ghost (``-1``: evict but remember metadata), or to the trash (``-2``:
evict and forget).  Any other value coerces to the ghost.

Object feature counters persist across queue moves and across ghost
residence; per-queue counters reset whenever an object (re)enters a queue.
Queue-topology replays are size-agnostic: every object occupies one slot.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from . import dsl
from .engine import SIZE_AGNOSTIC, CacheConfig, EventLog

QUEUE_FIFO = "fifo"
QUEUE_LRU = "lru"

GHOST = -1
TRASH = -2

MAX_QUEUES = 5


@dataclass(frozen=True)
class Topology:
    queue_types: tuple[str, ...]
    queue_fractions: tuple[float, ...]
    ghost_fraction: float
    max_transitions_allowed: int
    init_program: dsl.ScoreProgram
    transition_programs: tuple[dsl.ScoreProgram, ...]

    def __post_init__(self):
        m = len(self.queue_types)
        if not 1 <= m <= MAX_QUEUES:
            raise ValueError(f"need 1..{MAX_QUEUES} queues, got {m}")
        if len(self.queue_fractions) != m or len(self.transition_programs) != m:
            raise ValueError("queue_types, queue_fractions, and transition_programs "
                             "must have equal lengths")
        for t in self.queue_types:
            if t not in (QUEUE_FIFO, QUEUE_LRU):
                raise ValueError(f"queue type must be fifo or lru, got {t!r}")
        for f in self.queue_fractions:
            if not 0 < f <= 1:
                raise ValueError(f"queue fractions must be in (0, 1], got {f}")
        if abs(sum(self.queue_fractions) - 1.0) > 1e-9:
            raise ValueError(f"queue fractions must sum to 1, got {sum(self.queue_fractions)}")
        if not 0 <= self.ghost_fraction <= 1:
            raise ValueError("ghost fraction must be in [0, 1]")
        if self.max_transitions_allowed < 0:
            raise ValueError("max_transitions_allowed must be >= 0")
        if self.init_program.kind != dsl.QT_INIT:
            raise ValueError("init_program must have kind qt_init")
        for p in self.transition_programs:
            if p.kind != dsl.QT_TRANSITION:
                raise ValueError("transition programs must have kind qt_transition")

    @property
    def num_queues(self) -> int:
        return len(self.queue_types)

    def with_programs(self, init_source: str, transition_sources) -> "Topology":
        return Topology(
            self.queue_types, self.queue_fractions, self.ghost_fraction,
            self.max_transitions_allowed,
            dsl.parse(init_source, dsl.QT_INIT),
            tuple(dsl.parse(s, dsl.QT_TRANSITION) for s in transition_sources),
        )

    def program_sources(self) -> tuple[str, tuple[str, ...]]:
        return self.init_program.source, tuple(p.source for p in self.transition_programs)

    def to_json(self) -> dict:
        return {
            "num_queues": self.num_queues,
            "queue_types": list(self.queue_types),
            "queue_fractions": list(self.queue_fractions),
            "ghost_fraction": self.ghost_fraction,
            "max_transitions_allowed": self.max_transitions_allowed,
            "init_program": self.init_program.source,
            "transition_programs": [p.source for p in self.transition_programs],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Topology":
        types = tuple(str(t).lower() for t in doc["queue_types"])
        if "num_queues" in doc and int(doc["num_queues"]) != len(types):
            raise ValueError("num_queues does not match queue_types")
        return cls(
            queue_types=types,
            queue_fractions=tuple(float(f) for f in doc["queue_fractions"]),
            ghost_fraction=float(doc.get("ghost_fraction", 0.0)),
            max_transitions_allowed=int(doc.get("max_transitions_allowed", 0)),
            init_program=dsl.parse(doc["init_program"], dsl.QT_INIT),
            transition_programs=tuple(
                dsl.parse(s, dsl.QT_TRANSITION) for s in doc["transition_programs"]),
        )

    @classmethod
    def load(cls, path: str) -> "Topology":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def make_replayer(self, config: CacheConfig, events: Optional[EventLog] = None):
        return QueueTopologyCache(self, config, events=events)


def queue_slot_capacities(fractions, total_slots: int) -> list[int]:
    """Per-queue slot capacities: max(1, floor(fraction * L)), with a small
    epsilon so exact products are not lost to float error."""
    return [max(1, math.floor(f * total_slots + 1e-9)) for f in fractions]


class QtObjInfo:
    __slots__ = ("cache_access_count", "queue_access_count", "cache_insertion_vtime",
                 "queue_insertion_vtime", "last_access_vtime", "current_queue")

    def __init__(self, vtime: int, queue: int):
        self.cache_access_count = 0
        self.queue_access_count = 0
        self.cache_insertion_vtime = vtime
        self.queue_insertion_vtime = vtime
        self.last_access_vtime = vtime
        self.current_queue = queue


class QueueTopologyCache:
    """Replay state machine for one topology on one size-agnostic cache."""

    def __init__(self, topology: Topology, config: CacheConfig,
                 events: Optional[EventLog] = None):
        if config.mode != SIZE_AGNOSTIC:
            raise ValueError("queue-topology caches are size-agnostic; "
                             "use mode=size_agnostic")
        m = topology.num_queues
        caps = queue_slot_capacities(topology.queue_fractions, config.capacity)
        if sum(caps) > config.capacity:
            raise ValueError(
                f"queue slot capacities {caps} exceed total capacity {config.capacity}")
        self.topology = topology
        self.capacity = config.capacity
        self.caps = caps
        self.ghost_cap = math.floor(topology.ghost_fraction * config.capacity + 1e-9)
        self.queues: list[OrderedDict] = [OrderedDict() for _ in range(m)]
        self.info: dict[str, QtObjInfo] = {}
        self.ghost: OrderedDict[str, QtObjInfo] = OrderedDict()
        self.evictions = 0
        self.transition_evals = 0
        self._events = events
        self._is_lru = [t == QUEUE_LRU for t in topology.queue_types]
        self._init_run = topology.init_program._run
        self._trans_runs = [p._run for p in topology.transition_programs]
        self._init_ctx = {
            "in_ghost": 0.0,
            "obj_size": 0.0,
            "is_full": self._is_full,
        }
        self._trans_ctx = {
            "vtime": 0.0,
            "obj.cache_access_count": 0.0,
            "obj.queue_access_count": 0.0,
            "obj.cache_insertion_vtime": 0.0,
            "obj.queue_insertion_vtime": 0.0,
            "obj.last_access_vtime": 0.0,
            "obj.current_queue": 0.0,
        }

    @property
    def resident_count(self) -> int:
        return len(self.info)

    def _is_full(self, index: float) -> float:
        i = min(max(int(round(index)), 0), len(self.queues) - 1)
        return 1.0 if len(self.queues[i]) >= self.caps[i] else 0.0

    def access(self, vtime: int, object_id: str, size: int) -> bool:
        info = self.info.get(object_id)
        if info is not None:
            info.cache_access_count += 1
            info.queue_access_count += 1
            info.last_access_vtime = vtime
            if self._is_lru[info.current_queue]:
                self.queues[info.current_queue].move_to_end(object_id)
            return True
        self._insert(vtime, object_id, size)
        return False

    # -- miss path -------------------------------------------------------------
    def _insert(self, vtime: int, object_id: str, size: int) -> None:
        in_ghost = object_id in self.ghost
        ctx = self._init_ctx
        ctx["in_ghost"] = 1.0 if in_ghost else 0.0
        ctx["obj_size"] = float(size)
        raw = self._init_run(ctx, None)
        queue = min(max(int(round(raw)), 0), len(self.queues) - 1)
        if in_ghost:
            info = self.ghost.pop(object_id)  # counters persist across ghost residence
        else:
            info = QtObjInfo(vtime, queue)
            info.cache_insertion_vtime = vtime
        info.queue_access_count = 0
        info.queue_insertion_vtime = vtime
        info.last_access_vtime = vtime
        info.current_queue = queue
        self.info[object_id] = info
        self.queues[queue][object_id] = None
        self._cascade(vtime, queue)

    def _cascade(self, vtime: int, queue: int) -> None:
        """Process displaced tails until every queue fits its slot capacity.

        Transition results landing in a resident queue consume the per-request
        budget; once it is exhausted, every further displaced tail goes to the
        ghost.  Each step either consumes budget or removes an object, so the
        cascade terminates within (residents + budget) transition evaluations.
        """
        budget = self.topology.max_transitions_allowed
        while len(self.queues[queue]) > self.caps[queue]:
            tail_id = next(iter(self.queues[queue]))
            del self.queues[queue][tail_id]
            info = self.info[tail_id]
            dest = self._transition(queue, info, vtime) if budget > 0 else GHOST
            if 0 <= dest < len(self.queues):
                budget -= 1
                info.queue_access_count = 0
                info.queue_insertion_vtime = vtime
                info.current_queue = dest
                self.queues[dest][tail_id] = None
                queue = dest
                continue
            del self.info[tail_id]
            self.evictions += 1
            if self._events is not None:
                self._events.evictions.append(tail_id)
            if dest == GHOST:
                self._ghost_push(tail_id, info)
            # TRASH drops the metadata entirely

    def _transition(self, queue: int, info: QtObjInfo, vtime: int) -> int:
        ctx = self._trans_ctx
        ctx["vtime"] = float(vtime)
        ctx["obj.cache_access_count"] = float(info.cache_access_count)
        ctx["obj.queue_access_count"] = float(info.queue_access_count)
        ctx["obj.cache_insertion_vtime"] = float(info.cache_insertion_vtime)
        ctx["obj.queue_insertion_vtime"] = float(info.queue_insertion_vtime)
        ctx["obj.last_access_vtime"] = float(info.last_access_vtime)
        ctx["obj.current_queue"] = float(info.current_queue)
        self.transition_evals += 1
        dest = int(round(self._trans_runs[queue](ctx, None)))
        if 0 <= dest < len(self.queues) or dest == TRASH:
            return dest
        return GHOST

    def _ghost_push(self, object_id: str, info: QtObjInfo) -> None:
        if self.ghost_cap == 0:
            return
        self.ghost[object_id] = info
        while len(self.ghost) > self.ghost_cap:
            self.ghost.popitem(last=False)
