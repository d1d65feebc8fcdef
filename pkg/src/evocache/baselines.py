"""Native multi-queue baseline policies.

These implement the engine's rank-policy protocol but keep their own queue
structures instead of scoring objects.  They serve both as baselines and as
oracles for queue-topology equivalence checks, so their state machines are
spelled out precisely:

FifoReinsertion (CLOCK / second chance)
    One FIFO with a per-object reference bit, set on hit.  Eviction examines
    the oldest object: a set bit is cleared and the object reinserted at the
    head; an unset bit is evicted.

Sieve
    One list, newest at head, plus a persistent hand that survives evictions.
    Hits set a visited bit without moving the object.  Eviction walks the
    hand from its position (or the tail) toward the head, clearing visited
    bits, and evicts the first unvisited object; the hand stays at the slot
    just head-ward of the victim.

S3Fifo
    A small probationary FIFO (10% of capacity), a main FIFO (90%), and a
    ghost FIFO of recently demoted ids (bounded at 90% of capacity).  New
    objects enter small, unless their id is in the ghost, in which case they
    enter main.  Hits increment a frequency counter.  When space is needed:
    if main is at or over its target (or small is empty), the main tail is
    examined -- reinserted at the head with frequency reset if it was
    accessed since (re)entering main, evicted outright otherwise; else the
    small tail is promoted to main if accessed, or demoted to the ghost.

TwoQ
    A probationary FIFO ``a1in`` (25% of capacity), a ghost FIFO ``a1out``
    of ids (50% of capacity), and a main LRU ``am``.  Misses whose id is in
    ``a1out`` insert into ``am``; other misses enter ``a1in``.  Hits in
    ``am`` refresh recency; hits in ``a1in`` do not move the object.
    Eviction takes the ``a1in`` tail (into ``a1out``) while ``a1in`` is over
    its target, else the ``am`` LRU object.
"""

from __future__ import annotations

from collections import OrderedDict, deque

from .engine import CacheState


class _NativePolicy:
    def bind(self, state: CacheState) -> None:
        self._state = state
        self._reset()

    def _reset(self) -> None:
        raise NotImplementedError

    def _effective(self, object_id: str) -> int:
        return self._state.effective_size(self._state.meta(object_id).size)


class FifoReinsertion(_NativePolicy):
    name = "builtin:fifo_reinsertion"

    def _reset(self):
        self._queue: deque[str] = deque()
        self._referenced: set[str] = set()

    def on_insert(self, object_id):
        self._queue.append(object_id)
        self._referenced.discard(object_id)

    def on_access(self, object_id):
        self._referenced.add(object_id)

    def discard(self, object_id):
        try:
            self._queue.remove(object_id)
        except ValueError:
            pass
        self._referenced.discard(object_id)

    def select_victims(self, space_needed, pinned):
        victims, freed = [], 0
        while freed < space_needed and self._queue:
            oid = self._queue.popleft()
            if oid in pinned:
                self._queue.append(oid)
                if all(o in pinned for o in self._queue):
                    break
                continue
            if oid in self._referenced:
                self._referenced.discard(oid)
                self._queue.append(oid)
                continue
            victims.append(oid)
            freed += self._effective(oid)
        return victims


class _DllNode:
    __slots__ = ("object_id", "newer", "older", "visited")

    def __init__(self, object_id):
        self.object_id = object_id
        self.newer = None
        self.older = None
        self.visited = False


class Sieve(_NativePolicy):
    name = "builtin:sieve"

    def _reset(self):
        self._nodes: dict[str, _DllNode] = {}
        self._head = None  # newest
        self._tail = None  # oldest
        self._hand: _DllNode | None = None

    def on_insert(self, object_id):
        node = _DllNode(object_id)
        node.older = self._head
        if self._head is not None:
            self._head.newer = node
        self._head = node
        if self._tail is None:
            self._tail = node
        self._nodes[object_id] = node

    def on_access(self, object_id):
        self._nodes[object_id].visited = True

    def _unlink(self, node):
        if node.newer is not None:
            node.newer.older = node.older
        else:
            self._head = node.older
        if node.older is not None:
            node.older.newer = node.newer
        else:
            self._tail = node.newer
        if self._hand is node:
            self._hand = node.newer
        del self._nodes[node.object_id]

    def discard(self, object_id):
        node = self._nodes.get(object_id)
        if node is not None:
            self._unlink(node)

    def select_victims(self, space_needed, pinned):
        victims, freed = [], 0
        while freed < space_needed and self._nodes:
            node = self._hand if self._hand is not None else self._tail
            victim = None
            for _ in range(2 * len(self._nodes) + 2):  # at most two full sweeps
                if node is None:  # wrapped past the head; restart from the tail
                    node = self._tail
                    continue
                if node.object_id in pinned:
                    node = node.newer
                    continue
                if node.visited:
                    node.visited = False
                    node = node.newer
                    continue
                victim = node
                break
            if victim is None:
                break  # only pinned objects remain
            self._hand = victim.newer
            self._unlink(victim)
            victims.append(victim.object_id)
            freed += self._effective(victim.object_id)
        return victims


class S3Fifo(_NativePolicy):
    name = "builtin:s3fifo"

    def _reset(self):
        capacity = self._state.config.capacity
        self._small_target = max(1, capacity // 10)
        self._main_target = capacity - self._small_target
        self._ghost_cap = max(1, (9 * capacity) // 10)
        self._small: deque[str] = deque()
        self._main: deque[str] = deque()
        self._small_bytes = 0
        self._main_bytes = 0
        self._ghost: OrderedDict[str, int] = OrderedDict()  # id -> effective size
        self._ghost_bytes = 0
        self._freq: dict[str, int] = {}

    def _ghost_push(self, object_id, size):
        if object_id in self._ghost:
            self._ghost_bytes -= self._ghost.pop(object_id)
        self._ghost[object_id] = size
        self._ghost_bytes += size
        while self._ghost_bytes > self._ghost_cap and self._ghost:
            _, dropped = self._ghost.popitem(last=False)
            self._ghost_bytes -= dropped

    def on_insert(self, object_id):
        size = self._effective(object_id)
        self._freq[object_id] = 0
        if object_id in self._ghost:
            self._ghost_bytes -= self._ghost.pop(object_id)
            self._main.append(object_id)
            self._main_bytes += size
        else:
            self._small.append(object_id)
            self._small_bytes += size

    def on_access(self, object_id):
        self._freq[object_id] += 1

    def discard(self, object_id):
        size = self._effective(object_id)
        if object_id in self._small:
            self._small.remove(object_id)
            self._small_bytes -= size
        elif object_id in self._main:
            self._main.remove(object_id)
            self._main_bytes -= size
        self._freq.pop(object_id, None)

    def select_victims(self, space_needed, pinned):
        victims, freed = [], 0
        while freed < space_needed and (self._small or self._main):
            if self._small and (self._small_bytes >= self._small_target or not self._main):
                outcome = self._handle_small_tail(pinned)
            else:
                outcome = self._evict_main(pinned)
                if outcome is None and self._small:
                    outcome = self._handle_small_tail(pinned)
            if outcome == "promoted":
                continue  # re-arbitrate; the promotion may overfill main
            if outcome is None:
                break
            victims.append(outcome[0])
            freed += outcome[1]
        return victims

    def _evict_main(self, pinned):
        scanned = 0
        while self._main and scanned <= len(self._main):
            oid = self._main.popleft()
            size = self._effective(oid)
            if oid in pinned or self._freq[oid] >= 1:
                if oid not in pinned:
                    self._freq[oid] = 0
                self._main.append(oid)
                scanned += 1
                continue
            self._main_bytes -= size
            del self._freq[oid]
            return oid, size
        return None

    def _handle_small_tail(self, pinned):
        """Examine exactly one small tail: promote it or demote it to the ghost."""
        for _ in range(len(self._small)):
            oid = self._small.popleft()
            if oid in pinned:
                self._small.append(oid)
                continue
            size = self._effective(oid)
            self._small_bytes -= size
            if self._freq[oid] >= 1:
                self._freq[oid] = 0
                self._main.append(oid)
                self._main_bytes += size
                return "promoted"
            del self._freq[oid]
            self._ghost_push(oid, size)
            return oid, size
        return None


class TwoQ(_NativePolicy):
    name = "builtin:twoq"

    def _reset(self):
        capacity = self._state.config.capacity
        self._kin = max(1, capacity // 4)
        self._kout = max(1, capacity // 2)
        self._a1in: deque[str] = deque()
        self._a1in_bytes = 0
        self._a1out: OrderedDict[str, int] = OrderedDict()
        self._a1out_bytes = 0
        self._am: OrderedDict[str, None] = OrderedDict()

    def on_insert(self, object_id):
        if object_id in self._a1out:
            self._a1out_bytes -= self._a1out.pop(object_id)
            self._am[object_id] = None
        else:
            self._a1in.append(object_id)
            self._a1in_bytes += self._effective(object_id)

    def on_access(self, object_id):
        if object_id in self._am:
            self._am.move_to_end(object_id)
        # hits in a1in leave the object where it is

    def discard(self, object_id):
        if object_id in self._am:
            del self._am[object_id]
        else:
            try:
                self._a1in.remove(object_id)
                self._a1in_bytes -= self._effective(object_id)
            except ValueError:
                pass

    def _a1out_push(self, object_id, size):
        self._a1out[object_id] = size
        self._a1out_bytes += size
        while self._a1out_bytes > self._kout and self._a1out:
            _, dropped = self._a1out.popitem(last=False)
            self._a1out_bytes -= dropped

    def _pop_a1in(self, pinned):
        for _ in range(len(self._a1in)):
            cand = self._a1in.popleft()
            if cand in pinned:
                self._a1in.append(cand)
                continue
            size = self._effective(cand)
            self._a1in_bytes -= size
            self._a1out_push(cand, size)
            return cand
        return None

    def _pop_am(self, pinned):
        for cand in self._am:
            if cand not in pinned:
                del self._am[cand]
                return cand
        return None

    def select_victims(self, space_needed, pinned):
        victims, freed = [], 0
        while freed < space_needed and (self._a1in or self._am):
            if self._a1in and (self._a1in_bytes > self._kin or not self._am):
                oid = self._pop_a1in(pinned)
                if oid is None:
                    oid = self._pop_am(pinned)
            else:
                oid = self._pop_am(pinned)
                if oid is None:
                    oid = self._pop_a1in(pinned)
            if oid is None:
                break
            victims.append(oid)
            freed += self._effective(oid)
        return victims
