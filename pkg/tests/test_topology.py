import json

import pytest

from evocache import dsl
from evocache.engine import (SIZE_AGNOSTIC, SIZE_AWARE, CacheConfig, EventLog,
                             run_simulation)
from evocache.rank import builtin
from evocache.topology import (GHOST, TRASH, QueueTopologyCache, Topology,
                               queue_slot_capacities)
from evocache.trace import Request
from evocache.workloads import bundled_trace, s3fifo_topology, staged_fifo_topology


def make_topology(types, fractions, ghost=0.5, budget=4, init="0", transitions=None):
    transitions = transitions or ["-1"] * len(types)
    return Topology(
        queue_types=tuple(types),
        queue_fractions=tuple(fractions),
        ghost_fraction=ghost,
        max_transitions_allowed=budget,
        init_program=dsl.parse(init, dsl.QT_INIT),
        transition_programs=tuple(dsl.parse(t, dsl.QT_TRANSITION) for t in transitions),
    )


def replay_ids(ids, topology, capacity):
    trace = [Request(i, oid, 1) for i, oid in enumerate(ids)]
    events = EventLog()
    res = run_simulation(trace, topology, CacheConfig(capacity, SIZE_AGNOSTIC),
                         events=events)
    return res, events


# --- structure validation -----------------------------------------------------

def test_validation_rejects_bad_structures():
    with pytest.raises(ValueError):
        make_topology([], [])
    with pytest.raises(ValueError):
        make_topology(["fifo"] * 6, [1 / 6] * 6)
    with pytest.raises(ValueError):
        make_topology(["fifo", "lru"], [0.5, 0.4])  # doesn't sum to 1
    with pytest.raises(ValueError):
        make_topology(["stack"], [1.0])
    with pytest.raises(ValueError):
        make_topology(["fifo"], [1.0], ghost=1.5)
    with pytest.raises(ValueError):
        make_topology(["fifo"], [1.0], budget=-1)
    with pytest.raises(ValueError):
        make_topology(["fifo", "fifo"], [0.5, 0.5], transitions=["-1"])


def test_program_kinds_enforced():
    rank_prog = dsl.parse("vtime", dsl.RANK_SCORE)
    with pytest.raises(ValueError):
        Topology(("fifo",), (1.0,), 0.0, 0, rank_prog,
                 (dsl.parse("-1", dsl.QT_TRANSITION),))


def test_queue_slot_capacities():
    assert queue_slot_capacities((0.05, 0.15, 0.80), 20) == [1, 3, 16]
    assert queue_slot_capacities((0.05, 0.15, 0.80), 100) == [5, 15, 80]
    assert queue_slot_capacities((0.1, 0.9), 30) == [3, 27]  # no float-floor loss
    assert queue_slot_capacities((1.0,), 7) == [7]
    assert queue_slot_capacities((0.5, 0.5), 3) == [1, 1]


def test_construction_rejects_overcommitted_slots():
    topo = make_topology(["fifo", "fifo", "fifo"], [0.1, 0.1, 0.8])
    with pytest.raises(ValueError):
        QueueTopologyCache(topo, CacheConfig(3, SIZE_AGNOSTIC))


def test_topology_requires_slot_mode():
    topo = make_topology(["fifo"], [1.0])
    with pytest.raises(ValueError):
        QueueTopologyCache(topo, CacheConfig(10, SIZE_AWARE))


def test_json_round_trip(tmp_path):
    topo = staged_fifo_topology()
    doc = topo.to_json()
    again = Topology.from_json(json.loads(json.dumps(doc)))
    assert again.to_json() == doc
    path = tmp_path / "topo.json"
    topo.save(str(path))
    assert Topology.load(str(path)).to_json() == doc


# --- routing program fixtures ---------------------------------------------------

def staged_init_value(in_ghost, is_full):
    topo = staged_fifo_topology()
    ctx = {"in_ghost": float(in_ghost), "obj_size": 100.0,
           "is_full": lambda i: float(is_full[int(round(i))])}
    return topo.init_program.evaluate(ctx)


def test_staged_init_resurrects_to_midstage():
    assert staged_init_value(1, [0, 0, 0]) == 1.0


def test_staged_init_spills_when_probation_full():
    assert staged_init_value(0, [1, 0, 0]) == 1.0
    assert staged_init_value(0, [1, 1, 0]) == 2.0
    assert staged_init_value(0, [0, 0, 0]) == 0.0


def test_constant_init_always_queue_zero():
    topo = make_topology(["fifo", "fifo"], [0.5, 0.5], init="0")
    cache = QueueTopologyCache(topo, CacheConfig(10, SIZE_AGNOSTIC))
    for i in range(4):
        cache.access(i, f"o{i}", 1)
    assert all(info.current_queue == 0 for info in cache.info.values())


def transition_value(topo, queue, vtime=0, **info_fields):
    from evocache.topology import QtObjInfo
    cache = QueueTopologyCache(topo, CacheConfig(100, SIZE_AGNOSTIC))
    info = QtObjInfo(0, queue)
    for name, value in info_fields.items():
        setattr(info, name, value)
    return cache._transition(queue, info, vtime)


def test_staged_transitions():
    topo = staged_fifo_topology()
    assert transition_value(topo, 0, queue_access_count=2) == 1
    assert transition_value(topo, 0, queue_access_count=1) == GHOST
    assert transition_value(topo, 1, queue_access_count=1) == 2
    # stale object in the main queue goes straight to the trash
    assert transition_value(topo, 2, vtime=200_001, queue_access_count=0,
                            queue_insertion_vtime=0) == TRASH
    assert transition_value(topo, 2, vtime=50, queue_access_count=0,
                            queue_insertion_vtime=0) == GHOST
    assert transition_value(topo, 2, queue_access_count=3) == 2


def test_constant_ghost_transition():
    topo = make_topology(["fifo"], [1.0], transitions=["-1"])
    assert transition_value(topo, 0) == GHOST


def test_out_of_range_transition_coerces_to_ghost():
    topo = make_topology(["fifo"], [1.0], transitions=["7"])
    assert transition_value(topo, 0) == GHOST
    topo = make_topology(["fifo"], [1.0], transitions=["-9"])
    assert transition_value(topo, 0) == GHOST


# --- degenerate topologies ------------------------------------------------------

def reference_fifo_hits(ids, capacity):
    from collections import deque
    q, resident, hits = deque(), set(), []
    for oid in ids:
        if oid in resident:
            hits.append(True)
            continue
        hits.append(False)
        if len(q) >= capacity:
            resident.discard(q.popleft())
        q.append(oid)
        resident.add(oid)
    return hits


def reference_lru_hits(ids, capacity):
    from collections import OrderedDict
    od, hits = OrderedDict(), []
    for oid in ids:
        if oid in od:
            od.move_to_end(oid)
            hits.append(True)
        else:
            hits.append(False)
            if len(od) >= capacity:
                od.popitem(last=False)
            od[oid] = None
    return hits


def test_single_fifo_queue_is_plain_fifo():
    ids = [str(x % 23 * x % 7) for x in range(500)]
    topo = make_topology(["fifo"], [1.0], ghost=0.5, transitions=["-1"])
    _, events = replay_ids(ids, topo, 8)
    assert events.hits == reference_fifo_hits(ids, 8)


def test_single_lru_queue_is_plain_lru():
    ids = [str(x % 23 * x % 7) for x in range(500)]
    topo = make_topology(["lru"], [1.0], ghost=0.5, transitions=["-1"])
    _, events = replay_ids(ids, topo, 8)
    assert events.hits == reference_lru_hits(ids, 8)


def test_zero_budget_means_no_moves():
    ids = [str(x % 37) for x in range(300)]
    # the transition program wants to keep everything, but the budget is 0
    topo = make_topology(["fifo"], [1.0], budget=0,
                         transitions=["obj.current_queue"])
    _, events = replay_ids(ids, topo, 6)
    assert events.hits == reference_fifo_hits(ids, 6)


# --- cascade behavior -------------------------------------------------------------

def test_cascade_budget_consumption_and_termination():
    # every displaced tail asks to stay resident; the budget caps the chain
    topo = make_topology(["fifo"], [1.0], budget=4,
                         transitions=["obj.current_queue"])
    cache = QueueTopologyCache(topo, CacheConfig(5, SIZE_AGNOSTIC))
    for i in range(5):
        cache.access(i, f"o{i}", 1)
    assert cache.transition_evals == 0
    before = cache.resident_count
    cache.access(5, "new", 1)
    # 4 reinsertions consumed the budget, the 5th displaced tail was ghosted
    assert cache.transition_evals == 4
    assert cache.evictions == 1
    assert cache.resident_count == before  # one in, one out


def test_cascade_eval_bound():
    topo = s3fifo_topology()
    cache = QueueTopologyCache(topo, CacheConfig(30, SIZE_AGNOSTIC))
    trace = bundled_trace("s2")[:2000]
    prev = 0
    for vt, req in enumerate(trace):
        cache.access(vt, req.object_id, req.size)
        evals = cache.transition_evals - prev
        prev = cache.transition_evals
        assert evals <= cache.resident_count + topo.max_transitions_allowed + 1


def test_capacity_conservation_every_request():
    topo = staged_fifo_topology()
    cache = QueueTopologyCache(topo, CacheConfig(20, SIZE_AGNOSTIC))
    trace = bundled_trace("s1")[:3000]
    for vt, req in enumerate(trace):
        cache.access(vt, req.object_id, req.size)
        for q, cap in zip(cache.queues, cache.caps):
            assert len(q) <= cap
        assert cache.resident_count <= 20
        assert len(cache.ghost) <= cache.ghost_cap


# --- resident access ---------------------------------------------------------------

def test_lru_queue_moves_to_head_fifo_does_not():
    topo = make_topology(["lru", "fifo"], [0.5, 0.5], budget=0)
    cache = QueueTopologyCache(topo, CacheConfig(8, SIZE_AGNOSTIC))
    for vt, oid in enumerate("abc"):
        cache.access(vt, oid, 1)
    assert list(cache.queues[0]) == ["a", "b", "c"]  # oldest first
    cache.access(3, "a", 1)
    assert list(cache.queues[0]) == ["b", "c", "a"]  # LRU: a moved to head

    topo2 = make_topology(["fifo"], [1.0], budget=0)
    cache2 = QueueTopologyCache(topo2, CacheConfig(4, SIZE_AGNOSTIC))
    for vt, oid in enumerate("abc"):
        cache2.access(vt, oid, 1)
    cache2.access(3, "a", 1)
    assert list(cache2.queues[0]) == ["a", "b", "c"]  # FIFO: unchanged


def test_hit_counters():
    topo = make_topology(["fifo"], [1.0], budget=0)
    cache = QueueTopologyCache(topo, CacheConfig(4, SIZE_AGNOSTIC))
    cache.access(0, "a", 1)
    for vt in range(1, 4):
        cache.access(vt, "a", 1)
    info = cache.info["a"]
    assert info.queue_access_count == 3
    assert info.cache_access_count == 3
    assert info.last_access_vtime == 3
    assert info.cache_insertion_vtime == 0


def test_counters_persist_across_ghost_residence():
    ids = ["x", "x", "f1", "x", "f2", "f3"]
    topo = make_topology(["fifo"], [1.0], ghost=1.0, budget=0,
                         init="if in_ghost then 0 else 0")
    cache = QueueTopologyCache(topo, CacheConfig(2, SIZE_AGNOSTIC))
    cache.access(0, "x", 1)
    cache.access(1, "x", 1)      # cache_access_count 1
    cache.access(2, "f1", 1)
    cache.access(3, "f2", 1)     # displaces x to the ghost
    assert "x" in cache.ghost
    assert cache.ghost["x"].cache_access_count == 1
    cache.access(4, "x", 1)      # resurrection keeps the counter
    assert cache.info["x"].cache_access_count == 1
    assert cache.info["x"].queue_access_count == 0
    assert cache.info["x"].cache_insertion_vtime == 0


def test_queue_counters_reset_on_moves():
    topo = make_topology(["fifo", "fifo"], [0.5, 0.5], budget=4,
                         transitions=["1", "-1"])
    cache = QueueTopologyCache(topo, CacheConfig(4, SIZE_AGNOSTIC))
    cache.access(0, "a", 1)
    cache.access(1, "a", 1)
    cache.access(2, "a", 1)
    assert cache.info["a"].queue_access_count == 2
    cache.access(3, "b", 1)
    cache.access(4, "c", 1)  # displaces a from q0 into q1
    assert cache.info["a"].current_queue == 1
    assert cache.info["a"].queue_access_count == 0
    assert cache.info["a"].cache_access_count == 2


# --- a 2Q-style topology, hand-simulated ---------------------------------------------

def test_twoq_style_topology_walkthrough():
    # probation FIFO (1 slot) + main LRU (3 slots), ghost 2, promote on
    # re-reference; 12 requests hand-walked
    topo = make_topology(
        ["fifo", "lru"], [0.25, 0.75], ghost=0.5, budget=4,
        init="if in_ghost then 1 else 0",
        transitions=["if obj.queue_access_count >= 1 then 1 else -1", "-1"])
    ids = list("abacbdaeadca")
    res, events = replay_ids(ids, topo, 4)
    assert events.hits == [False, False, False, False, False, False, True, False,
                           True, False, False, True]
    assert events.evictions == ["a", "b", "c", "d", "b"]
    assert res.hits == 3 and res.evictions == 5


# --- equivalence with the native s3fifo ----------------------------------------------

def test_s3fifo_topology_close_to_native():
    trace = bundled_trace("s2")
    config = CacheConfig(60, SIZE_AGNOSTIC)
    native = run_simulation(trace, builtin("s3fifo"), config)
    encoded = run_simulation(trace, s3fifo_topology(), config)
    assert abs(native.object_hit_rate - encoded.object_hit_rate) < 0.005


def test_topology_replay_deterministic():
    trace = bundled_trace("s3")[:5000]
    config = CacheConfig(50, SIZE_AGNOSTIC)
    r1 = run_simulation(trace, staged_fifo_topology(), config)
    r2 = run_simulation(trace, staged_fifo_topology(), config)
    assert r1.same_replay(r2)
