import math
import random
from collections import OrderedDict

import pytest

from evocache.engine import (SIZE_AGNOSTIC, SIZE_AWARE, CacheConfig, CacheState,
                             CandidateFailure, EventLog, EvictionRecord, Multiset,
                             SimResult, miss_rate_reduction, nearest_rank,
                             resolve_capacity, run_simulation)
from evocache.rank import RankPolicy, builtin
from evocache.trace import Request, generate_zipf_trace, summarize
from evocache.workloads import bundled_trace


def slot_config(capacity, history=4096):
    return CacheConfig(capacity, SIZE_AGNOSTIC, history)


def reference_lru_hits(trace, capacity):
    """Independent slot-mode LRU: dict-backed recency list."""
    od = OrderedDict()
    hits = []
    for req in trace:
        if req.object_id in od:
            od.move_to_end(req.object_id)
            hits.append(True)
        else:
            if len(od) >= capacity:
                od.popitem(last=False)
            od[req.object_id] = None
            hits.append(False)
    return hits


def test_hand_simulated_lru():
    trace = [Request(0, "a", 1), Request(1, "b", 1), Request(2, "a", 1)]
    res = run_simulation(trace, builtin("lru"), slot_config(2))
    assert (res.hits, res.misses) == (1, 2)
    assert res.object_hit_rate == pytest.approx(1 / 3)


def test_capacity_at_least_footprint_gives_cold_misses_only():
    trace = bundled_trace("s2")
    summary = summarize(trace)
    config = slot_config(summary.unique_objects)
    for name in ("lru", "lfu", "s3fifo", "sieve"):
        res = run_simulation(trace, builtin(name), config)
        assert res.misses == summary.unique_objects


def test_lru_matches_reference_on_bundled_trace():
    trace = bundled_trace("s1")
    for capacity in (10, 97, 500):
        events = EventLog()
        run_simulation(trace, builtin("lru"), slot_config(capacity), events=events)
        assert events.hits == reference_lru_hits(trace, capacity)


def test_lru_matches_reference_on_random_traces():
    rng = random.Random(5)
    for _ in range(10):
        trace = [Request(i, str(rng.randint(0, 30)), 1) for i in range(400)]
        capacity = rng.randint(1, 25)
        events = EventLog()
        run_simulation(trace, builtin("lru"), slot_config(capacity), events=events)
        assert events.hits == reference_lru_hits(trace, capacity)


def test_replays_are_deterministic():
    trace = bundled_trace("s3")
    config = CacheConfig(20_000, SIZE_AWARE)
    e1, e2 = EventLog(), EventLog()
    r1 = run_simulation(trace, builtin("gdsf"), config, events=e1)
    r2 = run_simulation(trace, builtin("gdsf"), config, events=e2)
    assert r1.same_replay(r2)
    assert e1.hits == e2.hits
    assert e1.evictions == e2.evictions


def test_oversized_object_bypasses():
    trace = [Request(0, "big", 100), Request(1, "big", 100), Request(2, "a", 1)]
    res = run_simulation(trace, builtin("lru"), CacheConfig(10, SIZE_AWARE))
    assert res.hits == 0 and res.misses == 3 and res.evictions == 0


def test_byte_hit_rate():
    trace = [Request(0, "a", 10), Request(1, "a", 10), Request(2, "b", 90)]
    res = run_simulation(trace, builtin("lru"), CacheConfig(1000, SIZE_AWARE))
    assert res.byte_hit_rate == pytest.approx(10 / 110)
    assert res.object_hit_rate == pytest.approx(1 / 3)


def test_size_update_in_place_and_growth_eviction():
    # b grows from 4 to 9 bytes; a (the only other object) must be evicted
    trace = [Request(0, "a", 4), Request(1, "b", 4), Request(2, "b", 9)]
    events = EventLog()
    res = run_simulation(trace, builtin("lru"), CacheConfig(10, SIZE_AWARE), events=events)
    assert events.evictions == ["a"]
    assert res.hits == 1
    state = events.final_state
    assert state.meta("b").size == 9 and state.used == 9


def test_growth_beyond_capacity_evicts_the_object():
    trace = [Request(0, "a", 4), Request(1, "a", 50)]
    events = EventLog()
    res = run_simulation(trace, builtin("lru"), CacheConfig(10, SIZE_AWARE), events=events)
    assert res.hits == 1  # the access itself is a hit, then the object leaves
    assert events.evictions == ["a"]
    assert events.final_state.resident_count == 0


def test_failing_policy_is_a_candidate_failure():
    class Exploding:
        def bind(self, state):
            pass

        def on_insert(self, oid):
            raise RuntimeError("boom")

        def on_access(self, oid):
            pass

        def discard(self, oid):
            pass

        def select_victims(self, needed, pinned):
            return []

    with pytest.raises(CandidateFailure):
        run_simulation([Request(0, "a", 1)], Exploding(), slot_config(4))


# --- aggregate statistics ----------------------------------------------------

def test_multiset_bas486():
    ms = Multiset()
    for x in (5, 1, 3, 3):
        ms.add(x)
    assert ms.values() == [1, 3, 3, 5]
    ms.remove(3)
    assert ms.values() == [1, 3, 5]
    with pytest.raises(KeyError):
        ms.remove(99)


def test_percentile_examples():
    state = CacheState(CacheConfig(10**9, SIZE_AWARE))
    for i, size in enumerate((50, 100, 150)):
        state.vtime = i
        state._insert(f"o{size}", size)
    assert state.percentile("sizes", 0.5) == 100.0
    assert state.percentile("sizes", 0.0) == 50.0
    assert state.percentile("sizes", 1.0) == 150.0


def test_percentile_empty_cache_is_zero():
    state = CacheState(CacheConfig(10, SIZE_AWARE))
    assert state.percentile("counts", 0.5) == 0.0
    assert state.percentile("ages", 0.9) == 0.0


def test_percentile_matches_sort_oracle():
    rng = random.Random(12)
    state = CacheState(CacheConfig(10**12, SIZE_AWARE))
    for i in range(1000):
        state.vtime = i
        state._insert(f"o{i}", rng.randint(1, 10**6))
        for _ in range(rng.randint(0, 5)):
            state._touch(f"o{i}", state.meta(f"o{i}").size)
    state.vtime = 5000
    counts = sorted(state.meta(f"o{i}").count for i in range(1000))
    sizes = sorted(state.meta(f"o{i}").size for i in range(1000))
    ages = sorted(5000 - state.meta(f"o{i}").addition_to_cache_vtime for i in range(1000))
    for k in range(21):
        p = k / 20
        r = nearest_rank(p, 1000)
        assert state.percentile("counts", p) == counts[r - 1]
        assert state.percentile("sizes", p) == sizes[r - 1]
        assert state.percentile("ages", p) == ages[r - 1]


def test_stats_match_recomputation_at_checkpoints():
    trace = bundled_trace("s1")[:4000]
    for prefix in (100, 500, 1500, 4000):
        events = EventLog()
        run_simulation(trace[:prefix], builtin("lfu"), CacheConfig(40_000, SIZE_AWARE),
                       events=events)
        state = events.final_state
        metas = [state.meta(oid) for oid in state.residents()]
        assert state.counts.values() == sorted(m.count for m in metas)
        assert state.sizes.values() == sorted(m.size for m in metas)
        assert state.additions.values() == sorted(m.addition_to_cache_vtime for m in metas)
        assert state.used == sum(m.size for m in metas)
        assert state.used <= 40_000


def test_capacity_never_exceeded():
    trace = bundled_trace("s1")[:3000]
    for capacity in (1000, 5000):
        for prefix in (50, 700, 3000):
            events = EventLog()
            run_simulation(trace[:prefix], builtin("lru"),
                           CacheConfig(capacity, SIZE_AWARE), events=events)
            assert events.final_state.used <= capacity


def test_hits_plus_misses_and_eviction_balance():
    trace = bundled_trace("s2")
    events = EventLog()
    res = run_simulation(trace, builtin("fifo"), slot_config(50), events=events)
    assert res.hits + res.misses == res.requests == len(trace)
    insertions = res.misses  # no bypasses in slot mode
    assert res.evictions == insertions - events.final_state.resident_count


# --- eviction history ---------------------------------------------------------

def test_history_record_fields():
    # capacity 4: a enters at vtime 4 (evicting f0), is hit at 5 and 6, and is
    # the LRU victim at vtime 10 with count 3 and age 6
    trace = [Request(i, f"f{i}", 1) for i in range(4)]
    trace += [Request(4, "a", 1), Request(5, "a", 1), Request(6, "a", 1)]
    trace += [Request(7, "g7", 1), Request(8, "g8", 1), Request(9, "g9", 1)]
    trace += [Request(10, "g10", 1)]
    events = EventLog()
    run_simulation(trace, builtin("lru"), slot_config(4), events=events)
    state = events.final_state
    assert events.evictions[-1] == "a"
    rec = state.history_lookup("a")
    assert rec == EvictionRecord("a", 10, 3, 6)


def test_history_absent_for_never_evicted():
    events = EventLog()
    run_simulation([Request(0, "a", 1)], builtin("lru"), slot_config(4), events=events)
    assert events.final_state.history_lookup("a") is None


def test_history_fifo_bound():
    config = CacheConfig(1, SIZE_AGNOSTIC, history_capacity=3)
    trace = [Request(i, str(i), 1) for i in range(6)]
    events = EventLog()
    run_simulation(trace, builtin("fifo"), config, events=events)
    state = events.final_state
    # 0..4 evicted; history holds the 3 most recent (2, 3, 4)
    assert state.history_lookup("0") is None
    assert state.history_lookup("1") is None
    assert state.history_lookup("2") is not None
    assert state.history_lookup("4") is not None


def test_history_record_dropped_on_reinsert():
    trace = [Request(0, "a", 1), Request(1, "b", 1), Request(2, "a", 1)]
    events = EventLog()
    run_simulation(trace, builtin("lru"), slot_config(1), events=events)
    state = events.final_state
    assert state.history_lookup("a") is None  # re-inserted at vtime 2
    assert state.history_lookup("b") is not None


# --- MRR ------------------------------------------------------------------------

def mk_result(requests, misses):
    hits = requests - misses
    return SimResult(requests, hits, misses, hits / requests, 0.0, 0, 0.0)


def test_mrr_identity():
    fifo = mk_result(100, 50)
    assert miss_rate_reduction(fifo, fifo) == 0.0


def test_mrr_formula():
    assert miss_rate_reduction(mk_result(100, 40), mk_result(100, 50)) == pytest.approx(0.2)


def test_mrr_zero_fifo_miss_rate():
    assert miss_rate_reduction(mk_result(100, 10), mk_result(100, 0)) == 0.0


def test_mrr_mismatched_traces_rejected():
    with pytest.raises(ValueError):
        miss_rate_reduction(mk_result(100, 10), mk_result(200, 10))


def test_mrr_lru_vs_fifo_on_loop():
    trace = bundled_trace("loop")
    config = slot_config(100)  # capacity below the loop length
    lru = run_simulation(trace, builtin("lru"), config)
    fifo = run_simulation(trace, builtin("fifo"), config)
    assert miss_rate_reduction(lru, fifo) <= 0.0


# --- capacity resolution ----------------------------------------------------------

def test_resolve_capacity_specs():
    summary = summarize(bundled_trace("s2"))
    assert resolve_capacity(summary, "abs:123") == 123
    assert resolve_capacity(summary, "frac:0.5", SIZE_AGNOSTIC) == summary.unique_objects // 2
    assert resolve_capacity(summary, "large", SIZE_AGNOSTIC) == int(0.1 * summary.unique_objects)
    assert resolve_capacity(summary, "tiny", SIZE_AGNOSTIC) >= 1
    assert resolve_capacity(summary, "small", SIZE_AWARE) == int(0.01 * summary.footprint_bytes)
    with pytest.raises(ValueError):
        resolve_capacity(summary, "frac:1.5")
    with pytest.raises(ValueError):
        resolve_capacity(summary, "bogus")


def test_empty_trace():
    res = run_simulation([], builtin("lru"), slot_config(4))
    assert res.requests == 0 and res.object_hit_rate == 0.0
