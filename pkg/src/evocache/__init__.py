"""evocache: trace-driven cache eviction policies, simulated and searched.

The pieces: a replay simulator with exact resident statistics and eviction
history (:mod:`evocache.engine`); scored eviction policies over priority
queue / full sort / sample sort mechanisms (:mod:`evocache.rank`) plus
native multi-queue baselines (:mod:`evocache.baselines`); interpreted
queue-topology caches (:mod:`evocache.topology`); the sandboxed scoring
expression language they all share (:mod:`evocache.dsl`); workload feature
extraction and clustering (:mod:`evocache.instances`); and an evolutionary
search loop over candidate programs (:mod:`evocache.search`).
"""

from .engine import (CacheConfig, CandidateFailure, EventLog, SimResult,
                     miss_rate_reduction, resolve_capacity, run_simulation)
from .rank import RankPolicy, builtin
from .topology import Topology
from .trace import (Request, TraceSummary, generate_phase_trace,
                    generate_zipf_trace, parse_csv_trace, summarize,
                    write_csv_trace)

__version__ = "0.1.0"

__all__ = [
    "CacheConfig", "CandidateFailure", "EventLog", "SimResult",
    "miss_rate_reduction", "resolve_capacity", "run_simulation",
    "RankPolicy", "builtin", "Topology",
    "Request", "TraceSummary", "generate_phase_trace", "generate_zipf_trace",
    "parse_csv_trace", "summarize", "write_csv_trace",
    "__version__",
]
