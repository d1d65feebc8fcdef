"""Command-line front door.

Subcommands: ``simulate`` (replay policies over traces), ``report``
(best-policy counts plus a figure), ``search`` (evolutionary policy search),
``cluster`` / ``classify`` (workload instances), ``gen-trace`` (synthetic
trace files).  Machine output goes to files or stdout; diagnostics go to
stderr.  Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import dsl, instances, llm, rank, report, search, workloads
from .engine import (SIZE_AGNOSTIC, SIZE_AWARE, CacheConfig, CandidateFailure,
                     resolve_capacity, run_simulation)
from .topology import Topology
from .trace import (Request, generate_phase_trace, generate_zipf_trace,
                    parse_csv_trace, size_model_from_spec, summarize,
                    write_csv_trace, TraceParseError)

RESULT_COLUMNS = ("trace", "policy", "capacity_spec", "capacity", "mode",
                  "requests", "hits", "misses", "object_hit_rate",
                  "byte_hit_rate", "evictions")


class UsageError(Exception):
    pass


def _load_trace(path: str) -> list[Request]:
    try:
        return list(parse_csv_trace(path))
    except (OSError, TraceParseError) as err:
        raise UsageError(f"cannot read trace {path}: {err}") from err


def _parse_mechanism(spec: str) -> tuple[str, int | None]:
    if spec in (rank.MECH_PQ, rank.MECH_FULLSORT):
        return spec, None
    if spec.startswith("samplesort:"):
        return rank.MECH_SAMPLESORT, int(spec.split(":", 1)[1])
    raise UsageError(f"bad mechanism {spec!r} (pq | fullsort | samplesort:<S>)")


def _make_policy(spec: str, mechanism: str, sample_size, seed: int):
    """Policy specs: builtin:<name> | dsl:<path> | topology:<path>."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        try:
            if name in rank.BUILTIN_SCORES:
                return rank.builtin(name, mechanism, sample_size=sample_size, seed=seed)
            return rank.builtin(name)
        except ValueError as err:
            raise UsageError(str(err)) from err
    if spec.startswith("dsl:"):
        path = spec.split(":", 1)[1]
        try:
            program = dsl.parse(Path(path).read_text("utf-8"), dsl.RANK_SCORE)
        except (OSError, dsl.DslError) as err:
            raise UsageError(f"cannot load program {path}: {err}") from err
        return rank.RankPolicy(program, mechanism, sample_size=sample_size,
                               seed=seed, name=spec)
    if spec.startswith("topology:"):
        path = spec.split(":", 1)[1]
        try:
            return Topology.load(path)
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot load topology {path}: {err}") from err
    raise UsageError(f"bad policy spec {spec!r} (builtin:<name> | dsl:<path> | topology:<path>)")


def _format_float(x: float) -> str:
    return repr(float(x))


def cmd_simulate(args) -> int:
    mechanism, sample_size = _parse_mechanism(args.mechanism)
    rows = []
    for trace_path in args.trace:
        trace_data = _load_trace(trace_path)
        summary = summarize(trace_data)
        for capacity_spec in args.capacity:
            try:
                capacity = resolve_capacity(summary, capacity_spec, args.mode)
            except ValueError as err:
                raise UsageError(str(err)) from err
            config = CacheConfig(capacity, args.mode, args.history_capacity)
            for policy_spec in args.policy:
                policy = _make_policy(policy_spec, mechanism, sample_size, args.seed)
                result = run_simulation(trace_data, policy, config)
                rows.append({
                    "trace": trace_path,
                    "policy": policy_spec,
                    "capacity_spec": capacity_spec,
                    "capacity": capacity,
                    "mode": args.mode,
                    "requests": result.requests,
                    "hits": result.hits,
                    "misses": result.misses,
                    "object_hit_rate": _format_float(result.object_hit_rate),
                    "byte_hit_rate": _format_float(result.byte_hit_rate),
                    "evictions": result.evictions,
                    "wall_time_s": result.wall_time_s,
                })
    rows.sort(key=lambda r: (r["trace"], r["policy"], r["capacity_spec"]))
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in RESULT_COLUMNS])
    finally:
        if args.out:
            out.close()
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.results:
        try:
            rows.extend(report.read_results_csv(path))
        except (OSError, KeyError, ValueError) as err:
            raise UsageError(f"cannot read results {path}: {err}") from err
    table = report.best_counts(rows)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_best_counts_csv(table, str(out_dir / "best_counts.csv"))
    text = report.render_best_counts_text(table)
    (out_dir / "best_counts.txt").write_text(text + "\n", encoding="utf-8")
    report.render_best_counts_figure(table, str(out_dir / "best_counts.png"))
    print(text)
    return 0


def cmd_search(args) -> int:
    mechanism, sample_size = _parse_mechanism(args.mechanism)
    cases = []
    for trace_path in args.trace:
        trace_data = _load_trace(trace_path)
        capacity = resolve_capacity(summarize(trace_data), args.capacity, args.mode)
        cases.append(search.TraceCase(trace_path, tuple(trace_data), capacity))

    skeleton = None
    if args.topology_skeleton:
        try:
            skeleton = Topology.load(args.topology_skeleton)
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot load topology skeleton: {err}") from err

    spec = search.EvalSpec(
        cases=tuple(cases), mode=args.mode, mechanism=mechanism,
        sample_size=sample_size, topology_skeleton=skeleton,
        history_capacity=args.history_capacity, policy_seed=args.seed)

    objective = _parse_objective(args.objective)
    llm_config = None
    if args.generator == "llm" or args.replay_dir:
        llm_config = llm.LlmConfig(
            url=args.llm_url or "", model=args.llm_model or "",
            temperature=args.llm_temperature, api_key_env=args.llm_key_env,
            record_dir=args.record_dir, replay_dir=args.replay_dir)

    if skeleton is not None:
        template = search.default_topology_template(skeleton)
    elif args.seed_program:
        seeds = tuple(Path(p).read_text("utf-8").strip() for p in args.seed_program)
        template = search.default_rank_template(seeds)
    else:
        template = search.default_rank_template()

    config = search.SearchConfig(
        eval_spec=spec, objective=objective,
        candidates_per_round=args.per_round, exemplar_count=args.exemplars,
        max_rounds=args.rounds, plateau_window=args.plateau_window,
        plateau_epsilon=args.plateau_epsilon, seed=args.seed,
        generator=args.generator, llm_config=llm_config, db_path=args.db)
    result = search.run_search(config, template)
    if result.best is None:
        print("no valid candidate found", file=sys.stderr)
        return 1
    print(f"# best objective: {result.best.objective!r} "
          f"(round {result.best.round}, id {result.best.id})", file=sys.stderr)
    print(result.best.source)
    return 0


def _parse_objective(spec: str) -> search.Objective:
    if spec in ("object_hit_rate", "mrr_vs_fifo"):
        return search.Objective(spec)
    if spec.startswith("weighted:"):
        weights = []
        for part in spec.split(":", 1)[1].split(","):
            name, w = part.split("=")
            weights.append((name.strip(), float(w)))
        return search.Objective("weighted", tuple(weights))
    raise UsageError(f"bad objective {spec!r}")


def cmd_cluster(args) -> int:
    vectors = []
    for path in args.traces:
        vectors.append(instances.extract_features(_load_trace(path), args.prefix))
    try:
        model = instances.kmeans(vectors, args.k, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from err
    model.save(args.model_out)
    labels = instances.assignments(model, vectors)
    if args.assignments_out:
        with open(args.assignments_out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trace", "cluster"])
            for path, label in zip(args.traces, labels):
                writer.writerow([path, int(label)])
    sizes = [0] * model.k
    for label in labels:
        sizes[int(label)] += 1
    for cluster, size in enumerate(sizes):
        print(f"cluster {cluster}: {size} traces")
    return 0


def cmd_classify(args) -> int:
    try:
        model = instances.ClusterModel.load(args.model)
    except (OSError, KeyError, ValueError) as err:
        raise UsageError(f"cannot load model {args.model}: {err}") from err
    vector = instances.extract_features(_load_trace(args.trace), args.prefix)
    print(instances.classify(model, vector).label())
    return 0


def cmd_gen_trace(args) -> int:
    if args.kind == "bundled":
        if not args.name:
            raise UsageError("--name is required for bundled traces")
        try:
            trace_data = workloads.bundled_trace(args.name)
        except ValueError as err:
            raise UsageError(str(err)) from err
    elif args.kind == "zipf":
        size_model = _parse_size_model(args.size_model)
        trace_data = generate_zipf_trace(args.objects, args.requests, args.alpha,
                                         size_model, seed=args.seed)
    elif args.kind == "phases":
        if not args.phases:
            raise UsageError("--phases is required for phase traces")
        try:
            phases = [(p["spec"], int(p["length"])) for p in json.loads(args.phases)]
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise UsageError(f"bad --phases JSON: {err}") from err
        trace_data = generate_phase_trace(phases, seed=args.seed)
    else:
        raise UsageError(f"unknown kind {args.kind!r}")
    write_csv_trace(trace_data, args.out)
    print(f"wrote {len(trace_data)} requests to {args.out}", file=sys.stderr)
    return 0


def _parse_size_model(spec: str):
    if spec.startswith("constant:"):
        return size_model_from_spec({"kind": "constant", "value": int(spec.split(":")[1])})
    if spec.startswith("lognormal:"):
        mu, sigma = spec.split(":", 1)[1].split(",")
        return size_model_from_spec({"kind": "lognormal", "mu": float(mu),
                                     "sigma": float(sigma)})
    raise UsageError(f"bad size model {spec!r} (constant:<n> | lognormal:<mu>,<sigma>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evocache")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay policies over traces")
    p.add_argument("--trace", action="append", required=True)
    p.add_argument("--policy", action="append", required=True)
    p.add_argument("--capacity", action="append", required=True,
                   help="abs:<n> | frac:<f> | tiny | small | large")
    p.add_argument("--mode", choices=[SIZE_AWARE, SIZE_AGNOSTIC], default=SIZE_AWARE)
    p.add_argument("--mechanism", default=rank.MECH_PQ)
    p.add_argument("--history-capacity", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="results CSV (default stdout)")
    p.add_argument("--json", help="also write results as JSON (includes wall times)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="best-policy counts per capacity tier")
    p.add_argument("--results", action="append", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("search", help="evolutionary policy search")
    p.add_argument("--trace", action="append", required=True)
    p.add_argument("--capacity", required=True)
    p.add_argument("--mode", choices=[SIZE_AWARE, SIZE_AGNOSTIC], default=SIZE_AGNOSTIC)
    p.add_argument("--mechanism", default=rank.MECH_PQ)
    p.add_argument("--topology-skeleton", help="search routing programs for this topology")
    p.add_argument("--generator", choices=["mutation", "llm"], default="mutation")
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--per-round", type=int, default=25)
    p.add_argument("--exemplars", type=int, default=2)
    p.add_argument("--objective", default="object_hit_rate")
    p.add_argument("--plateau-window", type=int, default=5)
    p.add_argument("--plateau-epsilon", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-program", action="append",
                   help="file with a seed scoring program (repeatable)")
    p.add_argument("--history-capacity", type=int, default=4096)
    p.add_argument("--db", help="candidate database (JSON lines, append-only)")
    p.add_argument("--llm-url")
    p.add_argument("--llm-model")
    p.add_argument("--llm-temperature", type=float, default=1.0)
    p.add_argument("--llm-key-env", default="EVOCACHE_API_KEY")
    p.add_argument("--record-dir", help="record raw generator replies here")
    p.add_argument("--replay-dir", help="replay recorded replies instead of HTTP")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("cluster", help="cluster traces into instances")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", type=int, default=instances.DEFAULT_PREFIX)
    p.add_argument("--model-out", required=True)
    p.add_argument("--assignments-out")
    p.add_argument("traces", nargs="+")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("classify", help="assign a trace to a cluster or novel")
    p.add_argument("--model", required=True)
    p.add_argument("--prefix", type=int, default=instances.DEFAULT_PREFIX)
    p.add_argument("trace")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gen-trace", help="write a synthetic trace CSV")
    p.add_argument("--kind", choices=["zipf", "phases", "bundled"], required=True)
    p.add_argument("--name", help="bundled trace name")
    p.add_argument("--objects", type=int, default=1000)
    p.add_argument("--requests", type=int, default=10000)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--size-model", default="constant:1")
    p.add_argument("--phases", help='JSON list of {"spec": {...}, "length": n}')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (CandidateFailure, llm.GeneratorUnreachable, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
