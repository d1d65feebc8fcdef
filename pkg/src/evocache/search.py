"""Evolutionary policy search.

Each round, a generator produces candidate scoring programs from the current
exemplars; candidates are parsed and validated (failures are recorded, not
evaluated), survivors are replayed on the evaluation traces and scored with
a single objective, and everything is appended to a JSON-lines candidate
database.  Exemplars are the global top performers across all completed
rounds.  The loop stops at the round budget or when the best-so-far
objective has plateaued.

Two generators sit behind one interface: an HTTP chat-completions generator
and a deterministic AST-mutation generator.  The mutation generator makes
the whole search a pure function of (config, template, seeds), which is what
the offline tests and the acceptance suite run.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import dsl, llm, rank
from .engine import (SIZE_AGNOSTIC, CacheConfig, CandidateFailure, SimResult,
                     miss_rate_reduction, run_simulation)
from .topology import Topology
from .trace import Request

STATUS_OK = "ok"
STATUS_PARSE_FAIL = "parse_fail"
STATUS_VALIDATE_FAIL = "validate_fail"
STATUS_RUNTIME_FAIL = "runtime_fail"


@dataclass(frozen=True)
class TraceCase:
    label: str
    requests: tuple[Request, ...]
    capacity: int


@dataclass(frozen=True)
class EvalSpec:
    """What a candidate is evaluated on.

    With a topology skeleton, candidates are JSON bundles holding an init
    program and one transition program per queue; otherwise candidates are
    single rank-score programs run under the given mechanism.
    """
    cases: tuple[TraceCase, ...]
    mode: str = SIZE_AGNOSTIC
    mechanism: str = rank.MECH_PQ
    sample_size: Optional[int] = None
    topology_skeleton: Optional[Topology] = None
    history_capacity: int = 4096
    policy_seed: int = 0

    def config_for(self, case: TraceCase) -> CacheConfig:
        return CacheConfig(case.capacity, self.mode, self.history_capacity)


@dataclass(frozen=True)
class Objective:
    kind: str = "object_hit_rate"  # object_hit_rate | mrr_vs_fifo | weighted
    weights: tuple[tuple[str, float], ...] = ()

    def value(self, result: SimResult, fifo_result: Optional[SimResult]) -> float:
        if self.kind == "object_hit_rate":
            return result.object_hit_rate
        if self.kind == "mrr_vs_fifo":
            return miss_rate_reduction(result, fifo_result)
        if self.kind == "weighted":
            doc = result.to_json()
            return sum(w * float(doc[name]) for name, w in self.weights)
        raise ValueError(f"unknown objective {self.kind!r}")


@dataclass(frozen=True)
class Template:
    """Generator-facing task description."""
    task_text: str
    feature_docs: str
    signature: str
    constraints: str
    seeds: tuple[str, ...]

    def __post_init__(self):
        if not self.signature:
            raise ValueError("template needs a non-empty signature")
        if not self.seeds:
            raise ValueError("template needs at least one seed program")


@dataclass(frozen=True)
class Candidate:
    id: int
    round: int
    index: int
    parents: tuple[int, ...]
    source: str
    status: str
    reason: Optional[str] = None
    objective: Optional[float] = None
    metrics: Optional[dict] = None

    def to_json(self) -> dict:
        return {
            "id": self.id, "round": self.round, "index": self.index,
            "parents": list(self.parents), "source": self.source,
            "status": self.status, "reason": self.reason,
            "objective": self.objective, "metrics": self.metrics,
        }


@dataclass(frozen=True)
class SearchConfig:
    eval_spec: EvalSpec
    objective: Objective = Objective()
    candidates_per_round: int = 25
    exemplar_count: int = 2
    max_rounds: int = 10
    plateau_window: int = 5
    plateau_epsilon: float = 0.001
    seed: int = 0
    generator: str = "mutation"  # mutation | llm
    llm_config: Optional[llm.LlmConfig] = None
    db_path: Optional[str] = None

    def __post_init__(self):
        if self.candidates_per_round < 1:
            raise ValueError("candidates_per_round must be >= 1")
        if self.exemplar_count < 1:
            raise ValueError("exemplar_count must be >= 1")


@dataclass
class SearchResult:
    best: Optional[Candidate]
    rows: list[Candidate]
    rounds_run: int
    best_history: list[float] = field(default_factory=list)


# --- mutation operators -------------------------------------------------------

def _replace_at(root: dsl.Node, target: int, transform):
    """Rebuild the tree with the pre-order node `target` transformed."""
    counter = -1

    def rec(node):
        nonlocal counter
        counter += 1
        if counter == target:
            return transform(node)
        if isinstance(node, dsl.Unary):
            return dsl.Unary(node.op, rec(node.operand))
        if isinstance(node, dsl.Binary):
            return dsl.Binary(node.op, rec(node.left), rec(node.right))
        if isinstance(node, dsl.If):
            return dsl.If(rec(node.cond), rec(node.then), rec(node.orelse))
        if isinstance(node, dsl.Let):
            return dsl.Let(node.name, rec(node.value), rec(node.body))
        if isinstance(node, dsl.Call):
            return dsl.Call(node.func, tuple(rec(a) for a in node.args))
        return node

    return rec(root)


def _nodes(root: dsl.Node) -> list[dsl.Node]:
    return list(dsl.walk(root))


_ARITH_OPS = ("+", "-", "*", "/")
_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")


def _mutate_once(ast: dsl.Node, rng: random.Random, kind: str,
                 donors: Sequence[dsl.Node]) -> dsl.Node:
    nodes = _nodes(ast)
    features = sorted(dsl.CONTEXT_IDENTIFIERS[kind])
    ops = []
    num_indices = [i for i, n in enumerate(nodes) if isinstance(n, dsl.Num)]
    bin_indices = [i for i, n in enumerate(nodes)
                   if isinstance(n, dsl.Binary) and n.op in _ARITH_OPS + _CMP_OPS]
    ident_indices = [i for i, n in enumerate(nodes)
                     if isinstance(n, dsl.Ident) and n.name in features]
    if num_indices:
        ops.append("perturb")
    if bin_indices:
        ops.append("swap_op")
    if ident_indices and len(features) > 1:
        ops.append("swap_feature")
    if len(nodes) < 400:
        ops.append("wrap_if")
    if donors:
        ops.append("crossover")
    if not ops:
        ops = ["wrap_if"]
    op = rng.choice(ops)

    if op == "perturb":
        target = rng.choice(num_indices)

        def change_num(node):
            if rng.random() < 0.5:
                value = node.value * rng.uniform(0.5, 2.0)
            else:
                value = node.value + rng.choice((-1.0, 1.0))
            return dsl.Num(dsl._guard(round(value, 6)))

        return _replace_at(ast, target, change_num)
    if op == "swap_op":
        target = rng.choice(bin_indices)

        def change_op(node):
            pool = _ARITH_OPS if node.op in _ARITH_OPS else _CMP_OPS
            choices = [o for o in pool if o != node.op]
            return dsl.Binary(rng.choice(choices), node.left, node.right)

        return _replace_at(ast, target, change_op)
    if op == "swap_feature":
        target = rng.choice(ident_indices)

        def change_ident(node):
            choices = [f for f in features if f != node.name]
            return dsl.Ident(rng.choice(choices))

        return _replace_at(ast, target, change_ident)
    if op == "crossover":
        donor = rng.choice(list(donors))
        graft = rng.choice(_nodes(donor))
        target = rng.randrange(len(nodes))
        return _replace_at(ast, target, lambda _node: graft)
    # wrap_if: guard a subexpression with a comparison, alternative is a
    # clone of another subtree from the same program.
    target = rng.randrange(len(nodes))
    alt = rng.choice(nodes)

    def operand():
        if rng.random() < 0.5:
            return dsl.Ident(rng.choice(features))
        return dsl.Num(float(rng.randint(0, 100)))

    cond = dsl.Binary(rng.choice(_CMP_OPS), operand(), operand())
    return _replace_at(ast, target, lambda node: dsl.If(cond, node, alt))


def mutate(program: dsl.ScoreProgram, rng: random.Random,
           donors: Sequence[dsl.ScoreProgram] = (), retries: int = 10) -> str:
    """One random mutation of a valid program; output always validates.

    Falls back to the unchanged parent after `retries` failed attempts.
    """
    donor_asts = [d.ast for d in donors]
    for _ in range(retries):
        mutant = _mutate_once(program.ast, rng, program.kind, donor_asts)
        source = dsl.to_source(mutant)
        if dsl.validate(source, program.kind).ok:
            return source
    return program.source


@dataclass(frozen=True)
class Generated:
    source: Optional[str]          # None when no program could be extracted
    parent_refs: tuple[int, ...]   # indices into the exemplar list
    reason: Optional[str] = None


class MutationGenerator:
    """Deterministic offline generator: mutates exemplar programs."""

    def __init__(self, seed: int, kind: str, topology: Optional[Topology] = None):
        self._rng = random.Random(seed)
        self._kind = kind
        self._topology = topology

    def generate(self, template: Template, exemplars: Sequence[tuple[str, float]],
                 n: int) -> list[Generated]:
        out = []
        sources = [src for src, _ in exemplars if self._parseable(src)]
        if not sources:
            raise ValueError("mutation generator needs at least one valid exemplar")
        for i in range(n):
            parent_ref = i % len(sources)
            donor_refs = tuple(j for j in range(len(sources)) if j != parent_ref)
            if self._topology is not None:
                source = self._mutate_bundle(sources[parent_ref],
                                             [sources[j] for j in donor_refs])
            else:
                parent = dsl.parse(sources[parent_ref], self._kind)
                donors = [dsl.parse(sources[j], self._kind) for j in donor_refs]
                source = mutate(parent, self._rng, donors)
            out.append(Generated(source, (parent_ref,) + donor_refs))
        return out

    def _parseable(self, source: str) -> bool:
        if self._topology is not None:
            try:
                doc = json.loads(source)
                return (dsl.validate(doc["init"], dsl.QT_INIT).ok
                        and all(dsl.validate(t, dsl.QT_TRANSITION).ok
                                for t in doc["transitions"]))
            except (json.JSONDecodeError, KeyError, TypeError):
                return False
        return dsl.validate(source, self._kind).ok

    def _mutate_bundle(self, source: str, donor_sources: list[str]) -> str:
        doc = json.loads(source)
        transitions = list(doc["transitions"])
        slot = self._rng.randrange(len(transitions) + 1)
        donors_docs = [json.loads(d) for d in donor_sources]
        if slot == 0:
            donors = [dsl.parse(d["init"], dsl.QT_INIT) for d in donors_docs]
            doc["init"] = mutate(dsl.parse(doc["init"], dsl.QT_INIT), self._rng, donors)
        else:
            i = slot - 1
            donors = [dsl.parse(d["transitions"][i], dsl.QT_TRANSITION) for d in donors_docs]
            transitions[i] = mutate(dsl.parse(transitions[i], dsl.QT_TRANSITION),
                                    self._rng, donors)
            doc["transitions"] = transitions
        return json.dumps(doc, sort_keys=True)


class LlmGenerator:
    """Prompts a chat model with the template and scored exemplars."""

    def __init__(self, config: llm.LlmConfig):
        self._client = llm.ChatClient(config)

    def generate(self, template: Template, exemplars: Sequence[tuple[str, float]],
                 n: int) -> list[Generated]:
        prompt = build_prompt(template, exemplars)
        refs = tuple(range(len(exemplars)))
        out = []
        for _ in range(n):
            reply = self._client.complete(prompt)
            source = llm.extract_code_block(reply)
            if source is None:
                out.append(Generated(None, refs, reason="no_code_block"))
            else:
                out.append(Generated(source, refs))
        return out


def build_prompt(template: Template, exemplars: Sequence[tuple[str, float]]) -> str:
    parts = [
        template.task_text.strip(),
        "",
        "Available features:",
        template.feature_docs.strip(),
        "",
        "Function signature (keep it exactly):",
        template.signature.strip(),
        "",
        "Constraints:",
        template.constraints.strip(),
        "",
        "Scored examples (higher objective is better):",
    ]
    for src, score in exemplars:
        shown = "(not yet evaluated)" if score is None else f"{score:.6f}"
        parts.append(f"objective={shown}\n```\n{src}\n```")
    parts.append(
        "\nThink about the features, then reply with exactly one new program "
        "in a single fenced code block.")
    return "\n".join(parts)


def default_rank_template(seeds: Sequence[str] = ("obj.last_access_vtime",)) -> Template:
    return Template(
        task_text=(
            "Design a scoring function for a cache eviction policy. Every "
            "resident object gets a real-valued score; when space is needed, "
            "the objects with the lowest scores are evicted first, so higher "
            "scores mean more likely to stay cached."),
        feature_docs=(
            "vtime: current request index (the virtual clock)\n"
            "obj.count: accesses since this object entered the cache\n"
            "obj.last_access_vtime: vtime of this object's latest access\n"
            "obj.addition_vtime: vtime when this object entered the cache\n"
            "obj.size: object size in bytes\n"
            "L_aging: score of the most recently evicted object\n"
            "percentile(counts|ages|sizes, p): percentile over resident objects\n"
            "ghost_contains(): 1 when this object was recently evicted\n"
            "ghost_count(): its access count at that eviction (else 0)\n"
            "ghost_age(): how long it was cached before that eviction (else 0)"),
        signature="score(object features) -> real",
        constraints=(
            "One expression in the scoring language: numbers, the features "
            "above, + - * /, comparisons, and/or/not, if-then-else, let-in, "
            "min/max/abs/floor/log/exp/pow/clamp. No loops, no assignments."),
        seeds=tuple(seeds),
    )


def default_topology_template(skeleton: Topology) -> Template:
    init_src, trans_src = skeleton.program_sources()
    seed_doc = json.dumps({"init": init_src, "transitions": list(trans_src)},
                          sort_keys=True)
    return Template(
        task_text=(
            f"Design routing functions for a cache built from "
            f"{skeleton.num_queues} queues plus a ghost list of recently "
            "evicted ids. The init function picks the queue for an incoming "
            "object; each queue's transition function decides what happens "
            "to an object displaced from that queue's tail: a queue index "
            "keeps it resident, -1 evicts it into the ghost, -2 evicts and "
            "forgets it."),
        feature_docs=(
            "init: in_ghost, obj_size, is_full(i)\n"
            "transition: vtime, obj.cache_access_count, obj.queue_access_count, "
            "obj.cache_insertion_vtime, obj.queue_insertion_vtime, "
            "obj.last_access_vtime, obj.current_queue"),
        signature='JSON: {"init": "<program>", "transitions": ["<program>", ...]}',
        constraints="Each program is one expression in the scoring language.",
        seeds=(seed_doc,),
    )


# --- the loop -------------------------------------------------------------------

def _evaluate(source: str, spec: EvalSpec, objective: Objective,
              fifo_results: Optional[dict]) -> tuple[str, Optional[str], Optional[float], Optional[dict]]:
    if spec.topology_skeleton is not None:
        try:
            doc = json.loads(source)
            init_src = doc["init"]
            trans_src = list(doc["transitions"])
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            return STATUS_PARSE_FAIL, f"bad_bundle: {err}", None, None
        if len(trans_src) != spec.topology_skeleton.num_queues:
            return STATUS_PARSE_FAIL, "bad_bundle: wrong transition count", None, None
        report = dsl.validate(init_src, dsl.QT_INIT)
        reports = [dsl.validate(t, dsl.QT_TRANSITION) for t in trans_src]
        for rep in [report] + reports:
            if not rep.ok:
                code = rep.issues[0][0]
                status = STATUS_PARSE_FAIL if code == "syntax_error" else STATUS_VALIDATE_FAIL
                return status, code, None, None
        policy = spec.topology_skeleton.with_programs(init_src, trans_src)
    else:
        report = dsl.validate(source, dsl.RANK_SCORE)
        if not report.ok:
            code = report.issues[0][0]
            status = STATUS_PARSE_FAIL if code == "syntax_error" else STATUS_VALIDATE_FAIL
            return status, code, None, None
        program = dsl.parse(source, dsl.RANK_SCORE)
        policy = rank.RankPolicy(program, spec.mechanism,
                                 sample_size=spec.sample_size, seed=spec.policy_seed)

    values = []
    metrics = {"object_hit_rate": 0.0, "byte_hit_rate": 0.0, "evictions": 0}
    try:
        for case in spec.cases:
            result = run_simulation(case.requests, policy, spec.config_for(case))
            fifo_result = fifo_results[case.label] if fifo_results else None
            values.append(objective.value(result, fifo_result))
            metrics["object_hit_rate"] += result.object_hit_rate / len(spec.cases)
            metrics["byte_hit_rate"] += result.byte_hit_rate / len(spec.cases)
            metrics["evictions"] += result.evictions
    except CandidateFailure as err:
        return STATUS_RUNTIME_FAIL, str(err), None, None
    return STATUS_OK, None, sum(values) / len(values), metrics


def _fifo_results(spec: EvalSpec) -> dict:
    out = {}
    for case in spec.cases:
        policy = rank.builtin("fifo")
        out[case.label] = run_simulation(case.requests, policy, spec.config_for(case))
    return out


def make_generator(config: SearchConfig):
    if config.generator == "mutation":
        kind = dsl.RANK_SCORE
        return MutationGenerator(config.seed, kind,
                                 topology=config.eval_spec.topology_skeleton)
    if config.generator == "llm":
        if config.llm_config is None:
            raise ValueError("llm generator needs llm_config")
        return LlmGenerator(config.llm_config)
    raise ValueError(f"unknown generator {config.generator!r}")


def run_search(config: SearchConfig, template: Template,
               generator=None) -> SearchResult:
    """Run the search loop; returns the best candidate plus the full DB.

    Deterministic end to end with the mutation generator.  If the generator
    becomes unreachable mid-run, the rows written so far stay in the DB file
    and the error propagates.  ``generator`` overrides the one configured
    (anything with a matching ``generate`` method works).
    """
    spec = config.eval_spec
    fifo_results = _fifo_results(spec) if config.objective.kind == "mrr_vs_fifo" else None
    if generator is None:
        generator = make_generator(config)

    rows: list[Candidate] = []
    db_fh = open(config.db_path, "a", encoding="utf-8") if config.db_path else None

    def record(candidate: Candidate) -> None:
        rows.append(candidate)
        if db_fh is not None:
            db_fh.write(json.dumps(candidate.to_json(), sort_keys=True) + "\n")
            db_fh.flush()

    def exemplars_now() -> list[Candidate]:
        ok = [c for c in rows if c.status == STATUS_OK]
        ok.sort(key=lambda c: (-c.objective, c.id))
        return ok[:config.exemplar_count]

    try:
        next_id = 0
        for i, seed_src in enumerate(template.seeds):
            status, reason, value, metrics = _evaluate(seed_src, spec, config.objective,
                                                       fifo_results)
            record(Candidate(next_id, 0, i, (), seed_src, status, reason, value, metrics))
            next_id += 1

        best_history: list[float] = []
        ok_rows = [c for c in rows if c.status == STATUS_OK]
        best_history.append(max((c.objective for c in ok_rows), default=float("-inf")))

        rounds_run = 0
        for round_no in range(1, config.max_rounds + 1):
            exemplars = exemplars_now()
            if exemplars:
                exemplar_inputs = [(c.source, c.objective) for c in exemplars]
                exemplar_ids = [c.id for c in exemplars]
            else:  # nothing valid yet: fall back to the seeds
                exemplar_inputs = [(s, None) for s in template.seeds]
                exemplar_ids = list(range(len(template.seeds)))
            generated = generator.generate(template, exemplar_inputs,
                                           config.candidates_per_round)
            for idx, gen in enumerate(generated):
                parents = tuple(exemplar_ids[r] for r in gen.parent_refs
                                if r < len(exemplar_ids))
                if gen.source is None:
                    record(Candidate(next_id, round_no, idx, parents, "",
                                     STATUS_PARSE_FAIL, gen.reason or "no_code_block"))
                else:
                    status, reason, value, metrics = _evaluate(
                        gen.source, spec, config.objective, fifo_results)
                    record(Candidate(next_id, round_no, idx, parents, gen.source,
                                     status, reason, value, metrics))
                next_id += 1
            rounds_run = round_no
            ok_rows = [c for c in rows if c.status == STATUS_OK]
            best_history.append(max((c.objective for c in ok_rows), default=float("-inf")))
            w = config.plateau_window
            if round_no >= w and best_history[-1] - best_history[-1 - w] < config.plateau_epsilon:
                break
    finally:
        if db_fh is not None:
            db_fh.close()

    ok_rows = [c for c in rows if c.status == STATUS_OK]
    best = min(ok_rows, key=lambda c: (-c.objective, c.id)) if ok_rows else None
    return SearchResult(best, rows, rounds_run, best_history)


def load_db(path: str) -> list[Candidate]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            rows.append(Candidate(
                id=doc["id"], round=doc["round"], index=doc["index"],
                parents=tuple(doc["parents"]), source=doc["source"],
                status=doc["status"], reason=doc.get("reason"),
                objective=doc.get("objective"), metrics=doc.get("metrics")))
    return rows
