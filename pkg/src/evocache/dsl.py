"""Sandboxed scoring-expression language.

Candidate eviction/routing heuristics are single expressions over a fixed
feature surface.  The grammar has no loops, recursion, or assignment beyond
``let``, so every program terminates in one pass over its AST; arithmetic is
total (division by zero yields 0, ``log`` of a non-positive value yields 0,
overflow saturates at +/-1e308, and NaN collapses to 0), so any program that
parses and binds evaluates to a real number on every context.

Grammar (one expression per program)::

    expr    := 'let' IDENT '=' expr 'in' expr
             | 'if' expr 'then' expr 'else' expr
             | or
    or      := and ('or' and)*
    and     := not ('and' not)*
    not     := 'not' not | cmp
    cmp     := add (('<'|'<='|'>'|'>='|'=='|'!=') add)?
    add     := mul (('+'|'-') mul)*
    mul     := unary (('*'|'/') unary)*
    unary   := '-' unary | atom
    atom    := NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')'

Booleans are the numbers 0 and 1.  Three context kinds exist: ``rank_score``
(per-object eviction scores; lower scores evict first), ``qt_init`` (initial
queue placement), and ``qt_transition`` (per-queue routing on tail eviction).
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

RANK_SCORE = "rank_score"
QT_INIT = "qt_init"
QT_TRANSITION = "qt_transition"
KINDS = (RANK_SCORE, QT_INIT, QT_TRANSITION)

NODE_CAP = 10_000
DEPTH_CAP = 200      # AST depth bound; keeps compile/print recursion stack-safe
_PARSE_NESTING_CAP = 80  # structural nesting (parens, if, let, calls, unary)
HUGE = 1e308

STAT_NAMES = ("counts", "ages", "sizes")

# min/max are variadic (>= 2 args); everything else has a fixed arity.
MATH_FUNCTIONS: dict[str, tuple[int, Optional[int]]] = {
    "min": (2, None),
    "max": (2, None),
    "abs": (1, 1),
    "floor": (1, 1),
    "log": (1, 1),
    "exp": (1, 1),
    "pow": (2, 2),
    "clamp": (3, 3),
}

CONTEXT_IDENTIFIERS: dict[str, frozenset[str]] = {
    RANK_SCORE: frozenset({
        "vtime", "obj.count", "obj.last_access_vtime", "obj.addition_vtime",
        "obj.size", "L_aging",
    }),
    QT_INIT: frozenset({"in_ghost", "obj_size"}),
    QT_TRANSITION: frozenset({
        "vtime", "obj.cache_access_count", "obj.queue_access_count",
        "obj.cache_insertion_vtime", "obj.queue_insertion_vtime",
        "obj.last_access_vtime", "obj.current_queue",
    }),
}

CONTEXT_FUNCTIONS: dict[str, dict[str, tuple[int, Optional[int]]]] = {
    RANK_SCORE: {
        "percentile": (2, 2),
        "ghost_contains": (0, 0),
        "ghost_count": (0, 0),
        "ghost_age": (0, 0),
    },
    QT_INIT: {"is_full": (1, 1)},
    QT_TRANSITION: {},
}

_ALL_IDENTIFIERS = frozenset().union(*CONTEXT_IDENTIFIERS.values())
_ALL_FUNCTIONS = frozenset().union(*(set(f) for f in CONTEXT_FUNCTIONS.values()))


class DslError(ValueError):
    """Parse/validation failure with a machine-readable reason code."""

    def __init__(self, code: str, message: str, position: int = -1):
        super().__init__(message if position < 0 else f"{message} (at offset {position})")
        self.code = code
        self.position = position


# --- AST ------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Ident:
    name: str
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str  # '-' | 'not'
    operand: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Binary:
    op: str  # arithmetic, comparison, 'and', 'or'
    left: "Node"
    right: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class If:
    cond: "Node"
    then: "Node"
    orelse: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Let:
    name: str
    value: "Node"
    body: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]
    pos: int = field(default=-1, compare=False, repr=False)


Node = Union[Num, Ident, Unary, Binary, If, Let, Call]

KEYWORDS = frozenset({"if", "then", "else", "let", "in", "and", "or", "not"})

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*(?:\.[A-Za-z_][A-Za-z_0-9]*)*)"
    r"|(?P<op><=|>=|==|!=|[-+*/<>(),=])"
    r")"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        m = _TOKEN_RE.match(source, i)
        if m is None or m.end() == m.start():
            stripped = source[i:].lstrip()
            if not stripped:
                break
            bad_at = n - len(stripped)
            raise DslError("syntax_error", f"unexpected character {stripped[0]!r}", bad_at)
        i = m.end()
        pos = m.start() + (len(m.group(0)) - len(m.group(0).lstrip()))
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), pos))
        elif m.group("ident") is not None:
            text = m.group("ident")
            tokens.append(("kw" if text in KEYWORDS else "ident", text, pos))
        else:
            tokens.append(("op", m.group("op"), pos))
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0
        self.nesting = 0

    def _enter(self, pos: int):
        self.nesting += 1
        if self.nesting > _PARSE_NESTING_CAP:
            raise DslError("depth_cap_exceeded",
                           f"nesting exceeds {_PARSE_NESTING_CAP}", pos)

    def _leave(self):
        self.nesting -= 1

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: str):
        tok = self.next()
        if tok[0] != kind or tok[1] != text:
            raise DslError("syntax_error", f"expected {text!r}, got {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            raise DslError("syntax_error", f"unexpected trailing input {tok[1]!r}", tok[2])
        return node

    def expr(self) -> Node:
        kind, text, pos = self.peek()
        self._enter(pos)
        try:
            return self._expr_inner(kind, text, pos)
        finally:
            self._leave()

    def _expr_inner(self, kind, text, pos) -> Node:
        if kind == "kw" and text == "let":
            self.next()
            name_tok = self.next()
            if name_tok[0] != "ident":
                raise DslError("syntax_error", "expected identifier after 'let'", name_tok[2])
            if "." in name_tok[1]:
                raise DslError("syntax_error", "let names cannot be dotted", name_tok[2])
            self.expect("op", "=")
            value = self.expr()
            tok = self.next()
            if tok[:2] != ("kw", "in"):
                raise DslError("syntax_error", f"expected 'in', got {tok[1]!r}", tok[2])
            body = self.expr()
            return Let(name_tok[1], value, body, pos)
        if kind == "kw" and text == "if":
            self.next()
            cond = self.expr()
            tok = self.next()
            if tok[:2] != ("kw", "then"):
                raise DslError("syntax_error", f"expected 'then', got {tok[1]!r}", tok[2])
            then = self.expr()
            tok = self.next()
            if tok[:2] != ("kw", "else"):
                raise DslError("syntax_error", f"expected 'else', got {tok[1]!r}", tok[2])
            orelse = self.expr()
            return If(cond, then, orelse, pos)
        return self.or_expr()

    def or_expr(self) -> Node:
        node = self.and_expr()
        while self.peek()[:2] == ("kw", "or"):
            pos = self.next()[2]
            node = Binary("or", node, self.and_expr(), pos)
        return node

    def and_expr(self) -> Node:
        node = self.not_expr()
        while self.peek()[:2] == ("kw", "and"):
            pos = self.next()[2]
            node = Binary("and", node, self.not_expr(), pos)
        return node

    def not_expr(self) -> Node:
        kind, text, pos = self.peek()
        if kind == "kw" and text == "not":
            self.next()
            self._enter(pos)
            try:
                return Unary("not", self.not_expr(), pos)
            finally:
                self._leave()
        return self.cmp_expr()

    def cmp_expr(self) -> Node:
        node = self.add_expr()
        kind, text, pos = self.peek()
        if kind == "op" and text in ("<", "<=", ">", ">=", "==", "!="):
            self.next()
            node = Binary(text, node, self.add_expr(), pos)
            kind, text, pos = self.peek()
            if kind == "op" and text in ("<", "<=", ">", ">=", "==", "!="):
                raise DslError("syntax_error", "chained comparisons are not allowed", pos)
        return node

    def add_expr(self) -> Node:
        node = self.mul_expr()
        while self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
            _, op, pos = self.next()
            node = Binary(op, node, self.mul_expr(), pos)
        return node

    def mul_expr(self) -> Node:
        node = self.unary_expr()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            _, op, pos = self.next()
            node = Binary(op, node, self.unary_expr(), pos)
        return node

    def unary_expr(self) -> Node:
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.next()
            self._enter(pos)
            try:
                return Unary("-", self.unary_expr(), pos)
            finally:
                self._leave()
        return self.atom()

    def atom(self) -> Node:
        kind, text, pos = self.next()
        if kind == "num":
            return Num(float(text), pos)
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                self.next()
                args = []
                if self.peek()[:2] != ("op", ")"):
                    args.append(self.expr())
                    while self.peek()[:2] == ("op", ","):
                        self.next()
                        args.append(self.expr())
                self.expect("op", ")")
                return Call(text, tuple(args), pos)
            return Ident(text, pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect("op", ")")
            return node
        raise DslError("syntax_error", f"unexpected token {text!r}", pos)


# --- AST utilities ---------------------------------------------------------

def _children(node: Node) -> tuple:
    if isinstance(node, Unary):
        return (node.operand,)
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, If):
        return (node.cond, node.then, node.orelse)
    if isinstance(node, Let):
        return (node.value, node.body)
    if isinstance(node, Call):
        return node.args
    return ()


def walk(node: Node):
    """Pre-order traversal; iterative so cap-sized programs cannot overflow."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(_children(n)))


def node_count(node: Node) -> int:
    return sum(1 for _ in walk(node))


def max_depth(node: Node) -> int:
    deepest = 0
    stack = [(node, 1)]
    while stack:
        n, d = stack.pop()
        if d > deepest:
            deepest = d
        stack.extend((c, d + 1) for c in _children(n))
    return deepest


_PRECEDENCE = {
    "or": 1, "and": 2,
    "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4, "!=": 4,
    "+": 5, "-": 5, "*": 6, "/": 6,
}


def format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_source(node: Node) -> str:
    """Canonical printer; parse(to_source(ast)) is AST-identical to ast."""
    return _print(node, 0)


def _print(node: Node, parent_prec: int) -> str:
    if isinstance(node, Num):
        return format_number(node.value)
    if isinstance(node, Ident):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a, 0) for a in node.args)})"
    if isinstance(node, Unary):
        prec = 3 if node.op == "not" else 7
        inner = _print(node.operand, prec)
        text = f"not {inner}" if node.op == "not" else f"-{inner}"
        return f"({text})" if parent_prec > prec else text
    if isinstance(node, Binary):
        prec = _PRECEDENCE[node.op]
        # Left-associative: the right child needs parens at equal precedence.
        left = _print(node.left, prec)
        right = _print(node.right, prec + 1)
        text = f"{left} {node.op} {right}"
        return f"({text})" if parent_prec > prec or (parent_prec == 4 and prec == 4) else text
    if isinstance(node, If):
        text = f"if {_print(node.cond, 0)} then {_print(node.then, 0)} else {_print(node.orelse, 0)}"
        return f"({text})" if parent_prec > 0 else text
    if isinstance(node, Let):
        text = f"let {node.name} = {_print(node.value, 0)} in {_print(node.body, 0)}"
        return f"({text})" if parent_prec > 0 else text
    raise TypeError(f"unknown node {node!r}")


def constant_fold(node: Node) -> Optional[float]:
    """Value of the program if it is input-independent, else None."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Unary):
        v = constant_fold(node.operand)
        if v is None:
            return None
        return _guard(-v) if node.op == "-" else (0.0 if v != 0 else 1.0)
    if isinstance(node, Binary):
        left = constant_fold(node.left)
        right = constant_fold(node.right)
        if left is None or right is None:
            return None
        return _binary_value(node.op, left, right)
    if isinstance(node, If):
        cond = constant_fold(node.cond)
        if cond is None:
            return None
        return constant_fold(node.then) if cond != 0 else constant_fold(node.orelse)
    return None


# --- semantics -------------------------------------------------------------

def _guard(x: float) -> float:
    if x != x:  # NaN
        return 0.0
    if x > HUGE:
        return HUGE
    if x < -HUGE:
        return -HUGE
    return x


def _binary_value(op: str, left: float, right: float) -> float:
    if op == "+":
        return _guard(left + right)
    if op == "-":
        return _guard(left - right)
    if op == "*":
        return _guard(left * right)
    if op == "/":
        return 0.0 if right == 0.0 else _guard(left / right)
    if op == "<":
        return 1.0 if left < right else 0.0
    if op == "<=":
        return 1.0 if left <= right else 0.0
    if op == ">":
        return 1.0 if left > right else 0.0
    if op == ">=":
        return 1.0 if left >= right else 0.0
    if op == "==":
        return 1.0 if left == right else 0.0
    if op == "!=":
        return 1.0 if left != right else 0.0
    raise ValueError(op)


def _call_pow(x: float, y: float) -> float:
    try:
        return _guard(math.pow(x, y))
    except OverflowError:
        negative = x < 0 and y == int(y) and int(y) % 2 == 1
        return -HUGE if negative else HUGE
    except ValueError:
        return 0.0


def _call_log(x: float) -> float:
    return math.log(x) if x > 0 else 0.0


def _call_exp(x: float) -> float:
    try:
        return _guard(math.exp(x))
    except OverflowError:
        return HUGE


_Runner = Callable[[Mapping, Optional[dict]], float]


def _compile(node: Node, scope: frozenset) -> _Runner:
    if isinstance(node, Num):
        v = node.value
        return lambda ctx, env: v
    if isinstance(node, Ident):
        name = node.name
        if name in scope:
            return lambda ctx, env: env[name]
        return lambda ctx, env: float(ctx[name])
    if isinstance(node, Unary):
        run = _compile(node.operand, scope)
        if node.op == "-":
            return lambda ctx, env: _guard(-run(ctx, env))
        return lambda ctx, env: 0.0 if run(ctx, env) != 0 else 1.0
    if isinstance(node, Binary):
        left = _compile(node.left, scope)
        right = _compile(node.right, scope)
        op = node.op
        if op == "and":
            return lambda ctx, env: 1.0 if left(ctx, env) != 0 and right(ctx, env) != 0 else 0.0
        if op == "or":
            return lambda ctx, env: 1.0 if left(ctx, env) != 0 or right(ctx, env) != 0 else 0.0
        return lambda ctx, env: _binary_value(op, left(ctx, env), right(ctx, env))
    if isinstance(node, If):
        cond = _compile(node.cond, scope)
        then = _compile(node.then, scope)
        orelse = _compile(node.orelse, scope)
        return lambda ctx, env: then(ctx, env) if cond(ctx, env) != 0 else orelse(ctx, env)
    if isinstance(node, Let):
        value = _compile(node.value, scope)
        body = _compile(node.body, scope | {node.name})
        name = node.name

        def run_let(ctx, env, _v=value, _b=body, _n=name):
            inner = {} if env is None else dict(env)
            inner[_n] = _v(ctx, env)
            return _b(ctx, inner)

        return run_let
    if isinstance(node, Call):
        func = node.func
        if func == "percentile":
            # First argument is a stat name, not an expression.
            stat = node.args[0].name  # validated to be an Ident
            p_run = _compile(node.args[1], scope)
            return lambda ctx, env: _guard(float(ctx["percentile"](stat, p_run(ctx, env))))
        arg_runs = [_compile(a, scope) for a in node.args]
        if func == "abs":
            a = arg_runs[0]
            return lambda ctx, env: _guard(abs(a(ctx, env)))
        if func == "floor":
            a = arg_runs[0]
            return lambda ctx, env: _guard(float(math.floor(a(ctx, env))))
        if func == "log":
            a = arg_runs[0]
            return lambda ctx, env: _guard(_call_log(a(ctx, env)))
        if func == "exp":
            a = arg_runs[0]
            return lambda ctx, env: _call_exp(a(ctx, env))
        if func == "pow":
            a, b = arg_runs
            return lambda ctx, env: _call_pow(a(ctx, env), b(ctx, env))
        if func == "min":
            return lambda ctx, env: _guard(min(r(ctx, env) for r in arg_runs))
        if func == "max":
            return lambda ctx, env: _guard(max(r(ctx, env) for r in arg_runs))
        if func == "clamp":
            a, lo, hi = arg_runs
            return lambda ctx, env: _guard(min(max(a(ctx, env), lo(ctx, env)), hi(ctx, env)))
        # Context callables: is_full(i), ghost_contains(), ghost_count(), ghost_age().
        return lambda ctx, env: _guard(float(ctx[func](*(r(ctx, env) for r in arg_runs))))
    raise TypeError(f"unknown node {node!r}")


# --- programs ---------------------------------------------------------------

@dataclass(frozen=True)
class ScoreProgram:
    source: str
    ast: Node
    kind: str
    node_count: int
    max_depth: int
    _run: _Runner = field(compare=False, repr=False)

    def evaluate(self, context: Mapping) -> float:
        return self._run(context, None)


def _check_bindings(ast: Node, kind: str) -> list[tuple[str, str, int]]:
    """Return (code, message, position) issues for identifier/function use."""
    issues = []
    idents = CONTEXT_IDENTIFIERS[kind]
    funcs = dict(MATH_FUNCTIONS)
    funcs.update(CONTEXT_FUNCTIONS[kind])

    def visit(node: Node, scope: frozenset):
        if isinstance(node, Ident):
            if node.name not in scope and node.name not in idents:
                code = "wrong_context" if node.name in _ALL_IDENTIFIERS else "unknown_identifier"
                issues.append((code, f"identifier {node.name!r} is not bound for kind {kind!r}", node.pos))
        elif isinstance(node, Unary):
            visit(node.operand, scope)
        elif isinstance(node, Binary):
            visit(node.left, scope)
            visit(node.right, scope)
        elif isinstance(node, If):
            visit(node.cond, scope)
            visit(node.then, scope)
            visit(node.orelse, scope)
        elif isinstance(node, Let):
            visit(node.value, scope)
            visit(node.body, scope | {node.name})
        elif isinstance(node, Call):
            if node.func not in funcs:
                code = "wrong_context" if node.func in _ALL_FUNCTIONS else "unknown_function"
                issues.append((code, f"function {node.func!r} is not available for kind {kind!r}", node.pos))
            else:
                lo, hi = funcs[node.func]
                if len(node.args) < lo or (hi is not None and len(node.args) > hi):
                    issues.append(("bad_arity",
                                   f"{node.func} expects {lo}{'' if hi == lo else '+' if hi is None else f'..{hi}'} args, got {len(node.args)}",
                                   node.pos))
            if node.func == "percentile":
                if node.args and isinstance(node.args[0], Ident) and node.args[0].name in STAT_NAMES:
                    for a in node.args[1:]:
                        visit(a, scope)
                    return
                issues.append(("bad_stat_name",
                               f"percentile's first argument must be one of {STAT_NAMES}", node.pos))
                for a in node.args[1:]:
                    visit(a, scope)
                return
            for a in node.args:
                visit(a, scope)

    visit(ast, frozenset())
    return issues


def parse(source: str, kind: str) -> ScoreProgram:
    """Parse and bind a program for a context kind; raises DslError."""
    if kind not in KINDS:
        raise ValueError(f"unknown context kind {kind!r}")
    ast = _Parser(source).parse()
    count = node_count(ast)
    if count > NODE_CAP:
        raise DslError("node_cap_exceeded", f"program has {count} nodes (cap {NODE_CAP})")
    depth = max_depth(ast)
    if depth > DEPTH_CAP:
        raise DslError("depth_cap_exceeded", f"program depth {depth} exceeds {DEPTH_CAP}")
    issues = _check_bindings(ast, kind)
    if issues:
        code, message, pos = issues[0]
        raise DslError(code, message, pos)
    return ScoreProgram(source, ast, kind, count, depth, _compile(ast, frozenset()))


def evaluate(program: ScoreProgram, context: Mapping) -> float:
    return program.evaluate(context)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[tuple[str, str], ...]  # (code, message)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(code for code, _ in self.issues)


# Widest legal rounded outputs across any topology (M <= 5).
_QT_RANGES = {QT_INIT: (0, 4), QT_TRANSITION: (-2, 4)}


def validate(source_or_program, kind: str) -> ValidationReport:
    """Non-raising validity report used by the search loop.

    Checks grammar, identifier/function bindings for the kind, the node cap,
    and (for queue-routing kinds) that a constant program folds to a value in
    the routable range.
    """
    if isinstance(source_or_program, ScoreProgram):
        ast = source_or_program.ast
    else:
        try:
            ast = _Parser(source_or_program).parse()
        except DslError as err:
            return ValidationReport(False, ((err.code, str(err)),))
    issues: list[tuple[str, str]] = []
    count = node_count(ast)
    if count > NODE_CAP:
        issues.append(("node_cap_exceeded", f"program has {count} nodes (cap {NODE_CAP})"))
    depth = max_depth(ast)
    if depth > DEPTH_CAP:
        issues.append(("depth_cap_exceeded", f"program depth {depth} exceeds {DEPTH_CAP}"))
    if issues:
        return ValidationReport(False, tuple(issues))
    issues.extend((code, msg) for code, msg, _ in _check_bindings(ast, kind))
    if kind in _QT_RANGES and not issues:
        folded = constant_fold(ast)
        if folded is not None:
            lo, hi = _QT_RANGES[kind]
            if not (lo <= round(folded) <= hi):
                issues.append(("constant_out_of_range",
                               f"constant program folds to {folded}, outside [{lo}, {hi}]"))
    return ValidationReport(not issues, tuple(issues))


# --- grammar-driven program generation (used by fuzz tests) -----------------

def random_program(rng: random.Random, kind: str, max_depth: int = 4) -> str:
    """Draw a random well-formed program for a kind from the grammar."""
    idents = sorted(CONTEXT_IDENTIFIERS[kind])
    funcs = dict(MATH_FUNCTIONS)
    funcs.update(CONTEXT_FUNCTIONS[kind])

    def gen(depth: int) -> Node:
        if depth >= max_depth or rng.random() < 0.25:
            if rng.random() < 0.5:
                return Num(round(rng.uniform(-100, 100), 3))
            return Ident(rng.choice(idents))
        roll = rng.random()
        if roll < 0.35:
            op = rng.choice(["+", "-", "*", "/", "<", "<=", ">", ">=", "==", "!=", "and", "or"])
            return Binary(op, gen(depth + 1), gen(depth + 1))
        if roll < 0.5:
            return If(gen(depth + 1), gen(depth + 1), gen(depth + 1))
        if roll < 0.6:
            return Let(f"v{depth}", gen(depth + 1), gen(depth + 1))
        if roll < 0.7:
            return Unary(rng.choice(["-", "not"]), gen(depth + 1))
        name = rng.choice(sorted(funcs))
        lo, hi = funcs[name]
        arity = lo if hi is None else rng.randint(lo, hi)
        if name == "percentile":
            return Call(name, (Ident(rng.choice(STAT_NAMES)), gen(depth + 1)))
        return Call(name, tuple(gen(depth + 1) for _ in range(arity)))

    return to_source(gen(0))
