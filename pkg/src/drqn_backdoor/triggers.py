"""Temporal-pattern trigger language: parse, evaluate, scan, synthesize.

A trigger is a boolean formula over arithmetic constraints between values
at different offsets of a sliding window of a scalar time series.  The
concrete syntax is::

    trigger name(window=4, duration=7) {
        d[1]-d[0] > -3 && d[1]-d[0] < -2.6 && ...
    }

with ``&&`` / ``||`` / ``ite(cond, then, else)`` combinators and atoms of
the form ``d[i] OP d[j] CMP const``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

ARITH_OPS = ("-", "+", "*", "/")
COMPARATORS = ("==", "!=", ">=", "<=", ">", "<")

# |divisor| below this makes a division atom evaluate to false instead of
# raising, so evaluation stays total on arbitrary observed data.
DIV_GUARD = 1e-12

_NEGATED_CMP = {"==": "!=", "!=": "==", ">": "<=", ">=": "<", "<": ">=", "<=": ">"}


class TriggerSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class SynthesisFailed(RuntimeError):
    """Raised when no satisfying window is found within the attempt budget."""


@dataclass(frozen=True)
class Atom:
    lhs_index: int
    rhs_index: int
    arith_op: str
    comparator: str
    constant: float

    def __post_init__(self):
        if self.arith_op not in ARITH_OPS:
            raise ValueError(f"unknown arithmetic operator {self.arith_op!r}")
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")


@dataclass(frozen=True)
class And:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Or:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Ite:
    cond: "Node"
    then: "Node"
    other: "Node"


Node = Union[Atom, And, Or, Ite]


@dataclass(frozen=True)
class TriggerFormula:
    root: Node
    window_len: int
    name: str
    duration: int | None = None

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError(f"window_len must be >= 2, got {self.window_len}")
        for atom in iter_atoms(self.root):
            if not (0 <= atom.lhs_index < self.window_len
                    and 0 <= atom.rhs_index < self.window_len):
                raise ValueError(
                    f"atom index out of range for window {self.window_len}: {atom}")
        if self.window_len > 10:
            log.warning("trigger %r has window_len %d > 10; recurrent nets may "
                        "struggle to memorize such long patterns",
                        self.name, self.window_len)


@dataclass(frozen=True)
class TriggerOccurrence:
    end_index: int
    window: tuple


def iter_atoms(node: Node) -> Iterator[Atom]:
    if isinstance(node, Atom):
        yield node
    elif isinstance(node, (And, Or)):
        yield from iter_atoms(node.left)
        yield from iter_atoms(node.right)
    elif isinstance(node, Ite):
        yield from iter_atoms(node.cond)
        yield from iter_atoms(node.then)
        yield from iter_atoms(node.other)
    else:
        raise TypeError(f"not a trigger AST node: {node!r}")


# ---------------------------------------------------------------------------
# evaluation


def _eval_atom(atom: Atom, window: Sequence[float]) -> bool:
    a = window[atom.lhs_index]
    b = window[atom.rhs_index]
    op = atom.arith_op
    if op == "-":
        v = a - b
    elif op == "+":
        v = a + b
    elif op == "*":
        v = a * b
    else:
        if abs(b) < DIV_GUARD:
            return False
        v = a / b
    c = atom.constant
    cmp = atom.comparator
    if cmp == "==":
        return v == c
    if cmp == "!=":
        return v != c
    if cmp == ">":
        return v > c
    if cmp == ">=":
        return v >= c
    if cmp == "<":
        return v < c
    return v <= c


def _eval_node(node: Node, window: Sequence[float]) -> bool:
    if isinstance(node, Atom):
        return _eval_atom(node, window)
    if isinstance(node, And):
        return _eval_node(node.left, window) and _eval_node(node.right, window)
    if isinstance(node, Or):
        return _eval_node(node.left, window) or _eval_node(node.right, window)
    if isinstance(node, Ite):
        if _eval_node(node.cond, window):
            return _eval_node(node.then, window)
        return _eval_node(node.other, window)
    raise TypeError(f"not a trigger AST node: {node!r}")


def evaluate(formula: TriggerFormula, window: Sequence[float]) -> bool:
    """Truth of the formula on one window of ``window_len`` values."""
    if len(window) != formula.window_len:
        raise ValueError(
            f"window length {len(window)} != formula window_len {formula.window_len}")
    if not all(math.isfinite(v) for v in window):
        raise ValueError("window contains non-finite values")
    return _eval_node(formula.root, window)


def scan(formula: TriggerFormula, series: Sequence[float]) -> list[TriggerOccurrence]:
    """All end indices t where the window ending at t satisfies the formula."""
    n = formula.window_len
    if len(series) < n:
        raise ValueError(f"series length {len(series)} < window length {n}")
    values = [float(v) for v in series]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("series contains non-finite values")
    root = formula.root
    out = []
    for t in range(n - 1, len(values)):
        window = values[t - n + 1:t + 1]
        if _eval_node(root, window):
            out.append(TriggerOccurrence(end_index=t, window=tuple(window)))
    return out


def negate(node: Node) -> Node:
    if isinstance(node, Atom):
        return Atom(node.lhs_index, node.rhs_index, node.arith_op,
                    _NEGATED_CMP[node.comparator], node.constant)
    if isinstance(node, And):
        return Or(negate(node.left), negate(node.right))
    if isinstance(node, Or):
        return And(negate(node.left), negate(node.right))
    if isinstance(node, Ite):
        return Ite(node.cond, negate(node.then), negate(node.other))
    raise TypeError(f"not a trigger AST node: {node!r}")


# ---------------------------------------------------------------------------
# concrete syntax


class _Token:
    __slots__ = ("kind", "value", "line", "col")

    def __init__(self, kind, value, line, col):
        self.kind = kind
        self.value = value
        self.line = line
        self.col = col


_SYMBOLS = ("&&", "||", "==", "!=", ">=", "<=", ">", "<", "(", ")", "{", "}",
            "[", "]", ",", "=", "-", "+", "*", "/")


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        matched = False
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(_Token("sym", sym, line, col))
                i += len(sym)
                col += len(sym)
                matched = True
                break
        if matched:
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] in ".eE"
                             or (text[j] in "+-" and text[j - 1] in "eE")):
                j += 1
            lit = text[i:j]
            try:
                value = float(lit)
            except ValueError:
                raise TriggerSyntaxError(f"bad number literal {lit!r}", line, col)
            tokens.append(_Token("number", value, line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise TriggerSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("eof", None, line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.window_len = None

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str):
        tok = self.peek()
        raise TriggerSyntaxError(message, tok.line, tok.col)

    def expect(self, kind, value=None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value if value is not None else kind
            got = "end of input" if tok.kind == "eof" else repr(tok.value)
            self.error(f"expected {want!r}, got {got}")
        return self.next()

    def accept(self, kind, value=None) -> bool:
        tok = self.peek()
        if tok.kind == kind and (value is None or tok.value == value):
            self.next()
            return True
        return False

    def parse_trigger(self) -> TriggerFormula:
        self.expect("ident", "trigger")
        name = self.expect("ident").value
        self.expect("sym", "(")
        self.expect("ident", "window")
        self.expect("sym", "=")
        window_tok = self.expect("number")
        window_len = int(window_tok.value)
        if window_len != window_tok.value or window_len < 2:
            raise TriggerSyntaxError("window must be an integer >= 2",
                                     window_tok.line, window_tok.col)
        self.window_len = window_len
        duration = None
        if self.accept("sym", ","):
            self.expect("ident", "duration")
            self.expect("sym", "=")
            dur_tok = self.expect("number")
            duration = int(dur_tok.value)
            if duration != dur_tok.value or duration < 1:
                raise TriggerSyntaxError("duration must be an integer >= 1",
                                         dur_tok.line, dur_tok.col)
        self.expect("sym", ")")
        self.expect("sym", "{")
        root = self.parse_or()
        self.expect("sym", "}")
        self.expect("eof")
        return TriggerFormula(root=root, window_len=window_len, name=name,
                              duration=duration)

    def parse_or(self) -> Node:
        node = self.parse_and()
        while self.accept("sym", "||"):
            node = Or(node, self.parse_and())
        return node

    def parse_and(self) -> Node:
        node = self.parse_unit()
        while self.accept("sym", "&&"):
            node = And(node, self.parse_unit())
        return node

    def parse_unit(self) -> Node:
        tok = self.peek()
        if tok.kind == "sym" and tok.value == "(":
            self.next()
            node = self.parse_or()
            self.expect("sym", ")")
            return node
        if tok.kind == "ident" and tok.value == "ite":
            self.next()
            self.expect("sym", "(")
            cond = self.parse_or()
            self.expect("sym", ",")
            then = self.parse_or()
            self.expect("sym", ",")
            other = self.parse_or()
            self.expect("sym", ")")
            return Ite(cond, then, other)
        if tok.kind == "ident" and tok.value == "d":
            return self.parse_atom()
        self.error("expected atom, 'ite', or '('")

    def parse_index(self) -> int:
        self.expect("ident", "d")
        self.expect("sym", "[")
        tok = self.expect("number")
        idx = int(tok.value)
        if idx != tok.value or idx < 0:
            raise TriggerSyntaxError("window index must be a nonnegative integer",
                                     tok.line, tok.col)
        if idx >= self.window_len:
            raise TriggerSyntaxError(
                f"window index {idx} >= window length {self.window_len}",
                tok.line, tok.col)
        self.expect("sym", "]")
        return idx

    def parse_atom(self) -> Atom:
        lhs = self.parse_index()
        op_tok = self.peek()
        if op_tok.kind != "sym" or op_tok.value not in ARITH_OPS:
            self.error("expected arithmetic operator (- + * /)")
        op = self.next().value
        rhs = self.parse_index()
        cmp_tok = self.peek()
        if cmp_tok.kind != "sym" or cmp_tok.value not in COMPARATORS:
            self.error("expected comparator (== != > >= < <=)")
        cmp = self.next().value
        sign = 1.0
        if self.accept("sym", "-"):
            sign = -1.0
        elif self.accept("sym", "+"):
            pass
        const = sign * self.expect("number").value
        return Atom(lhs, rhs, op, cmp, const)


def parse(text: str) -> TriggerFormula:
    """Parse trigger source text into a :class:`TriggerFormula`."""
    return _Parser(_tokenize(text)).parse_trigger()


def parse_file(path) -> TriggerFormula:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def _fmt_const(c: float) -> str:
    if c == int(c) and abs(c) < 1e15:
        return str(int(c))
    return repr(c)


def _print_node(node: Node, parent: str = "or") -> str:
    if isinstance(node, Atom):
        return (f"d[{node.lhs_index}]{node.arith_op}d[{node.rhs_index}] "
                f"{node.comparator} {_fmt_const(node.constant)}")
    if isinstance(node, Ite):
        return (f"ite({_print_node(node.cond)}, {_print_node(node.then)}, "
                f"{_print_node(node.other)})")
    if isinstance(node, And):
        right = _print_node(node.right, "and")
        if isinstance(node.right, And):  # keep right-nested trees intact
            right = f"({right})"
        return f"{_print_node(node.left, 'and')} && {right}"
    if isinstance(node, Or):
        right = _print_node(node.right, "or")
        if isinstance(node.right, Or):
            right = f"({right})"
        s = f"{_print_node(node.left, 'or')} || {right}"
        if parent == "and":
            return f"({s})"
        return s
    raise TypeError(f"not a trigger AST node: {node!r}")


def to_source(formula: TriggerFormula) -> str:
    head = f"trigger {formula.name}(window={formula.window_len}"
    if formula.duration is not None:
        head += f", duration={formula.duration}"
    return f"{head}) {{ {_print_node(formula.root)} }}"


# ---------------------------------------------------------------------------
# synthesis

_MAX_BRANCHES = 1024


def _branches(node: Node) -> list[list[Atom]]:
    """All conjunctive branches whose satisfaction implies the formula."""
    if isinstance(node, Atom):
        return [[node]]
    if isinstance(node, And):
        out = []
        for a in _branches(node.left):
            for b in _branches(node.right):
                out.append(a + b)
                if len(out) > _MAX_BRANCHES:
                    return out
        return out
    if isinstance(node, Or):
        return _branches(node.left) + _branches(node.right)
    if isinstance(node, Ite):
        return (_branches(And(node.cond, node.then))
                + _branches(And(negate(node.cond), node.other)))
    raise TypeError(f"not a trigger AST node: {node!r}")


def _branch_holds(atoms: list[Atom], window) -> bool:
    return all(_eval_atom(a, window) for a in atoms)


def _propagate_intervals(atoms: list[Atom], anchors, bounds, rng):
    """Assign window values index by index for subtract-only conjunctions.

    Every atom constrains d[max(i,j)] once all lower indices are fixed, so a
    single left-to-right pass with interval intersection is exact for the
    difference-interval chains used by the shipped triggers.
    """
    n = len(anchors)
    lo_b, hi_b = bounds
    values = [None] * n
    for k in range(n):
        lo, hi = lo_b, hi_b
        lo_strict = hi_strict = False
        pin = None
        for atom in atoms:
            if max(atom.lhs_index, atom.rhs_index) != k:
                continue
            if atom.lhs_index == atom.rhs_index == k:
                if not _eval_atom(atom, [0.0] * n):  # d[k]-d[k] is always 0
                    return None
                continue
            if atom.comparator == "!=":
                continue  # handled by the post-check
            if atom.lhs_index == k:
                # d[k] - v  ~  c   =>   d[k]  ~  c + v
                bound = atom.constant + values[atom.rhs_index]
                cmp = atom.comparator
            else:
                # v - d[k]  ~  c   =>   d[k]  ~(flipped)  v - c
                bound = values[atom.lhs_index] - atom.constant
                cmp = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "=="}[
                    atom.comparator]
            if cmp == "==":
                pin = bound if pin is None or pin == bound else math.nan
            elif cmp in (">", ">="):
                if bound > lo or (bound == lo and cmp == ">"):
                    lo, lo_strict = bound, cmp == ">"
            else:
                if bound < hi or (bound == hi and cmp == "<"):
                    hi, hi_strict = bound, cmp == "<"
        if pin is not None:
            if math.isnan(pin) or pin < lo or pin > hi:
                return None
            values[k] = pin
            continue
        if hi < lo or (hi == lo and (lo_strict or hi_strict)):
            return None
        if lo == lo_b and hi == hi_b:
            # unconstrained so far: stay near the anchor value
            values[k] = min(max(anchors[k], lo_b), hi_b)
            continue
        margin = (hi - lo) * 1e-6
        values[k] = float(rng.uniform(lo + margin, hi - margin)) if hi > lo else lo
    return values


def _solve_branch(atoms, base_window, bounds, rng, attempts):
    pure_subtract = all(a.arith_op == "-" for a in atoms)
    n = len(base_window)
    lo_b, hi_b = bounds
    if pure_subtract:
        anchors = list(base_window)
        for k in range(attempts):
            values = _propagate_intervals(atoms, anchors, bounds, rng)
            if values is not None and _branch_holds(atoms, values):
                return values
            # jitter the free anchors; chains can run into the channel bounds
            anchors = [min(max(v + rng.uniform(-50.0, 50.0), lo_b), hi_b)
                       for v in base_window]
        return None
    span = max(hi_b - lo_b, 1.0)
    scale = min(150.0, span / 2)
    for _ in range(attempts):
        cand = np.clip(np.asarray(base_window, dtype=float)
                       + rng.uniform(-scale, scale, size=n), lo_b, hi_b)
        if _branch_holds(atoms, cand):
            return [float(v) for v in cand]
    return None


def synthesize_window(formula: TriggerFormula, base_window: Sequence[float], rng,
                      bounds: tuple[float, float] = (1.0, 10000.0),
                      max_attempts: int = 10000) -> tuple:
    """Produce a window satisfying the formula, staying inside channel bounds.

    Or/Ite formulas are split into conjunctive branches; a solvable branch is
    chosen uniformly at random.  Raises :class:`SynthesisFailed` when the
    attempt budget is exhausted.
    """
    if len(base_window) != formula.window_len:
        raise ValueError("base_window length != formula window_len")
    branches = _branches(formula.root)
    per_branch = max(50, max_attempts // (2 * len(branches)))
    solved = []
    for atoms in branches:
        w = _solve_branch(atoms, base_window, bounds, rng, per_branch)
        if w is not None:
            solved.append(w)
    if solved:
        window = solved[int(rng.integers(len(solved)))]
        if evaluate(formula, window):
            return tuple(window)
    # last resort: rejection sampling against the full formula
    lo_b, hi_b = bounds
    scale = min(150.0, max(hi_b - lo_b, 1.0) / 2)
    base = np.asarray(base_window, dtype=float)
    for _ in range(max_attempts):
        cand = np.clip(base + rng.uniform(-scale, scale, size=len(base)), lo_b, hi_b)
        cand = [float(v) for v in cand]
        if evaluate(formula, cand):
            return tuple(cand)
    raise SynthesisFailed(
        f"no satisfying window for {formula.name!r} in {max_attempts} attempts")
