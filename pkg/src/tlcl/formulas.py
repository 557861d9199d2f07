"""Truncated linear temporal logic over real-valued state traces.

Formulas are immutable trees in positive normal form: negation exists only
at the atomic level.  Atomic predicates are half-space constraints on one
state dimension, ``s_d < theta`` or ``s_d > theta``, with thresholds either
concrete floats or named parameters (written ``?p0``, ``?p1``, ...) to be
instantiated later.

Semantics are quantitative.  ``robustness`` returns a margin that is
positive iff the formula holds on the (finite) trace, with ties at exactly
zero counted as violation.  Truth constants and the end-of-trace behaviour
of "next" are capped at +/-BOUND so robustness stays finite.

A trace is a float array of shape (T+1, k): T+1 state samples of a
k-dimensional signal.  Batched evaluation over (B, T+1, k) arrays is the
fast path used by mining.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

# Saturation bound for truth constants and end-of-trace "next".
BOUND = 1.0e6


class ParseError(ValueError):
    """Raised on malformed formula text; ``pos`` is the character offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class Param:
    """Named free threshold, rendered as ``?name``."""

    name: str


@dataclass(frozen=True)
class Ap:
    """Half-space predicate on one state dimension.

    ``sign=+1`` reads ``s_dim < threshold`` and ``sign=-1`` reads
    ``s_dim > threshold``; either way the robustness margin is
    ``sign * (threshold - s_dim)``.
    """

    dim: int
    sign: int
    threshold: float | Param

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"Ap sign must be +1 or -1, got {self.sign}")
        if self.dim < 0:
            raise ValueError(f"Ap dimension must be >= 0, got {self.dim}")
        if not isinstance(self.threshold, Param):
            object.__setattr__(self, "threshold", float(self.threshold))


@dataclass(frozen=True)
class Formula:
    """Base node; use the concrete subclasses."""

    def __str__(self) -> str:
        return format_formula(self)


@dataclass(frozen=True)
class Top(Formula):
    pass


@dataclass(frozen=True)
class Bottom(Formula):
    pass


@dataclass(frozen=True)
class Atom(Formula):
    ap: Ap


@dataclass(frozen=True)
class NegAtom(Formula):
    ap: Ap


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    child: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    child: Formula


@dataclass(frozen=True)
class Always(Formula):
    child: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Release(Formula):
    left: Formula
    right: Formula


UNARY_OPS = (Next, Eventually, Always)
BINARY_OPS = (And, Or, Until, Release)
TEMPORAL_OPS = (Next, Eventually, Always, Until, Release)


# ---------------------------------------------------------------------------
# Tree plumbing


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, BINARY_OPS):
        return (f.left, f.right)
    if isinstance(f, UNARY_OPS):
        return (f.child,)
    return ()


def rebuild(f: Formula, kids: Sequence[Formula]) -> Formula:
    """Same node kind, new children."""
    if isinstance(f, BINARY_OPS):
        return type(f)(kids[0], kids[1])
    if isinstance(f, UNARY_OPS):
        return type(f)(kids[0])
    if kids:
        raise ValueError(f"{type(f).__name__} takes no children")
    return f


def iter_nodes(f: Formula) -> Iterator[tuple[tuple[int, ...], Formula]]:
    """Preorder walk yielding (path, node); paths are child-index tuples."""
    stack = [((), f)]
    while stack:
        path, node = stack.pop()
        yield path, node
        kids = children(node)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((path + (i,), kids[i]))


def node_count(f: Formula) -> int:
    return sum(1 for _ in iter_nodes(f))


def depth(f: Formula) -> int:
    kids = children(f)
    return 1 + max((depth(c) for c in kids), default=0)


def subtree_at(f: Formula, path: Sequence[int]) -> Formula:
    node = f
    for i in path:
        node = children(node)[i]
    return node


def replace_at(f: Formula, path: Sequence[int], new: Formula) -> Formula:
    if not path:
        return new
    kids = list(children(f))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return rebuild(f, kids)


def collect_aps(f: Formula) -> list[Ap]:
    """Distinct predicates, sorted for a stable order.

    Only concrete formulas have a meaningful sort (Param thresholds sort
    after floats, by name).
    """
    seen = {ap for _, node in iter_nodes(f) if isinstance(node, (Atom, NegAtom)) for ap in (node.ap,)}

    def key(ap: Ap):
        th = ap.threshold
        if isinstance(th, Param):
            return (ap.dim, ap.sign, 1, math.inf, th.name)
        return (ap.dim, ap.sign, 0, th, "")

    return sorted(seen, key=key)


def collect_params(f: Formula) -> list[str]:
    """Parameter names in first-appearance (preorder) order."""
    out: list[str] = []
    for _, node in iter_nodes(f):
        if isinstance(node, (Atom, NegAtom)) and isinstance(node.ap.threshold, Param):
            name = node.ap.threshold.name
            if name not in out:
                out.append(name)
    return out


def is_concrete(f: Formula) -> bool:
    return not collect_params(f)


def instantiate(f: Formula, theta: Mapping[str, float]) -> Formula:
    """Substitute concrete thresholds for every parameter.

    Every parameter in the formula must be assigned; extra names are
    rejected to catch mismatched valuations early.
    """
    names = set(collect_params(f))
    given = set(theta)
    if names - given:
        raise ValueError(f"missing values for parameters: {sorted(names - given)}")
    if given - names:
        raise ValueError(f"unknown parameters: {sorted(given - names)}")

    def go(node: Formula) -> Formula:
        if isinstance(node, (Atom, NegAtom)):
            th = node.ap.threshold
            if isinstance(th, Param):
                return type(node)(Ap(node.ap.dim, node.ap.sign, float(theta[th.name])))
            return node
        kids = children(node)
        return rebuild(node, [go(c) for c in kids]) if kids else node

    return go(f)


def rename_params(f: Formula, prefix: str = "p") -> Formula:
    """Renumber parameters ``prefix0, prefix1, ...`` in preorder."""
    mapping = {old: f"{prefix}{i}" for i, old in enumerate(collect_params(f))}

    def go(node: Formula) -> Formula:
        if isinstance(node, (Atom, NegAtom)):
            th = node.ap.threshold
            if isinstance(th, Param):
                return type(node)(Ap(node.ap.dim, node.ap.sign, Param(mapping[th.name])))
            return node
        kids = children(node)
        return rebuild(node, [go(c) for c in kids]) if kids else node

    return go(f)


# ---------------------------------------------------------------------------
# Printing

_PRECEDENCE = {Or: 1, And: 2, Until: 3, Release: 3}


def _fmt_threshold(th: float | Param, anonymous: bool) -> str:
    if isinstance(th, Param):
        return "?*" if anonymous else f"?{th.name}"
    return repr(th)


def _fmt_ap(ap: Ap, names: Mapping[int, str] | None, anonymous: bool) -> str:
    name = names.get(ap.dim) if names else None
    if name is None:
        name = f"s{ap.dim}"
    cmp = "<" if ap.sign == 1 else ">"
    return f"{name} {cmp} {_fmt_threshold(ap.threshold, anonymous)}"


def format_formula(
    f: Formula,
    names: Mapping[int, str] | None = None,
    _anonymous: bool = False,
) -> str:
    """Render to concrete syntax that ``parse_formula`` accepts back.

    ``names`` optionally maps dimensions to feature names.
    """

    def go(node: Formula, parent_prec: int) -> str:
        if isinstance(node, Top):
            return "true"
        if isinstance(node, Bottom):
            return "false"
        if isinstance(node, Atom):
            s = _fmt_ap(node.ap, names, _anonymous)
            return f"({s})" if parent_prec > 0 else s
        if isinstance(node, NegAtom):
            return f"!({_fmt_ap(node.ap, names, _anonymous)})"
        if isinstance(node, (Next, Eventually, Always)):
            op = {Next: "X", Eventually: "F", Always: "G"}[type(node)]
            return f"{op} {go(node.child, 4)}"
        prec = _PRECEDENCE[type(node)]
        op = {And: "&", Or: "|", Until: "U", Release: "R"}[type(node)]
        # Binary ops associate left except U/R which associate right.
        if isinstance(node, (Until, Release)):
            left = go(node.left, prec + 1)
            right = go(node.right, prec)
        else:
            left = go(node.left, prec)
            right = go(node.right, prec + 1)
        s = f"{left} {op} {right}"
        return f"({s})" if parent_prec > prec else s

    return go(f, 0)


def _sort_key(f: Formula) -> str:
    return format_formula(f, _anonymous=True)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<param>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[()&|!<>])
    """,
    re.VERBOSE,
)

_RESERVED = {"G", "F", "X", "U", "R", "true", "false"}


class _Parser:
    def __init__(self, text: str, features: Mapping[str, int] | None):
        self.text = text
        self.features = features or {}
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            if kind != "ws":
                self.tokens.append((kind, m.group(), pos))
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("eof", "", len(self.text))

    def next(self) -> tuple[str, str, int]:
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.next()
        if val != value:
            raise ParseError(f"expected {value!r}, got {val or 'end of input'!r}", pos)

    def parse(self) -> Formula:
        f = self.parse_or()
        kind, val, pos = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected trailing input {val!r}", pos)
        return f

    def parse_or(self) -> Formula:
        f = self.parse_and()
        while self.peek()[1] == "|":
            self.next()
            f = Or(f, self.parse_and())
        return f

    def parse_and(self) -> Formula:
        f = self.parse_until()
        while self.peek()[1] == "&":
            self.next()
            f = And(f, self.parse_until())
        return f

    def parse_until(self) -> Formula:
        f = self.parse_unary()
        kind, val, pos = self.peek()
        if kind == "name" and val in ("U", "R"):
            self.next()
            right = self.parse_until()
            return Until(f, right) if val == "U" else Release(f, right)
        return f

    def parse_unary(self) -> Formula:
        kind, val, pos = self.peek()
        if kind == "name" and val in ("G", "F", "X"):
            self.next()
            child = self.parse_unary()
            return {"G": Always, "F": Eventually, "X": Next}[val](child)
        if val == "!":
            self.next()
            child = self.parse_unary()
            if isinstance(child, Atom):
                return NegAtom(child.ap)
            raise ParseError("negation is only allowed on atomic predicates", pos)
        return self.parse_primary()

    def parse_primary(self) -> Formula:
        kind, val, pos = self.next()
        if val == "(":
            f = self.parse_or()
            self.expect(")")
            return f
        if kind == "name":
            if val == "true":
                return Top()
            if val == "false":
                return Bottom()
            if val in _RESERVED:
                raise ParseError(f"unexpected operator {val!r}", pos)
            return self.parse_atom(val, pos)
        raise ParseError(f"expected a formula, got {val or 'end of input'!r}", pos)

    def parse_atom(self, name: str, pos: int) -> Formula:
        if name in self.features:
            dim = self.features[name]
        elif re.fullmatch(r"s\d+", name):
            dim = int(name[1:])
        else:
            raise ParseError(f"unknown feature name {name!r}", pos)
        kind, val, cpos = self.next()
        if val not in ("<", ">"):
            raise ParseError(f"expected '<' or '>' after {name!r}", cpos)
        sign = 1 if val == "<" else -1
        kind, tval, tpos = self.next()
        if kind == "number":
            return Atom(Ap(dim, sign, float(tval)))
        if kind == "param":
            return Atom(Ap(dim, sign, Param(tval[1:])))
        raise ParseError("expected a number or ?parameter threshold", tpos)


def parse_formula(text: str, features: Mapping[str, int] | None = None) -> Formula:
    """Parse concrete syntax.

    Operators by loosening precedence: ``! G F X`` bind tightest, then
    ``U``/``R`` (right-associative), then ``&``, then ``|``.  Atoms are
    ``<name> < <num>`` / ``<name> > <num>`` where name is ``s<dim>`` or a
    key of ``features``; thresholds may be ``?p0``-style parameters.
    """
    return _Parser(text, features).parse()


# ---------------------------------------------------------------------------
# Quantitative semantics


def as_trace(trace) -> np.ndarray:
    arr = np.asarray(trace, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"trace must be a (T+1, k) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("trace contains non-finite values")
    return arr


def robustness_profile(f: Formula, states: np.ndarray) -> np.ndarray:
    """Robustness at every start time for a batch of equal-length traces.

    ``states`` has shape (B, T+1, k); the result has shape (B, T+1) with
    entry [b, t] the robustness of ``f`` on trace b evaluated from time t.
    Shared subtrees are evaluated once.
    """
    S = np.asarray(states, dtype=float)
    if S.ndim != 3:
        raise ValueError(f"expected (B, T+1, k) states, got shape {S.shape}")
    B, T1, k = S.shape
    cache: dict[Formula, np.ndarray] = {}

    def ev(node: Formula) -> np.ndarray:
        out = cache.get(node)
        if out is None:
            out = _ev(node)
            cache[node] = out
        return out

    def _ev(node: Formula) -> np.ndarray:
        if isinstance(node, Top):
            return np.full((B, T1), BOUND)
        if isinstance(node, Bottom):
            return np.full((B, T1), -BOUND)
        if isinstance(node, (Atom, NegAtom)):
            ap = node.ap
            if isinstance(ap.threshold, Param):
                raise ValueError("cannot evaluate a formula with free parameters")
            if ap.dim >= k:
                raise ValueError(f"predicate uses dimension {ap.dim} but traces have {k}")
            margin = ap.sign * (ap.threshold - S[:, :, ap.dim])
            return margin if isinstance(node, Atom) else -margin
        if isinstance(node, And):
            return np.minimum(ev(node.left), ev(node.right))
        if isinstance(node, Or):
            return np.maximum(ev(node.left), ev(node.right))
        if isinstance(node, Next):
            c = ev(node.child)
            out = np.empty_like(c)
            out[:, :-1] = c[:, 1:]
            out[:, -1] = -BOUND
            return out
        if isinstance(node, Always):
            c = ev(node.child)
            return np.minimum.accumulate(c[:, ::-1], axis=1)[:, ::-1]
        if isinstance(node, Eventually):
            c = ev(node.child)
            return np.maximum.accumulate(c[:, ::-1], axis=1)[:, ::-1]
        if isinstance(node, Until):
            # rho(t) = max_{t'>=t} min(rho2(t'), min_{t<=u<t'} rho1(u)),
            # capped so an immediate match cannot exceed BOUND.
            r1, r2 = ev(node.left), ev(node.right)
            r2c = np.minimum(r2, BOUND)
            out = np.empty_like(r2c)
            out[:, -1] = r2c[:, -1]
            for t in range(T1 - 2, -1, -1):
                out[:, t] = np.maximum(r2c[:, t], np.minimum(r1[:, t], out[:, t + 1]))
            return out
        if isinstance(node, Release):
            # Dual recursion; the empty-prefix max contributes -BOUND.
            r1, r2 = ev(node.left), ev(node.right)
            r2c = np.maximum(r2, -BOUND)
            out = np.empty_like(r2c)
            out[:, -1] = r2c[:, -1]
            for t in range(T1 - 2, -1, -1):
                out[:, t] = np.minimum(r2c[:, t], np.maximum(r1[:, t], out[:, t + 1]))
            return out
        raise TypeError(f"unknown formula node {type(node).__name__}")

    return ev(f)


def robustness(trace, f: Formula, t: int = 0) -> float:
    """Robustness margin of ``f`` on one trace, evaluated from time ``t``."""
    arr = as_trace(trace)
    if not 0 <= t < arr.shape[0]:
        raise ValueError(f"start time {t} outside trace of length {arr.shape[0]}")
    return float(robustness_profile(f, arr[None])[0, t])


def satisfies(trace, f: Formula, t: int = 0) -> bool:
    """Strictly positive robustness; zero counts as violation."""
    return robustness(trace, f, t) > 0.0


def boolean_eval(trace, f: Formula, t: int = 0) -> bool:
    """Classical Boolean semantics by direct recursion over time.

    Independent of the robustness evaluator on purpose: this is the slow
    reference used to cross-check sign soundness.
    """
    arr = as_trace(trace)
    T = arr.shape[0] - 1
    if not 0 <= t <= T:
        raise ValueError(f"start time {t} outside trace of length {T + 1}")

    def ev(node: Formula, u: int) -> bool:
        if isinstance(node, Top):
            return True
        if isinstance(node, Bottom):
            return False
        if isinstance(node, (Atom, NegAtom)):
            ap = node.ap
            if isinstance(ap.threshold, Param):
                raise ValueError("cannot evaluate a formula with free parameters")
            holds = ap.sign * (ap.threshold - arr[u, ap.dim]) > 0.0
            return holds if isinstance(node, Atom) else not holds
        if isinstance(node, And):
            return ev(node.left, u) and ev(node.right, u)
        if isinstance(node, Or):
            return ev(node.left, u) or ev(node.right, u)
        if isinstance(node, Next):
            return u < T and ev(node.child, u + 1)
        if isinstance(node, Always):
            return all(ev(node.child, v) for v in range(u, T + 1))
        if isinstance(node, Eventually):
            return any(ev(node.child, v) for v in range(u, T + 1))
        if isinstance(node, Until):
            return any(
                ev(node.right, v) and all(ev(node.left, w) for w in range(u, v))
                for v in range(u, T + 1)
            )
        if isinstance(node, Release):
            return all(
                ev(node.right, v) or any(ev(node.left, w) for w in range(u, v))
                for v in range(u, T + 1)
            )
        raise TypeError(f"unknown formula node {type(node).__name__}")

    return ev(f, t)


# ---------------------------------------------------------------------------
# Simplification and canonical form


def simplify(f: Formula) -> Formula:
    """Fixed rule set, applied bottom-up to a fixpoint.

    Rules: GG=G, FF=F, x&x=x, x|x=x, x&true=x, x|false=x, x&false=false,
    x|true=true, xUx=x, xRx=x.  Each is an exact robustness identity (the
    truth-constant rules up to the +/-BOUND saturation, which no bounded
    trace can reach), so simplification never changes a margin.  A single
    bottom-up pass reaches the fixpoint: every rule's result is one of the
    already-simplified children.
    """
    kids = children(f)
    if kids:
        f = rebuild(f, [simplify(c) for c in kids])

    if isinstance(f, And):
        l, r = f.left, f.right
        if isinstance(l, Bottom) or isinstance(r, Bottom):
            return Bottom()
        if isinstance(l, Top):
            return r
        if isinstance(r, Top):
            return l
        if l == r:
            return l
        return f
    if isinstance(f, Or):
        l, r = f.left, f.right
        if isinstance(l, Top) or isinstance(r, Top):
            return Top()
        if isinstance(l, Bottom):
            return r
        if isinstance(r, Bottom):
            return l
        if l == r:
            return l
        return f
    if isinstance(f, Always) and isinstance(f.child, Always):
        return f.child
    if isinstance(f, Eventually) and isinstance(f.child, Eventually):
        return f.child
    if isinstance(f, (Until, Release)) and f.left == f.right:
        return f.left
    return f


def _flatten(f: Formula, op) -> list[Formula]:
    if isinstance(f, op):
        return _flatten(f.left, op) + _flatten(f.right, op)
    return [f]


def canonical(f: Formula) -> Formula:
    """Simplified form with And/Or chains flattened, deduplicated, and
    sorted by rendered text so structurally equal formulas compare equal."""
    f = simplify(f)

    def go(node: Formula) -> Formula:
        kids = children(node)
        if not kids:
            return node
        if isinstance(node, (And, Or)):
            op = type(node)
            args = []
            for part in _flatten(node, op):
                args.append(go(part))
            uniq: list[Formula] = []
            for a in sorted(args, key=_sort_key):
                if not uniq or uniq[-1] != a:
                    uniq.append(a)
            out = uniq[0]
            for a in uniq[1:]:
                out = op(out, a)
            return out
        return rebuild(node, [go(c) for c in kids])

    return go(f)


def canonical_key(f: Formula) -> str:
    """Text key identifying a formula up to argument order and parameter
    names; used for population dedup and automaton state identity."""
    return format_formula(rename_params(canonical(f)))


# ---------------------------------------------------------------------------
# Structural checks


def is_temporally_consistent(f: Formula) -> bool:
    """Every predicate must sit under at least one temporal operator, so
    the formula constrains behaviour over time rather than just s_0."""

    def go(node: Formula, guarded: bool) -> bool:
        if isinstance(node, (Atom, NegAtom)):
            return guarded
        g = guarded or isinstance(node, TEMPORAL_OPS)
        return all(go(c, g) for c in children(node))

    return go(f, False)
