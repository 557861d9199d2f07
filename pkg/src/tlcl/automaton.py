"""Finite-trace DFA compilation by formula progression.

A concrete formula over k atomic predicates induces a DFA whose alphabet
is the 2^k truth valuations of those predicates.  States are canonical
residual formulas: progressing a residual by one letter yields the
obligation on the rest of the trace, and a trace is accepted when the
final residual is satisfied by the empty remainder (``empty_accepts``).

Convention: the first state of a trace is consumed immediately after
reset, so after ``reset(s_0)`` the automaton has read one letter and
subsequent ``step`` calls feed s_1 .. s_T.  Acceptance after the full
trace then agrees with strict-robustness satisfaction for traces that put
no predicate exactly on its boundary.

One departure from textbook progression: "next" progresses to the child
conjoined with an F-true marker rather than the bare child.  The bare
child would let a trace that ends immediately afterwards accept whenever
the child is vacuously true over the empty remainder (e.g. X G mu on a
one-state trace), disagreeing with the strong-next robustness semantics.
The marker is false on the empty remainder and dissolves to true as soon
as one more letter arrives, which is exactly the strong-next obligation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .formulas import (
    And,
    Ap,
    Atom,
    Bottom,
    Eventually,
    Formula,
    NegAtom,
    Next,
    Or,
    Always,
    Release,
    Top,
    Until,
    as_trace,
    collect_aps,
    format_formula,
    is_concrete,
)

MAX_APS = 10
MAX_STATES = 4096


class AutomatonError(ValueError):
    pass


def label(state_vector, aps: Sequence[Ap]) -> int:
    """Bitmask valuation of ``aps`` at one state; bit i set iff AP i
    strictly holds."""
    s = np.asarray(state_vector, dtype=float)
    if s.ndim != 1:
        raise AutomatonError(f"expected a state vector, got shape {s.shape}")
    bits = 0
    for i, ap in enumerate(aps):
        if ap.dim >= s.shape[0]:
            raise AutomatonError(
                f"predicate dimension {ap.dim} out of range for state of length {s.shape[0]}"
            )
        if ap.sign * (ap.threshold - s[ap.dim]) > 0.0:
            bits |= 1 << i
    return bits


def unpack_valuation(bits: int, aps: Sequence[Ap]) -> dict[Ap, bool]:
    return {ap: bool(bits >> i & 1) for i, ap in enumerate(aps)}


def progress(f: Formula, valuation: Mapping[Ap, bool]) -> Formula:
    """One-letter progression, canonically normalized.

    Residuals are flattened to a disjunction of conjunctions over
    non-Boolean nodes (temporal subformulas and literals), with subsumed
    conjuncts dropped.  Distribution and absorption are exact min/max
    identities, so robustness semantics are untouched, and the normal
    form keeps the progression closure finite: naive progression output
    re-nests And over Or and grows without bound on nested
    until/release formulas.
    """
    if not is_concrete(f):
        raise AutomatonError("cannot progress a formula with free parameters")
    return dnf_canonical(_prog(f, valuation))


def _prog(f: Formula, v: Mapping[Ap, bool]) -> Formula:
    if isinstance(f, (Top, Bottom)):
        return f
    if isinstance(f, Atom):
        return Top() if _lookup(v, f.ap) else Bottom()
    if isinstance(f, NegAtom):
        return Bottom() if _lookup(v, f.ap) else Top()
    if isinstance(f, And):
        return And(_prog(f.left, v), _prog(f.right, v))
    if isinstance(f, Or):
        return Or(_prog(f.left, v), _prog(f.right, v))
    if isinstance(f, Next):
        # Strong next: the remainder must be non-empty for the child to
        # get its chance; see module docstring.
        return And(f.child, Eventually(Top()))
    if isinstance(f, Always):
        return And(_prog(f.child, v), f)
    if isinstance(f, Eventually):
        return Or(_prog(f.child, v), f)
    if isinstance(f, Until):
        return Or(_prog(f.right, v), And(_prog(f.left, v), f))
    if isinstance(f, Release):
        return And(_prog(f.right, v), Or(_prog(f.left, v), f))
    raise TypeError(f"unknown formula node {type(f).__name__}")


def _lookup(v: Mapping[Ap, bool], ap: Ap) -> bool:
    try:
        return v[ap]
    except KeyError:
        raise AutomatonError(f"valuation missing predicate {ap}") from None


def _dnf_sets(f: Formula) -> set[frozenset[Formula]]:
    """Disjunction-of-conjunctions view; any non-And/Or node is atomic."""
    if isinstance(f, Top):
        return {frozenset()}
    if isinstance(f, Bottom):
        return set()
    if isinstance(f, And):
        left, right = _dnf_sets(f.left), _dnf_sets(f.right)
        return {a | b for a in left for b in right}
    if isinstance(f, Or):
        return _dnf_sets(f.left) | _dnf_sets(f.right)
    return {frozenset((f,))}


def dnf_canonical(f: Formula) -> Formula:
    """Exact disjunctive normal form with subsumption, deterministically
    ordered; the automaton's state-identity representation."""
    from .formulas import _sort_key, simplify

    sets = _dnf_sets(simplify(f))
    # Absorption: a conjunction implies any subset of itself.
    kept = [c for c in sets if not any(d < c for d in sets)]
    if not kept:
        return Bottom()
    if frozenset() in kept:
        return Top()

    def conj(atoms: frozenset[Formula]) -> Formula:
        ordered = sorted(atoms, key=_sort_key)
        out = ordered[0]
        for a in ordered[1:]:
            out = And(out, a)
        return out

    conjs = sorted((conj(c) for c in kept), key=_sort_key)
    out = conjs[0]
    for c in conjs[1:]:
        out = Or(out, c)
    return out


def empty_accepts(f: Formula) -> bool:
    """Whether the residual is satisfied by an empty trace remainder.

    Universal operators are vacuously true, existential ones false, and
    predicates have no state left to test.
    """
    if isinstance(f, Top):
        return True
    if isinstance(f, Bottom):
        return False
    if isinstance(f, (Atom, NegAtom, Next, Eventually, Until)):
        return False
    if isinstance(f, (Always, Release)):
        return True
    if isinstance(f, And):
        return empty_accepts(f.left) and empty_accepts(f.right)
    if isinstance(f, Or):
        return empty_accepts(f.left) or empty_accepts(f.right)
    raise TypeError(f"unknown formula node {type(f).__name__}")


@dataclass(frozen=True)
class Dfa:
    """Deterministic automaton over AP valuations.

    ``table[q, letter]`` is the successor state; letters are the bitmask
    valuations produced by ``label``.  Immutable after construction.
    """

    aps: tuple[Ap, ...]
    states: tuple[Formula, ...]
    initial: int
    accepting: np.ndarray
    table: np.ndarray

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_letters(self) -> int:
        return self.table.shape[1]

    def reset(self, s0) -> int:
        """Consume the trace's first state; returns the resulting state."""
        return int(self.table[self.initial, label(s0, self.aps)])

    def step(self, q: int, s) -> int:
        return int(self.table[q, label(s, self.aps)])

    def run(self, trace) -> np.ndarray:
        """State after consuming each prefix; index t corresponds to s_t."""
        arr = as_trace(trace)
        out = np.empty(arr.shape[0], dtype=np.int64)
        q = self.reset(arr[0])
        out[0] = q
        for t in range(1, arr.shape[0]):
            q = self.step(q, arr[t])
            out[t] = q
        return out

    def accepts(self, trace) -> bool:
        return bool(self.accepting[self.run(trace)[-1]])

    def letters_of(self, states: np.ndarray) -> np.ndarray:
        """Vectorized ``label`` over (..., k) state arrays."""
        S = np.asarray(states, dtype=float)
        bits = np.zeros(S.shape[:-1], dtype=np.int64)
        for i, ap in enumerate(self.aps):
            holds = ap.sign * (ap.threshold - S[..., ap.dim]) > 0.0
            bits |= holds.astype(np.int64) << i
        return bits

    def accepts_batch(self, states: np.ndarray) -> np.ndarray:
        """Acceptance for a (B, T+1, k) batch of equal-length traces."""
        S = np.asarray(states, dtype=float)
        if S.ndim != 3:
            raise AutomatonError(f"expected (B, T+1, k) states, got {S.shape}")
        letters = self.letters_of(S)
        q = np.full(S.shape[0], self.initial, dtype=np.int64)
        for t in range(S.shape[1]):
            q = self.table[q, letters[:, t]]
        return self.accepting[q]

    def to_dot(self) -> str:
        """Graphviz text; edges grouped by destination, labeled with the
        valuation bitmasks that take them (AP order = bit order)."""
        lines = ["digraph dfa {", "  rankdir=LR;"]
        for i, ap in enumerate(self.aps):
            lines.append(f'  // bit {i}: {format_formula(Atom(ap))}')
        lines.append('  __start [shape=point, label=""];')
        for q, f in enumerate(self.states):
            shape = "doublecircle" if self.accepting[q] else "circle"
            text = format_formula(f).replace('"', r"\"")
            lines.append(f'  q{q} [shape={shape}, label="q{q}: {text}"];')
        lines.append(f"  __start -> q{self.initial};")
        n = self.num_letters
        for q in range(self.num_states):
            dests: dict[int, list[str]] = {}
            for letter in range(n):
                dest = int(self.table[q, letter])
                dests.setdefault(dest, []).append(format(letter, f"0{max(len(self.aps), 1)}b"))
            for dest, labels in sorted(dests.items()):
                lines.append(f'  q{q} -> q{dest} [label="{",".join(labels)}"];')
        lines.append("}")
        return "\n".join(lines)


def to_dfa(f: Formula, max_aps: int = MAX_APS, max_states: int = MAX_STATES) -> Dfa:
    """BFS closure of canonical residuals under progression.

    Raises if the formula has parameters, more than ``max_aps`` distinct
    predicates, or the closure exceeds ``max_states`` states.
    """
    if not is_concrete(f):
        raise AutomatonError("cannot build a DFA from a parametric formula")
    aps = tuple(collect_aps(f))
    if len(aps) > max_aps:
        raise AutomatonError(f"{len(aps)} distinct predicates exceeds the cap of {max_aps}")
    n_letters = 1 << len(aps)
    all_letters = np.arange(n_letters)

    init = dnf_canonical(f)
    states: list[Formula] = [init]
    index: dict[str, int] = {format_formula(init): 0}
    rows: list[np.ndarray] = []
    queue = deque([0])
    while queue:
        # FIFO discovery order means state i is processed i-th, so rows
        # line up with state ids.
        i = queue.popleft()
        src = states[i]
        if isinstance(src, (Top, Bottom)):
            rows.append(np.full(n_letters, i, dtype=np.int64))
            continue
        # Progression only reads predicates that occur in the residual;
        # enumerate those and fan the results out over the full alphabet.
        live = collect_aps(src)
        positions = [aps.index(ap) for ap in live]
        targets = np.empty(1 << len(live), dtype=np.int64)
        for sub in range(1 << len(live)):
            val = {ap: bool(sub >> b & 1) for b, ap in enumerate(live)}
            nxt = progress(src, val)
            key = format_formula(nxt)
            j = index.get(key)
            if j is None:
                if len(states) >= max_states:
                    raise AutomatonError(
                        f"progression closure exceeds the cap of {max_states} states"
                    )
                j = len(states)
                index[key] = j
                states.append(nxt)
                queue.append(j)
            targets[sub] = j
        sub_of = np.zeros(n_letters, dtype=np.int64)
        for b, pos in enumerate(positions):
            sub_of |= ((all_letters >> pos) & 1) << b
        rows.append(targets[sub_of])

    accepting = np.array([empty_accepts(g) for g in states], dtype=bool)
    return Dfa(
        aps=aps,
        states=tuple(states),
        initial=0,
        accepting=accepting,
        table=np.stack(rows),
    )
