"""Shared generators for property-style tests.

Random formulas/traces are drawn from a bounded regime (states and
thresholds in [-2, 2]) so margins stay far from the +/-1e6 saturation
bound and floating-point comparisons are meaningful.
"""

from __future__ import annotations

import numpy as np
import pytest

from tlcl import formulas as fm


def random_ap(rng: np.random.Generator, k: int) -> fm.Ap:
    dim = int(rng.integers(0, k))
    sign = int(rng.choice([-1, 1]))
    threshold = float(rng.uniform(-2.0, 2.0))
    return fm.Ap(dim, sign, threshold)


def random_leaf(rng: np.random.Generator, k: int) -> fm.Formula:
    u = rng.random()
    if u < 0.04:
        return fm.Top()
    if u < 0.08:
        return fm.Bottom()
    ap = random_ap(rng, k)
    return fm.NegAtom(ap) if rng.random() < 0.25 else fm.Atom(ap)


_UNARY = (fm.Next, fm.Eventually, fm.Always)
_BINARY = (fm.And, fm.Or, fm.Until, fm.Release)


def random_formula(rng: np.random.Generator, k: int, depth: int) -> fm.Formula:
    """Random tree of depth at most ``depth`` over k state dimensions."""
    if depth <= 0 or rng.random() < 0.25:
        return random_leaf(rng, k)
    if rng.random() < 0.5:
        op = _UNARY[rng.integers(0, len(_UNARY))]
        return op(random_formula(rng, k, depth - 1))
    op = _BINARY[rng.integers(0, len(_BINARY))]
    return op(
        random_formula(rng, k, depth - 1),
        random_formula(rng, k, depth - 1),
    )


def random_trace(rng: np.random.Generator, T: int, k: int) -> np.ndarray:
    return rng.uniform(-2.0, 2.0, size=(T + 1, k))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
