"""Combinatorial mode structure for n on/off plants.

Switch modes ``b`` live in ``{0,1}^n`` and operation modes ``a`` in
``{-1,0,1}^n`` (failed / off / operating).  A pair ``(a, b)`` is feasible
when ``a <= b`` componentwise.  Everything here is enumerated once and is
read-only afterwards.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_PLANTS = 8

Mode = tuple  # tuple of ints, one per plant


class CapacityError(ValueError):
    """Raised when the enumerated state space would be too large."""


def _as_mode(v, allowed, n=None, name="mode"):
    t = tuple(int(c) for c in v)
    if n is not None and len(t) != n:
        raise ValueError(f"{name} {t} has length {len(t)}, expected {n}")
    bad = [c for c in t if c not in allowed]
    if bad:
        raise ValueError(f"{name} {t} has components outside {sorted(allowed)}")
    return t


def as_switch_mode(b, n=None) -> Mode:
    return _as_mode(b, {0, 1}, n, "switch mode")


def as_op_mode(a, n=None) -> Mode:
    return _as_mode(a, {-1, 0, 1}, n, "operation mode")


def leq(a, b) -> bool:
    return all(x <= y for x, y in zip(a, b))


def post_switch_mode(a, beta) -> Mode:
    """Operation mode right after commanding ``beta``: componentwise ``a ∧ beta``."""
    if len(a) != len(beta):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(beta)}")
    return tuple(min(int(x), int(y)) for x, y in zip(a, beta))


def is_transition_allowed(a, b, a2) -> bool:
    """Membership test for the reachable set of ``(a, b)``."""
    for ai, bi, ci in zip(a, b, a2):
        if ci > bi or abs(ci) < abs(ai):
            return False
        if ai in (-1, -bi) and ci != ai:
            return False
    return True


def absorbing_set(b) -> list[Mode]:
    return sorted(itertools.product(*[sorted({-bi, -1}) for bi in b]))


@dataclass(frozen=True)
class ModeTables:
    n: int
    all_switch_modes: tuple
    all_op_modes: tuple
    all_pairs: tuple
    transition_sets: dict = field(repr=False)
    absorbing_sets: dict = field(repr=False)
    pair_index: dict = field(repr=False)
    switch_index: dict = field(repr=False)

    @property
    def m(self) -> int:
        """Number of switch modes, ``2**n``."""
        return len(self.all_switch_modes)

    def is_absorbing(self, a, b) -> bool:
        return tuple(a) in self.absorbing_sets[tuple(b)]

    def targets(self, a, b) -> list[Mode]:
        """Reachable operation modes other than ``a`` itself."""
        a = tuple(a)
        return [c for c in self.transition_sets[(a, tuple(b))] if c != a]

    def allowed_switches(self, b) -> list[Mode]:
        b = tuple(b)
        if b not in self.switch_index:
            raise ValueError(f"switch mode {b} not in tables for n={self.n}")
        return [c for c in self.all_switch_modes if c != b]

    def index(self, a, b) -> int:
        return self.pair_index[(tuple(a), tuple(b))]


@lru_cache(maxsize=None)
def build_tables(n: int) -> ModeTables:
    """Enumerate switch modes, feasible pairs, transition and absorbing sets.

    Ordering is lexicographic with -1 < 0 < 1, so indices are reproducible.
    """
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_PLANTS:
        raise CapacityError(
            f"plant count n={n} out of range [1, {MAX_PLANTS}]: "
            f"tables grow like 6^n (6^{MAX_PLANTS} = {6 ** MAX_PLANTS})"
        )
    n = int(n)
    switch_modes = tuple(itertools.product((0, 1), repeat=n))
    op_modes = tuple(itertools.product((-1, 0, 1), repeat=n))
    pairs = tuple((a, b) for a in op_modes for b in switch_modes if leq(a, b))
    trans = {}
    for a, b in pairs:
        # per-component choices, the product is the reachable set
        choices = []
        for ai, bi in zip(a, b):
            if ai in (-1, -bi):
                choices.append((ai,))
            else:
                choices.append(tuple(c for c in (-1, 0, 1) if c <= bi and abs(c) >= abs(ai)))
        trans[(a, b)] = sorted(itertools.product(*choices))
    absorbing = {b: absorbing_set(b) for b in switch_modes}
    return ModeTables(
        n=n,
        all_switch_modes=switch_modes,
        all_op_modes=op_modes,
        all_pairs=pairs,
        transition_sets=trans,
        absorbing_sets=absorbing,
        pair_index={p: i for i, p in enumerate(pairs)},
        switch_index={b: i for i, b in enumerate(switch_modes)},
    )


def allowed_switches(b, tables: ModeTables | None = None) -> list[Mode]:
    b = as_switch_mode(b)
    tables = tables or build_tables(len(b))
    return tables.allowed_switches(b)
