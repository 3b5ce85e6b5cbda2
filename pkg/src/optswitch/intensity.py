"""Transition intensities of the operation-mode chain.

Two families are provided: :class:`PerPlantIntensity` (independent plants
with an elapsed-time dependent startup rate and a constant failure rate)
and :class:`TabularIntensity` (explicit rates per transition).  Rates are
evaluated vectorized over arrays of ``(s, x, nu)``.
"""
from __future__ import annotations

import numpy as np

from .modes import ModeTables, build_tables, is_transition_allowed


class ModelViolationError(RuntimeError):
    """A rate was observed outside ``[0, K_lambda]``."""


# --------------------------------------------------------------------------
# startup-rate families, functions of the time elapsed since activation


class ConstantRate:
    def __init__(self, value):
        if value < 0:
            raise ValueError("rate must be non-negative")
        self.value = float(value)

    def __call__(self, u):
        return np.full(np.shape(u), self.value)

    bound = property(lambda self: self.value)
    lipschitz = 0.0
    is_constant = True

    def to_dict(self):
        return {"form": "constant", "value": self.value}


class PiecewiseConstantRate:
    """``values[j]`` on ``[breakpoints[j], breakpoints[j+1])``; ``breakpoints[0] == 0``."""

    def __init__(self, breakpoints, values):
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)
        if bp.ndim != 1 or bp.shape != vals.shape or bp.size == 0:
            raise ValueError("breakpoints and values must be 1-D of equal length")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if np.any(vals < 0):
            raise ValueError("rates must be non-negative")
        self.breakpoints, self.values = bp, vals

    def __call__(self, u):
        idx = np.searchsorted(self.breakpoints, np.maximum(u, 0.0), side="right") - 1
        return self.values[idx]

    @property
    def bound(self):
        return float(self.values.max())

    @property
    def lipschitz(self):
        # jumps make the rate discontinuous in the activation time
        return 0.0 if np.all(self.values == self.values[0]) else np.inf

    @property
    def is_constant(self):
        return bool(np.all(self.values == self.values[0]))

    def to_dict(self):
        return {"form": "piecewise_constant", "breakpoints": self.breakpoints.tolist(),
                "values": self.values.tolist()}


class CappedAffineRate:
    """``clip(intercept + slope * u, 0, cap)``."""

    def __init__(self, intercept, slope, cap):
        if cap < 0:
            raise ValueError("cap must be non-negative")
        self.intercept, self.slope, self.cap = float(intercept), float(slope), float(cap)

    def __call__(self, u):
        return np.clip(self.intercept + self.slope * np.maximum(u, 0.0), 0.0, self.cap)

    bound = property(lambda self: self.cap)
    lipschitz = property(lambda self: abs(self.slope))
    is_constant = property(lambda self: self.slope == 0.0)

    def to_dict(self):
        return {"form": "capped_affine", "intercept": self.intercept, "slope": self.slope,
                "cap": self.cap}


def rate_function_from_dict(d):
    if isinstance(d, (int, float)):
        return ConstantRate(d)
    form = d.get("form", "constant")
    if form == "constant":
        return ConstantRate(d["value"])
    if form == "piecewise_constant":
        return PiecewiseConstantRate(d["breakpoints"], d["values"])
    if form == "capped_affine":
        return CappedAffineRate(d["intercept"], d["slope"], d["cap"])
    raise ValueError(f"unknown rate form {form!r}")


# --------------------------------------------------------------------------


class IntensityModel:
    """Base class.  Subclasses implement :meth:`rates`."""

    tables: ModeTables
    rate_bound: float
    lipschitz_nu: float
    depends_on_nu = True
    depends_on_x = True
    depends_on_t = True

    @property
    def n(self):
        return self.tables.n

    def rates(self, a, b, s, x, nu):
        """Rates from ``a`` to each of ``tables.targets(a, b)`` (last axis).

        ``s`` and ``x`` broadcast against ``nu[..., 0]``.
        """
        raise NotImplementedError

    def max_targets(self) -> int:
        return max(len(v) for v in self.tables.transition_sets.values())

    def generator(self, a, b, s, x, nu):
        """Generator restricted to the reachable set of ``(a, b)``.

        Returns ``(states, Q)`` with ``Q`` of shape ``batch + (m, m)``.
        """
        a, b = tuple(a), tuple(b)
        states = self.tables.transition_sets[(a, b)]
        pos = {c: i for i, c in enumerate(states)}
        nu = np.asarray(nu, dtype=float)
        batch = np.broadcast_shapes(np.shape(s), np.shape(x), nu.shape[:-1])
        Q = np.zeros(batch + (len(states), len(states)))
        for i, c in enumerate(states):
            tg = self.tables.targets(c, b)
            if not tg:
                continue
            r = np.broadcast_to(self.rates(c, b, s, x, nu), batch + (len(tg),))
            for k, c2 in enumerate(tg):
                Q[..., i, pos[c2]] = r[..., k]
            Q[..., i, i] = -r.sum(axis=-1)
        return states, Q

    def describe(self) -> dict:
        raise NotImplementedError


class PerPlantIntensity(IntensityModel):
    """Independent plants: ``0 -> 1`` at ``startup_i(s - nu_i)``, ``1 -> -1`` at ``fail_i``."""

    kind = "per_plant"

    def __init__(self, startup, fail, rate_bound=None, lipschitz_nu=None):
        if len(startup) != len(fail):
            raise ValueError("startup and fail must have one entry per plant")
        self.startup = [s if callable(s) else ConstantRate(s) for s in startup]
        self.fail = np.asarray(fail, dtype=float)
        if np.any(self.fail < 0):
            raise ValueError("failure rates must be non-negative")
        self.tables = build_tables(len(self.startup))
        natural = max([r.bound for r in self.startup] + list(self.fail))
        self.rate_bound = float(natural if rate_bound is None else rate_bound)
        self.lipschitz_nu = float(max(r.lipschitz for r in self.startup)
                                  if lipschitz_nu is None else lipschitz_nu)
        const = all(getattr(r, "is_constant", False) for r in self.startup)
        self.depends_on_nu = self.depends_on_t = not const
        self.depends_on_x = False
        self._cache = {}

    def _plan(self, a, b):
        key = (a, b)
        if key not in self._cache:
            plan = []
            for c in self.tables.targets(a, b):
                diff = [i for i in range(self.n) if c[i] != a[i]]
                kind = None
                if len(diff) == 1:
                    i = diff[0]
                    if a[i] == 0 and c[i] == 1:
                        kind = ("start", i)
                    elif a[i] == 1 and c[i] == -1:
                        kind = ("fail", i)
                plan.append(kind)
            self._cache[key] = plan
        return self._cache[key]

    def rates(self, a, b, s, x, nu):
        a, b = tuple(a), tuple(b)
        nu = np.asarray(nu, dtype=float)
        batch = np.broadcast_shapes(np.shape(s), np.shape(x), nu.shape[:-1])
        plan = self._plan(a, b)
        out = np.zeros(batch + (len(plan),))
        for k, kind in enumerate(plan):
            if kind is None:
                continue
            what, i = kind
            if what == "start":
                out[..., k] = self.startup[i](np.asarray(s) - nu[..., i])
            else:
                out[..., k] = self.fail[i]
        return out

    def describe(self):
        return {"kind": self.kind,
                "startup": [r.to_dict() if hasattr(r, "to_dict") else repr(r) for r in self.startup],
                "fail": self.fail.tolist(), "rate_bound": self.rate_bound,
                "lipschitz_nu": self.lipschitz_nu}


class TabularIntensity(IntensityModel):
    """Explicit rates.

    ``entries`` maps ``(a, a2)`` or ``(a, a2, b)`` to a constant rate; an
    entry without ``b`` applies under every switch mode where the move is
    allowed.  Alternatively ``fn(s, x, nu, b, a, a2)`` gives the rate
    directly (vectorized in ``s, x, nu``); then ``rate_bound`` is required.
    """

    kind = "tabular"

    def __init__(self, n, entries=None, fn=None, rate_bound=None, lipschitz_nu=0.0,
                 depends_on_nu=True, depends_on_x=True, depends_on_t=True):
        if (entries is None) == (fn is None):
            raise ValueError("give exactly one of entries or fn")
        self.tables = build_tables(n)
        self.fn = fn
        self.entries = {}
        if entries is not None:
            for key, r in entries.items():
                a, a2 = tuple(key[0]), tuple(key[1])
                b = tuple(key[2]) if len(key) > 2 and key[2] is not None else None
                if r < 0:
                    raise ValueError(f"negative rate for {a}->{a2}")
                bs = [b] if b is not None else self.tables.all_switch_modes
                ok = [bb for bb in bs if (a, bb) in self.tables.pair_index
                      and a2 != a and is_transition_allowed(a, bb, a2)]
                if not ok:
                    raise ValueError(f"transition {a}->{a2} is not allowed"
                                     + (f" under b={b}" if b else " under any switch mode"))
                for bb in ok:
                    self.entries[(a, a2, bb)] = float(r)
            natural = max(self.entries.values(), default=0.0)
            self.rate_bound = float(natural if rate_bound is None else rate_bound)
            self.lipschitz_nu = 0.0
            self.depends_on_nu = self.depends_on_x = self.depends_on_t = False
        else:
            if rate_bound is None:
                raise ValueError("rate_bound is required with a rate function")
            self.rate_bound = float(rate_bound)
            self.lipschitz_nu = float(lipschitz_nu)
            self.depends_on_nu, self.depends_on_x = depends_on_nu, depends_on_x
            self.depends_on_t = depends_on_t

    def rates(self, a, b, s, x, nu):
        a, b = tuple(a), tuple(b)
        nu = np.asarray(nu, dtype=float)
        batch = np.broadcast_shapes(np.shape(s), np.shape(x), nu.shape[:-1])
        tg = self.tables.targets(a, b)
        out = np.zeros(batch + (len(tg),))
        for k, c in enumerate(tg):
            if self.fn is None:
                out[..., k] = self.entries.get((a, c, b), 0.0)
            else:
                out[..., k] = self.fn(s, x, nu, b, a, c)
        return out

    def describe(self):
        if self.fn is not None:
            return {"kind": self.kind, "fn": repr(self.fn), "rate_bound": self.rate_bound}
        return {"kind": self.kind, "rate_bound": self.rate_bound,
                "entries": [{"from": list(a), "to": list(c), "b": list(b), "rate": r}
                            for (a, c, b), r in sorted(self.entries.items())]}
