"""State, control and path types plus single-path simulation.

Single paths run through the same engine as batches (see
:mod:`optswitch.simulate`) with one path, so both share one set of
semantics: thinning for the chain, ``z`` reset to 0 when a plant is not
operating, and a chain jump at an intervention time resolved before the
switch.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .modes import as_op_mode, as_switch_mode, build_tables, leq, post_switch_mode
from .simulate import NoControl, OpenLoop, SimSetup, simulate_batch


@dataclass(frozen=True)
class HybridState:
    t: float
    a: tuple
    b: tuple
    nu: tuple = None
    z: tuple = None
    x: float | None = None

    def __post_init__(self):
        b = as_switch_mode(self.b)
        a = as_op_mode(self.a, len(b))
        if not leq(a, b):
            raise ValueError(f"operation mode {a} exceeds switch mode {b}")
        n = len(b)
        nu = tuple(float(v) for v in (self.nu if self.nu is not None else (0.0,) * n))
        z = tuple(float(v) for v in (self.z if self.z is not None else (0.0,) * n))
        if len(nu) != n or len(z) != n:
            raise ValueError("nu and z need one entry per plant")
        if any(v != 0.0 for v, bi in zip(nu, b) if bi == 0):
            raise ValueError("nu must be 0 for plants switched off")
        if any(v != 0.0 for v, ai in zip(z, a) if ai <= 0):
            raise ValueError("z must be 0 for plants not operating")
        if min(nu + z + (0.0,)) < 0:
            raise ValueError("nu and z must be non-negative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return len(self.b)

    def check_horizon(self, T):
        if not (0.0 <= self.t <= T) or max(self.nu + self.z + (0.0,)) > T + 1e-12:
            raise ValueError("state times must lie in [0, T]")


@dataclass(frozen=True)
class Control:
    """Open-loop intervention schedule ``((tau_1, beta_1), (tau_2, beta_2), ...)``."""

    times: tuple = ()
    targets: tuple = ()

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        targets = tuple(as_switch_mode(b) for b in self.targets)
        if len(times) != len(targets):
            raise ValueError("times and targets differ in length")
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("intervention times must be nondecreasing")
        if any(b1 == b2 for b1, b2 in zip(targets, targets[1:])):
            raise ValueError("consecutive targets must differ")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def empty(cls):
        return cls((), ())

    def validate(self, start: HybridState, T):
        if self.targets and self.targets[0] == start.b:
            raise ValueError("first target equals the starting switch mode")
        if self.times and (self.times[0] < start.t or self.times[-1] > T):
            raise ValueError("intervention times must lie in [t, T]")
        if any(len(b) != start.n for b in self.targets):
            raise ValueError("target dimension mismatch")

    def __len__(self):
        return len(self.times)


@dataclass
class HybridPath:
    """Event log ``(time, kind, a, b, nu, z)`` plus the payoff pieces."""

    events: list = field(default_factory=list)
    payoff_running: float = 0.0
    payoff_terminal: float = 0.0
    cost_switch: float = 0.0
    seed: object = None

    @property
    def payoff(self):
        return self.payoff_running + self.payoff_terminal - self.cost_switch

    @property
    def final(self):
        return self.events[-1]

    def switch_count(self):
        return sum(1 for e in self.events if e[1] == "switch")

    def theta_consistent(self, T, tol=1e-12):
        """Rebuild ``z`` event-to-event from ``a`` and compare with the stored values."""
        for (t0, _, a0, _, _, z0), (t1, kind, a1, _, _, z1) in zip(self.events, self.events[1:]):
            pred = [min(z + (t1 - t0), T) if ai == 1 else 0.0 for z, ai in zip(z0, a0)]
            pred = [p if (a0i == 1 and a1i == 1) else 0.0 for p, a0i, a1i in zip(pred, a0, a1)]
            if any(abs(p - z) > tol for p, z in zip(pred, z1)):
                return False
        return True

    def to_csv(self, path):
        write_events_csv(path, [self])


def _join(v):
    return ";".join(repr(float(x)) if isinstance(x, float) else str(int(x)) for x in v)


def write_events_csv(path, paths):
    """One row per event; vectors are ``;``-joined.  A ``path`` column is added for several paths."""
    many = len(paths) > 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["path"] if many else []) + ["time", "event", "a", "b", "nu", "z"])
        for j, p in enumerate(paths):
            for t, kind, a, b, nu, z in p.events:
                w.writerow(([j] if many else []) + [repr(float(t)), kind, _join(a), _join(b), _join(nu), _join(z)])


# --------------------------------------------------------------------------


def step_theta(state: HybridState, dt, T):
    """Elapsed on-time after ``dt`` without chain jumps."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return tuple(min(z + dt, T) if a == 1 else 0.0 for z, a in zip(state.z, state.a))


def update_activation(nu, b_old, beta, tau):
    """Activation times after switching ``b_old -> beta`` at ``tau``."""
    nu = np.asarray(nu, float)
    b_old, beta = np.asarray(b_old, int), np.asarray(beta, int)
    if not (nu.shape == b_old.shape == beta.shape):
        raise ValueError("dimension mismatch")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return tuple((nu * beta + tau * np.maximum(beta - b_old, 0)).tolist())


def apply_switch(state: HybridState, beta):
    """Instantaneous intervention: new ``(a, b, nu, z)`` at the same time."""
    beta = as_switch_mode(beta, state.n)
    a = post_switch_mode(state.a, beta)
    nu = update_activation(state.nu, state.b, beta, state.t)
    z = tuple(zi if ai == 1 else 0.0 for zi, ai in zip(state.z, a))
    return HybridState(state.t, a, beta, nu, z, state.x)


def _path_from(result, seed):
    ev = result.events[0] if result.events else []
    return HybridPath(list(ev), float(result.running[0]), float(result.terminal[0]),
                      float(result.cost[0]), seed)


def simulate_chain(model, start: HybridState, until, rng, T=None):
    """Uncontrolled chain from ``start`` up to ``until`` (exact law via thinning).

    ``T`` caps the elapsed on-time (defaults to ``until``).  The returned
    path carries no rewards.
    """
    T = until if T is None else T
    if until > T or until < start.t:
        raise ValueError("need start.t <= until <= T")
    start.check_horizon(T)
    setup = SimSetup(model, T, until, x0=start.x if start.x is not None else 0.0)
    res = simulate_batch(setup, start, 1, controller=NoControl(), record=1, rng=rng)
    return _path_from(res, getattr(rng, "bit_generator", None) and rng.bit_generator.seed_seq.entropy)


def apply_control(model, start: HybridState, u: Control, rng, T, rewards=None, costs=None):
    """Controlled path on ``[start.t, T]``: chain segments joined by the switches of ``u``."""
    start.check_horizon(T)
    u.validate(start, T)
    tables = build_tables(start.n)
    setup = SimSetup(model, T, T, rewards, costs, x0=start.x if start.x is not None else 0.0)
    ctrl = OpenLoop(u.times, u.targets, tables)
    res = simulate_batch(setup, start, 1, controller=ctrl, record=1, rng=rng)
    return _path_from(res, getattr(rng, "bit_generator", None) and rng.bit_generator.seed_seq.entropy)
