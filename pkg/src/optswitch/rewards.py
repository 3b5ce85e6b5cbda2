"""Running/terminal rewards, switching costs, assumption checks and the
non-negativity shift.

Rewards are sums of *terms*.  Each term maps ``(a, t, x, z)`` to a value,
vectorized: ``t`` and ``x`` broadcast against ``z[..., 0]`` where ``z`` is
the full length-n elapsed-on-time vector.  Terms also know how to integrate
themselves in time along a segment where ``a`` and ``x`` stay fixed and
``z`` grows at unit speed in operating components.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate

from .modes import build_tables, post_switch_mode


def _on(a):
    return np.array([c == 1 for c in a], dtype=float)


def _mode_key(a):
    return ",".join(str(int(c)) for c in a)


def _shape(t, x, z):
    return np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(z)[:-1])


class Term:
    depends_on_z = False
    depends_on_x = False
    depends_on_t = False
    lipschitz_z = 0.0

    def __call__(self, a, t, x, z):
        raise NotImplementedError

    def integral(self, a, t0, t1, x, z0, T):
        """``∫_{t0}^{t1}`` of the term with ``z(s) = min(z0 + a⁺ (s - t0), T)``."""
        return _quad_integral(self, a, t0, t1, x, z0, T)

    def to_dict(self):
        raise NotImplementedError


def _quad_integral(term, a, t0, t1, x, z0, T):
    t0, t1 = np.asarray(t0, float), np.asarray(t1, float)
    shape = _shape(t0 * t1, x, z0)
    if np.prod(shape, dtype=int) == 0:
        return np.zeros(shape)
    on = _on(a)
    length = t1 - t0

    def f(u):
        s = t0 + length * u
        z = np.minimum(z0 + on * (length * u)[..., None], T)
        return np.broadcast_to(term(a, s, x, z) * length, shape)

    val, _ = integrate.quad_vec(f, 0.0, 1.0, epsrel=1e-10, epsabs=1e-13)
    return val


class Constant(Term):
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, a, t, x, z):
        return np.full(_shape(t, x, z), self.value)

    def integral(self, a, t0, t1, x, z0, T):
        return np.broadcast_to(self.value * (np.asarray(t1) - t0), _shape(t0, x, z0)).copy()

    def to_dict(self):
        return {"form": "constant", "value": self.value}


class PerMode(Term):
    """Value looked up by operation mode; modes not listed get ``default``."""

    def __init__(self, values, default=0.0):
        self.values = {}
        for k, v in values.items():
            key = tuple(int(c) for c in (k.split(",") if isinstance(k, str) else k))
            self.values[key] = float(v)
        self.default = float(default)

    def level(self, a):
        return self.values.get(tuple(a), self.default)

    def __call__(self, a, t, x, z):
        return np.full(_shape(t, x, z), self.level(a))

    def integral(self, a, t0, t1, x, z0, T):
        return np.broadcast_to(self.level(a) * (np.asarray(t1) - t0), _shape(t0, x, z0)).copy()

    def to_dict(self):
        return {"form": "per_mode", "values": {_mode_key(k): v for k, v in self.values.items()},
                "default": self.default}


class PerPlant(Term):
    """Sum over plants of a value chosen by the plant's state."""

    def __init__(self, on, off=None, failed=None):
        self.on = np.asarray(on, float)
        n = self.on.size
        self.off = np.zeros(n) if off is None else np.asarray(off, float)
        self.failed = np.zeros(n) if failed is None else np.asarray(failed, float)

    def level(self, a):
        table = {1: self.on, 0: self.off, -1: self.failed}
        return float(sum(table[c][i] for i, c in enumerate(a)))

    def __call__(self, a, t, x, z):
        return np.full(_shape(t, x, z), self.level(a))

    def integral(self, a, t0, t1, x, z0, T):
        return np.broadcast_to(self.level(a) * (np.asarray(t1) - t0), _shape(t0, x, z0)).copy()

    def to_dict(self):
        return {"form": "per_plant", "on": self.on.tolist(), "off": self.off.tolist(),
                "failed": self.failed.tolist()}


class Ramp(Term):
    """Operating plant i earns ``weight_i * min(z_i / ramp_time_i, 1)``."""

    depends_on_z = True

    def __init__(self, weights, ramp_times):
        self.weights = np.asarray(weights, float)
        self.ramp_times = np.asarray(ramp_times, float)
        if np.any(self.ramp_times <= 0):
            raise ValueError("ramp times must be positive")
        self.lipschitz_z = float(np.sum(np.abs(self.weights) / self.ramp_times))

    def __call__(self, a, t, x, z):
        z = np.asarray(z, float)
        frac = np.minimum(z / self.ramp_times, 1.0)
        out = np.sum(_on(a) * self.weights * frac, axis=-1)
        return np.broadcast_to(out, _shape(t, x, z)).copy()

    def integral(self, a, t0, t1, x, z0, T):
        # ∫ min(y, c) over y in [z0, z0 + L], c = min(T, r); y is z before the T cap
        z0 = np.asarray(z0, float)
        L = (np.asarray(t1) - t0)[..., None]
        c = np.minimum(T, self.ramp_times)

        def F(y):
            return np.where(y <= c, 0.5 * y * y, 0.5 * c * c + c * (y - c))

        per = (F(z0 + L) - F(z0)) / self.ramp_times
        out = np.sum(_on(a) * self.weights * per, axis=-1)
        return np.broadcast_to(out, _shape(t0, x, z0)).copy()

    def to_dict(self):
        return {"form": "ramp", "weights": self.weights.tolist(),
                "ramp_times": self.ramp_times.tolist()}


class _PolyTerm(Term):
    """``poly(var) * (sum_i weights_i 1{a_i = 1})``, or ``poly(var)`` for every mode
    when ``weights`` is None."""

    def __init__(self, coef, weights=None):
        self.coef = np.asarray(coef, float)
        self.weights = None if weights is None else np.asarray(weights, float)

    def mode_factor(self, a):
        if self.weights is None:
            return 1.0
        return float(np.dot(_on(a), self.weights))

    def _dict(self, form):
        d = {"form": form, "coef": self.coef.tolist()}
        if self.weights is not None:
            d["weights"] = self.weights.tolist()
        return d


class PolyT(_PolyTerm):
    depends_on_t = True

    def __call__(self, a, t, x, z):
        return np.broadcast_to(self.mode_factor(a) * P.polyval(np.asarray(t, float), self.coef),
                               _shape(t, x, z)).copy()

    def integral(self, a, t0, t1, x, z0, T):
        anti = P.polyint(self.coef)
        v = P.polyval(np.asarray(t1, float), anti) - P.polyval(np.asarray(t0, float), anti)
        return np.broadcast_to(self.mode_factor(a) * v, _shape(t0, x, z0)).copy()

    def to_dict(self):
        return self._dict("poly_t")


class PolyX(_PolyTerm):
    depends_on_x = True

    def __call__(self, a, t, x, z):
        return np.broadcast_to(self.mode_factor(a) * P.polyval(np.asarray(x, float), self.coef),
                               _shape(t, x, z)).copy()

    def integral(self, a, t0, t1, x, z0, T):
        v = P.polyval(np.asarray(x, float), self.coef) * (np.asarray(t1) - t0)
        return np.broadcast_to(self.mode_factor(a) * v, _shape(t0, x, z0)).copy()

    def to_dict(self):
        return self._dict("poly_x")


class Cosine(Term):
    """``amplitude * cos(omega t + phase) * sum_i weights_i 1{a_i = 1}``
    (every mode when ``weights`` is None)."""

    depends_on_t = True

    def __init__(self, amplitude, omega, phase=0.0, weights=None):
        self.amplitude, self.omega, self.phase = float(amplitude), float(omega), float(phase)
        self.weights = None if weights is None else np.asarray(weights, float)

    def mode_factor(self, a):
        return 1.0 if self.weights is None else float(np.dot(_on(a), self.weights))

    def __call__(self, a, t, x, z):
        v = self.amplitude * np.cos(self.omega * np.asarray(t, float) + self.phase)
        return np.broadcast_to(self.mode_factor(a) * v, _shape(t, x, z)).copy()

    def integral(self, a, t0, t1, x, z0, T):
        t0, t1 = np.asarray(t0, float), np.asarray(t1, float)
        if self.omega == 0.0:
            v = math.cos(self.phase) * (t1 - t0)
        else:
            v = (np.sin(self.omega * t1 + self.phase) - np.sin(self.omega * t0 + self.phase)) / self.omega
        return np.broadcast_to(self.mode_factor(a) * self.amplitude * v, _shape(t0, x, z0)).copy()

    def to_dict(self):
        d = {"form": "cosine", "amplitude": self.amplitude, "omega": self.omega, "phase": self.phase}
        if self.weights is not None:
            d["weights"] = self.weights.tolist()
        return d


class CallableTerm(Term):
    """Wrap ``fn(a, t, x, z)``; time integrals fall back to adaptive quadrature."""

    def __init__(self, fn, lipschitz_z=0.0, depends_on_z=True, depends_on_x=True,
                 depends_on_t=True):
        self.fn = fn
        self.lipschitz_z = float(lipschitz_z)
        self.depends_on_z, self.depends_on_x, self.depends_on_t = (
            depends_on_z, depends_on_x, depends_on_t)

    def __call__(self, a, t, x, z):
        return np.broadcast_to(self.fn(a, t, x, z), _shape(t, x, z)).astype(float)

    def to_dict(self):
        return {"form": "callable", "fn": repr(self.fn)}


class Shift(Term):
    """Mode-independent offset ``-g(t, x)``; used by :func:`normalize`."""

    depends_on_t = True
    depends_on_x = True

    def __init__(self, g):
        self.g = g

    def __call__(self, a, t, x, z):
        return np.broadcast_to(-self.g(t, x), _shape(t, x, z)).astype(float)

    def to_dict(self):
        return {"form": "shift"}


TERM_FORMS = {
    "constant": lambda d: Constant(d["value"]),
    "per_mode": lambda d: PerMode(d["values"], d.get("default", 0.0)),
    "per_plant": lambda d: PerPlant(d["on"], d.get("off"), d.get("failed")),
    "ramp": lambda d: Ramp(d["weights"], d["ramp_times"]),
    "poly_t": lambda d: PolyT(d["coef"], d.get("weights")),
    "poly_x": lambda d: PolyX(d["coef"], d.get("weights")),
    "cosine": lambda d: Cosine(d["amplitude"], d["omega"], d.get("phase", 0.0), d.get("weights")),
}


def term_from_dict(d):
    try:
        return TERM_FORMS[d["form"]](d)
    except KeyError as exc:
        raise ValueError(f"bad reward term {d!r}: missing or unknown {exc}") from None


@dataclass
class RewardSpec:
    """Running reward ``psi`` and terminal reward ``upsilon`` as sums of terms."""

    psi: list
    upsilon: list
    k_psi: float | None = None
    k_upsilon: float | None = None

    def __post_init__(self):
        self.psi = [t if isinstance(t, Term) else CallableTerm(t) for t in self.psi]
        self.upsilon = [t if isinstance(t, Term) else CallableTerm(t) for t in self.upsilon]
        if self.k_psi is None:
            self.k_psi = sum(t.lipschitz_z for t in self.psi)
        if self.k_upsilon is None:
            self.k_upsilon = sum(t.lipschitz_z for t in self.upsilon)

    @property
    def depends_on_z(self):
        return any(t.depends_on_z for t in self.psi + self.upsilon)

    @property
    def depends_on_x(self):
        return any(t.depends_on_x for t in self.psi + self.upsilon)

    def running(self, a, t, x, z):
        z = np.asarray(z, float)
        out = np.zeros(_shape(t, x, z))
        for term in self.psi:
            out = out + term(a, t, x, z)
        return out

    def terminal(self, a, x, z, T):
        z = np.asarray(z, float)
        out = np.zeros(_shape(T, x, z))
        for term in self.upsilon:
            out = out + term(a, T, x, z)
        return out

    def running_integral(self, a, t0, t1, x, z0, T):
        z0 = np.asarray(z0, float)
        out = np.zeros(_shape(t0, x, z0))
        for term in self.psi:
            out = out + term.integral(a, t0, t1, x, z0, T)
        return out

    def describe(self):
        return {"psi": [t.to_dict() for t in self.psi],
                "upsilon": [t.to_dict() for t in self.upsilon],
                "k_psi": self.k_psi, "k_upsilon": self.k_upsilon}


class PiecewiseLinear:
    """Continuous piecewise-linear function of time (constant beyond the ends)."""

    def __init__(self, times, values):
        self.times = np.atleast_1d(np.asarray(times, float))
        self.values = np.atleast_1d(np.asarray(values, float))
        if self.times.shape != self.values.shape or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase strictly and match values")

    @classmethod
    def constant(cls, c):
        return cls([0.0], [c])

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def to_dict(self):
        if self.times.size == 1:
            return float(self.values[0])
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_spec(cls, d):
        if isinstance(d, (int, float)):
            return cls.constant(d)
        return cls(d["times"], d["values"])


@dataclass
class SwitchCostSpec:
    """Switching costs ``c[b -> b'](t)``, piecewise linear in time."""

    n: int
    default: PiecewiseLinear
    overrides: dict = field(default_factory=dict)
    loop_epsilon: float = 0.0

    def __post_init__(self):
        if not isinstance(self.default, PiecewiseLinear):
            self.default = PiecewiseLinear.from_spec(self.default)
        self.overrides = {
            (tuple(k[0]), tuple(k[1])): v if isinstance(v, PiecewiseLinear) else PiecewiseLinear.from_spec(v)
            for k, v in self.overrides.items()
        }

    @classmethod
    def constant(cls, n, c, loop_epsilon=None):
        return cls(n, PiecewiseLinear.constant(c), {}, c if loop_epsilon is None else loop_epsilon)

    def fn(self, b, b2):
        return self.overrides.get((tuple(b), tuple(b2)), self.default)

    def __call__(self, b, b2, t):
        return self.fn(b, b2)(t)

    def breakpoints(self):
        ts = set(self.default.times.tolist())
        for f in self.overrides.values():
            ts.update(f.times.tolist())
        return np.array(sorted(ts))

    def describe(self):
        return {"default": self.default.to_dict(), "loop_epsilon": self.loop_epsilon,
                "entries": [{"from": list(k[0]), "to": list(k[1]), "cost": v.to_dict()}
                            for k, v in sorted(self.overrides.items())]}


# --------------------------------------------------------------------------
# assumption checks


def _z_nodes_full(a, z_nodes, n):
    """All z vectors on the grid for mode ``a`` (zeros off the operating axes)."""
    on = [i for i in range(n) if a[i] == 1]
    if not on:
        return np.zeros((1, n))
    mesh = np.array(list(itertools.product(z_nodes, repeat=len(on))))
    out = np.zeros((mesh.shape[0], n))
    out[:, on] = mesh
    return out


def _x_nodes(problem, n_x=None):
    if problem.factor is None:
        return np.array([problem.x0])
    f = problem.factor
    return np.linspace(f.x_min, f.x_max, f.n_x)


def _min_monotone_cycle(cost_rows):
    """Min over t_1 <= ... <= t_k (grid indices) of sum_j cost_rows[j][t_j]."""
    acc = np.minimum.accumulate(cost_rows[0])
    for row in cost_rows[1:]:
        acc = np.minimum.accumulate(row + acc)
    j = int(np.argmin(acc))
    return float(acc[j])


def _simple_cycles(nodes, rng=None, max_cycles=None):
    """All simple cycles (as node sequences, every rotation) of the complete digraph."""
    m = len(nodes)
    if max_cycles is None:
        for k in range(2, m + 1):
            for combo in itertools.combinations(range(m), k):
                first, rest = combo[0], combo[1:]
                for perm in itertools.permutations(rest):
                    cyc = (first,) + perm
                    for r in range(k):
                        yield tuple(nodes[i] for i in cyc[r:] + cyc[:r])
    else:
        for _ in range(max_cycles):
            k = int(rng.integers(2, m + 1))
            idx = rng.choice(m, size=k, replace=False)
            yield tuple(nodes[i] for i in idx)


def validate_assumptions(problem, grid=None, n_lipschitz_samples=200, seed=0):
    """Check the standing assumptions on a grid and return a JSON-able report.

    Keys ``i``, ``ii_a``, ``ii_b``, ``iii``, ``iv`` each hold
    ``{"passed": bool, "witness": ..., ...}``.  Grid-based: the report
    records the grids used.
    """
    from .solver import GridSpec  # local: solver imports this module

    grid = grid or GridSpec.default_for(problem)
    tables = build_tables(problem.n)
    T, n = problem.T, problem.n
    rng = np.random.default_rng(seed)
    z_nodes = np.linspace(0.0, T, grid.z_steps + 1)
    t_nodes = np.linspace(0.0, T, grid.n_t + 1)
    xs = _x_nodes(problem)
    rew, costs = problem.rewards, problem.costs
    report = {}

    # (i) Lipschitz in z, finiteness on the grid
    worst = {"ratio": 0.0}
    ok = True
    for a in tables.all_op_modes:
        on = np.array([c == 1 for c in a])
        if not on.any():
            continue
        z1 = rng.uniform(0, T, (n_lipschitz_samples, n)) * on
        z2 = np.clip(z1 + rng.normal(0, 0.1 * T, z1.shape) * on, 0, T)
        ts = rng.uniform(0, T, n_lipschitz_samples)
        x = rng.choice(xs, n_lipschitz_samples)
        dz = np.linalg.norm(z1 - z2, axis=1)
        keep = dz > 1e-12
        for name, vals, k in (
            ("psi", (rew.running(a, ts, x, z1), rew.running(a, ts, x, z2)), rew.k_psi),
            ("upsilon", (rew.terminal(a, x, z1, T), rew.terminal(a, x, z2, T)), rew.k_upsilon),
        ):
            ratio = np.abs(vals[0] - vals[1])[keep] / dz[keep]
            if ratio.size and ratio.max() > k * (1 + 1e-9) + 1e-12:
                j = int(np.argmax(ratio))
                ok = False
                worst = {"ratio": float(ratio[j]), "declared": k, "function": name,
                         "a": list(a), "z": z1[keep][j].tolist(), "z2": z2[keep][j].tolist()}
            elif ratio.size and ratio.max() > worst["ratio"]:
                worst["ratio"] = float(ratio.max())
    finite = all(np.all(np.isfinite(rew.running(a, t, xs[:, None], _z_nodes_full(a, z_nodes, n)[None])))
                 for a in tables.all_op_modes for t in t_nodes[:: max(1, grid.n_t // 20)])
    report["i"] = {"passed": bool(ok and finite), "finite_on_grid": bool(finite),
                   "k_psi": rew.k_psi, "k_upsilon": rew.k_upsilon,
                   "witness": None if ok else worst,
                   "max_observed_ratio": worst["ratio"] if ok else None}

    # (ii)a non-negative costs
    tcheck = np.union1d(t_nodes, costs.breakpoints()[(costs.breakpoints() >= 0) & (costs.breakpoints() <= T)])
    witness = None
    for b in tables.all_switch_modes:
        for b2 in tables.allowed_switches(b):
            vals = costs(b, b2, tcheck)
            j = int(np.argmin(vals))
            if vals[j] < 0 and witness is None:
                witness = {"from": list(b), "to": list(b2), "t": float(tcheck[j]), "cost": float(vals[j])}
    report["ii_a"] = {"passed": witness is None, "witness": witness}

    # (ii)b no free loop, minimised over monotone time assignments on the grid
    eps = costs.loop_epsilon
    modes = tables.all_switch_modes
    exhaustive = n <= 3
    cyc_iter = _simple_cycles(modes) if exhaustive else _simple_cycles(modes, rng, 20000)
    rows = {(b, b2): costs(b, b2, tcheck) for b in modes for b2 in modes if b != b2}
    best, best_cycle = math.inf, None
    for cyc in cyc_iter:
        k = len(cyc)
        val = _min_monotone_cycle([rows[(cyc[j], cyc[(j + 1) % k])] for j in range(k)])
        if val < best:
            best, best_cycle = val, cyc
    passed = bool(eps > 0 and best >= eps - 1e-12)
    report["ii_b"] = {"passed": passed, "loop_epsilon": eps, "min_loop_cost": best,
                      "exhaustive": exhaustive, "time_grid_size": int(tcheck.size),
                      "witness": None if passed else {"cycle": [list(c) for c in best_cycle] if best_cycle else None,
                                                      "cost": best}}

    # (iii) never optimal to switch at T: certified margin
    margin, wit = math.inf, None
    for a in tables.all_op_modes:
        Z = _z_nodes_full(a, z_nodes, n)[None, :, :]
        X = xs[:, None]
        base = rew.terminal(a, X, Z, T)
        for b in tables.all_switch_modes:
            if (a, b) not in tables.pair_index:
                continue
            for b2 in tables.allowed_switches(b):
                a2 = post_switch_mode(a, b2)
                Z2 = Z * np.array(b2)
                other = rew.terminal(a2, X, Z2, T) - costs(b, b2, T)
                gap = base - other
                j = np.unravel_index(np.argmin(gap), gap.shape)
                if gap[j] < margin:
                    margin = float(gap[j])
                    wit = {"a": list(a), "b": list(b), "to": list(b2), "x": float(xs[j[0]]),
                           "z": Z[0, j[1]].tolist(), "margin": margin}
    report["iii"] = {"passed": bool(margin > 0), "margin": margin,
                     "witness": None if margin > 0 else wit}

    # (iv) rate bound and nu-Lipschitz
    model = problem.intensity
    K, kl = model.rate_bound, model.lipschitz_nu
    wit = None
    for a, b in tables.all_pairs:
        if not tables.targets(a, b):
            continue
        s = rng.uniform(0, T, n_lipschitz_samples)
        nu = rng.uniform(0, 1, (n_lipschitz_samples, n)) * s[:, None] * np.array(b)
        x = rng.choice(xs, n_lipschitz_samples)
        r = model.rates(a, b, s, x, nu)
        if np.any(r < 0) or np.any(r > K * (1 + 1e-12)):
            j = np.unravel_index(np.argmax(np.maximum(r - K, -r)), r.shape)
            wit = {"kind": "bound", "a": list(a), "b": list(b), "s": float(s[j[0]]),
                   "rate": float(r[j]), "rate_bound": K}
            break
        if np.isfinite(kl):
            nu2 = np.clip(nu + rng.normal(0, 0.05 * T, nu.shape) * np.array(b), 0, s[:, None])
            r2 = model.rates(a, b, s, x, nu2)
            dn = np.linalg.norm(nu - nu2, axis=1)
            keep = dn > 1e-12
            ratio = np.abs(r - r2).max(axis=-1)[keep] / dn[keep]
            if ratio.size and ratio.max() > kl * (1 + 1e-9) + 1e-12:
                j = int(np.argmax(ratio))
                wit = {"kind": "lipschitz_nu", "a": list(a), "b": list(b), "ratio": float(ratio[j]),
                       "declared": kl}
                break
    if wit is None and not np.isfinite(kl):
        wit = {"kind": "lipschitz_nu", "declared": "inf",
               "detail": "startup rate is discontinuous in the activation time"}
    report["iv"] = {"passed": wit is None, "rate_bound": K, "lipschitz_nu": kl, "witness": wit}

    report["passed"] = all(report[k]["passed"] for k in ("i", "ii_a", "ii_b", "iii", "iv"))
    report["grid"] = {"T": T, "n_t": grid.n_t, "z_steps": grid.z_steps,
                      "cost_time_nodes": int(tcheck.size), "x_nodes": int(xs.size)}
    return report


# --------------------------------------------------------------------------


@dataclass
class NormalizationShift:
    min_upsilon: float
    min_psi: object  # callable t -> per-time minimum

    def constant(self, T, t=0.0):
        """``min_upsilon + ∫_t^T min_psi``: the control-independent part of the objective."""
        val, _ = integrate.quad(lambda s: float(self.min_psi(s)), t, T, epsabs=1e-13, epsrel=1e-12,
                                limit=200)
        return self.min_upsilon + val


def normalize(problem, grid=None):
    """Shift rewards so that they are non-negative on the grid.

    Returns ``(shifted problem, NormalizationShift, constant)`` with
    ``J_original(u) = J_shifted(u) + constant`` for every control ``u``.
    Minima run over all operation modes, z-grid nodes and factor nodes so
    that the shift depends on time only.
    """
    from dataclasses import replace
    from .solver import GridSpec

    grid = grid or GridSpec.default_for(problem)
    tables = build_tables(problem.n)
    T, n = problem.T, problem.n
    z_nodes = np.linspace(0.0, T, grid.z_steps + 1)
    xs = _x_nodes(problem)
    rew = problem.rewards
    meshes = {a: _z_nodes_full(a, z_nodes, n)[None, :, :] for a in tables.all_op_modes}

    def min_psi(t):
        t = np.asarray(t, float)
        out = np.full(t.shape, np.inf)
        for a, Z in meshes.items():
            vals = rew.running(a, t[..., None, None], xs[:, None], Z)
            out = np.minimum(out, vals.reshape(t.shape + (-1,)).min(axis=-1))
        return out

    min_ups = min(float(rew.terminal(a, xs[:, None], Z, T).min()) for a, Z in meshes.items())
    ts = np.linspace(0, T, 257)
    if min_ups >= 0 and np.all(min_psi(ts) >= 0):
        shift = NormalizationShift(0.0, lambda t: np.zeros(np.shape(t)))
        return problem, shift, 0.0
    shift = NormalizationShift(min_ups, min_psi)
    new_rewards = RewardSpec(
        psi=list(rew.psi) + [Shift(lambda t, x: min_psi(t))],
        upsilon=list(rew.upsilon) + [Constant(-min_ups)],
        k_psi=rew.k_psi, k_upsilon=rew.k_upsilon,
    )
    return replace(problem, rewards=new_rewards), shift, shift.constant(T)


# --------------------------------------------------------------------------


def evaluate_objective(problem, u=None, n_paths=10000, seed=0, start=None, n_t=None, threads=1):
    """Monte Carlo estimate ``(mean, stderr)`` of the payoff of the open-loop control ``u``.

    Rewards are integrated in closed form between events; ``u=None`` means
    no intervention.  ``n_t`` is only needed to step a factor process.
    """
    from .policy import evaluate_control  # local: policy sits above this module

    return evaluate_control(problem, u, n_paths, seed, start, n_t, threads)
