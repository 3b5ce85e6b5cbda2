"""Feedback switching rule read off a value field, and its Monte Carlo evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import HybridState
from .simulate import NoControl, OpenLoop, SimSetup, simulate_batch


class NotConvergedError(RuntimeError):
    pass


def default_delta_switch(field):
    """Last Picard change plus a rounding allowance scaled to the field size."""
    last = field.deltas[-1] if field.deltas else 0.0
    return float(last + 1e-10 * (1.0 + abs(field.sup())))


class Policy:
    """Intervene iff ``max_beta {-c(b, beta, t) + v(post-switch)} >= v(current) - delta_switch``.

    The best target wins; on ties the lowest switch-mode index.  Queried at
    the value grid's times before the horizon and right after chain jumps.
    """

    query_after_jumps = True
    decide_at_horizon = False

    def __init__(self, field, costs, delta_switch):
        if delta_switch < 0:
            raise ValueError("delta_switch must be non-negative")
        self.field = field
        self.costs = costs
        self.delta_switch = float(delta_switch)
        lat = field.lattice
        self.tables = lat.tables
        self.T = lat.T
        self.epochs = tuple(float(t) for t in lat.t_nodes[:-1])

    def max_per_instant(self, m):
        return m

    def evaluate_options(self, t, x, a, b, nu, z):
        """Current value, best switch value and its target index for one pair ``(a, b)``."""
        fld, b = self.field, tuple(b)
        cur = fld.values(a, b, t, x, nu, z)
        best = np.full(cur.shape, -np.inf)
        arg = np.full(cur.shape, -1)
        bvec = np.array(b)
        for beta in self.tables.allowed_switches(b):
            bt = np.array(beta)
            a2 = tuple(np.minimum(np.array(a), bt).tolist())
            nu2 = nu * bt + t[:, None] * np.maximum(bt - bvec, 0)
            z2 = np.where(np.array(a2) == 1, z, 0.0)
            val = fld.values(a2, beta, t, x, nu2, z2) - self.costs(b, beta, t)
            better = val > best
            best = np.where(better, val, best)
            arg = np.where(better, self.tables.switch_index[beta], arg)
        return cur, best, arg

    def decide(self, t, x, a, b, nu, z, n_switch=None, rng=None):
        t = np.asarray(t, float)
        out = np.full(t.shape[0], -1)
        live = t < self.T - 1e-12
        if not live.any():
            return out
        a, b = np.asarray(a, int), np.asarray(b, int)
        n = a.shape[1]
        keys = ((a + 1) @ (3 ** np.arange(n))) * (2 ** n) + b @ (2 ** np.arange(n)[::-1])
        for key in np.unique(keys[live]):
            sel = np.flatnonzero((keys == key) & live)
            j = sel[0]
            cur, best, arg = self.evaluate_options(t[sel], np.asarray(x, float)[sel], tuple(a[j].tolist()),
                                                   tuple(b[j].tolist()), nu[sel], z[sel])
            go = best >= cur - self.delta_switch
            out[sel[go]] = arg[go]
        return out

    def regions(self, stride=1):
        """Switching regions on the value grid: for each sampled time index and pair,
        the grid nodes where the rule intervenes and the chosen target."""
        lat = self.field.lattice
        out = []
        for k in range(0, lat.n_steps, max(1, int(stride))):
            t = float(lat.t_nodes[k])
            for p, (a, b) in enumerate(lat.pairs):
                x, nu, _ = lat.meshes(p)
                z = lat.z_mesh(p, t)
                shape = lat.shapes[p]
                nodes = np.indices(shape).reshape(len(shape), -1).T
                X = np.broadcast_to(x, shape).reshape(-1)
                NU = np.broadcast_to(nu, shape + (lat.n,)).reshape(-1, lat.n)
                Z = np.broadcast_to(z, shape + (lat.n,)).reshape(-1, lat.n)
                tt = np.full(X.shape, t)
                _, best, arg = self.evaluate_options(tt, X, a, b, NU, Z)
                cur = self.field.arrays[p][k].reshape(-1)
                go = best >= cur - self.delta_switch
                out.append({"time_index": k, "t": t, "a": list(a), "b": list(b),
                            "axes": [lab if lab == "x" else f"{lab[0]}{lab[1]}" for lab in lat.labels[p]],
                            "n_nodes": int(X.size), "n_intervene": int(go.sum()),
                            "switch": [{"node": nodes[i].tolist(),
                                        "to": list(self.tables.all_switch_modes[arg[i]])}
                                       for i in np.flatnonzero(go)]})
        return out

    def describe(self):
        return {"delta_switch": self.delta_switch, "epochs": len(self.epochs),
                "field_k": None if math.isinf(self.field.k) else self.field.k}


def extract_policy(field, costs, delta_switch=None, force=False):
    """Feedback rule over a converged field (``force`` accepts an unconverged one)."""
    if not field.converged and not force:
        raise NotConvergedError("value field did not converge; pass force=True to use it anyway")
    if delta_switch is None:
        delta_switch = default_delta_switch(field)
    return Policy(field, costs, delta_switch)


class RandomSwitching:
    """Heuristic: at each epoch switch to a uniformly chosen other mode with probability ``p``."""

    query_after_jumps = False
    decide_at_horizon = False

    def __init__(self, tables, epochs, p=0.1):
        self.tables, self.p = tables, float(p)
        self.epochs = tuple(epochs)
        self.m = len(tables.all_switch_modes)

    def max_per_instant(self, m):
        return 1

    def decide(self, t, x, a, b, nu, z, n_switch, rng):
        N = len(t)
        b = np.asarray(b, int)
        cur = b @ (2 ** np.arange(b.shape[1])[::-1])
        go = rng.random(N) < self.p
        off = rng.integers(1, self.m, N)
        return np.where(go, (cur + off) % self.m, -1)


def intervention_cap(field, costs):
    """``ceil(S * m / eps) + m`` with ``S`` the range of the field and ``eps`` the loop cost."""
    eps = costs.loop_epsilon
    m = len(field.lattice.tables.all_switch_modes)
    if eps <= 0:
        return math.inf
    lo = min(float(np.min(v)) for v in field.arrays)
    S = field.sup() - min(lo, 0.0)
    return int(math.ceil(S * m / eps)) + m


@dataclass
class EvaluationReport:
    value_at_root: float
    mc_estimate: float
    mc_stderr: float
    gap: float
    n_paths: int
    seeds: list
    delta_switch: float | None = None
    mean_switches: float = 0.0
    max_switches: int = 0
    max_switches_per_instant: int = 0
    intervention_cap: float | None = None

    def __post_init__(self):
        if not math.isnan(self.mc_estimate) and abs(self.gap - (self.mc_estimate - self.value_at_root)) > 1e-12:
            raise ValueError("gap does not match mc_estimate - value_at_root")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = str(v)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _start_state(problem, start):
    if start is not None:
        return start
    return HybridState(0.0, problem.start_a, problem.start_b, problem.start_nu, problem.start_z,
                       problem.x0 if problem.factor is not None else None)


def run_controller(problem, controller, n_paths, seed=0, start=None, n_t=None, threads=1, record=0):
    setup = SimSetup.from_problem(problem, n_t)
    return simulate_batch(setup, _start_state(problem, start), n_paths, seed=seed, controller=controller,
                          record=record, threads=threads)


def evaluate_policy(problem, policy, start=None, n_paths=10000, seed=0, threads=1, record=0):
    """Monte Carlo payoff of ``policy`` against the field value at ``start``.

    Returns ``(EvaluationReport, BatchResult)``.
    """
    start = _start_state(problem, start)
    fld = policy.field
    value = fld.value_at(start.a, start.b, start.t, start.x if start.x is not None else problem.x0,
                         start.nu, start.z)
    res = run_controller(problem, policy, n_paths, seed, start, fld.lattice.n_t, threads, record)
    mean, se = res.mean_se() if n_paths else (math.nan, math.nan)
    return EvaluationReport(
        value_at_root=value, mc_estimate=mean, mc_stderr=se,
        gap=(mean - value) if n_paths else math.nan, n_paths=int(n_paths), seeds=[int(seed)],
        delta_switch=policy.delta_switch,
        mean_switches=float(res.n_switch.mean()) if n_paths else 0.0,
        max_switches=int(res.n_switch.max()) if n_paths else 0,
        max_switches_per_instant=int(res.max_switch_per_instant.max()) if n_paths else 0,
        intervention_cap=intervention_cap(fld, problem.costs),
    ), res


def delta_sensitivity(problem, field, deltas, n_paths=10000, seed=0, threads=1):
    """Evaluate the policy for each switch margin in ``deltas`` with common random numbers.

    Returns a list of dicts with the margin, gap, standard error and mean switch count.
    """
    out = []
    for d in deltas:
        report, _ = evaluate_policy(problem, extract_policy(field, problem.costs, d), None, n_paths, seed,
                                    threads)
        out.append({"delta_switch": report.delta_switch, "gap": report.gap, "mc_stderr": report.mc_stderr,
                    "mean_switches": report.mean_switches})
    return out


def evaluate_control(problem, control=None, n_paths=10000, seed=0, start=None, n_t=None, threads=1):
    """Monte Carlo estimate ``(mean, stderr)`` of the payoff of an open-loop control
    (``None`` means never intervene)."""
    if control is None or len(control) == 0:
        ctrl = NoControl()
    else:
        control.validate(_start_state(problem, start), problem.T)
        ctrl = OpenLoop(control.times, control.targets, problem.tables)
    return run_controller(problem, ctrl, n_paths, seed, start, n_t, threads).mean_se()
