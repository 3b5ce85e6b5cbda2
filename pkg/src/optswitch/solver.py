"""Backward induction for the switching value functions on a (t, x, nu, z) grid.

``v⁰`` is the expected reward with no interventions.  Each Picard step
solves a discrete optimal-stopping problem per feasible pair ``(a, b)``
whose stopping reward is the best switch into the previous iterate, so
``vᵏ`` is the value with at most ``k`` interventions and increases in ``k``.

Within a time step the chain rates are frozen at the step start and the
one-step kernel is the exact exponential of the frozen generator.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .factor import FactorGrid
from .modes import build_tables, post_switch_mode

log = logging.getLogger(__name__)


class GridStabilityError(ValueError):
    pass


class InterpolationRangeError(ValueError):
    pass


@dataclass
class GridSpec:
    T: float
    n_t: int
    nu_steps: int = 10
    z_steps: int = 10

    @property
    def dt(self):
        return self.T / self.n_t

    @classmethod
    def default_for(cls, problem, n_t=100, nu_steps=10, z_steps=10):
        return cls(problem.T, n_t, nu_steps, z_steps)

    @classmethod
    def from_config(cls, problem, cfg):
        return cls(problem.T, cfg.n_t, cfg.nu_steps, cfg.z_steps)

    def check_stability(self, model):
        worst = self.dt * model.rate_bound * model.max_targets()
        if not worst < 0.5:
            raise GridStabilityError(
                f"dt*K_lambda*max|A_ab| = {worst:.4g} >= 0.5; increase n_t (now {self.n_t})")


def _axis_weights(nodes, v):
    """Index/weight pair for linear interpolation of ``v`` (array) on ``nodes``."""
    v = np.asarray(v, float)
    if nodes.size == 1:
        return np.zeros(v.shape, int), np.zeros(v.shape)
    h = nodes[1] - nodes[0]
    u = np.clip((v - nodes[0]) / h, 0.0, nodes.size - 1)
    i0 = np.minimum(np.floor(u).astype(int), nodes.size - 2)
    return i0, u - i0


def _apply_along(M, arr, axis):
    return np.moveaxis(np.tensordot(M, arr, axes=([1], [axis])), 0, axis)


class Lattice:
    """Axis layout of every pair tensor.

    Pair ``(a, b)`` has axes ``x``, then ``nu_i`` for ``b_i = 1``, then
    ``w_i`` for ``a_i = 1`` (plant order).  ``w_i = t - z_i`` is the time
    plant ``i`` started operating: it stays fixed while the plant runs, so
    moving one step forward needs no interpolation along these axes; only a
    start-up inside a step lands between nodes.  The nu axes collapse to
    one node when rates ignore activation times and the w axes when
    rewards ignore elapsed on-time.
    """

    def __init__(self, n, T, n_t, x_nodes, nu_nodes, w_nodes, n_steps=None):
        self.n, self.T, self.n_t = n, float(T), int(n_t)
        self.dt = self.T / self.n_t
        # a truncated lattice covers [0, n_steps*dt] but keeps nu/z spanning [0, T]
        self.n_steps = self.n_t if n_steps is None else int(n_steps)
        self.t_nodes = np.arange(self.n_steps + 1) * self.dt
        if self.n_steps == self.n_t:
            self.t_nodes[-1] = self.T
        self.x_nodes = np.asarray(x_nodes, float)
        self.nu_nodes = np.asarray(nu_nodes, float)
        self.w_nodes = np.asarray(w_nodes, float)
        self.tables = build_tables(n)
        self.pairs = list(self.tables.all_pairs)
        self.labels, self.shapes = [], []
        for a, b in self.pairs:
            labels = ["x"] + [("nu", i) for i in range(n) if b[i] == 1] + [("w", i) for i in range(n) if a[i] == 1]
            self.labels.append(labels)
            self.shapes.append(tuple(self.axis_nodes(lab).size for lab in labels))

    @classmethod
    def for_problem(cls, problem, grid, factor_grid=None):
        T = grid.T
        x_nodes = factor_grid.nodes if factor_grid is not None else np.array([problem.x0])
        nu_nodes = (np.linspace(0, T, grid.nu_steps + 1) if problem.intensity.depends_on_nu
                    else np.array([0.0]))
        w_nodes = (np.linspace(0, T, grid.z_steps + 1) if problem.rewards.depends_on_z
                   else np.array([0.0]))
        return cls(problem.n, T, grid.n_t, x_nodes, nu_nodes, w_nodes)

    def axis_nodes(self, label):
        if label == "x":
            return self.x_nodes
        return self.nu_nodes if label[0] == "nu" else self.w_nodes

    def index(self, a, b):
        return self.tables.index(a, b)

    def w_axes(self, p):
        return [j for j, lab in enumerate(self.labels[p]) if lab != "x" and lab[0] == "w"]

    def meshes(self, p):
        """Broadcastable ``x`` plus full-length ``nu`` and ``w`` node vectors for pair ``p``."""
        labels, shape = self.labels[p], self.shapes[p]
        d = len(labels)
        x = self.x_nodes.reshape((-1,) + (1,) * (d - 1))
        kinds = ["x" if lab == "x" else lab[0] for lab in labels]
        nu = np.zeros(tuple(shape[j] if kinds[j] == "nu" else 1 for j in range(d)) + (self.n,))
        w = np.zeros(tuple(shape[j] if kinds[j] == "w" else 1 for j in range(d)) + (self.n,))
        for j, lab in enumerate(labels):
            if lab == "x":
                continue
            target = nu if lab[0] == "nu" else w
            vals = self.axis_nodes(lab).reshape(tuple(-1 if k == j else 1 for k in range(d)))
            target[..., lab[1]] = np.broadcast_to(vals, target.shape[:-1])
        return x, nu, w

    def z_mesh(self, p, t):
        """Elapsed on-times ``clip(t - w, 0, T)`` at the nodes of pair ``p`` (0 where not operating)."""
        a = np.array(self.pairs[p][0])
        _, _, w = self.meshes(p)
        return np.where(a == 1, np.clip(t - w, 0.0, self.T), 0.0)

    def remap(self, arr, q, p, fixed):
        """View pair-``q`` data (no time axis) in the axis layout of pair ``p``.

        ``fixed`` maps q-labels absent from p to the coordinate value at which
        q is interpolated; p-labels absent from q become broadcast axes.
        """
        labels = list(self.labels[q])
        for lab, v in fixed.items():
            ax = labels.index(lab)
            nodes = self.axis_nodes(lab)
            if nodes.size > 1 and not (-1e-12 <= v <= self.T + 1e-12):
                raise InterpolationRangeError(f"{lab} = {v} outside [0, {self.T}]")
            i0, w = _axis_weights(nodes, v)
            i0, w = int(i0), float(w)
            arr = np.take(arr, i0, axis=ax) if w == 0.0 else (
                (1 - w) * np.take(arr, i0, axis=ax) + w * np.take(arr, i0 + 1, axis=ax))
            labels.pop(ax)
        src = self.labels[p]
        if any(lab not in src for lab in labels):
            raise InterpolationRangeError(f"axes {labels} cannot be mapped onto {src}")
        shape = [arr.shape[labels.index(lab)] if lab in labels else 1 for lab in src]
        return arr.reshape(shape)


@dataclass
class ValueField:
    """Value tensors, one per feasible pair, over (time, x, nu..., z...)."""

    lattice: Lattice
    arrays: list
    k: int | float = 0
    deltas: list = field(default_factory=list)
    converged: bool = False
    spec_hash: str | None = None

    @property
    def n(self):
        return self.lattice.n

    @property
    def pairs(self):
        return self.lattice.pairs

    def pair_array(self, a, b):
        return self.arrays[self.lattice.index(a, b)]

    def sup(self):
        return max(float(np.max(v)) for v in self.arrays)

    def values(self, a, b, t, x, nu, z):
        """Multilinear interpolation at arrays of states sharing the pair ``(a, b)``.

        ``t``, ``x`` have shape ``(N,)``; ``nu``, ``z`` have shape ``(N, n)``.
        """
        lat = self.lattice
        p = lat.index(tuple(a), tuple(b))
        arr = self.arrays[p]
        t = np.atleast_1d(np.asarray(t, float))
        N = t.shape[0]
        x = np.broadcast_to(np.asarray(x, float), (N,))
        nu = np.broadcast_to(np.asarray(nu, float), (N, lat.n))
        z = np.broadcast_to(np.asarray(z, float), (N, lat.n))
        if lat.t_nodes.size != arr.shape[0]:
            raise ValueError("time axis does not match the lattice")
        axes = [(0, lat.t_nodes, t)]
        for j, lab in enumerate(lat.labels[p], start=1):
            if lab == "x":
                axes.append((j, lat.x_nodes, x))
            elif lab[0] == "nu":
                axes.append((j, lat.nu_nodes, nu[:, lab[1]]))
            else:
                axes.append((j, lat.w_nodes, t - z[:, lab[1]]))
        base = [np.zeros(N, int)] * arr.ndim
        live = []
        for j, nodes, v in axes:
            if nodes.size == 1:
                continue
            i0, w = _axis_weights(nodes, v)
            base[j] = i0
            live.append((j, w))
        out = np.zeros(N)
        for corner in range(1 << len(live)):
            w = np.ones(N)
            ii = list(base)
            for bit, (j, wj) in enumerate(live):
                if (corner >> bit) & 1:
                    w = w * wj
                    ii[j] = base[j] + 1
                else:
                    w = w * (1.0 - wj)
            out += w * arr[tuple(ii)]
        return out

    def value_at(self, a, b, t, x, nu, z):
        return float(self.values(a, b, [t], [x], [nu], [z])[0])

    def root_value(self, problem, t=0.0):
        return self.value_at(problem.start_a, problem.start_b, t, problem.x0,
                             problem.start_nu, problem.start_z)


# --------------------------------------------------------------------------


def one_step_chain_kernel(model, a, b, t, x, nu, dt):
    """Row of ``exp(Q dt)`` for the generator frozen at ``(t, x, nu)``.

    Returns ``(states, probs)`` over the reachable set of ``(a, b)``.
    """
    a, b = tuple(a), tuple(b)
    states, Q = model.generator(a, b, t, np.asarray(x, float), np.asarray(nu, float))
    row = states.index(a)
    P = expm(Q * dt)[..., row, :]
    return states, np.clip(P, 0.0, None)


class _Engine:
    """Precomputed per-pair maps, kernels and rewards for one (problem, grid)."""

    def __init__(self, problem, grid, check_stability=True):
        if abs(grid.T - problem.T) > 1e-12:
            raise ValueError("grid horizon differs from problem horizon")
        if check_stability:
            grid.check_stability(problem.intensity)
        self.problem, self.grid = problem, grid
        self.fgrid = FactorGrid(problem.factor, grid.dt, grid.n_t) if problem.factor else None
        self.lat = Lattice.for_problem(problem, grid, self.fgrid)
        lat, tables = self.lat, self.lat.tables
        self.dt = grid.dt
        self.chain, self.switch = [], []
        for p, (a, b) in enumerate(lat.pairs):
            states = tables.transition_sets[(a, b)]
            targets = []
            for c in states:
                q = lat.index(c, b)
                started = [i for i in range(lat.n) if c[i] == 1 and a[i] != 1]
                targets.append((q, started))
            self.chain.append(targets)
            sw = []
            for beta in tables.allowed_switches(b):
                q = lat.index(post_switch_mode(a, beta), beta)
                new_on = [i for i in range(lat.n) if beta[i] == 1 and b[i] == 0]
                sw.append((beta, q, new_on))
            self.switch.append(sw)
        self._P = {}
        self._psi = {}

    def kernel_rows(self, p, k):
        """One-step chain probabilities for pair ``p`` at step ``k``, shaped for broadcasting."""
        model = self.problem.intensity
        key = (p, k if model.depends_on_t else 0)
        if key in self._P:
            return self._P[key]
        lat = self.lat
        a, b = lat.pairs[p]
        x, nu, _ = lat.meshes(p)
        d = len(lat.labels[p])
        zax = lat.w_axes(p)
        # the chain does not see z: evaluate on the z-free sub-mesh
        sl = tuple(0 if j in zax else slice(None) for j in range(d))
        nu_sub = nu[sl]
        x_sub = x[tuple(0 if j in zax else slice(None) for j in range(d))]
        if not model.depends_on_x:
            x_sub = x_sub[:1]
        t = lat.t_nodes[k]
        states, Q = model.generator(a, b, t, x_sub, nu_sub)
        m = len(states)
        batch = Q.shape[:-2]
        E = expm((Q * self.dt).reshape((-1, m, m))).reshape(batch + (m, m))
        row = states.index(a)
        P = np.clip(E[..., row, :], 0.0, None)
        P = P.reshape(batch + (1,) * len(zax) + (m,))
        self._P[key] = P
        return P

    def running(self, p, k):
        key = (p, k)
        if key in self._psi:
            return self._psi[key]
        a, _ = self.lat.pairs[p]
        x, _, _ = self.lat.meshes(p)
        t = self.lat.t_nodes[k]
        val = self.problem.rewards.running(a, t, x, self.lat.z_mesh(p, t))
        self._psi[key] = val
        return val

    def terminal(self):
        out = []
        for p, (a, b) in enumerate(self.lat.pairs):
            x, _, _ = self.lat.meshes(p)
            val = self.problem.rewards.terminal(a, x, self.lat.z_mesh(p, self.lat.T), self.lat.T)
            out.append(np.broadcast_to(val, self.lat.shapes[p]).copy())
        return out

    def expect_next(self, p, k, Y):
        """Chain/factor expectation of the step-``k+1`` values, in pair-``p`` layout."""
        lat = self.lat
        P = self.kernel_rows(p, k)
        t_next = lat.t_nodes[k + 1]
        acc = np.zeros(lat.shapes[p])
        for j, (q, started) in enumerate(self.chain[p]):
            w = P[..., j]
            if not np.any(w):
                continue
            # a plant that starts during the step is credited from the step end
            fixed = {("w", i): t_next for i in started}
            acc += w * lat.remap(Y[q], q, p, fixed)
        return acc

    def intervention(self, p, k, prev_slices):
        """Best switch value ``max_beta {-c + v_prev(post-switch state)}`` at step ``k``."""
        lat = self.lat
        a, b = lat.pairs[p]
        t = lat.t_nodes[k]
        best = None
        for beta, q, new_on in self.switch[p]:
            fixed = {("nu", i): t for i in new_on}
            cand = lat.remap(prev_slices[q], q, p, fixed) - float(self.problem.costs(b, beta, t))
            best = cand if best is None else np.maximum(best, cand)
        return np.broadcast_to(best, lat.shapes[p])

    def sweep(self, prev=None, terminal=None, n_steps=None):
        lat = self.lat
        K = lat.n_t if n_steps is None else int(n_steps)
        V = [np.empty((K + 1,) + s) for s in lat.shapes]
        term = terminal if terminal is not None else self.terminal()
        for p in range(len(lat.pairs)):
            V[p][K] = term[p]
        for k in range(K - 1, -1, -1):
            if self.fgrid is not None:
                Kx = self.fgrid.kernel(k)
                Y = [_apply_along(Kx, V[q][k + 1], 0) for q in range(len(lat.pairs))]
            else:
                Y = [V[q][k + 1] for q in range(len(lat.pairs))]
            for p in range(len(lat.pairs)):
                cont = self.running(p, k) * self.dt + self.expect_next(p, k, Y)
                if prev is not None:
                    M = self.intervention(p, k, [prev[q][k] for q in range(len(lat.pairs))])
                    V[p][k] = np.maximum(cont, M)
                else:
                    V[p][k] = cont
        return V


def _field(engine, V, k, deltas=(), converged=False, spec_hash=None, n_steps=None):
    lat = engine.lat
    if n_steps is not None and n_steps != lat.n_t:
        lat = Lattice(lat.n, lat.T, lat.n_t, lat.x_nodes, lat.nu_nodes, lat.w_nodes, n_steps=n_steps)
    return ValueField(lat, V, k, list(deltas), converged, spec_hash)


def _check_truncation(terminal, n_steps):
    if n_steps is not None and terminal is None:
        raise ValueError("a truncated horizon needs explicit terminal data")


def solve_k0(problem, grid, terminal=None, n_steps=None):
    """Expected reward without interventions (Picard index 0)."""
    _check_truncation(terminal, n_steps)
    eng = _Engine(problem, grid)
    V = eng.sweep(terminal=terminal, n_steps=n_steps)
    return _field(eng, V, 0, n_steps=n_steps)


def picard_step(problem, grid, prev: ValueField, terminal=None, n_steps=None, _engine=None):
    """One Picard iteration: optimal stopping against the best switch into ``prev``."""
    _check_truncation(terminal, n_steps)
    eng = _engine or _Engine(problem, grid)
    steps = eng.lat.n_t if n_steps is None else int(n_steps)
    if [a.shape for a in prev.arrays] != [(steps + 1,) + s for s in eng.lat.shapes]:
        raise InterpolationRangeError("previous field was built on a different grid")
    V = eng.sweep(prev=prev.arrays, terminal=terminal, n_steps=n_steps)
    return _field(eng, V, prev.k + 1, prev.deltas, n_steps=n_steps)


def default_tol(v0_sup):
    return 1e-6 * (1.0 + abs(v0_sup))


def solve(problem, grid, tol=None, k_max=None, terminal=None, n_steps=None, burn_in=2):
    """Iterate Picard steps until the sup-norm change drops to ``tol``.

    Returns the last field; ``converged`` is False when ``k_max`` was hit.
    """
    _check_truncation(terminal, n_steps)
    eng = _Engine(problem, grid)
    V = eng.sweep(terminal=terminal, n_steps=n_steps)
    sup0 = max(float(np.max(np.abs(v))) for v in V)
    tol = default_tol(sup0) if tol is None else float(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    k_max = (2 ** problem.n) * grid.n_t if k_max is None else int(k_max)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    deltas, converged, k = [], False, 0
    while k < k_max:
        Vn = eng.sweep(prev=V, terminal=terminal, n_steps=n_steps)
        delta = max(float(np.max(np.abs(a - b))) for a, b in zip(Vn, V))
        deltas.append(delta)
        V, k = Vn, k + 1
        log.debug("picard k=%d delta=%.3e", k, delta)
        if delta <= tol:
            converged = True
            break
    tail = deltas[burn_in:]
    if any(d2 > d1 for d1, d2 in zip(tail, tail[1:])):
        warnings.warn("Picard deltas are not monotonically decreasing after burn-in",
                      RuntimeWarning, stacklevel=2)
    if not converged:
        warnings.warn(f"Picard iteration stopped at k_max={k_max} with delta={deltas[-1]:.3e} > tol={tol:.3e}",
                      RuntimeWarning, stacklevel=2)
    fld = _field(eng, V, k if not converged else math.inf, deltas, converged,
                 problem.spec_hash(), n_steps=n_steps)
    fld.iterations = k
    fld.tol = tol
    return fld


def bound_profile(problem, grid, field_or_engine=None):
    """Discrete uniform bound ``sum_{j>=k} max|psi(t_j)| dt + max|upsilon|`` per time index."""
    eng = _Engine(problem, grid)
    lat = eng.lat
    psi_bar = np.array([max(float(np.max(np.abs(eng.running(p, k)))) for p in range(len(lat.pairs)))
                        for k in range(lat.n_t)])
    ups_bar = max(float(np.max(np.abs(v))) for v in eng.terminal())
    tail = np.concatenate([np.cumsum((psi_bar * lat.dt)[::-1])[::-1], [0.0]])
    return tail + ups_bar
