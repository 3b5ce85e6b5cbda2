"""Vectorized exact simulation of the controlled hybrid system.

Paths are advanced together.  Each iteration moves every live path either
to its next *epoch* (a time where the factor steps, a controller is
consulted, a snapshot is taken, or the horizon ends) or to the next
proposal of a thinned Poisson clock running at ``K_lambda`` times the
number of reachable targets.  Rewards accrue in closed form between
events, so the only approximation is the factor's grid-time stepping.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .intensity import ModelViolationError
from .modes import build_tables

CHUNK = 8192
_RATE_SLACK = 1e-9


@dataclass
class SimSetup:
    """Everything the engine needs; ``rewards``/``costs``/``fgrid`` are optional."""

    model: object
    T: float
    t_end: float | None = None
    rewards: object = None
    costs: object = None
    fgrid: object = None
    x0: float = 0.0

    def __post_init__(self):
        if self.t_end is None:
            self.t_end = self.T

    @classmethod
    def from_problem(cls, problem, n_t=None):
        fgrid = None
        if problem.factor is not None:
            from .factor import FactorGrid

            if n_t is None:
                raise ValueError("a factor problem needs the grid size n_t to step the factor")
            fgrid = FactorGrid(problem.factor, problem.T / n_t, n_t)
        return cls(problem.intensity, problem.T, problem.T, problem.rewards, problem.costs,
                   fgrid, problem.x0)


@dataclass
class BatchResult:
    running: np.ndarray
    terminal: np.ndarray
    cost: np.ndarray
    n_switch: np.ndarray
    max_switch_per_instant: np.ndarray
    final_a: np.ndarray
    final_b: np.ndarray
    final_nu: np.ndarray
    final_z: np.ndarray
    snapshots: np.ndarray | None = None  # (N, n_snap, n) operation modes
    events: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    @property
    def payoff(self):
        return self.running + self.terminal - self.cost

    @property
    def n_paths(self):
        return self.running.size

    def mean_se(self):
        p = self.payoff
        if p.size < 2:
            return float(p.mean()) if p.size else math.nan, math.nan
        return float(p.mean()), float(p.std(ddof=1) / math.sqrt(p.size))


class NoControl:
    epochs = ()
    query_after_jumps = False
    decide_at_horizon = False

    def max_per_instant(self, m):
        return 0

    def decide(self, t, x, a, b, nu, z, n_switch, rng):
        return np.full(len(t), -1)


class OpenLoop:
    """Fixed schedule ``((tau_1, beta_1), ...)`` applied to every path.

    The j-th switch of a path is pending once ``t >= tau_j``; a path's switch
    counter tells which entry comes next, so the controller is stateless.
    """

    query_after_jumps = False
    decide_at_horizon = True

    def __init__(self, times, targets, tables):
        self.times = np.asarray(times, float)
        self.targets = np.array([tables.switch_index[tuple(bt)] for bt in targets], int)
        self.epochs = tuple(sorted(set(self.times.tolist())))

    def max_per_instant(self, m):
        return len(self.times)

    def decide(self, t, x, a, b, nu, z, n_switch, rng):
        out = np.full(len(t), -1)
        ok = n_switch < len(self.times)
        j = np.minimum(n_switch, max(len(self.times) - 1, 0))
        if len(self.times):
            ok &= self.times[j] <= t + 1e-12
            out[ok] = self.targets[j[ok]]
        return out


def _encode(tables):
    n = tables.n
    p3 = 3 ** np.arange(n)
    p2 = 2 ** np.arange(n)[::-1]  # b @ p2 is the switch-mode index
    lut = np.full((3 ** n, 2 ** n), -1, int)
    for p, (a, b) in enumerate(tables.all_pairs):
        lut[int(np.dot(np.array(a) + 1, p3)), int(np.dot(b, p2))] = p
    return p3, p2, lut


class _Static:
    """Lookup tables shared by all chunks."""

    def __init__(self, setup):
        self.setup = setup
        self.tables = build_tables(setup.model.n)
        self.n = self.tables.n
        self.m = len(self.tables.all_switch_modes)
        self.p3, self.p2, self.lut = _encode(self.tables)
        self.switch_modes = np.array(self.tables.all_switch_modes, int).reshape(self.m, self.n)
        K = setup.model.rate_bound
        self.targets, self.major = [], []
        for a, b in self.tables.all_pairs:
            tg = self.tables.targets(a, b)
            self.targets.append(np.array(tg, int).reshape(len(tg), self.n))
            self.major.append(K * len(tg))
        self.major = np.array(self.major)

    def pair_of(self, a, b):
        return self.lut[(a + 1) @ self.p3, b @ self.p2]


class _Chunk:
    def __init__(self, st: _Static, N, start, rng, controller, snap_times, record, offset):
        s = st.setup
        self.st, self.s, self.N, self.rng, self.ctrl = st, s, N, rng, controller
        n = st.n
        self.a = np.tile(np.asarray(start.a, int), (N, 1))
        self.b = np.tile(np.asarray(start.b, int), (N, 1))
        self.nu = np.tile(np.asarray(start.nu, float), (N, 1))
        self.z = np.tile(np.asarray(start.z, float), (N, 1))
        self.t = np.full(N, float(start.t))
        if s.fgrid is not None:
            x0 = s.x0 if start.x is None else start.x
            self.xi = np.full(N, int(s.fgrid.locate(x0)))
        else:
            self.xi = None
            self.xval = np.full(N, float(s.x0 if start.x is None else start.x))
        self.running = np.zeros(N)
        self.terminal = np.zeros(N)
        self.cost = np.zeros(N)
        self.nsw = np.zeros(N, int)
        self.max_inst = np.zeros(N, int)
        self.snap_times = np.asarray(snap_times, float)
        self.snaps = np.zeros((N, len(self.snap_times), n), int) if len(self.snap_times) else None
        self.record = min(record, N)
        self.offset = offset
        self.events = [[] for _ in range(self.record)]
        for i in range(self.record):
            self._log(i, "start")

    # -- helpers -------------------------------------------------------------

    def x(self, idx):
        if self.xi is None:
            return self.xval[idx]
        return self.s.fgrid.nodes[self.xi[idx]]

    def _log(self, i, kind):
        self.events[i].append((float(self.t[i]), kind, tuple(self.a[i].tolist()), tuple(self.b[i].tolist()),
                               tuple(self.nu[i].tolist()), tuple(self.z[i].tolist())))

    def _log_many(self, idx, kind):
        if self.record:
            for i in idx[idx < self.record].tolist():
                self._log(i, kind)

    def accrue(self, idx, t1):
        """Advance paths ``idx`` to times ``t1`` with no chain jump in between."""
        if idx.size == 0:
            return
        s = self.s
        t0 = self.t[idx]
        if s.rewards is not None:
            a = self.a[idx]
            codes = (a + 1) @ self.st.p3
            x = self.x(idx)
            for c in np.unique(codes):
                sel = codes == c
                mode = tuple(a[np.argmax(sel)].tolist())
                self.running[idx[sel]] += s.rewards.running_integral(
                    mode, t0[sel], t1[sel], x[sel], self.z[idx[sel]], s.T)
        on = self.a[idx] == 1
        self.z[idx] = np.where(on, np.minimum(self.z[idx] + (t1 - t0)[:, None], s.T), 0.0)
        self.t[idx] = t1

    def switch(self, idx, beta_idx):
        st, s = self.st, self.s
        beta = st.switch_modes[beta_idx]
        b_old = self.b[idx]
        t = self.t[idx]
        if s.costs is not None:
            bo = b_old @ st.p2
            keys = bo * st.m + beta_idx
            for kk in np.unique(keys):
                sel = keys == kk
                j = np.argmax(sel)
                self.cost[idx[sel]] += s.costs(tuple(b_old[j].tolist()), tuple(beta[j].tolist()), t[sel])
        self.nu[idx] = self.nu[idx] * beta + t[:, None] * np.maximum(beta - b_old, 0)
        self.a[idx] = np.minimum(self.a[idx], beta)
        self.b[idx] = beta
        self.z[idx] = np.where(self.a[idx] == 1, self.z[idx], 0.0)
        self.nsw[idx] += 1
        self._log_many(idx, "switch")

    def decide(self, idx):
        """Query the controller repeatedly at the current instant (no mode revisits)."""
        ctrl, st = self.ctrl, self.st
        limit = ctrl.max_per_instant(st.m)
        if idx.size == 0 or limit == 0:
            return
        visited = np.zeros((idx.size, st.m), bool)
        rows = np.arange(idx.size)
        visited[rows, self.b[idx] @ st.p2] = True
        count = np.zeros(idx.size, int)
        cand, crow = idx, rows
        for _ in range(limit):
            if cand.size == 0:
                break
            tgt = ctrl.decide(self.t[cand], self.x(cand), self.a[cand], self.b[cand], self.nu[cand],
                              self.z[cand], self.nsw[cand], self.rng)
            tgt = np.asarray(tgt, int)
            go = tgt >= 0
            go[go] &= ~visited[crow[go], tgt[go]]
            cand, crow, tgt = cand[go], crow[go], tgt[go]
            if cand.size == 0:
                break
            self.switch(cand, tgt)
            visited[crow, tgt] = True
            count[crow] += 1
        self.max_inst[idx] = np.maximum(self.max_inst[idx], count)

    def jump_or_reject(self, idx, s_new):
        """Thinning step at proposal times ``s_new`` (already accrued to)."""
        st, s = self.st, self.s
        a, b = self.a[idx], self.b[idx]
        pairs = st.pair_of(a, b)
        u = self.rng.random(idx.size)
        jumped = np.zeros(idx.size, bool)
        x = self.x(idx)
        for p in np.unique(pairs):
            sel = np.flatnonzero(pairs == p)
            ap, bp = st.tables.all_pairs[p]
            r = s.model.rates(ap, bp, s_new[sel], x[sel], self.nu[idx[sel]])
            r = np.broadcast_to(r, (sel.size, st.targets[p].shape[0]))
            K = s.model.rate_bound
            if np.any(r < -_RATE_SLACK) or np.any(r > K * (1 + _RATE_SLACK) + _RATE_SLACK):
                raise ModelViolationError(
                    f"rate outside [0, {K}] at pair {ap},{bp}: min {r.min():.6g}, max {r.max():.6g}")
            cum = np.cumsum(r, axis=1)
            thr = u[sel] * st.major[p]
            acc = thr < cum[:, -1]
            if not acc.any():
                continue
            choice = np.minimum((cum[acc] <= thr[acc, None]).sum(axis=1), cum.shape[1] - 1)
            rows = idx[sel[acc]]
            old_on = self.a[rows] == 1
            self.a[rows] = st.targets[p][choice]
            self.z[rows] = np.where((self.a[rows] == 1) & old_on, self.z[rows], 0.0)
            jumped[sel[acc]] = True
        moved = idx[jumped]
        self._log_many(moved, "chain_jump")
        return moved

    def snapshot(self, idx, j):
        self.snaps[idx, j] = self.a[idx]

    # -- main loop -----------------------------------------------------------

    def run(self):
        s, st, ctrl = self.s, self.st, self.ctrl
        t_end = s.t_end
        kinds = {}

        def add(time, kind):
            if time < self.t[0] - 1e-15 or time > t_end + 1e-15:
                return
            kinds.setdefault(float(time), set()).add(kind)

        if s.fgrid is not None:
            for k in range(1, s.fgrid.n_t + 1):
                add(min(k * s.fgrid.dt, s.T), ("factor", k - 1))
        for e in ctrl.epochs:
            add(min(e, t_end), "decide")
        for j, e in enumerate(self.snap_times):
            add(e, ("snap", j))
        add(t_end, "end")
        times = np.array(sorted(kinds))
        todo = [kinds[float(tt)] for tt in times]
        factor_k = np.array([next((x[1] for x in acts if isinstance(x, tuple) and x[0] == "factor"), -1)
                             for acts in todo], int)
        snap_of = {e: [x[1] for x in acts if isinstance(x, tuple) and x[0] == "snap"]
                   for e, acts in enumerate(todo)}
        snap_of = {e: v for e, v in snap_of.items() if v}
        end = np.array(["end" in acts for acts in todo])
        decide = np.array(["decide" in acts and ("end" not in acts or ctrl.decide_at_horizon)
                           for acts in todo])
        plan = (factor_k, snap_of, decide, end)
        ep = np.searchsorted(times, self.t, side="left")
        live = np.ones(self.N, bool)

        while True:
            alive = np.flatnonzero(live)
            if alive.size == 0:
                break
            at = alive[self.t[alive] == times[ep[alive]]]
            if at.size:
                self._epoch(at, plan, ep, live)
            rest = np.flatnonzero(live)
            rest = rest[self.t[rest] < times[ep[rest]]]
            if rest.size == 0:
                continue
            nxt = times[ep[rest]]
            maj = st.major[st.pair_of(self.a[rest], self.b[rest])]
            gap = np.full(rest.size, np.inf)
            pos = maj > 0
            gap[pos] = self.rng.exponential(1.0, pos.sum()) / maj[pos]
            prop = self.t[rest] + gap
            reach = prop >= nxt
            self.accrue(rest[reach], nxt[reach])
            cand = rest[~reach]
            if cand.size:
                self.accrue(cand, prop[~reach])
                moved = self.jump_or_reject(cand, prop[~reach])
                if ctrl.query_after_jumps and moved.size:
                    self.decide(moved)
        return self

    def _epoch(self, idx, plan, ep, live):
        factor_k, snap_of, decide, end = plan
        e = ep[idx]
        fk = factor_k[e]
        has = fk >= 0
        for k in np.unique(fk[has]):
            members = idx[fk == k]
            K = self.s.fgrid.kernel(int(k))
            cum = np.cumsum(K[self.xi[members]], axis=1)
            u = self.rng.random(members.size)
            self.xi[members] = np.minimum((cum <= u[:, None] * cum[:, -1:]).sum(axis=1), K.shape[0] - 1)
        if snap_of:
            for ee in np.unique(e):
                for j in snap_of.get(int(ee), ()):
                    self.snapshot(idx[e == ee], j)
        self.decide(idx[decide[e]])
        fin = end[e]
        self._finish(idx[fin])
        live[idx[fin]] = False
        ep[idx[~fin]] += 1

    def _finish(self, idx):
        s = self.s
        if s.rewards is not None and s.t_end >= s.T - 1e-15:
            a = self.a[idx]
            codes = (a + 1) @ self.st.p3
            x = self.x(idx)
            for c in np.unique(codes):
                sel = codes == c
                mode = tuple(a[np.argmax(sel)].tolist())
                self.terminal[idx[sel]] = s.rewards.terminal(mode, x[sel], self.z[idx[sel]], s.T)
        self._log_many(idx, "end")


def _run_chunk(st, N, start, seq, controller, snap_times, record, offset):
    rng = np.random.default_rng(seq)
    return _Chunk(st, N, start, rng, controller, snap_times, record, offset).run()


def simulate_batch(setup: SimSetup, start, n_paths, seed=0, controller=None, snap_times=(),
                   record=0, threads=1, rng=None):
    """Simulate ``n_paths`` independent paths from ``start`` (a ``HybridState``).

    Paths are processed in fixed chunks of ``CHUNK``; chunk ``j`` draws from
    ``SeedSequence(seed).spawn(...)[j]`` so results do not depend on
    ``threads``.  Passing ``rng`` runs one chunk on that generator instead.
    """
    controller = controller or NoControl()
    st = _Static(setup)
    n_paths = int(n_paths)
    if n_paths < 0:
        raise ValueError("n_paths must be non-negative")
    if rng is not None:
        chunks = [_Chunk(st, n_paths, start, rng, controller, snap_times, record, 0).run()]
    else:
        sizes = [CHUNK] * (n_paths // CHUNK) + ([n_paths % CHUNK] if n_paths % CHUNK else [])
        seqs = np.random.SeedSequence(seed).spawn(len(sizes))
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if sizes else []
        jobs = [(st, sz, start, sq, controller, snap_times, max(0, min(record - off, sz)), off)
                for sz, sq, off in zip(sizes, seqs, offsets)]
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                chunks = list(pool.map(lambda j: _run_chunk(*j), jobs))
        else:
            chunks = [_run_chunk(*j) for j in jobs]
    n = st.n

    def cat(name, shape=()):
        parts = [getattr(c, name) for c in chunks]
        return np.concatenate(parts) if parts else np.zeros((0,) + shape)

    snaps = None
    if len(snap_times):
        snaps = (np.concatenate([c.snaps for c in chunks]) if chunks
                 else np.zeros((0, len(snap_times), n), int))
    events = [ev for c in chunks for ev in c.events]
    return BatchResult(cat("running"), cat("terminal"), cat("cost"), cat("nsw"), cat("max_inst"),
                       cat("a", (n,)), cat("b", (n,)), cat("nu", (n,)), cat("z", (n,)), snaps, events,
                       [seed])
