"""Trinomial Markov-chain approximation of a scalar diffusion
``dX = drift(t, X) dt + vol(t, X) dB`` on a uniform grid."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P


@dataclass
class FactorSpec:
    """Exogenous factor: drift/volatility callables ``f(t, x)`` plus a grid."""

    drift: object
    vol: object
    x_min: float
    x_max: float
    n_x: int
    x0: float
    time_homogeneous: bool = True
    coef: dict | None = None  # polynomial coefficients when built from a file

    @classmethod
    def polynomial(cls, drift_coef, vol_coef, x_min, x_max, n_x, x0):
        dc, vc = np.asarray(drift_coef, float), np.asarray(vol_coef, float)
        return cls(lambda t, x: P.polyval(x, dc), lambda t, x: P.polyval(x, vc),
                   float(x_min), float(x_max), int(n_x), float(x0), True,
                   {"drift": dc.tolist(), "vol": vc.tolist()})

    def describe(self):
        return {"x_min": self.x_min, "x_max": self.x_max, "n_x": self.n_x, "x0": self.x0,
                "coef": self.coef}


class FactorGrid:
    """Per-step transition kernels on the node set.

    Nodes move to the neighbours ``x ± h`` with probabilities that match the
    conditional mean ``drift*dt`` and variance ``vol²*dt`` exactly.  Where
    that needs negative probabilities they are clipped and renormalized
    (with a warning); mass that would leave the grid at either end stays at
    the end node.  Both cases are flagged in ``clipped``.
    """

    def __init__(self, spec: FactorSpec, dt: float, n_t: int):
        if spec.n_x < 2 or spec.x_max <= spec.x_min:
            raise ValueError("factor grid needs n_x >= 2 and x_max > x_min")
        self.spec = spec
        self.dt = float(dt)
        self.n_t = int(n_t)
        self.nodes = np.linspace(spec.x_min, spec.x_max, spec.n_x)
        self.h = self.nodes[1] - self.nodes[0]
        self._kernels = {}
        self.clipped = {}

    @property
    def size(self):
        return self.nodes.size

    def _key(self, k):
        return 0 if self.spec.time_homogeneous else k

    def kernel(self, k):
        """Transition matrix from time ``t_k`` to ``t_{k+1}``."""
        key = self._key(k)
        if key not in self._kernels:
            self._kernels[key], self.clipped[key] = self._build(key * self.dt)
        return self._kernels[key]

    def _build(self, t):
        x, h, dt = self.nodes, self.h, self.dt
        m = np.broadcast_to(np.asarray(self.spec.drift(t, x), float) * dt, x.shape)
        s2 = np.broadcast_to(np.asarray(self.spec.vol(t, x), float) ** 2, x.shape) * dt + m * m
        up = 0.5 * (s2 / h**2 + m / h)
        down = 0.5 * (s2 / h**2 - m / h)
        stay = 1.0 - up - down
        probs = np.stack([down, stay, up], axis=1)
        tiny = 1e-15
        bad = np.any(probs < -tiny, axis=1)
        if bad.any():
            warnings.warn(f"trinomial probabilities clipped at {int(bad.sum())} node(s) at t={t:g}; "
                          "local consistency does not hold there", RuntimeWarning, stacklevel=3)
        # rounding can leave entries a hair below zero even where nothing was clipped
        probs = np.clip(probs, 0.0, None)
        # mass that would leave the grid stays put (reflection); flagged, not warned
        folded = np.zeros(x.size, bool)
        folded[0], folded[-1] = probs[0, 0] > tiny, probs[-1, 2] > tiny
        probs[0, 1] += probs[0, 0]
        probs[0, 0] = 0.0
        probs[-1, 1] += probs[-1, 2]
        probs[-1, 2] = 0.0
        if bad.any():
            probs /= probs.sum(axis=1, keepdims=True)
        K = np.zeros((x.size, x.size))
        idx = np.arange(x.size)
        K[idx, idx] = probs[:, 1]
        K[idx[1:], idx[1:] - 1] = probs[1:, 0]
        K[idx[:-1], idx[:-1] + 1] = probs[:-1, 2]
        return K, bad | folded

    def consistency_errors(self, k=0):
        """Per-node |mean - drift*dt| and |variance - vol²*dt| of the step kernel."""
        K = self.kernel(k)
        t = self._key(k) * self.dt
        x = self.nodes
        d = x[None, :] - x[:, None]
        mean = (K * d).sum(axis=1)
        var = (K * d * d).sum(axis=1) - mean**2
        m_target = np.broadcast_to(np.asarray(self.spec.drift(t, x), float) * self.dt, x.shape)
        v_target = np.broadcast_to(np.asarray(self.spec.vol(t, x), float) ** 2 * self.dt, x.shape)
        return np.abs(mean - m_target), np.abs(var - v_target)

    def locate(self, x):
        """Nearest node index for each value in ``x``."""
        idx = np.rint((np.asarray(x, float) - self.nodes[0]) / self.h).astype(int)
        return np.clip(idx, 0, self.size - 1)
