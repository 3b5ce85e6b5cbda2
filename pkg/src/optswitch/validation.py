"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .problem import ProblemSpec


def check_problem(problem):
    if not isinstance(problem, ProblemSpec):
        raise TypeError(f"expected a ProblemSpec, got {type(problem).__name__}")
    return problem


def state_columns(n):
    return (["t", "x"] + [f"a{i}" for i in range(n)] + [f"b{i}" for i in range(n)]
            + [f"nu{i}" for i in range(n)] + [f"z{i}" for i in range(n)])


def check_states(X, n, T):
    """Validate a state matrix with columns ``t, x, a_1..a_n, b_1..b_n, nu_1..nu_n, z_1..z_n``.

    Returns ``(t, x, a, b, nu, z)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != 2 + 4 * n:
        raise ValueError(f"states need shape (N, {2 + 4 * n}); got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states contain NaN or infinite values")
    t, x = X[:, 0], X[:, 1]
    a, b = X[:, 2:2 + n], X[:, 2 + n:2 + 2 * n]
    nu, z = X[:, 2 + 2 * n:2 + 3 * n], X[:, 2 + 3 * n:]
    if np.any(a != np.round(a)) or np.any(b != np.round(b)):
        raise ValueError("mode columns must be integers")
    a, b = a.astype(int), b.astype(int)
    if np.any((a < -1) | (a > 1)) or np.any((b < 0) | (b > 1)):
        raise ValueError("operation modes must be in {-1,0,1} and switch modes in {0,1}")
    if np.any(a > b):
        raise ValueError("operation mode exceeds switch mode")
    if np.any((t < 0) | (t > T)) or np.any((nu < 0) | (nu > T)) or np.any((z < 0) | (z > T)):
        raise ValueError("t, nu and z must lie in [0, T]")
    if np.any(nu[b == 0] != 0) or np.any(z[a <= 0] != 0):
        raise ValueError("nu must vanish where b=0 and z where a<=0")
    return t, x, a, b, nu, z
