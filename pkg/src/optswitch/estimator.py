"""scikit-learn style front end: ``fit`` a problem, ``predict`` switching decisions."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .policy import evaluate_policy, extract_policy
from .solver import GridSpec, solve
from .validation import check_problem, check_states


class SwitchingSolver(BaseEstimator):
    """Solve an optimal switching problem on a grid and expose its feedback rule.

    ``fit(problem)`` runs the Picard iteration.  State matrices passed to
    ``predict``/``transform``/``value`` have the columns listed by
    :func:`optswitch.validation.state_columns`.  ``predict`` returns the
    target switch-mode index, or -1 for "do not intervene".
    """

    def __init__(self, n_t=100, nu_steps=10, z_steps=10, tol=None, k_max=None, delta_switch=None,
                 force=False):
        self.n_t = n_t
        self.nu_steps = nu_steps
        self.z_steps = z_steps
        self.tol = tol
        self.k_max = k_max
        self.delta_switch = delta_switch
        self.force = force

    def fit(self, problem, y=None):
        problem = check_problem(problem)
        if int(self.n_t) < 1 or int(self.nu_steps) < 1 or int(self.z_steps) < 1:
            raise ValueError("grid sizes must be positive")
        grid = GridSpec(problem.T, int(self.n_t), int(self.nu_steps), int(self.z_steps))
        fld = solve(problem, grid, tol=self.tol, k_max=self.k_max)
        self.problem_ = problem
        self.grid_ = grid
        self.value_field_ = fld
        self.converged_ = fld.converged
        self.n_iter_ = len(fld.deltas)
        self.deltas_ = list(fld.deltas)
        self.policy_ = extract_policy(fld, problem.costs, self.delta_switch, force=True)
        if not fld.converged and not self.force:
            self.policy_ = None
        self.root_value_ = fld.root_value(problem)
        return self

    def _split(self, X):
        check_is_fitted(self, "value_field_")
        return check_states(X, self.problem_.n, self.problem_.T)

    def _groups(self, a, b):
        keys = [(tuple(r), tuple(s)) for r, s in zip(a.tolist(), b.tolist())]
        for key in dict.fromkeys(keys):
            yield key, np.array([k == key for k in keys])

    def value(self, X):
        t, x, a, b, nu, z = self._split(X)
        out = np.empty(t.shape[0])
        for (ak, bk), sel in self._groups(a, b):
            out[sel] = self.value_field_.values(ak, bk, t[sel], x[sel], nu[sel], z[sel])
        return out

    def transform(self, X):
        """Columns: current value, best post-switch value net of cost."""
        t, x, a, b, nu, z = self._split(X)
        pol = self._policy()
        out = np.empty((t.shape[0], 2))
        for (ak, bk), sel in self._groups(a, b):
            cur, best, _ = pol.evaluate_options(t[sel], x[sel], ak, bk, nu[sel], z[sel])
            out[sel, 0], out[sel, 1] = cur, best
        return out

    def predict(self, X):
        t, x, a, b, nu, z = self._split(X)
        return self._policy().decide(t, x, a, b, nu, z)

    def evaluate(self, n_paths=10000, seed=0, start=None, threads=1):
        """Monte Carlo check of the fitted policy; returns an ``EvaluationReport``."""
        check_is_fitted(self, "value_field_")
        report, _ = evaluate_policy(self.problem_, self._policy(), start, n_paths, seed, threads)
        return report

    def _policy(self):
        if self.policy_ is None:
            raise RuntimeError("solver did not converge; refit with force=True to use the policy")
        return self.policy_
