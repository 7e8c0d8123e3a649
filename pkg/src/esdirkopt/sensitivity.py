"""State and input sensitivity propagation for the ESDIRK steps.

Three engines are provided:

* iterated: differentiates the scheme as executed, replaying exactly the
  recorded Newton updates of every stage with the same iteration matrix
  factorization and the Jacobians stored at each iterate.
* direct: treats the stage equations as solved exactly and reads the
  sensitivities off the (approximate) iteration matrix of the step; cheap
  but biased for large step sizes.
* base-direct: the direct formulas with the exact stage matrix
  I - h*gamma*df/dx(X_i) factorized fresh at every converged stage.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ContractViolation


class SensitivityMode(enum.Enum):
    ITERATED = "iterated"
    DIRECT = "direct"
    BASE_DIRECT = "base"
    NONE = "none"


@dataclass
class SensitivityPair:
    """d(.)/dx0 and d(.)/du of a state-like quantity."""
    wrt_x0: np.ndarray
    wrt_u: np.ndarray

    @classmethod
    def initial(cls, n_x, n_u):
        """Sensitivities at the start of a shooting interval: (I, 0)."""
        return cls(np.eye(n_x), np.zeros((n_x, n_u)))

    def packed(self):
        """Single (n_x, n_x + n_u) matrix [d/dx0 | d/du]."""
        return np.hstack((self.wrt_x0, self.wrt_u))

    @classmethod
    def from_packed(cls, m, n_x):
        return cls(m[:, :n_x].copy(), m[:, n_x:].copy())


def _psi_derivative(step, stage_sens, i, h, a, n_x):
    """Packed [dpsi_i/dx0 | dpsi_i/du] from converged-stage data.

    Stage 1 is the explicit stage x_k; its Jacobians are the ones evaluated
    at the step start. Stages j >= 2 use the converged-stage Jacobians and
    the already propagated stage sensitivities.
    """
    p = step.sens_in.packed()
    out = p.copy()
    for j in range(i):
        jx, ju = step.stage_jac_x[j], step.stage_jac_u[j]
        sj = p if j == 0 else stage_sens[j - 1]
        contrib = jx @ sj
        contrib[:, n_x:] += ju
        out += h * a[i, j] * contrib
    return out


def iterated_propagate(step, model, tableau, h, counters):
    """Replay the recorded Newton updates for every stage on the sensitivities.

    Performs exactly step.newton_counts[i] updates per stage, reusing the
    step's single iteration matrix factorization; adds no factorizations
    and no model evaluations (the per-iterate Jacobians were stored during
    the state pass).
    """
    if step.iterate_jac_x is None:
        raise ContractViolation("iterated propagation requires iterate history")
    n_x, n_u = model.n_x, model.n_u
    a, gamma = tableau.a, tableau.gamma
    hg = h * gamma
    stage_sens = []
    for idx in range(tableau.s - 1):
        i = idx + 1
        dpsi = _psi_derivative(step, stage_sens, i, h, a, n_x)
        s_cur = step.stage_sens_init[idx]
        jxs = step.iterate_jac_x[idx]
        jus = step.iterate_jac_u[idx]
        for l in range(step.newton_counts[idx]):
            dres = s_cur - hg * (jxs[l] @ s_cur) - dpsi
            dres[:, n_x:] -= hg * jus[l]
            s_cur = s_cur - linalg.lu_solve(step.factors, dres)
        stage_sens.append(s_cur)
    pairs = [SensitivityPair.from_packed(s, n_x) for s in stage_sens]
    return pairs, pairs[-1]


def direct_propagate(step, model, tableau, h, mode, counters):
    """Stage sensitivities from the converged stage equations.

    DIRECT reuses the step's iteration matrix factorization; BASE_DIRECT
    factorizes the exact stage matrix I - h*gamma*J(X_i) per stage (one
    extra factorization each, Jacobians reused from the state pass).
    """
    if mode not in (SensitivityMode.DIRECT, SensitivityMode.BASE_DIRECT):
        raise ContractViolation(f"direct_propagate called with mode {mode}")
    n_x, n_u = model.n_x, model.n_u
    a, gamma = tableau.a, tableau.gamma
    hg = h * gamma
    stage_sens = []
    for idx in range(tableau.s - 1):
        i = idx + 1
        rhs = _psi_derivative(step, stage_sens, i, h, a, n_x)
        rhs[:, n_x:] += hg * step.stage_jac_u[i]
        if mode is SensitivityMode.BASE_DIRECT:
            ji = np.eye(n_x) - hg * step.stage_jac_x[i]
            factors = linalg.lu_factorize(ji)
            counters.lu_factorizations += 1
        else:
            factors = step.factors
        stage_sens.append(linalg.lu_solve(factors, rhs))
    pairs = [SensitivityPair.from_packed(s, n_x) for s in stage_sens]
    return pairs, pairs[-1]


def fd_sensitivity_oracle(model, tab, x0, u, d, t0, tf, n_steps,
                          rel_step=1e-6, strategy=None, settings=None):
    """Central finite differences of the terminal state of integrate_interval.

    Independent check for the analytic propagation paths; runs the
    integrator with tight Newton tolerances and no sensitivity mode.
    """
    from . import integrator

    if settings is None:
        settings = integrator.NewtonSettings(abs=1e-12, rel=1e-12,
                                             max_iterations=50)
    if strategy is None:
        strategy = integrator.NewtonStrategy.REUSE_PER_STEP

    def terminal(xs, us):
        counters = integrator.WorkCounters()
        res = integrator.integrate_interval(
            model, tab, strategy, settings, SensitivityMode.NONE,
            xs, us, d, t0, tf, n_steps, counters)
        return res.x_final

    x0 = np.asarray(x0, float)
    u = np.asarray(u, float)
    n_x, n_u = model.n_x, model.n_u
    wrt_x0 = np.zeros((n_x, n_x))
    wrt_u = np.zeros((n_x, n_u))
    for j in range(n_x):
        eps = rel_step * (1.0 + abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += eps
        xm[j] -= eps
        wrt_x0[:, j] = (terminal(xp, u) - terminal(xm, u)) / (2.0 * eps)
    for j in range(n_u):
        eps = rel_step * (1.0 + abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += eps
        um[j] -= eps
        wrt_u[:, j] = (terminal(x0, up) - terminal(x0, um)) / (2.0 * eps)
    return SensitivityPair(wrt_x0, wrt_u)
