"""ODE models: the quadruple tank system and analytic linear test models."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

#: masses below this are treated as empty tanks (zero outflow)
MASS_CLAMP = 1e-9


class OdeModel:
    """Interface for models dx/dt = f(t, x, u, d) with output z = h(t, x, u, d)."""

    n_x = 0
    n_u = 0
    n_d = 0
    n_z = 0
    #: True when f_batch/jacobians_batch are available (autonomous models only)
    supports_batch = False

    def f(self, t, x, u, d):
        raise NotImplementedError

    def dfdx(self, t, x, u, d):
        raise NotImplementedError

    def dfdu(self, t, x, u, d):
        raise NotImplementedError

    def output(self, t, x, u, d):
        raise NotImplementedError


@dataclass(frozen=True)
class QtsParameters:
    """Quadruple tank parameters (cgs units)."""
    a: np.ndarray = field(default_factory=lambda: np.full(4, 1.2272))
    A: np.ndarray = field(default_factory=lambda: np.full(4, 380.1327))
    gamma_valves: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.7]))
    rho: float = 1.0
    g: float = 981.0

    def __post_init__(self):
        if np.any(self.a <= 0) or np.any(self.A <= 0) or self.rho <= 0 or self.g <= 0:
            raise ValueError("tank parameters must be positive")
        if np.any(self.gamma_valves <= 0) or np.any(self.gamma_valves >= 1):
            raise ValueError("valve splits must lie strictly in (0, 1)")


def _outflows(x, p):
    """Tank outflows q_i = a_i*sqrt(2*g*x_i/(rho*A_i)), clamped at empty."""
    if np.any(x < 0):
        raise DomainError(f"negative tank mass: {x}")
    xc = np.where(x < MASS_CLAMP, 0.0, x)
    return p.a * np.sqrt(2.0 * p.g * xc / (p.rho * p.A))


def qts_f(x, u, d, p):
    """Mass balances of the four tanks [g/s]."""
    q = _outflows(x, p)
    gv = p.gamma_valves
    return p.rho * np.array([
        gv[0] * u[0] + q[2] + d[0] - q[0],
        gv[1] * u[1] + q[3] + d[1] - q[1],
        (1.0 - gv[1]) * u[1] + d[2] - q[2],
        (1.0 - gv[0]) * u[0] + d[3] - q[3],
    ])


def qts_jacobians(x, u, d, p):
    """Analytic (df/dx, df/du) of the tank mass balances."""
    if np.any(x < 0):
        raise DomainError(f"negative tank mass: {x}")
    # dq_i/dx_i; zero for clamped (empty) tanks
    dq = np.zeros(4)
    live = x >= MASS_CLAMP
    dq[live] = p.a[live] * p.g / (p.rho * p.A[live]) / np.sqrt(
        2.0 * p.g * x[live] / (p.rho * p.A[live]))
    rho = p.rho
    jx = np.zeros((4, 4))
    jx[0, 0] = -rho * dq[0]
    jx[0, 2] = rho * dq[2]
    jx[1, 1] = -rho * dq[1]
    jx[1, 3] = rho * dq[3]
    jx[2, 2] = -rho * dq[2]
    jx[3, 3] = -rho * dq[3]
    gv = p.gamma_valves
    ju = rho * np.array([[gv[0], 0.0],
                         [0.0, gv[1]],
                         [0.0, 1.0 - gv[1]],
                         [1.0 - gv[0], 0.0]])
    return jx, ju


def qts_f_batch(x, u, d, p):
    """qts_f over a (B, 4) stack of states and a (B, 2) stack of inputs."""
    if np.any(x < 0):
        row = int(np.argmax(np.any(x < 0, axis=1)))
        exc = DomainError(f"negative tank mass: {x[row]}")
        exc.batch_row = row
        raise exc
    xc = np.where(x < MASS_CLAMP, 0.0, x)
    q = p.a * np.sqrt(2.0 * p.g * xc / (p.rho * p.A))
    gv = p.gamma_valves
    out = np.empty_like(x)
    out[:, 0] = gv[0] * u[:, 0] + q[:, 2] + d[0] - q[:, 0]
    out[:, 1] = gv[1] * u[:, 1] + q[:, 3] + d[1] - q[:, 1]
    out[:, 2] = (1.0 - gv[1]) * u[:, 1] + d[2] - q[:, 2]
    out[:, 3] = (1.0 - gv[0]) * u[:, 0] + d[3] - q[:, 3]
    out *= p.rho
    return out


def qts_jacobians_batch(x, p):
    """Analytic (df/dx, df/du) stacks for a (B, 4) stack of states.

    df/du does not depend on the state, so a single (4, 2) matrix is
    returned for the whole batch.
    """
    if np.any(x < 0):
        row = int(np.argmax(np.any(x < 0, axis=1)))
        exc = DomainError(f"negative tank mass: {x[row]}")
        exc.batch_row = row
        raise exc
    dq = np.zeros_like(x)
    live = x >= MASS_CLAMP
    coef = np.broadcast_to(p.a * p.g / (p.rho * p.A), x.shape)
    dq[live] = coef[live] / np.sqrt(
        2.0 * p.g * x[live] / np.broadcast_to(p.rho * p.A, x.shape)[live])
    rho = p.rho
    jx = np.zeros(x.shape[:1] + (4, 4))
    jx[:, 0, 0] = -rho * dq[:, 0]
    jx[:, 0, 2] = rho * dq[:, 2]
    jx[:, 1, 1] = -rho * dq[:, 1]
    jx[:, 1, 3] = rho * dq[:, 3]
    jx[:, 2, 2] = -rho * dq[:, 2]
    jx[:, 3, 3] = -rho * dq[:, 3]
    gv = p.gamma_valves
    ju = rho * np.array([[gv[0], 0.0],
                         [0.0, gv[1]],
                         [0.0, 1.0 - gv[1]],
                         [1.0 - gv[0], 0.0]])
    return jx, ju


def qts_output(x, p):
    """Bottom tank levels [cm]: z_i = x_i/(rho*A_i) for i = 1, 2."""
    return np.asarray(x)[:2] / (p.rho * p.A[:2])


class QuadrupleTank(OdeModel):
    """Four interconnected tanks, two pump inputs, two level outputs."""

    n_x = 4
    n_u = 2
    n_d = 4
    n_z = 2

    def __init__(self, params=None):
        self.params = params if params is not None else QtsParameters()

    def f(self, t, x, u, d):
        return qts_f(x, u, d, self.params)

    def dfdx(self, t, x, u, d):
        return qts_jacobians(x, u, d, self.params)[0]

    def dfdu(self, t, x, u, d):
        return qts_jacobians(x, u, d, self.params)[1]

    def output(self, t, x, u, d):
        return qts_output(x, self.params)

    supports_batch = True

    def f_batch(self, x, u, d):
        """f over a (B, 4) stack of states with per-row inputs (B, 2)."""
        return qts_f_batch(x, u, d, self.params)

    def jacobians_batch(self, x):
        """(df/dx, df/du) over a (B, 4) stack; df/du is state independent."""
        return qts_jacobians_batch(x, self.params)

    def output_matrix(self):
        """The constant matrix C with z = C x."""
        p = self.params
        c = np.zeros((2, 4))
        c[0, 0] = 1.0 / (p.rho * p.A[0])
        c[1, 1] = 1.0 / (p.rho * p.A[1])
        return c


class LinearTestModel(OdeModel):
    """Scalar dx/dt = lam*x + u + forcing with closed-form flow and sensitivities."""

    n_x = 1
    n_u = 1
    n_d = 0
    n_z = 1

    def __init__(self, lam, forcing=0.0):
        self.lam = lam
        self.forcing = forcing

    def f(self, t, x, u, d):
        return self.lam * np.asarray(x, float) + u[0] + self.forcing

    def dfdx(self, t, x, u, d):
        return np.array([[self.lam]])

    def dfdu(self, t, x, u, d):
        return np.array([[1.0]])

    def output(self, t, x, u, d):
        return np.asarray(x, float)

    def output_matrix(self):
        return np.array([[1.0]])

    def exact_state(self, t, x0, u):
        lam = self.lam
        drive = u + self.forcing
        if lam == 0.0:
            return x0 + t * drive
        e = np.exp(lam * t)
        return e * x0 + (e - 1.0) * drive / lam

    def exact_sensitivities(self, t):
        """(dx(t)/dx0, dx(t)/du) of the exact flow."""
        lam = self.lam
        e = np.exp(lam * t)
        dxdu = t if lam == 0.0 else (e - 1.0) / lam
        return e, dxdu


def linear_test_model(lam, forcing=0.0):
    return LinearTestModel(lam, forcing)
