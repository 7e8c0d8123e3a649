import numpy as np
import pytest

from esdirkopt.errors import DomainError
from esdirkopt.model import (MASS_CLAMP, LinearTestModel, QtsParameters,
                             QuadrupleTank, qts_f, qts_f_batch,
                             qts_jacobians, qts_jacobians_batch)

X0 = np.array([7602.7, 11404.0, 1000.0, 1000.0])
U0 = np.array([300.0, 300.0])
D0 = np.array([0.0, 0.0, 100.0, 100.0])


def test_mass_balance_values():
    f = qts_f(X0, U0, D0, QtsParameters())
    expected = np.array([25.067333824732316, 0.4329862085390346,
                         101.83479270786412, 131.83479270786412])
    assert np.allclose(f, expected, rtol=1e-14, atol=0)


def test_jacobians_match_finite_differences():
    p = QtsParameters()
    jx, ju = qts_jacobians(X0, U0, D0, p)
    eps = 1e-6
    for j in range(4):
        dx = np.zeros(4)
        dx[j] = eps * (1.0 + X0[j])
        fd = (qts_f(X0 + dx, U0, D0, p) - qts_f(X0 - dx, U0, D0, p)) \
            / (2.0 * dx[j])
        assert np.allclose(jx[:, j], fd, rtol=1e-6, atol=1e-12)
    for j in range(2):
        du = np.zeros(2)
        du[j] = eps
        fd = (qts_f(X0, U0 + du, D0, p) - qts_f(X0, U0 - du, D0, p)) \
            / (2.0 * eps)
        assert np.allclose(ju[:, j], fd, rtol=1e-7, atol=1e-10)


def test_jacobian_sparsity():
    jx, ju = qts_jacobians(X0, U0, D0, QtsParameters())
    zero = np.array([[0, 1, 0, 1], [1, 0, 1, 0],
                     [1, 1, 0, 1], [1, 1, 1, 0]], dtype=bool)
    assert np.all(jx[zero] == 0.0)
    assert np.all(np.diag(jx) < 0.0)
    assert np.all(ju >= 0.0)


def test_empty_tank_clamped():
    p = QtsParameters()
    x = np.array([0.0, MASS_CLAMP / 2.0, 1000.0, 1000.0])
    f = qts_f(x, U0, D0, p)
    assert np.all(np.isfinite(f))
    jx, _ = qts_jacobians(x, U0, D0, p)
    assert jx[0, 0] == 0.0
    assert jx[1, 1] == 0.0


def test_negative_mass_raises():
    p = QtsParameters()
    x = np.array([-1.0, 1.0, 1.0, 1.0])
    with pytest.raises(DomainError):
        qts_f(x, U0, D0, p)
    with pytest.raises(DomainError):
        qts_jacobians(x, U0, D0, p)


def test_output_levels():
    m = QuadrupleTank()
    z = m.output(0.0, X0, U0, D0)
    p = m.params
    assert np.allclose(z, X0[:2] / (p.rho * p.A[:2]), rtol=0, atol=0)
    assert np.allclose(m.output_matrix() @ X0, z, rtol=0, atol=1e-15)


def test_parameter_validation():
    with pytest.raises(ValueError):
        QtsParameters(gamma_valves=np.array([0.6, 1.0]))
    with pytest.raises(ValueError):
        QtsParameters(rho=0.0)


def test_batch_matches_serial():
    p = QtsParameters()
    rng = np.random.default_rng(5)
    xs = X0 * (1.0 + 0.3 * rng.random((7, 4)))
    us = U0 + 50.0 * rng.standard_normal((7, 2))
    fb = qts_f_batch(xs, us, D0, p)
    jxb, jub = qts_jacobians_batch(xs, p)
    for k in range(7):
        assert np.array_equal(fb[k], qts_f(xs[k], us[k], D0, p))
        jx, ju = qts_jacobians(xs[k], us[k], D0, p)
        assert np.array_equal(jxb[k], jx)
        assert np.array_equal(jub, ju)


def test_batch_negative_mass_names_row():
    p = QtsParameters()
    xs = np.tile(X0, (3, 1))
    xs[2, 1] = -5.0
    us = np.tile(U0, (3, 1))
    with pytest.raises(DomainError) as err:
        qts_f_batch(xs, us, D0, p)
    assert err.value.batch_row == 2


def test_linear_model_exact_flow():
    m = LinearTestModel(-0.8, forcing=0.3)
    x0, u, t = 2.0, 1.5, 0.7
    # d/dt of the exact flow equals f along the flow
    x_t = m.exact_state(t, x0, u)
    eps = 1e-6
    deriv = (m.exact_state(t + eps, x0, u)
             - m.exact_state(t - eps, x0, u)) / (2.0 * eps)
    assert deriv == pytest.approx(
        float(m.f(t, np.array([x_t]), np.array([u]), None)[0]), rel=1e-8)
    dxdx0, dxdu = m.exact_sensitivities(t)
    assert dxdx0 == pytest.approx(np.exp(-0.8 * t), rel=1e-14)
    assert dxdu == pytest.approx((np.exp(-0.8 * t) - 1.0) / -0.8, rel=1e-14)
