import numpy as np
import pytest

from esdirkopt.errors import ContractViolation, NewtonDivergence
from esdirkopt.integrator import (NewtonSettings, NewtonStrategy,
                                  WorkCounters, esdirk_step,
                                  integrate_interval,
                                  integrate_intervals_batch)
from esdirkopt.model import LinearTestModel, QuadrupleTank
from esdirkopt.sensitivity import SensitivityMode, SensitivityPair
from esdirkopt.tableau import make_tableau

X0 = np.array([7602.7, 11404.0, 1000.0, 1000.0])
U0 = np.array([300.0, 300.0])
D0 = np.array([0.0, 0.0, 100.0, 100.0])

TIGHT = NewtonSettings(abs=1e-12, rel=1e-12, max_iterations=50)


def run_qts(method, strategy, mode, n_steps=10, settings=None,
            keep_records=False, x0=X0, u=U0):
    counters = WorkCounters()
    res = integrate_interval(
        QuadrupleTank(), make_tableau(method), strategy,
        settings if settings is not None else NewtonSettings(), mode,
        x0, u, D0, 0.0, 10.0, n_steps, counters, keep_records=keep_records)
    return res, counters


def test_esdirk12_step_is_implicit_euler():
    lam, forcing = -0.5, 0.2
    m = LinearTestModel(lam, forcing)
    h = 0.3
    x0 = np.array([1.7])
    counters = WorkCounters()
    rec = esdirk_step(m, make_tableau("ESDIRK12"),
                      NewtonStrategy.REUSE_PER_STEP, TIGHT,
                      SensitivityMode.NONE, x0, None, np.array([0.4]), None,
                      0.0, h, None, counters)
    exact = (x0[0] + h * (0.4 + forcing)) / (1.0 - h * lam)
    assert rec.x_next[0] == pytest.approx(exact, rel=1e-12)
    assert np.allclose(rec.embedded_error,
                       rec.x_next - (x0 + 0.5 * h * (m.f(0, x0, [0.4], None)
                                                     + lam * rec.x_next
                                                     + 0.4 + forcing)),
                       rtol=0, atol=1e-12)


@pytest.mark.parametrize("method,order", [("ESDIRK12", 1), ("ESDIRK23", 2),
                                          ("ESDIRK34", 3)])
def test_linear_model_convergence_order(method, order):
    m = LinearTestModel(-1.3, forcing=0.5)
    u = np.array([0.7])
    x0 = np.array([2.0])
    exact = m.exact_state(1.0, x0[0], u[0])
    errors = []
    for n in (8, 16, 32, 64):
        counters = WorkCounters()
        res = integrate_interval(m, make_tableau(method),
                                 NewtonStrategy.REUSE_PER_STEP, TIGHT,
                                 SensitivityMode.NONE, x0, u, None,
                                 0.0, 1.0, n, counters)
        errors.append(abs(res.x_final[0] - exact))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(rates > order - 0.25)


def test_frozen_terminal_state_esdirk23():
    res, counters = run_qts("ESDIRK23", NewtonStrategy.REUSE_PER_STEP,
                            SensitivityMode.ITERATED)
    expected = np.array([8000.271319323485, 11619.27306711874,
                         1843.1845763673257, 2097.278340600137])
    assert np.allclose(res.x_final, expected, rtol=1e-13, atol=0)
    assert counters.lu_factorizations == 10
    assert counters.f_evals == 72
    assert counters.jac_x_evals == 52
    assert counters.jac_u_evals == 52
    assert counters.newton_iterations == 42


@pytest.mark.parametrize("method", ["ESDIRK12", "ESDIRK23", "ESDIRK34"])
def test_counter_identities_reuse(method):
    res, counters = run_qts(method, NewtonStrategy.REUSE_PER_STEP,
                            SensitivityMode.ITERATED, keep_records=True)
    n_steps = len(res.records)
    assert counters.lu_factorizations == n_steps
    newton = sum(sum(r.newton_counts) for r in res.records)
    assert counters.newton_iterations == newton
    # one Jacobian pair at the step start plus one pair per Newton iterate
    assert counters.jac_x_evals == n_steps + newton
    assert counters.jac_u_evals == n_steps + newton


@pytest.mark.parametrize("method", ["ESDIRK12", "ESDIRK23", "ESDIRK34"])
def test_counter_identities_refactorize(method):
    res, counters = run_qts(method, NewtonStrategy.REFACTORIZE_EVERY_ITERATION,
                            SensitivityMode.BASE_DIRECT, keep_records=True)
    s = make_tableau(method).s
    n_steps = len(res.records)
    newton = sum(sum(r.newton_counts) for r in res.records)
    # state pass factorizes once per Newton iteration; the sensitivity pass
    # adds one fresh stage-matrix factorization per implicit stage
    assert counters.lu_factorizations == newton + n_steps * (s - 1)
    # step-start Jacobian, one per iteration, one per stage at convergence
    assert counters.jac_x_evals == n_steps + newton + n_steps * (s - 1)


@pytest.mark.parametrize("method", ["ESDIRK12", "ESDIRK23", "ESDIRK34"])
def test_counter_identities_direct(method):
    res, counters = run_qts(method, NewtonStrategy.REUSE_PER_STEP,
                            SensitivityMode.DIRECT, keep_records=True)
    s = make_tableau(method).s
    n_steps = len(res.records)
    # direct mode adds no factorizations beyond the one per step
    assert counters.lu_factorizations == n_steps
    # Jacobians: step start plus fresh ones at converged stages 2..s-1
    assert counters.jac_x_evals == n_steps * (1 + max(s - 2, 0))
    # df/du at every stage, none per iterate
    assert counters.jac_u_evals == n_steps * s


def test_strategy_equivalence_tight_tolerances():
    for method in ("ESDIRK12", "ESDIRK23", "ESDIRK34"):
        r1, _ = run_qts(method, NewtonStrategy.REUSE_PER_STEP,
                        SensitivityMode.NONE, settings=TIGHT)
        r2, _ = run_qts(method, NewtonStrategy.REFACTORIZE_EVERY_ITERATION,
                        SensitivityMode.NONE, settings=TIGHT)
        assert np.allclose(r1.x_final, r2.x_final, rtol=1e-8, atol=0)


def test_min_one_newton_iteration():
    # even a perfect predictor performs at least one update per stage
    m = LinearTestModel(0.0)       # f independent of x: residual exact
    counters = WorkCounters()
    rec = esdirk_step(m, make_tableau("ESDIRK23"),
                      NewtonStrategy.REUSE_PER_STEP, NewtonSettings(),
                      SensitivityMode.NONE, np.array([1.0]), None,
                      np.array([0.0]), None, 0.0, 0.1, None, counters)
    assert all(c >= 1 for c in rec.newton_counts)


def test_newton_divergence():
    settings = NewtonSettings(max_iterations=1, min_iterations=1)
    with pytest.raises(NewtonDivergence):
        run_qts("ESDIRK23", NewtonStrategy.REUSE_PER_STEP,
                SensitivityMode.NONE, n_steps=1,
                settings=settings, u=np.array([500.0, 500.0]),
                x0=np.array([10.0, 10.0, 10.0, 10.0]))


def test_mode_strategy_contract():
    with pytest.raises(ContractViolation):
        run_qts("ESDIRK23", NewtonStrategy.REUSE_PER_STEP,
                SensitivityMode.BASE_DIRECT)
    with pytest.raises(ContractViolation):
        run_qts("ESDIRK23", NewtonStrategy.REFACTORIZE_EVERY_ITERATION,
                SensitivityMode.ITERATED)


def test_interval_argument_validation():
    with pytest.raises(ValueError):
        run_qts("ESDIRK23", NewtonStrategy.REUSE_PER_STEP,
                SensitivityMode.NONE, n_steps=0)
    counters = WorkCounters()
    with pytest.raises(ValueError):
        integrate_interval(QuadrupleTank(), make_tableau("ESDIRK23"),
                           NewtonStrategy.REUSE_PER_STEP, NewtonSettings(),
                           SensitivityMode.NONE, X0, U0, D0, 5.0, 5.0, 10,
                           counters)


def test_warm_start_reduces_newton_work():
    res, _ = run_qts("ESDIRK34", NewtonStrategy.REUSE_PER_STEP,
                     SensitivityMode.NONE, n_steps=20, keep_records=True)
    first = sum(res.records[0].newton_counts)
    later = [sum(r.newton_counts) for r in res.records[5:]]
    assert max(later) <= first


@pytest.mark.parametrize("method", ["ESDIRK12", "ESDIRK23", "ESDIRK34"])
@pytest.mark.parametrize("mode,strategy", [
    (SensitivityMode.ITERATED, NewtonStrategy.REUSE_PER_STEP),
    (SensitivityMode.DIRECT, NewtonStrategy.REUSE_PER_STEP),
    (SensitivityMode.BASE_DIRECT, NewtonStrategy.REFACTORIZE_EVERY_ITERATION),
])
def test_batched_matches_serial(method, mode, strategy):
    rng = np.random.default_rng(11)
    nb = 5
    x0s = X0 * (1.0 + 0.2 * rng.random((nb, 4)))
    us = U0 + 40.0 * rng.standard_normal((nb, 2))
    model = QuadrupleTank()
    tab = make_tableau(method)
    settings = NewtonSettings()
    cb = WorkCounters()
    batch = integrate_intervals_batch(model, tab, strategy, settings, mode,
                                      x0s, us, D0, 10.0, 6, cb)
    cs = WorkCounters()
    for k in range(nb):
        res = integrate_interval(model, tab, strategy, settings, mode,
                                 x0s[k], us[k], D0, 0.0, 10.0, 6, cs)
        assert np.allclose(batch.x_final[k], res.x_final, rtol=1e-14, atol=0)
        assert np.allclose(batch.trajectory[k], res.trajectory,
                           rtol=1e-14, atol=0)
        assert np.allclose(batch.sens_wrt_x0[k], res.sens.wrt_x0,
                           rtol=0, atol=1e-12)
        assert np.allclose(batch.sens_wrt_u[k], res.sens.wrt_u,
                           rtol=0, atol=1e-12)
    assert cb.as_dict() == cs.as_dict()


def test_batched_requires_batch_model():
    m = LinearTestModel(-1.0)
    counters = WorkCounters()
    with pytest.raises(ContractViolation):
        integrate_intervals_batch(m, make_tableau("ESDIRK12"),
                                  NewtonStrategy.REUSE_PER_STEP,
                                  NewtonSettings(), SensitivityMode.NONE,
                                  np.ones((2, 1)), np.zeros((2, 1)), None,
                                  1.0, 2, counters)


def test_sensitivity_pair_packing():
    pair = SensitivityPair.initial(3, 2)
    packed = pair.packed()
    assert packed.shape == (3, 5)
    back = SensitivityPair.from_packed(packed, 3)
    assert np.array_equal(back.wrt_x0, np.eye(3))
    assert np.array_equal(back.wrt_u, np.zeros((3, 2)))
