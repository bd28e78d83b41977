import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisogalerkin.basis import SineBasis
from anisogalerkin.exponents import InadmissibleExponentError
from anisogalerkin.field_dsl import parse
from anisogalerkin.solver import (BlowupError, BoundaryConditionError, GalerkinState, GalerkinSystem,
                                  Problem, SolverConfig, StiffnessError, flux, initial_coeffs,
                                  manufactured_forcing, phi1, phi2, rhs, solve, step, sweep)

PSI11 = "2*sin(pi*x1)*sin(pi*x2)"


def heat(**kw):
    args = dict(initial=PSI11, horizon=0.1, epsilon=0.5)
    args.update(kw)
    return Problem.from_strings((1.0, 1.0), ("2", "2"), **args)


def test_flux_examples():
    assert flux(0.0, 1.5, 0.1) == 0.0
    assert flux(0.0, 1.5, 0.0) == 0.0
    np.testing.assert_allclose(flux(np.array([-2.0, 0.3, 5.0]), 2.0, 0.7), [-2.0, 0.3, 5.0])
    assert flux(2.0, 3.0, 0.0) == pytest.approx(4.0)
    assert np.isfinite(flux(1e-300, 1.2, 1e-3))


@settings(max_examples=200)
@given(xi=st.floats(-50, 50), eta=st.floats(-50, 50), p=st.floats(1.2, 3.0), eps=st.floats(0.0, 1.0))
def test_flux_monotone(xi, eta, p, eps):
    prod = (flux(xi, p, eps) - flux(eta, p, eps)) * (xi - eta)
    assert prod >= 0
    if abs(xi - eta) > 1e-12:
        assert prod > 0


def test_phi_functions_continuous_at_series_switch():
    z = np.array([-0.1 - 1e-12, -0.1 + 1e-12, -1e-8, 0.0])
    p1, p2 = phi1(z), phi2(z)
    assert p1[0] == pytest.approx(p1[1], rel=1e-10) and p2[0] == pytest.approx(p2[1], rel=1e-10)
    assert p1[3] == 1.0 and p2[3] == 0.5
    assert phi1(np.array([-1.0]))[0] == pytest.approx(1 - math.exp(-1))
    assert phi2(np.array([-1.0]))[0] == pytest.approx(math.exp(-1))


def test_rhs_examples():
    cfg = SolverConfig(modes=4, nodes=24)
    prob = heat()
    b = SineBasis(prob.domain, (4, 4), (24, 24))
    c = b.unit((2, 3))
    np.testing.assert_allclose(rhs(GalerkinState(0.0, c), prob, cfg), -13 * math.pi**2 * c, atol=1e-10)
    assert np.all(rhs(GalerkinState(0.0, 0 * c), prob, cfg) == 0)
    forced = heat(forcing=PSI11, initial="0")
    np.testing.assert_allclose(rhs(GalerkinState(0.0, 0 * c), forced, cfg), b.unit((1, 1)), atol=1e-12)


def test_initial_coeffs():
    cfg = SolverConfig(modes=6, nodes=28)
    np.testing.assert_allclose(initial_coeffs(heat(), cfg)[:, :], SineBasis(heat().domain, (6, 6)).unit((1, 1)),
                               atol=1e-12)
    assert np.all(initial_coeffs(heat(initial="0"), cfg) == 0)
    # x(1-x) has sine coefficients sqrt(2) * 4 / (k pi)^3 for odd k, zero for even k
    prob = Problem.from_strings((1.0,), ("2",), initial="x1*(1 - x1)")
    c = initial_coeffs(prob, SolverConfig(modes=9, nodes=40))
    k = np.arange(1, 10)
    want = np.where(k % 2 == 1, math.sqrt(2) * 4 / (k * math.pi) ** 3, 0.0)
    np.testing.assert_allclose(c, want, atol=1e-13)


@pytest.mark.parametrize("integrator, tol", [("imex-exponential", 1e-12), ("explicit-rk", 1e-6)])
def test_heat_decay(integrator, tol):
    cfg = SolverConfig(modes=4, integrator=integrator, kappa=1.0)
    traj = solve(heat(), cfg)
    lam = 2 * math.pi**2
    want = np.exp(-lam * traj.times)
    np.testing.assert_allclose(traj.coeffs[:, 0, 0], want, rtol=tol)
    assert traj.final[0, 0] == pytest.approx(0.1389111331428, rel=tol)
    assert traj.times[0] == 0 and traj.times[-1] == 0.1 and np.all(np.diff(traj.times) > 0)


def test_heat_step_is_exact():
    prob, cfg = heat(), SolverConfig(modes=3, nodes=22, kappa=1.0, dt=1e-2, tol=1.0)
    c0 = initial_coeffs(prob, cfg)
    state = step(GalerkinState(0.0, c0), prob, cfg)
    assert state.t == pytest.approx(1e-2)
    assert state.c[0, 0] == pytest.approx(math.exp(-2 * math.pi**2 * 1e-2), rel=1e-13)
    assert state.dt > 0


def test_zero_data_stays_zero():
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), horizon=0.1)
    traj = solve(prob, SolverConfig(modes=4, snapshots=5))
    assert np.all(traj.coeffs == 0)
    state = step(GalerkinState(0.0, np.zeros((4, 4))), prob, SolverConfig(modes=4))
    assert np.all(state.c == 0)


def _local_error(h):
    prob = Problem.from_strings((1.0, 1.0), ("2.6", "2.2"), initial="sin(pi*x1)^2*sin(pi*x2)^2",
                                horizon=h, epsilon=1e-2)
    cfg = SolverConfig(modes=6, dt=h, tol=1e6, kappa=0.5)
    c0 = initial_coeffs(prob, cfg)
    one = step(GalerkinState(0.0, c0), prob, cfg).c
    # 200 fixed substeps: every step is accepted because the tolerance is huge
    fine = SolverConfig(modes=6, dt=h / 200, dt_max=h / 200, tol=1e6, kappa=0.5, snapshots=1)
    ref = solve(prob, fine, force=True).final
    return float(np.linalg.norm(one - ref))


def test_single_step_error_order():
    # local error of a second order rule scales like h^3; accept anything at least second order
    e1, e2 = _local_error(2e-3), _local_error(1e-3)
    assert e1 / e2 > 4.0


def test_inadmissible_exponents_need_force():
    prob = Problem.from_strings((1.0, 1.0), ("3.2", "2"), initial=PSI11, horizon=0.01)
    with pytest.raises(InadmissibleExponentError):
        solve(prob, SolverConfig(modes=3))
    assert solve(prob, SolverConfig(modes=3, snapshots=2), force=True).final.shape == (3, 3)


def test_stiffness_failure():
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), initial="sin(pi*x1)^2*sin(pi*x2)^2",
                                horizon=0.1, epsilon=1e-3)
    cfg = SolverConfig(modes=32, integrator="explicit-rk", dt=1e-2, dt_min=1e-3)
    with pytest.raises(StiffnessError, match="dt_min"):
        solve(prob, cfg)


def test_blowup_detection():
    # explicit steps far beyond the stability limit, with error control switched off
    prob = Problem.from_strings((1.0, 1.0), ("2", "2"), initial="sin(pi*x1)^2*sin(pi*x2)^2", horizon=1.0)
    cfg = SolverConfig(modes=8, integrator="explicit-rk", dt=1e-2, dt_max=1e-2, tol=1e300)
    with pytest.raises(BlowupError, match="1e\\+12"):
        solve(prob, cfg)


def test_huge_forcing_is_a_runtime_failure():
    # the energy channels are error controlled, so an absurd forcing exhausts dt_min
    prob = Problem.from_strings((1.0, 1.0), ("2", "2"), forcing="1e16", horizon=1.0)
    with pytest.raises(StiffnessError):
        solve(prob, SolverConfig(modes=2, tol=1e-3))


def test_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(dt=1e-3, dt_min=1e-2)
    with pytest.raises(ValueError):
        SolverConfig(dt=1.0, dt_max=0.1)
    with pytest.raises(ValueError):
        SolverConfig(integrator="euler")
    with pytest.raises(ValueError):
        heat(epsilon=0.0)


def test_manufactured_forcing_simple_cases():
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), epsilon=1e-3)
    f0 = manufactured_forcing(parse("0"), prob)
    assert f0.is_constant and float(f0([], 0.0)) == 0.0
    u = parse("exp(-t)*sin(pi*x1)*sin(2*pi*x2)")
    f = manufactured_forcing(u, heat())
    x = [np.array([0.3]), np.array([0.8])]
    want = (-1 + 5 * math.pi**2) * u(x, 0.4)
    np.testing.assert_allclose(f(x, 0.4), want, rtol=1e-13)


def test_manufactured_forcing_against_flux_differences():
    """Compare with a central difference of the flux built from u_exact and p."""
    u = parse("exp(-t)*sin(pi*x1)*sin(pi*x2)")
    for exps in [("2.2", "1.9"), ("2 + 0.2*sin(3*x1)", "2 + 0.1*x1*x2")]:
        prob = Problem.from_strings((1.0, 1.0), exps, epsilon=1e-3)
        f = manufactured_forcing(u, prob)
        rng = np.random.default_rng(1)
        h = 1e-5
        for _ in range(20):
            x, t = list(rng.uniform(0.05, 0.95, 2)), float(rng.uniform(0, 0.5))
            div = 0.0
            for j, p in enumerate(prob.exponents.components):
                du = u.diff(f"x{j + 1}")

                def F(xx):
                    return flux(float(du(xx, t)), float(p(xx, t)), prob.epsilon)

                xp, xm = list(x), list(x)
                xp[j] += h
                xm[j] -= h
                div += (F(xp) - F(xm)) / (2 * h)
            want = float(u.diff("t")(x, t)) - div
            assert float(f(x, t)) == pytest.approx(want, rel=1e-6, abs=1e-8)


def test_manufactured_forcing_boundary_check():
    with pytest.raises(BoundaryConditionError):
        manufactured_forcing(parse("x1*sin(pi*x2)"), heat())


def test_heat_epsilon_sweep_identical():
    pts = sweep(heat(), SolverConfig(modes=3, snapshots=10), "epsilon", [0.5, 0.1, 0.01])
    finals = [p.summary["l2_final"] for p in pts]
    assert finals[0] == finals[1] == finals[2]


def test_sweep_records_failures():
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), initial="sin(pi*x1)^2*sin(pi*x2)^2",
                                horizon=0.05, epsilon=1e-3)
    cfg = SolverConfig(integrator="explicit-rk", dt=1e-2, dt_min=1e-3, snapshots=5)
    pts = sweep(prob, cfg, "modes", [2, 32])
    assert pts[0].error is None and pts[0].report is not None
    assert pts[1].report is None and "StiffnessError" in pts[1].error
    with pytest.raises(ValueError):
        sweep(prob, cfg, "modes", [4, 2, 8])


def test_sweep_threads_match_serial():
    prob = heat(initial="sin(pi*x1)^2*sin(pi*x2)")
    cfg = SolverConfig(modes=4, snapshots=10)
    a = sweep(prob, cfg, "epsilon", [0.3, 0.2, 0.1], keep_trajectories=True)
    b = sweep(prob, cfg, "epsilon", [0.3, 0.2, 0.1], threads=3, keep_trajectories=True)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.trajectory.coeffs, pb.trajectory.coeffs)


def test_system_energy_rates_heat():
    prob, cfg = heat(), SolverConfig(modes=3, nodes=22)
    system = GalerkinSystem(prob, cfg)
    c = system.initial_coeffs()
    _, diss, work = system.evaluate(c, 0.0)
    assert diss == pytest.approx(2 * math.pi**2, rel=1e-12)
    assert work == 0.0
