import dataclasses
import math

import numpy as np
import pytest

from anisogalerkin.monitor import (EstimateReport, boundedness_verdict, contraction_check,
                                   energy_residual, instrument)
from anisogalerkin.solver import GalerkinSystem, Problem, SolverConfig, Trajectory, solve

PSI11 = "2*sin(pi*x1)*sin(pi*x2)"
LAM = 2 * math.pi**2


def heat(initial=PSI11, T=0.1):
    return Problem.from_strings((1.0, 1.0), ("2", "2"), initial=initial, horizon=T, epsilon=0.5)


def run(prob, **kw):
    cfg = SolverConfig(**{"modes": 4, "nodes": 24, "kappa": 1.0, **kw})
    system = GalerkinSystem(prob, cfg)
    return solve(prob, cfg, force=True, system=system), system


def _slice(traj: Trajectory, a: int, b: int) -> Trajectory:
    return Trajectory(traj.times[a:b], traj.coeffs[a:b], traj.rates[a:b], traj.dissipation[a:b],
                      traj.work[a:b], traj.stats)


def test_zero_trajectory():
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), horizon=0.1, epsilon=0.1)
    traj, system = run(prob, snapshots=5)
    rep = instrument(traj, prob, [0.2], system=system)
    for name in ("sup_L2", "dissipation", "ut_L2", "hessian_weighted", "energy_residual"):
        assert getattr(rep, name) == 0.0
    assert rep.higher_int == {0.2: 0.0} and rep.second_order_W12 == [0.0, 0.0]
    assert rep.data_bound == 1.0
    # the regularised modular of a zero gradient is sum_i eps^p_i |Omega|
    assert rep.sup_modular == pytest.approx(0.1**2.2 + 0.1**1.9, rel=1e-12)


def test_heat_dissipation_closed_form():
    traj, system = run(heat(), snapshots=2000)
    rep = instrument(traj, heat(), system=system)
    # int_0^T ||grad u||^2 dt = lam int e^(-2 lam t) dt
    assert rep.dissipation == pytest.approx((1 - math.exp(-2 * LAM * 0.1)) / 2, rel=1e-6)
    assert rep.sup_L2 == pytest.approx(1.0, rel=1e-12)
    assert rep.ut_L2 == pytest.approx(LAM * (1 - math.exp(-2 * LAM * 0.1)) / 2, rel=1e-6)


def test_p2_reduces_to_parseval():
    prob = heat(initial="sin(pi*x1)^2*sin(pi*x2)^2 + x1*(1 - x1)*sin(3*pi*x2)")
    traj, system = run(prob, modes=6, nodes=28, snapshots=50)
    rep = instrument(traj, prob, system=system)
    lam = system.basis.eigenvalues
    c2 = traj.coeffs.reshape(len(traj.times), -1) ** 2
    trap = lambda v: float(np.trapezoid(v, traj.times))  # noqa: E731
    assert rep.hessian_weighted == pytest.approx(trap(c2 @ (lam**2).ravel()), rel=1e-8)
    assert rep.dissipation == pytest.approx(trap(c2 @ lam.ravel()), rel=1e-8)
    assert rep.sup_L2 == pytest.approx(c2.sum(axis=1).max(), rel=1e-12)


def test_additive_over_subintervals():
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), initial="sin(pi*x1)^2*sin(pi*x2)^2",
                                forcing="sin(pi*x1)*sin(pi*x2)", horizon=0.2, epsilon=1e-2)
    traj, system = run(prob, modes=6, nodes=28, snapshots=20)
    r = [0.3]
    whole = instrument(traj, prob, r, system=system)
    left = instrument(_slice(traj, 0, 9), prob, r, system=system)
    right = instrument(_slice(traj, 8, 21), prob, r, system=system)
    for name in ("dissipation", "ut_L2", "hessian_weighted"):
        assert getattr(left, name) + getattr(right, name) == pytest.approx(getattr(whole, name), rel=1e-10)
    assert left.higher_int[0.3] + right.higher_int[0.3] == pytest.approx(whole.higher_int[0.3], rel=1e-10)


def test_r_outside_range_is_rejected():
    traj, system = run(heat(), snapshots=4)
    with pytest.raises(ValueError, match="r\\*"):
        instrument(traj, heat(), [1.0], system=system)  # r* = 1 for p = 2, N = 2
    with pytest.raises(ValueError):
        instrument(traj, heat(), [0.0], system=system)


def test_energy_residual_heat_and_zero():
    assert energy_residual(run(heat())[0]) <= 1e-7
    # the coefficients are exact here; the step controller bounds the error of the energy channels
    assert energy_residual(run(heat(), tol=1e-8)[0]) <= 1e-9
    res = [energy_residual(run(heat(), dt=dt, dt_max=dt, tol=1e6)[0]) for dt in (1e-3, 5e-4)]
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.05)
    zero, _ = run(heat(initial="0"), snapshots=4)
    assert energy_residual(zero) == 0.0


def test_energy_residual_second_order_in_tolerance():
    prob = Problem.from_strings((1.0, 1.0), ("2.4", "2.2"), initial="sin(pi*x1)^2*sin(pi*x2)^2",
                                horizon=0.05, epsilon=1e-2)
    res = []
    for dt in (4e-4, 2e-4):
        traj, _ = run(prob, modes=6, nodes=28, snapshots=20, dt=dt, dt_max=dt, tol=1e6, kappa=0.5)
        res.append(energy_residual(traj))
    # doubling a fixed step of a second order rule should raise the defect about 4x
    assert 3.0 < res[0] / res[1] < 5.5


def test_contraction_examples():
    a, _ = run(heat(), snapshots=20)
    same = contraction_check(a, a)
    assert same.passed and max(same.distances) == 0.0
    b, _ = run(heat(initial=PSI11 + " + 0.6*sin(2*pi*x1)*sin(pi*x2)"), snapshots=20)
    res = contraction_check(a, b)
    assert res.passed and np.all(np.diff(res.distances) < 0)
    want = 0.3 * np.exp(-5 * math.pi**2 * a.times)
    np.testing.assert_allclose(res.distances, want, rtol=1e-9)


def test_contraction_misaligned():
    a, _ = run(heat(), snapshots=10)
    b, _ = run(heat(), snapshots=20)
    with pytest.raises(ValueError):
        contraction_check(a, b)


def _reports(values, field="hessian_weighted"):
    base = EstimateReport([0.0], 1, 1, 1, 1, 1, {}, [], 2.0, 1.0, 0.0)
    return [dataclasses.replace(base, **{field: v}) for v in values]


def test_boundedness_examples():
    ok = boundedness_verdict(_reports([3.0, 3.0, 3.0, 3.0]), "hessian_weighted")
    assert ok.passed and ok.trend == "bounded" and ok.ratios[0] == [1.5]
    bad = boundedness_verdict(_reports([1.0, 10.0, 100.0, 1000.0]), "hessian_weighted")
    assert not bad.passed and bad.trend == "diverging"
    jumpy = boundedness_verdict(_reports([1.0, 5.0, 1.0, 5.0]), "hessian_weighted")
    assert not jumpy.passed and jumpy.trend == "fluctuating"
    saturating = boundedness_verdict(_reports([1.0, 1.5, 1.6, 1.61]), "hessian_weighted")
    assert saturating.passed
    with pytest.raises(ValueError):
        boundedness_verdict(_reports([1.0, 1.0]), "hessian_weighted")


def test_report_serialisation():
    traj, system = run(heat(), snapshots=4)
    rep = instrument(traj, heat(), [0.5], system=system)
    d = rep.to_dict()
    assert "series" not in d and d["higher_int"] == {"0.5": rep.higher_int[0.5]}
    assert list(d)[:3] == ["t_grid", "sup_L2", "dissipation"]
    assert all(np.isfinite(v) and v >= 0 for k in rep.SCALARS for v in [getattr(rep, k)])
