"""Post-processing of trajectories into the integrals of the a priori estimates.

Nothing here asserts an unknown constant.  The quantities are computed so
that sweeps in ``epsilon`` or in the number of modes can be checked for
boundedness, and the exact semi-discrete identities (energy balance,
contraction) can be checked to a tolerance.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .exponents import mu as sampled_mu
from .exponents import r_star as r_star_of
from .field_dsl import differentiate
from .solver import GalerkinSystem, Problem, SolverConfig, Trajectory


@dataclass
class EstimateReport:
    t_grid: list[float]
    sup_L2: float
    dissipation: float
    ut_L2: float
    sup_modular: float
    hessian_weighted: float
    higher_int: dict[float, float]
    second_order_W12: list[float]
    data_bound: float
    r_star: float
    energy_residual: float
    second_derivative_modular: float | None = None
    series: dict[str, list[float]] = field(default_factory=dict, repr=False)

    SCALARS = ("sup_L2", "dissipation", "ut_L2", "sup_modular", "hessian_weighted", "data_bound",
               "energy_residual")

    def to_dict(self, include_series: bool = False) -> dict:
        out = asdict(self)
        out["higher_int"] = {repr(float(r)): v for r, v in self.higher_int.items()}
        if not include_series:
            out.pop("series")
        return out

    def values(self, name: str) -> list[float]:
        """Numeric components of a field, as used by boundedness checks."""
        if name == "higher_int":
            return [self.higher_int[r] for r in sorted(self.higher_int)]
        if name == "second_order_W12":
            return list(self.second_order_W12)
        value = getattr(self, name)
        return [] if value is None else [float(value)]


def _trapezoid(values, times) -> float:
    return float(np.trapezoid(np.asarray(values, dtype=float), np.asarray(times, dtype=float)))


def _time_derivative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Central differences along axis 0, one-sided at the ends."""
    if len(times) < 2:
        return np.zeros_like(values)
    return np.gradient(values, times, axis=0, edge_order=1)


def instrument(traj: Trajectory, prob: Problem, r_list: Sequence[float] = (),
               cfg: SolverConfig | None = None, system: GalerkinSystem | None = None,
               r_star: float | None = None) -> EstimateReport:
    """Evaluate every monitored integral along a trajectory.

    Space integrals use the Gauss grid of the basis with exact derivatives
    from the coefficients; time integrals use the trapezoid rule over the
    snapshots.  Every ``r`` in ``r_list`` must lie in ``(0, r*)``.
    """
    if system is None:
        modes = traj.coeffs.shape[1:]
        system = GalerkinSystem(prob, cfg or SolverConfig(modes=tuple(modes)))
    if r_star is None:
        r_star = r_star_of(sampled_mu(prob.exponents), prob.dim)
    for r in r_list:
        if not 0.0 < r < r_star:
            raise ValueError(
                f"r = {r} outside the higher-integrability range (0, r*) with r* = {r_star:.6g}")

    dim = prob.dim
    eps2 = prob.epsilon**2
    basis, grid = system.basis, system.basis.grid
    w = grid.weight_tensor
    times = traj.times
    exps = prob.exponents
    grad_p = [[differentiate(p, f"x{j + 1}") for j in range(dim)] for p in exps.components]
    fast = exps.pmax < 2.0

    l2, diss, modular, hess, grad_sq, ut_sq = [], [], [], [], [], []
    high = {r: [] for r in r_list}
    v_int = np.zeros((len(times), dim))
    dv_int = np.zeros((len(times), dim))
    v_vals = np.zeros((len(times), dim) + grid.shape)
    second_mod = []

    for n, (t, c) in enumerate(zip(times, traj.coeffs)):
        g = system.gradient(c)
        ps = exps.at(system.mesh, t)
        H = [[basis.evaluate(c, (i, j)) for j in range(dim)] for i in range(dim)]
        l2.append(float(np.sum(c * c)))
        ut_sq.append(float(np.sum(traj.rates[n] ** 2)))
        grad_sq.append(sum(float(np.sum(w * gi * gi)) for gi in g))
        d_t = m_t = h_t = s_t = 0.0
        hi_t = {r: 0.0 for r in r_list}
        for i in range(dim):
            gi, pi = g[i], ps[i]
            s = eps2 + gi * gi
            weight = s ** ((pi - 2.0) / 2.0)
            d_t += float(np.sum(w * weight * gi * gi))
            m_t += float(np.sum(w * s ** (pi / 2.0)))
            h_t += sum(float(np.sum(w * weight * H[i][j] ** 2)) for j in range(dim))
            absg = np.abs(gi)
            for r in r_list:
                hi_t[r] += float(np.sum(w * absg ** (pi + r)))
            root = s ** ((pi - 2.0) / 4.0)
            v = root * gi
            dv_dg = root * (1.0 + 0.5 * (pi - 2.0) * gi * gi / s)
            dv_dp = 0.25 * v * np.log(s)
            v_vals[n, i] = v
            v_int[n, i] = float(np.sum(w * v * v))
            for j in range(dim):
                dpj = grad_p[i][j](system.mesh, t)
                dv_int[n, i] += float(np.sum(w * (dv_dg * H[i][j] + dv_dp * dpj) ** 2))
            if fast:
                s_t += sum(float(np.sum(w * np.abs(H[i][j]) ** ps[j])) for j in range(dim))
        diss.append(d_t)
        modular.append(m_t)
        hess.append(h_t)
        second_mod.append(s_t)
        for r in r_list:
            high[r].append(hi_t[r])

    dvdt = _time_derivative(v_vals, times)
    dvdt_int = np.array([[float(np.sum(w * dvdt[n, i] ** 2)) for i in range(dim)]
                         for n in range(len(times))])
    w12 = [math.sqrt(_trapezoid(v_int[:, i] + dv_int[:, i] + dvdt_int[:, i], times))
           for i in range(dim)]

    sup_l2 = max(l2)
    report = EstimateReport(
        t_grid=[float(t) for t in times],
        sup_L2=sup_l2,
        dissipation=_trapezoid(diss, times),
        ut_L2=_trapezoid(ut_sq, times),
        sup_modular=max(modular),
        hessian_weighted=_trapezoid(hess, times),
        higher_int={float(r): _trapezoid(high[r], times) for r in r_list},
        second_order_W12=w12,
        data_bound=data_bound(prob, system, times),
        r_star=float(r_star),
        energy_residual=energy_residual(traj, prob),
        second_derivative_modular=_trapezoid(second_mod, times) if fast else None,
        series={"t": list(map(float, times)), "l2_sq": l2, "grad_l2_sq": grad_sq,
                "dissipation_rate": diss, "modular": modular, "hessian_weighted_rate": hess,
                "ut_l2_sq": ut_sq, "dissipation_integral": list(map(float, traj.dissipation)),
                "work_integral": list(map(float, traj.work))},
    )
    return report


def data_bound(prob: Problem, system: GalerkinSystem, times: Sequence[float]) -> float:
    """``1 + ||f||^2 + ||grad f||^2 + sum_i int |D_i u_0|^p_i(x,0) + ||u_0||^2_{W^{1,2}}``."""
    dim = prob.dim
    grid, mesh = system.basis.grid, system.mesh
    f = prob.forcing
    total = 1.0
    if not (f.is_constant and float(f([], 0.0)) == 0.0):
        df = [differentiate(f, f"x{j + 1}") for j in range(dim)]
        f_sq = [grid.integrate(f(mesh, t) ** 2) for t in times]
        df_sq = [sum(grid.integrate(d(mesh, t) ** 2) for d in df) for t in times]
        total += _trapezoid(f_sq, times) + _trapezoid(df_sq, times)
    u0 = prob.initial
    du0 = [differentiate(u0, f"x{j + 1}")(mesh, 0.0) for j in range(dim)]
    p0 = prob.exponents.at(mesh, 0.0)
    total += sum(grid.integrate(np.abs(d) ** p) for d, p in zip(du0, p0))
    total += grid.integrate(u0(mesh, 0.0) ** 2) + sum(grid.integrate(d * d) for d in du0)
    return float(total)


def energy_residual(traj: Trajectory, prob: Problem | None = None) -> float:
    """Largest per-interval defect of the integrated energy balance.

    Over each snapshot interval ``[t_k, t_k+1]`` the semi-discrete system
    satisfies ``d(1/2 |c|^2) + int dissipation - int f u = 0`` exactly; the
    defect measures time-integration error.  Normalised by ``sup |c|^2 + 1``.
    """
    energy = 0.5 * np.sum(traj.coeffs.reshape(len(traj.times), -1) ** 2, axis=1)
    if len(energy) < 2:
        return 0.0
    defect = np.diff(energy) + np.diff(traj.dissipation) - np.diff(traj.work)
    return float(np.max(np.abs(defect)) / (2.0 * energy.max() + 1.0))


@dataclass
class ContractionResult:
    passed: bool
    distances: list[float]
    max_increase: float

    def __bool__(self) -> bool:
        return self.passed


def contraction_check(traj1: Trajectory, traj2: Trajectory, drift: float = 1e-8) -> ContractionResult:
    """``||u_1 - u_2||_2`` must not grow between snapshots by more than ``drift``."""
    if traj1.times.shape != traj2.times.shape or not np.allclose(traj1.times, traj2.times, rtol=0, atol=1e-14):
        raise ValueError("trajectories have misaligned snapshot times")
    if traj1.coeffs.shape != traj2.coeffs.shape:
        raise ValueError("trajectories use different mode sets")
    diff = (traj1.coeffs - traj2.coeffs).reshape(len(traj1.times), -1)
    dist = np.sqrt(np.sum(diff**2, axis=1))
    inc = float(np.max(np.diff(dist), initial=-math.inf)) if len(dist) > 1 else -math.inf
    return ContractionResult(bool(inc <= drift), [float(d) for d in dist], inc)


@dataclass
class BoundednessVerdict:
    field: str
    passed: bool
    trend: str
    values: list[list[float]]
    variation: float
    ratios: list[list[float]]

    def to_dict(self) -> dict:
        return asdict(self)


def _diverging(series: Sequence[float], slack: float) -> bool:
    v = np.asarray(series, dtype=float)
    steps = np.diff(v)
    if len(v) < 3 or not np.all(steps > 0):
        return False
    if v[0] <= 0:
        return True
    # non-saturating growth: increments do not shrink
    return bool(np.all(np.diff(steps) >= 0) and v[-1] / v[0] > 1.0 + slack)


def boundedness_verdict(reports: Sequence[EstimateReport], field: str, slack: float = 0.2) -> BoundednessVerdict:
    """Flag ``field`` as bounded along a sweep.

    Passes when, over the last half of the sweep (at least two points), every
    component varies by at most ``slack`` relative to its largest magnitude,
    and no component grows monotonically without saturating.
    """
    if len(reports) < 3:
        raise ValueError("boundedness needs at least three sweep points")
    columns = np.array([r.values(field) for r in reports], dtype=float)  # (points, components)
    ratios = columns / np.array([[r.data_bound] for r in reports])
    k = max(2, math.ceil(len(reports) / 2))
    variation = 0.0
    diverging = False
    for comp in columns.T:
        tail = comp[-k:]
        scale = float(np.max(np.abs(tail)))
        if scale > 0:
            variation = max(variation, float((tail.max() - tail.min()) / scale))
        diverging |= _diverging(comp, slack)
    if diverging:
        trend = "diverging"
    elif variation <= slack:
        trend = "bounded"
    else:
        trend = "fluctuating"
    return BoundednessVerdict(field, trend == "bounded", trend, columns.tolist(), variation,
                              ratios.tolist())
