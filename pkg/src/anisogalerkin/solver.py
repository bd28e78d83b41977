"""Spectral-Galerkin evolution of the regularised anisotropic equation

    u_t - sum_j D_j((eps^2 + |D_j u|^2)^((p_j - 2)/2) D_j u) = f    in (0, l) x (0, T),
    u = 0 on the boundary,  u(., 0) = u_0.

The solution is expanded in the sine eigenbasis, ``u = sum_k c_k(t) psi_k``,
and the coefficient ODE

    c_k' = -sum_j (F_j(D_j u), D_j psi_k) + (f, psi_k)

is integrated in time.  Inner products use the tensor Gauss grid of the basis.

Two time integrators are available:

``imex-exponential``
    Splits ``c' = -kappa lambda c + N(c, t)``, integrates the diagonal linear
    part exactly and the remainder with the second-order exponential
    Runge-Kutta rule (ETD2RK), error-controlled against exponential Euler.
``explicit-rk``
    Bogacki-Shampine 3(2) with error control.

Both carry two extra scalar unknowns, the running time integrals of the
dissipation ``sum_j int F_j D_j u`` and of the work ``int f u``, so the
discrete energy balance can be checked at snapshot times.  The step
controller bounds the error of these two integrals as well as that of the
coefficients.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .basis import SineBasis
from .domain import RectDomain
from .exponents import ExponentField, InadmissibleExponentError, validate
from .field_dsl import FieldExpr, constant, differentiate, parse

log = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e12
INTEGRATORS = ("imex-exponential", "explicit-rk")


class SolverError(RuntimeError):
    pass


class StiffnessError(SolverError):
    """Step size fell below ``dt_min``."""


class BlowupError(SolverError):
    """A coefficient exceeded the blow-up limit or became non-finite."""


class BoundaryConditionError(ValueError):
    pass


def flux(xi, p, eps):
    """``(eps^2 + xi^2)^((p - 2)/2) xi``; zero at ``xi = 0`` also when ``eps = 0``."""
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # hypot keeps the base positive where xi * xi would underflow
        out = np.hypot(eps, xi) ** (np.asarray(p) - 2.0) * xi
    return np.where(xi == 0.0, 0.0, out)


@dataclass(frozen=True)
class Problem:
    domain: RectDomain
    exponents: ExponentField
    forcing: FieldExpr
    initial: FieldExpr
    horizon: float
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("the regularisation parameter must be positive")
        if not self.horizon > 0:
            raise ValueError("the time horizon must be positive")
        if self.exponents.domain != self.domain:
            raise ValueError("exponent field lives on a different domain")

    @classmethod
    def from_strings(cls, lengths: Sequence[float], exponents: Sequence[str], forcing: str = "0",
                     initial: str = "0", horizon: float = 1.0, epsilon: float = 1e-2,
                     exponent_grid: int = 64, exponent_time_grid: int = 64,
                     lipschitz: float | None = None) -> "Problem":
        domain = RectDomain(tuple(lengths))
        dim = domain.dim
        fld = ExponentField(tuple(parse(e, dim) for e in exponents), domain, horizon,
                            exponent_grid, exponent_time_grid, lipschitz)
        return cls(domain, fld, parse(forcing, dim), parse(initial, dim), float(horizon), float(epsilon))

    @property
    def dim(self) -> int:
        return self.domain.dim


@dataclass(frozen=True)
class SolverConfig:
    modes: int | tuple[int, ...] = 8
    nodes: int | tuple[int, ...] | None = None
    integrator: str = "imex-exponential"
    dt: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float | None = None
    tol: float = 1e-6
    kappa: float | None = None
    snapshots: int = 100

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.dt_max is not None and not self.dt_min <= self.dt <= self.dt_max:
            raise ValueError("need dt_min <= dt <= dt_max")
        if self.dt < self.dt_min:
            raise ValueError("need dt_min <= dt")
        if self.snapshots < 1:
            raise ValueError("need at least one snapshot interval")
        if self.kappa is not None and self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    def mode_tuple(self, dim: int) -> tuple[int, ...]:
        m = self.modes
        return (int(m),) * dim if np.isscalar(m) else tuple(int(v) for v in m)

    def node_tuple(self, dim: int) -> tuple[int, ...]:
        if self.nodes is None:
            return tuple(3 * m for m in self.mode_tuple(dim))
        n = self.nodes
        return (int(n),) * dim if np.isscalar(n) else tuple(int(v) for v in n)


@dataclass
class GalerkinState:
    t: float
    c: np.ndarray
    dc_dt: np.ndarray | None = None
    dt: float | None = None


@dataclass
class Trajectory:
    """Snapshots of the coefficient tensor at strictly increasing times ``0 .. T``.

    ``dissipation`` and ``work`` are the integrated running integrals
    ``int_0^t sum_j int F_j D_j u`` and ``int_0^t int f u`` at each snapshot.
    """

    times: np.ndarray
    coeffs: np.ndarray
    rates: np.ndarray
    dissipation: np.ndarray
    work: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.coeffs[-1]

    def summary(self) -> dict:
        l2 = np.sqrt(np.sum(self.coeffs.reshape(len(self.times), -1) ** 2, axis=1))
        return {"t_final": float(self.times[-1]), "l2_final": float(l2[-1]),
                "l2_max": float(l2.max()), **self.stats}


class GalerkinSystem:
    """Semi-discrete right-hand side for one problem on one mode set."""

    def __init__(self, problem: Problem, config: SolverConfig):
        self.problem = problem
        self.config = config
        dim = problem.dim
        self.basis = SineBasis(problem.domain, config.mode_tuple(dim), config.node_tuple(dim))
        self.mesh = self.basis.grid.mesh
        self.weights = self.basis.grid.weight_tensor
        self._p_static = None
        if not problem.exponents.depends_on_time:
            self._p_static = problem.exponents.at(self.mesh, 0.0)
        f = problem.forcing
        self._f_zero = f.is_constant and float(f([], 0.0)) == 0.0
        self._f_static = None
        if not self._f_zero and not f.depends_on_time:
            self._f_static = f(self.mesh, 0.0)
            self._f_static_proj = self.basis.project(self._f_static)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.basis.modes

    def exponents_at(self, t: float) -> list[np.ndarray]:
        if self._p_static is not None:
            return self._p_static
        return self.problem.exponents.at(self.mesh, t)

    def forcing_at(self, t: float) -> np.ndarray | None:
        if self._f_zero:
            return None
        if self._f_static is not None:
            return self._f_static
        return self.problem.forcing(self.mesh, t)

    def gradient(self, c: np.ndarray) -> list[np.ndarray]:
        return [self.basis.evaluate(c, j) for j in range(self.problem.dim)]

    def evaluate(self, c: np.ndarray, t: float) -> tuple[np.ndarray, float, float]:
        """Return ``(dc/dt, dissipation rate, work rate)`` at ``(c, t)``."""
        eps = self.problem.epsilon
        out = np.zeros(self.shape)
        dissipation = 0.0
        for j, (g, p) in enumerate(zip(self.gradient(c), self.exponents_at(t))):
            fj = flux(g, p, eps)
            orders = [0] * self.problem.dim
            orders[j] = 1
            out -= self.basis.project(fj, orders)
            dissipation += float(np.sum(self.weights * fj * g))
        work = 0.0
        f = self.forcing_at(t)
        if f is not None:
            out += self._f_static_proj if self._f_static is not None else self.basis.project(f)
            work = float(np.sum(self.weights * f * self.basis.evaluate(c)))
        return out, dissipation, work

    def rhs(self, c: np.ndarray, t: float) -> np.ndarray:
        return self.evaluate(c, t)[0]

    def linear_diffusivity(self, c: np.ndarray, t: float) -> float:
        """Volume/direction mean of ``(eps^2 + |D_j u|^2)^((p_j - 2)/2)``."""
        eps = self.problem.epsilon
        total = 0.0
        for g, p in zip(self.gradient(c), self.exponents_at(t)):
            total += float(np.sum(self.weights * (eps * eps + g * g) ** ((p - 2.0) / 2.0)))
        return total / (self.problem.domain.volume * self.problem.dim)

    def initial_coeffs(self) -> np.ndarray:
        return self.basis.project(self.problem.initial(self.mesh, 0.0))


def rhs(state: GalerkinState, prob: Problem, cfg: SolverConfig) -> np.ndarray:
    return GalerkinSystem(prob, cfg).rhs(state.c, state.t)


def initial_coeffs(prob: Problem, cfg: SolverConfig) -> np.ndarray:
    return GalerkinSystem(prob, cfg).initial_coeffs()


# ---------------------------------------------------------------------------
# time stepping


def phi1(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def phi2(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.1
    zs = z[small]
    # sum_k z^k / (k + 2)!
    term = np.full_like(zs, 0.5)
    acc = term.copy()
    for k in range(1, 12):
        term = term * zs / (k + 2)
        acc += term
    out[small] = acc
    zb = z[~small]
    out[~small] = (np.expm1(zb) / zb - 1.0) / zb
    return out


# Bogacki-Shampine 3(2)
_BS_A = ((), (0.5,), (0.0, 0.75), (2 / 9, 1 / 3, 4 / 9))
_BS_C = (0.0, 0.5, 0.75, 1.0)
_BS_E = (-5 / 72, 1 / 12, 1 / 9, -1 / 8)  # b3 - b2


class _Stepper:
    """Adaptive stepping on the augmented vector ``y = (c, dissipation, work)``."""

    def __init__(self, system: GalerkinSystem, config: SolverConfig, kappa: float):
        self.system = system
        self.config = config
        self.n = int(np.prod(system.shape))
        lam = system.basis.eigenvalues.ravel()
        self.linear = np.concatenate([-kappa * lam, [0.0, 0.0]])
        self.nfev = 0
        self._cache = None

    def f(self, y: np.ndarray, t: float) -> np.ndarray:
        self.nfev += 1
        c = y[: self.n].reshape(self.system.shape)
        dc, diss, work = self.system.evaluate(c, t)
        return np.concatenate([dc.ravel(), [diss, work]])

    def error_ratio(self, err: np.ndarray, y: np.ndarray, y_new: np.ndarray) -> float:
        # the energy integrals are part of the state, so their error is controlled too
        coeff = float(np.linalg.norm(err[: self.n])) / (1.0 + float(np.linalg.norm(y[: self.n])))
        size = max(float(np.max(np.abs(y[self.n:]))), float(np.max(np.abs(y_new[self.n:]))))
        energy = float(np.max(np.abs(err[self.n:]))) / (1.0 + size)
        return max(coeff, energy) / self.config.tol

    def attempt(self, y, t, h, fy):
        """One trial step; returns (y_new, f(y_new) or None, error ratio)."""
        if self.config.integrator == "imex-exponential":
            z = h * self.linear
            e, p1, p2 = np.exp(z), phi1(z), phi2(z)
            n0 = fy - self.linear * y
            a = e * y + h * p1 * n0
            n1 = self.f(a, t + h) - self.linear * a
            corr = h * p2 * (n1 - n0)
            y_new = a + corr
            return y_new, None, self.error_ratio(corr, y, y_new)
        k = [fy]
        for i in range(1, 4):
            yi = y + h * sum(aij * kj for aij, kj in zip(_BS_A[i], k))
            k.append(self.f(yi, t + _BS_C[i] * h))
        y_new = yi  # last stage is the 3rd-order solution (FSAL)
        err = h * sum(ei * ki for ei, ki in zip(_BS_E, k))
        return y_new, k[3], self.error_ratio(err, y, y_new)

    @property
    def order(self) -> int:
        return 2 if self.config.integrator == "imex-exponential" else 3


def _default_kappa(system: GalerkinSystem, c0: np.ndarray) -> float:
    return float(np.clip(system.linear_diffusivity(c0, 0.0), 1e-3, 1e3))


def step(state: GalerkinState, prob: Problem, cfg: SolverConfig,
         system: GalerkinSystem | None = None) -> GalerkinState:
    """Advance by one accepted step of at most ``state.dt`` (or ``cfg.dt``).

    The returned state carries the controller's suggestion for the next step.
    """
    system = system or GalerkinSystem(prob, cfg)
    kappa = cfg.kappa if cfg.kappa is not None else _default_kappa(system, state.c)
    stepper = _Stepper(system, cfg, kappa)
    h = state.dt or cfg.dt
    y = np.concatenate([np.ravel(state.c), [0.0, 0.0]])
    y, _, t, h_next, _ = _advance(stepper, y, None, state.t, h, state.t + h)
    c = y[: stepper.n].reshape(system.shape)
    return GalerkinState(t, c, system.rhs(c, t), h_next)


def _advance(stepper: _Stepper, y, fy, t, h, t_end):
    """Take one accepted step not beyond ``t_end``."""
    cfg = stepper.config
    dt_max = cfg.dt_max if cfg.dt_max is not None else math.inf
    if fy is None:
        fy = stepper.f(y, t)
    h = min(h, dt_max)
    while True:
        h_try = min(h, t_end - t)
        last = h_try >= t_end - t
        try:
            y_new, f_new, ratio = stepper.attempt(y, t, h_try, fy)
            ok = np.all(np.isfinite(y_new))
        except (FloatingPointError, ArithmeticError):
            ok, ratio = False, math.inf
        if ok and np.max(np.abs(y_new[: stepper.n])) > BLOWUP_LIMIT:
            raise BlowupError(f"coefficient exceeded {BLOWUP_LIMIT:g} at t={t + h_try:g}")
        if ok and ratio <= 1.0:
            t_new = t_end if last else t + h_try
            factor = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** (-1.0 / stepper.order)))
            h_next = min(dt_max, (h if last else h_try) * factor)
            return y_new, f_new, t_new, h_next, h_try
        h = 0.5 * h_try
        if h < cfg.dt_min:
            raise StiffnessError(
                f"step size {h:.3e} below dt_min={cfg.dt_min:g} at t={t:.6g} "
                f"(error ratio {ratio:.3g}, integrator {cfg.integrator})")


def solve(prob: Problem, cfg: SolverConfig, force: bool = False,
          system: GalerkinSystem | None = None) -> Trajectory:
    """Integrate from 0 to T, recording ``cfg.snapshots + 1`` equispaced snapshots."""
    if not force:
        report = validate(prob.exponents)
        if not report.passed:
            raise InadmissibleExponentError(
                "exponents fail admissibility checks: " + ", ".join(report.failures))
    system = system or GalerkinSystem(prob, cfg)
    c0 = system.initial_coeffs()
    kappa = cfg.kappa if cfg.kappa is not None else _default_kappa(system, c0)
    stepper = _Stepper(system, cfg, kappa)
    times = np.linspace(0.0, prob.horizon, cfg.snapshots + 1)

    y = np.concatenate([c0.ravel(), [0.0, 0.0]])
    fy = stepper.f(y, 0.0)
    snaps, rates, diss, work = [c0], [fy[: stepper.n].reshape(system.shape)], [0.0], [0.0]
    t, h = 0.0, cfg.dt
    steps = 0
    for t_snap in times[1:]:
        while t < t_snap:
            y, f_new, t, h, _ = _advance(stepper, y, fy, t, h, t_snap)
            fy = f_new if f_new is not None else stepper.f(y, t)
            steps += 1
        snaps.append(y[: stepper.n].reshape(system.shape).copy())
        rates.append(fy[: stepper.n].reshape(system.shape).copy())
        diss.append(float(y[-2]))
        work.append(float(y[-1]))
    stats = {"steps": steps, "rhs_evaluations": stepper.nfev, "kappa": kappa,
             "integrator": cfg.integrator}
    log.debug("solve finished: %s", stats)
    return Trajectory(times, np.array(snaps), np.array(rates), np.array(diss), np.array(work), stats)


# ---------------------------------------------------------------------------
# manufactured solutions


def _check_boundary(u: FieldExpr, domain: RectDomain, horizon: float, samples: int = 17) -> None:
    axes = [np.linspace(0.0, ell, samples) for ell in domain.lengths]
    scale = 1.0
    for t in np.linspace(0.0, horizon, 5):
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        scale = max(scale, float(np.max(np.abs(u(mesh, t)))))
    for t in np.linspace(0.0, horizon, 5):
        for axis, ell in enumerate(domain.lengths):
            for side in (0.0, ell):
                face = list(axes)
                face[axis] = np.array([side])
                mesh = np.meshgrid(*face, indexing="ij", sparse=True)
                worst = float(np.max(np.abs(u(mesh, t))))
                if worst > 1e-10 * scale:
                    raise BoundaryConditionError(
                        f"u_exact = {worst:.3g} on the face x{axis + 1} = {side:g} at t = {t:g}")


def manufactured_forcing(u_exact: FieldExpr, prob: Problem) -> FieldExpr:
    """``f = u_t - sum_j D_j F_j(D_j u)`` assembled symbolically.

    With ``xi = D_j u`` and ``s = eps^2 + xi^2``::

        D_j F_j = s^((p-2)/2) [D_j xi (1 + (p-2) xi^2 / s) + xi ln(s) D_j p / 2]
    """
    _check_boundary(u_exact, prob.domain, prob.horizon)
    eps2 = prob.epsilon**2
    f = differentiate(u_exact, "t")
    for j, p in enumerate(prob.exponents.components):
        xj = f"x{j + 1}"
        xi = differentiate(u_exact, xj)
        if xi.is_constant and float(xi([], 0.0)) == 0.0:
            continue
        dxi = differentiate(xi, xj)
        dp = differentiate(p, xj)
        s = xi * xi + eps2
        weight = s ** ((p - 2.0) / 2.0)
        if p.is_constant and float(p([], 0.0)) == 2.0:
            div = dxi
        else:
            div = weight * (dxi * ((p - 2.0) * (xi * xi) / s + 1.0) + 0.5 * xi * s.apply("log") * dp)
        f = f - div
    return f


def l2_error(traj: Trajectory, system: GalerkinSystem, u_exact: FieldExpr) -> float:
    """``||u_h - u||_{L2(Q_T)}`` by grid quadrature and the trapezoid rule in time."""
    sq = []
    for t, c in zip(traj.times, traj.coeffs):
        diff = system.basis.evaluate(c) - u_exact(system.mesh, t)
        sq.append(system.basis.grid.integrate(diff**2))
    return float(math.sqrt(max(0.0, np.trapezoid(sq, traj.times))))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepPoint:
    value: float
    report: object | None
    summary: dict
    error: str | None = None
    trajectory: Trajectory | None = field(default=None, repr=False)


def _with_value(prob: Problem, cfg: SolverConfig, axis: str, value):
    if axis == "epsilon":
        return replace(prob, epsilon=float(value)), cfg
    if axis == "modes":
        return prob, replace(cfg, modes=int(value), nodes=None if cfg.nodes is None else cfg.nodes)
    raise ValueError(f"unknown sweep axis {axis!r}")


def sweep(prob: Problem, cfg: SolverConfig, axis: str, values: Sequence, r_list: Sequence[float] = (),
          threads: int = 1, force: bool = False, keep_trajectories: bool = False,
          u_exact: FieldExpr | None = None) -> list[SweepPoint]:
    """Solve once per sweep value and instrument each run.

    Failures are recorded per point and do not stop the sweep.  With
    ``u_exact`` the summary also carries the L2(Q_T) error.
    """
    from .monitor import instrument

    values = list(values)
    if values != sorted(values, reverse=values[:1] > values[-1:]):
        raise ValueError("sweep values must be sorted")

    def run(value):
        p, c = _with_value(prob, cfg, axis, value)
        try:
            system = GalerkinSystem(p, c)
            traj = solve(p, c, force=force, system=system)
            report = instrument(traj, p, r_list, system=system)
            summary = traj.summary()
            if u_exact is not None:
                summary["l2_error"] = l2_error(traj, system, u_exact)
            return SweepPoint(value, report, summary, None, traj if keep_trajectories else None)
        except (SolverError, ValueError, ArithmeticError) as exc:
            log.warning("sweep point %s=%s failed: %s", axis, value, exc)
            return SweepPoint(value, None, {}, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, values))
    return [run(v) for v in values]


def zero_field() -> FieldExpr:
    return constant(0.0)
