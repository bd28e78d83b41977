"""Named randomized property suites, runnable from the command line.

Each property draws its inputs from a seeded generator and returns the worst
measured defect; it passes when that defect is within its tolerance.
Tolerances can be overridden per property (``verify.tol.<name>``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import SineBasis, laplacian_identity_check, parseval_norm
from .domain import RectDomain, TensorGrid
from .exponents import beta_max, gamma, r_star
from .field_dsl import differentiate, parse
from .funcspace import GridFunction, holder_check, interpolation_check, luxemburg_norm, lp_norm, modular
from .solver import Problem, SolverConfig, flux, solve


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    cases: int

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "cases": self.cases}


# -- random inputs ------------------------------------------------------------

_UNARY = ("sin({})", "cos({})", "tanh({})", "exp(sin({}))", "sqrt(2 + sin({}))",
          "log(2 + cos({}))", "abs({})")


def random_expression(rng: np.random.Generator, dim: int, depth: int = 3) -> str:
    """Smooth-ish random expression text in ``x1..x{dim}`` and ``t``."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.4:
            return repr(round(float(rng.uniform(0.5, 2.0)), 3))
        return str(rng.choice([f"x{i + 1}" for i in range(dim)] + ["t"]))
    a = random_expression(rng, dim, depth - 1)
    b = random_expression(rng, dim, depth - 1)
    kind = int(rng.integers(8))
    if kind == 0:
        return f"({a} + {b})"
    if kind == 1:
        return f"({a} - {b})"
    if kind == 2:
        return f"{a}*{b}"
    if kind == 3:
        return f"{a}/(2 + sin({b}))"
    if kind == 4:
        return f"(1.5 + sin({a}))^(1 + 0.5*cos({b}))"
    if kind == 5:
        return str(rng.choice(["min", "max"])) + f"({a}, {b})"
    if kind == 6:
        return f"-{a}"
    return str(rng.choice(_UNARY)).format(a)


def random_coeffs(rng: np.random.Generator, modes: Sequence[int], decay: float = 1.0) -> np.ndarray:
    """Gaussian coefficients damped like ``|k|^-decay``."""
    k = np.zeros(())
    for m in modes:
        k = np.add.outer(k, np.arange(1, m + 1) ** 2)
    return rng.standard_normal(tuple(modes)) / np.sqrt(k) ** decay


def random_grid_function(rng: np.random.Generator, basis: SineBasis) -> GridFunction:
    return GridFunction(basis.grid, basis.evaluate(random_coeffs(rng, basis.modes)))


def random_exponent(rng: np.random.Generator, grid: TensorGrid, lo: float = 1.2, hi: float = 3.0) -> np.ndarray:
    """Smooth variable exponent with values in ``(lo, hi)``."""
    p = np.full(grid.shape, 0.0)
    for x, ell in zip(grid.mesh, grid.domain.lengths):
        p = p + np.sin(rng.uniform(0.5, 4.0) * np.pi * x / ell + rng.uniform(0, 2 * np.pi))
    p = p / grid.domain.dim
    return lo + (hi - lo) * (0.5 + 0.5 * p) * 0.98 + 0.01 * (hi - lo)


def _random_domain(rng: np.random.Generator, dim: int) -> RectDomain:
    return RectDomain(tuple(float(v) for v in rng.uniform(0.5, 2.0, dim)))


# -- properties -----------------------------------------------------------------
# each returns (worst defect, number of cases)


def _dsl_derivative_fd(rng, tol):
    worst, h = 0.0, 1e-5
    for _ in range(100):
        dim = int(rng.integers(1, 4))
        e = parse(random_expression(rng, dim), dim)
        x = list(rng.uniform(0.1, 1.9, dim))
        t = float(rng.uniform(0.1, 1.9))
        for v in [f"x{i + 1}" for i in range(dim)] + ["t"]:
            d = float(differentiate(e, v)(x, t))
            xp, xm, tp, tm = list(x), list(x), t, t
            if v == "t":
                tp, tm = t + h, t - h
            else:
                i = int(v[1:]) - 1
                xp[i] += h
                xm[i] -= h
            fd = (float(e(xp, tp)) - float(e(xm, tm))) / (2 * h)
            worst = max(worst, abs(fd - d) / max(1.0, abs(d)))
    return worst, 100


def _dsl_print_parse(rng, tol):
    bad = 0
    for _ in range(100):
        dim = int(rng.integers(1, 4))
        e = parse(random_expression(rng, dim), dim)
        bad += parse(str(e), dim).node != e.node
    return float(bad), 100


def _basis_orthonormality(rng, tol):
    worst = 0.0
    for m in (4, 8, 16, 32):
        dom = _random_domain(rng, 2)
        b = SineBasis(dom, (m, m))
        grams = []
        for axis in range(2):
            s = b.table(axis, 0)
            grams.append((s * b.grid.weights[axis]) @ s.T)
        full = np.kron(grams[0], grams[1])
        worst = max(worst, float(np.max(np.abs(full - np.eye(m * m)))))
    return worst, 4


def _basis_parseval(rng, tol):
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        dom = _random_domain(rng, dim)
        modes = tuple(int(v) for v in rng.integers(2, 9 if dim < 3 else 6, dim))
        b = SineBasis(dom, modes)
        c = random_coeffs(rng, modes)
        quad = b.grid.integrate(b.evaluate(c) ** 2)
        exact = parseval_norm(c, dom) ** 2
        worst = max(worst, abs(quad - exact) / exact)
    return worst, 20


def _basis_derivative_norms(rng, tol):
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        dom = _random_domain(rng, dim)
        modes = tuple(int(v) for v in rng.integers(2, 9 if dim < 3 else 6, dim))
        b = SineBasis(dom, modes)
        c = random_coeffs(rng, modes)
        grad = sum(b.grid.integrate(b.evaluate(c, j) ** 2) for j in range(dim))
        lap = b.grid.integrate(sum(b.evaluate(c, (j, j)) for j in range(dim)) ** 2)
        for quad, exact in ((grad, parseval_norm(c, dom, 0.5) ** 2), (lap, parseval_norm(c, dom, 1.0) ** 2)):
            worst = max(worst, abs(quad - exact) / exact)
    return worst, 20


def _basis_laplacian_identity(rng, tol):
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(2, 4))
        dom = _random_domain(rng, dim)
        modes = tuple(int(v) for v in rng.integers(2, 8 if dim < 3 else 5, dim))
        lhs, rhs, _ = laplacian_identity_check(random_coeffs(rng, modes), dom)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    return worst, 20


def _spaces(rng, count):
    for _ in range(count):
        dim = int(rng.integers(1, 3))
        b = SineBasis(_random_domain(rng, dim), (6,) * dim)
        yield b, random_grid_function(rng, b), random_exponent(rng, b.grid)


def _lux_fixed_point(rng, tol):
    worst = 0.0
    for _, u, p in _spaces(rng, 100):
        scale = float(rng.choice([1e-3, 1.0, 1e3]))
        u = u * scale
        lam = luxemburg_norm(u, p)
        worst = max(worst, abs(modular(u * (1.0 / lam), p) - 1.0))
    return worst, 100


def _lux_constant_exponent(rng, tol):
    worst = 0.0
    for _, u, _ in _spaces(rng, 100):
        s = float(rng.uniform(1.2, 4.0))
        ref = lp_norm(u, s)
        worst = max(worst, abs(luxemburg_norm(u, s) - ref) / ref)
    return worst, 100


def _holder(rng, tol):
    worst = -math.inf
    for b, u, p in _spaces(rng, 100):
        v = random_grid_function(rng, b)
        lhs, rhs, _ = holder_check(u, v, p)
        worst = max(worst, lhs - rhs)
    return max(worst, 0.0), 100


def _interpolation(rng, tol):
    worst = -math.inf
    for _, u, _ in _spaces(rng, 100):
        q = float(rng.uniform(2.5, 8.0))
        s = float(rng.uniform(2.0 + 1e-3, q))
        lhs, rhs, _ = interpolation_check(u, s, q)
        worst = max(worst, (lhs - rhs) / rhs)
    return max(worst, 0.0), 100


def _r_star_table(rng, tol):
    cases = [((1.0, 2), 1.0), ((1.2, 2), 0.8), ((1.0, 3), 0.8)]
    return max(abs(r_star(*args) - want) for args, want in cases), len(cases)


def _beta_inverts_gamma(rng, tol):
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(1, 5))
        gap = 1.0 + 1.0 / dim
        m = float(rng.uniform(1.0, gap - 1e-3))
        L = float(rng.uniform(1e-3, 10.0))
        pmin = float(rng.uniform(1.1, 3.0))
        pmax = pmin * m
        b = beta_max(m, L, dim, pmax, pmin, gap)
        worst = max(worst, abs(m + gamma(b, L, dim, pmax, pmin) - gap) / gap)
    return worst, 1000


def _flux_monotonicity(rng, tol):
    n = 10_000
    xi, eta = rng.normal(0, 3, n), rng.normal(0, 3, n)
    p, eps = rng.uniform(1.2, 3.0, n), rng.uniform(0.0, 1.0, n)
    prod = (flux(xi, p, eps) - flux(eta, p, eps)) * (xi - eta)
    strict = np.abs(xi - eta) > 1e-12
    # a negative product, or a zero one where strictness is required, is a violation
    violation = np.where(strict, prod <= 0, prod < 0)
    return float(np.count_nonzero(violation)), n


def _heat_exactness(rng, tol):
    prob = Problem.from_strings((1.0, 1.0), ("2", "2"), initial="2*sin(pi*x1)*sin(pi*x2)",
                                horizon=0.1, epsilon=0.5)
    traj = solve(prob, SolverConfig(modes=4, kappa=1.0, snapshots=4))
    want = math.exp(-2 * math.pi**2 * 0.1)
    return abs(traj.final[0, 0] - want) / want, 1


def _contraction(rng, tol):
    from .monitor import contraction_check

    base = dict(lengths=(1.0, 1.0), exponents=("2.2", "1.9"), horizon=0.2, epsilon=1e-2,
                forcing="sin(pi*x1)*sin(2*pi*x2)")
    psi11 = "2*sin(pi*x1)*sin(pi*x2)"
    mixed = "0.5*2*sin(pi*x1)*sin(pi*x2) + 0.3*2*sin(2*pi*x1)*sin(pi*x2)"
    cfg = SolverConfig(modes=6, snapshots=40)
    a = solve(Problem.from_strings(initial=psi11, **base), cfg)
    b = solve(Problem.from_strings(initial=mixed, **base), cfg)
    return max(contraction_check(a, b).max_increase, 0.0), 1


def _energy_identity(rng, tol):
    from .monitor import energy_residual
    from .solver import manufactured_forcing

    u = parse("exp(-t)*sin(pi*x1)*sin(pi*x2)", 2)
    prob = Problem.from_strings((1.0, 1.0), ("2.2", "1.9"), initial=str(u), horizon=0.5, epsilon=1e-3)
    prob = Problem(prob.domain, prob.exponents, manufactured_forcing(u, prob), prob.initial,
                   prob.horizon, prob.epsilon)
    return energy_residual(solve(prob, SolverConfig(modes=4))), 1


@dataclass(frozen=True)
class Property:
    name: str
    run: Callable
    tolerance: float


PROPERTIES: dict[str, Property] = {p.name: p for p in [
    Property("dsl.derivative_fd", _dsl_derivative_fd, 1e-6),
    Property("dsl.print_parse", _dsl_print_parse, 0.0),
    Property("basis.orthonormality", _basis_orthonormality, 1e-12),
    Property("basis.parseval", _basis_parseval, 1e-10),
    Property("basis.derivative_norms", _basis_derivative_norms, 1e-10),
    Property("basis.laplacian_identity", _basis_laplacian_identity, 1e-9),
    Property("funcspace.luxemburg_fixed_point", _lux_fixed_point, 1e-8),
    Property("funcspace.constant_exponent_norm", _lux_constant_exponent, 1e-10),
    Property("funcspace.holder", _holder, 1e-10),
    Property("funcspace.interpolation", _interpolation, 1e-10),
    Property("exponents.r_star_table", _r_star_table, 0.0),
    Property("exponents.beta_inverts_gamma", _beta_inverts_gamma, 1e-12),
    Property("solver.flux_monotonicity", _flux_monotonicity, 0.0),
    Property("solver.heat_exactness", _heat_exactness, 1e-12),
    Property("solver.contraction", _contraction, 1e-8),
    Property("solver.energy_identity", _energy_identity, 1e-5),
]}


def select(names: Sequence[str]) -> list[str]:
    """Expand ``all`` and module prefixes (``basis``) into property names."""
    out: list[str] = []
    for name in names:
        if name == "all":
            matched = list(PROPERTIES)
        elif name in PROPERTIES:
            matched = [name]
        else:
            matched = [p for p in PROPERTIES if p.startswith(name + ".")]
            if not matched:
                raise KeyError(f"unknown property or suite {name!r}")
        out += [m for m in matched if m not in out]
    return out


def run_properties(names: Sequence[str], seed: int = 0,
                   tolerances: dict[str, float] | None = None) -> list[PropertyResult]:
    """Run the selected properties, each from its own seeded stream."""
    tolerances = tolerances or {}
    results = []
    for name in select(names):
        prop = PROPERTIES[name]
        tol = tolerances.get(name, prop.tolerance)
        rng = np.random.default_rng([seed, list(PROPERTIES).index(name)])
        measured, cases = prop.run(rng, tol)
        results.append(PropertyResult(name, bool(measured <= tol), float(measured), float(tol), int(cases)))
    return results
