"""Variable-exponent Lebesgue numerics on quadrature grids.

Every quantity here is a positive-weight quadrature sum, so the discrete
versions of Hoelder's inequality, the modular/norm bounds and the
interpolation inequality hold exactly (up to rounding) and can be asserted.
Inequalities with unknown constants are only reported as ratios.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import TensorGrid
from .exponents import InadmissibleExponentError, harmonic_mean, sobolev_conjugate


class LuxemburgBracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridFunction:
    """Nodal values on a tensor quadrature grid."""

    grid: TensorGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.broadcast_to(np.asarray(self.values, dtype=float), self.grid.shape)
        object.__setattr__(self, "values", values)

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weight_tensor

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__


def _exponent_values(p, grid: TensorGrid) -> np.ndarray:
    if isinstance(p, GridFunction):
        return p.values
    return np.broadcast_to(np.asarray(p, dtype=float), grid.shape)


def modular(u: GridFunction, p) -> float:
    """``int |u|^p`` by quadrature; ``p`` is a GridFunction, array or scalar."""
    pv = _exponent_values(p, u.grid)
    if np.any(pv <= 1):
        raise InadmissibleExponentError("modular needs p > 1 at every node")
    with np.errstate(over="ignore"):
        rho = float(np.sum(u.weights * np.abs(u.values) ** pv))
    if not math.isfinite(rho):
        raise OverflowError("non-finite modular")
    return rho


def luxemburg_norm(u: GridFunction, p, tol: float = 1e-10, max_iter: int = 200) -> float:
    """``inf{lam > 0 : int |u / lam|^p <= 1}`` by bisection in ``log(lam)``.

    The initial bracket comes from the modular/norm inequality
    ``min(|u|^p-, |u|^p+) <= rho(u) <= max(|u|^p-, |u|^p+)``.
    Stops when ``|rho(u/lam) - 1| <= tol`` or the bracket collapses to rounding.
    """
    pv = _exponent_values(p, u.grid)
    rho = modular(u, pv)
    if rho == 0.0:
        return 0.0
    p_lo, p_hi = float(pv.min()), float(pv.max())
    absu = np.abs(u.values)
    nz = absu > 0
    w, pz = u.weights[nz], pv[nz]
    log_u = np.log(absu[nz])

    def excess(log_lam):
        with np.errstate(over="ignore"):
            return float(np.sum(w * np.exp(pz * (log_u - log_lam)))) - 1.0

    a, b = sorted((math.log(rho) / p_lo, math.log(rho) / p_hi))
    a -= 1e-12 * max(1.0, abs(a))
    b += 1e-12 * max(1.0, abs(b))
    fa, fb = excess(a), excess(b)
    if not (fa >= 0.0 >= fb):
        raise LuxemburgBracketError(
            f"bracket [{math.exp(a)}, {math.exp(b)}] does not enclose the norm: "
            f"rho-1 = {fa}, {fb} (rho={rho}, p in [{p_lo}, {p_hi}])")
    mid, fm = a, fa
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = excess(mid)
        if abs(fm) <= tol or b - a <= 4e-16 * max(1.0, abs(mid)):
            break
        if fm > 0:
            a = mid
        else:
            b = mid
    return math.exp(mid)


def lp_norm(u: GridFunction, s: float) -> float:
    """Classical ``L^s`` norm by quadrature (``s >= 1`` constant)."""
    return float(np.sum(u.weights * np.abs(u.values) ** s)) ** (1.0 / s)


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    passed: bool

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.passed))


def holder_check(f: GridFunction, g: GridFunction, p) -> InequalityCheck:
    """``int |f g| <= 2 ||f||_p ||g||_p'`` with ``p' = p / (p - 1)``."""
    pv = _exponent_values(p, f.grid)
    lhs = float(np.sum(f.weights * np.abs(f.values * g.values)))
    rhs = 2.0 * luxemburg_norm(f, pv) * luxemburg_norm(g, pv / (pv - 1.0))
    return InequalityCheck(lhs, rhs, lhs <= rhs + 1e-10)


def norm_modular_bounds_check(u: GridFunction, p, rtol: float = 1e-8) -> bool:
    pv = _exponent_values(p, u.grid)
    rho = modular(u, pv)
    norm = luxemburg_norm(u, pv)
    lo_exp, hi_exp = norm ** float(pv.min()), norm ** float(pv.max())
    lower, upper = min(lo_exp, hi_exp), max(lo_exp, hi_exp)
    return bool(lower * (1 - rtol) <= rho <= upper * (1 + rtol))


def anisotropic_norm(grads: Sequence[GridFunction], exponents: Sequence) -> float:
    """``sum_i ||D_i u||_{p_i}`` for gradient components and exponent values at a fixed time."""
    if len(grads) != len(exponents):
        raise ValueError("need one exponent per gradient component")
    return float(sum(luxemburg_norm(g, p) for g, p in zip(grads, exponents)))


def theta(s: float, dim: int, p_h: float) -> float:
    """Interpolation exponent for ``||u||_s <= ||u||_{p_h*}^theta ||u||_2^(1-theta)``."""
    value = (0.5 - 1.0 / s) / ((dim + 2) / (2.0 * dim) - 1.0 / p_h)
    if not 0.0 < value < 1.0:
        raise InadmissibleExponentError(
            f"theta={value} outside (0, 1) for s={s}, N={dim}, p_h={p_h}")
    return value


def interpolation_theta(s: float, q: float) -> float:
    """theta solving ``1/s = theta/q + (1 - theta)/2``."""
    return (0.5 - 1.0 / s) / (0.5 - 1.0 / q)


def interpolation_check(u: GridFunction, s: float, q: float) -> InequalityCheck:
    """``||u||_s <= ||u||_q^theta ||u||_2^(1-theta)`` for ``2 < s <= q`` (constant one)."""
    if not 2.0 < s <= q:
        raise ValueError(f"need 2 < s <= q, got s={s}, q={q}")
    th = interpolation_theta(s, q)
    lhs = lp_norm(u, s)
    rhs = lp_norm(u, q) ** th * lp_norm(u, 2.0) ** (1.0 - th)
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1 + 1e-10))


def anisotropic_embedding_ratio(u: GridFunction, grads: Sequence[GridFunction],
                                p: Sequence[float], unbounded_exponent: float | None = None) -> float:
    """``||u||_{p_h*} / (sum_i ||D_i u||_{p_i} + ||u||_1)`` for constant exponents.

    The embedding constant is unknown, so this is a monitor only.  When
    ``p_h >= N`` the critical exponent is unbounded and any finite one is
    admissible; ``unbounded_exponent`` (default ``2 max p``) is used instead.
    """
    p = [float(v) for v in p]
    dim = len(p)
    p_h = harmonic_mean(p)
    p_star = sobolev_conjugate(p_h, dim)
    if not (2 * dim / (dim + 2) < min(p) and max(p) < p_star):
        raise InadmissibleExponentError(f"exponents {p} violate 2N/(N+2) < p_i < p_h*")
    if math.isinf(p_star):
        p_star = unbounded_exponent if unbounded_exponent is not None else 2.0 * max(p)
    num = lp_norm(u, p_star)
    if num == 0.0:
        return 0.0
    den = sum(lp_norm(g, pi) for g, pi in zip(grads, p)) + lp_norm(u, 1.0)
    return num / den
