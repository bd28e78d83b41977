"""Exponent fields and their admissibility arithmetic.

Suprema and infima over the closed cylinder are taken on a tensor sample
grid (closed box x [0, T]); they are lower/upper estimates of the true
extrema that converge under refinement because the fields are Lipschitz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .domain import RectDomain
from .field_dsl import FieldExpr, lipschitz_estimate, parse

FAST_MARGIN = 1e-9


class InvalidExponentError(ValueError):
    """Some sampled exponent is <= 1."""


class InadmissibleExponentError(ValueError):
    """Exponent data violates a precondition of the requested quantity."""


def pvee_pwedge(values: Sequence[float]) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    return float(values.max()), float(values.min())


def harmonic_mean(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    return float(len(values) / np.sum(1.0 / values))


def sobolev_conjugate(p_h: float, dim: int) -> float:
    """``N p_h / (N - p_h)`` if ``p_h < N``; ``math.inf`` (unbounded) otherwise."""
    if p_h <= 0:
        raise ValueError("p_h must be positive")
    if dim > p_h:
        return dim * p_h / (dim - p_h)
    return math.inf


def r_star(mu: float, dim: int) -> float:
    """Upper end of the higher-integrability range; may be <= 0 for large ``mu``."""
    if mu < 1:
        raise ValueError("mu >= 1 by construction")
    return (4.0 - 2.0 * dim * (mu - 1.0)) / (dim + 2.0)


def _gamma_factor(L: float, dim: int, pmax: float, pmin: float) -> float:
    return 2.0 * L * math.sqrt(dim) * (dim + 2.0) ** 2 / (4.0 * dim**2) * (pmax + pmin + 2.0)


def gamma(beta: float, L: float, dim: int, pmax: float, pmin: float) -> float:
    """Oscillation excess of the exponents over cubes of edge ``beta``."""
    return beta * _gamma_factor(L, dim, pmax, pmin)


def beta_max(mu: float, L: float, dim: int, pmax: float, pmin: float, target_gap: float) -> float:
    """Supremum of ``beta`` with ``mu + gamma(beta) < target_gap``; ``inf`` if ``L == 0``."""
    if mu >= target_gap:
        raise InadmissibleExponentError(f"mu={mu} >= {target_gap}: no admissible cube size")
    if L < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    if L == 0:
        return math.inf
    return (target_gap - mu) / _gamma_factor(L, dim, pmax, pmin)


@dataclass(frozen=True)
class ExponentField:
    """Exponents ``p_1 .. p_N`` on ``domain x [0, horizon]`` with sampled bounds.

    ``grid`` samples per space axis and ``time_grid`` in time; time-independent
    fields are sampled on a single slice.  ``lipschitz`` overrides the sampled
    estimate when given.
    """

    components: tuple[FieldExpr, ...]
    domain: RectDomain
    horizon: float
    grid: int = 64
    time_grid: int = 64
    lipschitz_override: float | None = field(default=None)

    def __post_init__(self):
        comps = tuple(parse(c, self.domain.dim) if isinstance(c, str) else c for c in self.components)
        if len(comps) != self.domain.dim:
            raise ValueError(f"need {self.domain.dim} exponents, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def depends_on_time(self) -> bool:
        return any(c.depends_on_time for c in self.components)

    def at(self, x: Sequence[np.ndarray], t: float) -> list[np.ndarray]:
        return [c(x, t) for c in self.components]

    def sample_times(self) -> np.ndarray:
        if not self.depends_on_time:
            return np.array([0.0])
        return np.linspace(0.0, self.horizon, self.time_grid)

    def slices(self) -> Iterator[np.ndarray]:
        """Stacked samples ``(N, grid, ..., grid)`` per sample time."""
        axes = [np.linspace(0.0, ell, self.grid) for ell in self.domain.lengths]
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        for t in self.sample_times():
            yield np.stack(self.at(mesh, t))

    @cached_property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        lo = np.full(self.dim, np.inf)
        hi = np.full(self.dim, -np.inf)
        for s in self.slices():
            flat = s.reshape(self.dim, -1)
            lo = np.minimum(lo, flat.min(axis=1))
            hi = np.maximum(hi, flat.max(axis=1))
        return tuple((float(a), float(b)) for a, b in zip(lo, hi))

    @cached_property
    def lipschitz(self) -> float:
        if self.lipschitz_override is not None:
            return float(self.lipschitz_override)
        return max(lipschitz_estimate(c, self.domain, self.horizon, self.grid).value
                   for c in self.components)

    @property
    def pmax(self) -> float:
        return max(b for _, b in self.bounds)

    @property
    def pmin(self) -> float:
        return min(a for a, _ in self.bounds)

    def check_valid(self) -> None:
        if self.pmin <= 1.0:
            raise InvalidExponentError(f"sampled exponent {self.pmin} <= 1")


def constant_field(values: Sequence[float], domain: RectDomain, horizon: float = 1.0, **kw) -> ExponentField:
    return ExponentField(tuple(parse(repr(float(v))) for v in values), domain, horizon, **kw)


def _sampled_mu(fld: ExponentField) -> float:
    best = 1.0
    for s in fld.slices():
        best = max(best, float(np.max(s.max(axis=0) / s.min(axis=0))))
    return best


def mu(fld: ExponentField) -> float:
    """Sampled ``sup p_vee / p_wedge``."""
    fld.check_valid()
    return _sampled_mu(fld)


def _sampled_min_harmonic(fld: ExponentField) -> float:
    best = math.inf
    for s in fld.slices():
        best = min(best, float(np.min(fld.dim / np.sum(1.0 / s, axis=0))))
    return best


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ExponentReport:
    mu: float
    p_h_min: float
    p_h_star_min: float
    r_star: float
    slow_everywhere: bool
    fast_directions: tuple[int, ...]
    gamma_at_beta: float | None
    beta_max: float | None
    nu: float | None
    verdicts: tuple[Verdict, ...]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def failures(self) -> list[str]:
        return [v.name for v in self.verdicts if not v.passed]

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            return "unbounded" if math.isinf(v) else float(v)

        return {
            "mu": num(self.mu),
            "p_h_min": num(self.p_h_min),
            "p_h_star_min": num(self.p_h_star_min),
            "r_star": num(self.r_star),
            "slow_everywhere": self.slow_everywhere,
            "fast_directions": [int(i) for i in self.fast_directions],
            "gamma_at_beta": num(self.gamma_at_beta),
            "beta_max": num(self.beta_max),
            "nu": num(self.nu),
            "verdicts": [{"name": v.name, "passed": v.passed, "detail": v.detail}
                         for v in self.verdicts],
        }


def validate(fld: ExponentField, slow_mode: bool = False) -> ExponentReport:
    """Check the admissibility conditions on the sample grid.

    Failed conditions are reported as verdicts, never raised.  ``beta_max``
    uses the gap ``1 + 2/N`` when ``slow_mode`` is set and every exponent is
    at least 2, otherwise ``1 + 1/N``.  ``gamma_at_beta`` and ``nu`` are
    evaluated at ``beta = beta_max / 2``.
    """
    dim = fld.dim
    lo, hi = fld.pmin, fld.pmax
    verdicts = [Verdict("p_i > 1", lo > 1.0, f"min sampled p = {lo!r}")]
    lower = 2.0 * dim / (dim + 2.0)
    verdicts.append(Verdict("p_i > 2N/(N+2)", lo > lower, f"min p = {lo!r}, bound = {lower!r}"))

    m = _sampled_mu(fld) if lo > 0 else math.inf
    p_h_min = _sampled_min_harmonic(fld) if lo > 0 else lo
    p_h_star = sobolev_conjugate(p_h_min, dim) if p_h_min > 0 else math.nan
    verdicts.append(Verdict("p_i < p_h*", hi < p_h_star,
                            f"max p = {hi!r}, p_h* at min p_h = {p_h_star!r}"))

    slow_everywhere = lo >= 2.0
    fast = tuple(i for i, (_, b) in enumerate(fld.bounds) if b <= 2.0 - FAST_MARGIN)
    if slow_mode and slow_everywhere:
        gap, gap_name = 1.0 + 2.0 / dim, "mu < 1+2/N"
    else:
        gap, gap_name = 1.0 + 1.0 / dim, "mu < 1+1/N"
    verdicts.append(Verdict(gap_name, m < gap, f"mu = {m!r}, gap = {gap!r}"))

    rs = r_star(m, dim) if math.isfinite(m) else -math.inf
    verdicts.append(Verdict("r_star > 0", rs > 0, f"r_star = {rs!r}"))

    b_max = g_at = nu = None
    if m < gap:
        L = fld.lipschitz
        b_max = beta_max(m, L, dim, hi, lo, gap)
        beta = b_max / 2.0 if math.isfinite(b_max) else 0.0
        g_at = gamma(beta, L, dim, hi, lo)
        nu = 1.0 - (m + g_at) * dim / (dim + 2.0)
    return ExponentReport(
        mu=m, p_h_min=p_h_min, p_h_star_min=p_h_star, r_star=rs,
        slow_everywhere=slow_everywhere, fast_directions=fast,
        gamma_at_beta=g_at, beta_max=b_max, nu=nu, verdicts=tuple(verdicts))
