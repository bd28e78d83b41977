"""Dirichlet-Laplacian sine eigenbasis on a box.

On ``(0, l_1) x ... x (0, l_N)`` the orthonormal eigenfunctions are

    psi_k(x) = prod_i sqrt(2 / l_i) sin(pi k_i x_i / l_i),
    lambda_k = pi^2 sum_i k_i^2 / l_i^2,      k_i = 1, 2, ...

Coefficient tensors are plain ``ndarray`` objects with shape ``(m_1, ..., m_N)``;
entry ``c[k_1 - 1, ..., k_N - 1]`` multiplies ``psi_k``.  All transforms are
separable contractions with per-axis tables, one axis at a time.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .domain import RectDomain, TensorGrid, default_nodes


class AliasingWarning(UserWarning):
    pass


def eigenvalue(k: Sequence[int], domain: RectDomain) -> float:
    if len(k) != domain.dim or min(k) < 1:
        raise ValueError(f"invalid eigen index {tuple(k)}")
    return float(np.pi**2 * sum((ki / li) ** 2 for ki, li in zip(k, domain.lengths)))


def _axis_apply(tensor: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    # contract tensor's `axis` with matrix's first index; result keeps axis order
    out = np.tensordot(tensor, matrix, axes=([axis], [0]))
    return np.moveaxis(out, -1, axis)


@dataclass(frozen=True)
class SineBasis:
    """Truncated eigenbasis with ``modes[i]`` sines per axis, tabulated on a Gauss grid."""

    domain: RectDomain
    modes: tuple[int, ...]
    nodes: tuple[int, ...] | None = None
    grid: TensorGrid = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        modes = self.modes
        if isinstance(modes, (int, np.integer)):
            modes = (int(modes),) * self.domain.dim
        modes = tuple(int(m) for m in modes)
        if len(modes) != self.domain.dim or min(modes) < 1:
            raise ValueError(f"bad mode counts {modes}")
        nodes = self.nodes
        if nodes is None:
            nodes = tuple(default_nodes(m) for m in modes)
        elif isinstance(nodes, (int, np.integer)):
            nodes = (int(nodes),) * self.domain.dim
        nodes = tuple(int(n) for n in nodes)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "grid", TensorGrid(self.domain, nodes))
        if any(n < 2 * m + 1 for n, m in zip(nodes, modes)):
            warnings.warn(
                f"quadrature grid {nodes} under-resolves modes {modes} "
                "(need at least 2*m+1 nodes per axis)", AliasingWarning, stacklevel=3)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.modes

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """``pi k / l`` per axis."""
        return [np.pi * np.arange(1, m + 1) / ell for m, ell in zip(self.modes, self.domain.lengths)]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        lam = np.zeros(())
        for w in self.wavenumbers:
            lam = np.add.outer(lam, w**2)
        return lam

    @cached_property
    def _tables(self):
        """Per axis: (values, first derivative, second derivative), each (modes, nodes)."""
        tables = []
        for w, ell, x in zip(self.wavenumbers, self.domain.lengths, self.grid.points):
            arg = np.outer(w, x)
            s = np.sqrt(2.0 / ell) * np.sin(arg)
            c = np.sqrt(2.0 / ell) * np.cos(arg) * w[:, None]
            tables.append((s, c, -s * (w**2)[:, None]))
        return tables

    def table(self, axis: int, order: int) -> np.ndarray:
        return self._tables[axis][order]

    def evaluate(self, coeffs: np.ndarray, derivative: int | tuple[int, ...] | None = None) -> np.ndarray:
        """Values of ``sum_k c_k psi_k`` (or an exact partial derivative) on the grid.

        ``derivative`` is ``None``, an axis ``j`` for ``D_j``, or a pair ``(i, j)``
        for ``D_i D_j`` (``i == j`` gives the pure second derivative).
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != self.modes:
            raise ValueError(f"coefficient shape {coeffs.shape} != modes {self.modes}")
        orders = [0] * self.dim
        if derivative is not None:
            for j in np.atleast_1d(derivative):
                orders[int(j)] += 1
        out = coeffs
        for axis, order in enumerate(orders):
            out = _axis_apply(out, self._tables[axis][order], axis)
        return out

    def project(self, values: np.ndarray, orders: Sequence[int] | None = None) -> np.ndarray:
        """Quadrature inner products of grid ``values`` against the basis.

        With ``orders`` given, project against ``D^orders psi_k`` instead.
        """
        values = np.broadcast_to(np.asarray(values, dtype=float), self.grid.shape)
        orders = orders or [0] * self.dim
        out = values
        for axis, order in enumerate(orders):
            weighted = self._tables[axis][order] * self.grid.weights[axis]
            out = _axis_apply(out, weighted.T, axis)
        return out

    def project_function(self, func, t: float = 0.0) -> np.ndarray:
        return self.project(func(self.grid.mesh, t))

    def unit(self, k: Sequence[int]) -> np.ndarray:
        """Coefficient tensor of ``psi_k`` (1-based index)."""
        c = np.zeros(self.modes)
        c[tuple(int(ki) - 1 for ki in k)] = 1.0
        return c


def eval_expansion(coeffs: np.ndarray, domain: RectDomain, nodes=None, derivative=None) -> np.ndarray:
    return SineBasis(domain, np.shape(coeffs), nodes).evaluate(coeffs, derivative)


def project(values: np.ndarray, domain: RectDomain, modes, nodes=None) -> np.ndarray:
    return SineBasis(domain, modes, nodes or np.shape(values)).project(values)


def parseval_norm(coeffs: np.ndarray, domain: RectDomain, order: float = 0.0) -> float:
    """``(sum_k lambda_k^(2 s) c_k^2)^(1/2)``.

    ``s = 0`` is the L2 norm, ``s = 1/2`` the Dirichlet seminorm ``||grad u||_2``
    and integer ``s`` gives ``||Laplacian^s u||_2``.
    """
    if 2 * order != int(2 * order) or order < 0:
        raise ValueError("order must be a nonnegative integer or half-integer")
    coeffs = np.asarray(coeffs, dtype=float)
    lam = np.zeros(())
    for m, ell in zip(coeffs.shape, domain.lengths):
        lam = np.add.outer(lam, (np.pi * np.arange(1, m + 1) / ell) ** 2)
    return float(np.sqrt(np.sum(lam ** (2 * order) * coeffs**2)))


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    passed: bool

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.passed))


def laplacian_identity_check(coeffs: np.ndarray, domain: RectDomain, nodes=None,
                             rtol: float = 1e-9) -> IdentityCheck:
    """Compare ``int |Laplacian u|^2`` with ``sum_ij int (D_ij u)^2`` by quadrature."""
    coeffs = np.asarray(coeffs, dtype=float)
    basis = SineBasis(domain, coeffs.shape, nodes)
    lap = sum(basis.evaluate(coeffs, (i, i)) for i in range(basis.dim))
    lhs = basis.grid.integrate(lap**2)
    rhs = sum(basis.grid.integrate(basis.evaluate(coeffs, (i, j)) ** 2)
              for i in range(basis.dim) for j in range(basis.dim))
    scale = max(abs(lhs), abs(rhs))
    passed = abs(lhs - rhs) <= rtol * scale if scale > 0 else lhs == rhs
    return IdentityCheck(lhs, rhs, bool(passed))
