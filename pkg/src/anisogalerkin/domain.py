"""Box geometry and tensor-product Gauss-Legendre quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RectDomain:
    """The box ``(0, l_1) x ... x (0, l_N)``."""

    lengths: tuple[float, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        if not lengths:
            raise ValueError("domain needs at least one axis")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError(f"edge lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def unit(cls, dim: int) -> "RectDomain":
        return cls((1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


def default_nodes(modes: int) -> int:
    """Gauss nodes per axis that integrate products of the first ``modes`` sines to ~1e-13."""
    return max(3 * modes, 2 * modes + 16)


@dataclass(frozen=True)
class TensorGrid:
    """Tensor Gauss-Legendre rule on a :class:`RectDomain`.

    ``points[i]`` and ``weights[i]`` are the 1-D nodes and weights on axis i.
    Grid tensors are indexed ``[i_1, ..., i_N]`` in axis order.
    """

    domain: RectDomain
    nodes: tuple[int, ...]

    def __post_init__(self):
        nodes = self.nodes
        if isinstance(nodes, (int, np.integer)):
            nodes = (int(nodes),) * self.domain.dim
        nodes = tuple(int(n) for n in nodes)
        if len(nodes) != self.domain.dim or min(nodes) < 1:
            raise ValueError(f"bad node counts {nodes} for a {self.domain.dim}-D box")
        object.__setattr__(self, "nodes", nodes)

    @cached_property
    def _rules(self):
        rules = []
        for n, ell in zip(self.nodes, self.domain.lengths):
            x, w = np.polynomial.legendre.leggauss(n)
            rules.append((0.5 * ell * (x + 1.0), 0.5 * ell * w))
        return rules

    @property
    def points(self) -> list[np.ndarray]:
        return [r[0] for r in self._rules]

    @property
    def weights(self) -> list[np.ndarray]:
        return [r[1] for r in self._rules]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @cached_property
    def mesh(self) -> list[np.ndarray]:
        """Sparse (broadcastable) coordinate arrays."""
        return np.meshgrid(*self.points, indexing="ij", sparse=True)

    @cached_property
    def weight_tensor(self) -> np.ndarray:
        w = np.ones(())
        for wi in self.weights:
            w = np.multiply.outer(w, wi)
        return w

    def integrate(self, values: np.ndarray) -> float:
        values = np.broadcast_to(values, self.shape)
        return float(np.sum(values * self.weight_tensor))


def grid_for(domain: RectDomain, nodes: int | Sequence[int]) -> TensorGrid:
    return TensorGrid(domain, nodes)
