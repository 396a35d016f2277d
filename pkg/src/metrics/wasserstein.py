import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.special import ndtri
from scipy.stats import norm

from src.errors import CapacityError, DomainError, ShapeError

logger = logging.getLogger(__name__)

ASSIGNMENT_CAP = 2000
QUADRATURE_TOL = 1e-8


@dataclass
class EmpiricalMeasure:
    """
    Finite probability measure on R^n.

    ``points`` is (K, n); a 1-D array is read as K atoms in R.
    ``weights`` defaults to 1/K each.
    """

    points: np.ndarray
    weights: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] == 0:
            raise ShapeError("points must be a non-empty (K, n) array.")
        if not np.all(np.isfinite(points)):
            raise DomainError("points must be finite.")
        self.points = points
        if self.weights is None:
            self.weights = np.full(points.shape[0], 1.0 / points.shape[0])
            self._uniform = True
            return
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (points.shape[0],):
            raise ShapeError("One weight per atom is required.")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1.")
        self.weights = weights
        self._uniform = bool(np.all(weights == weights[0]))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return self._uniform

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def moment(self, q: float = 2.0) -> float:
        """E|x|^q under the measure."""
        radii = np.linalg.norm(self.points, axis=1)
        return float(self.weights @ radii**q)


def _check_pair(a: EmpiricalMeasure, b: EmpiricalMeasure) -> None:
    if a.size != b.size:
        raise ShapeError(f"Atom counts differ: {a.size} vs {b.size}.")
    if a.dim != b.dim:
        raise ShapeError(f"Dimensions differ: {a.dim} vs {b.dim}.")
    if not (a.uniform and b.uniform):
        raise DomainError("Equal-size couplings need uniform weights.")


def w2_empirical_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Sorted coupling, exact for equal-size uniform measures on R."""
    _check_pair(a, b)
    if a.dim != 1:
        raise ShapeError("w2_empirical_1d needs n = 1.")
    gap = np.sort(a.points[:, 0]) - np.sort(b.points[:, 0])
    return float(np.sqrt(np.mean(gap**2)))


def w2_empirical_assignment(
    a: EmpiricalMeasure, b: EmpiricalMeasure, cap: int = ASSIGNMENT_CAP
) -> float:
    """Optimal assignment between two equal-size uniform measures."""
    _check_pair(a, b)
    if a.size > cap:
        logger.error(f"Assignment of {a.size} atoms exceeds cap {cap}")
        raise CapacityError(f"{a.size} atoms exceed the assignment cap {cap}.")
    cost = cdist(a.points, b.points, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def _gaussian_cells(size: int) -> np.ndarray:
    """phi(z_{i-1}) - phi(z_i) for z_i = Phi^{-1}(i / size)."""
    z = ndtri(np.arange(size + 1) / size)
    density = norm.pdf(z)
    return density[:-1] - density[1:]


def w2_empirical_vs_gaussian_1d(
    a: EmpiricalMeasure, mean: float, sd: float, method: str = "quadrature"
) -> float:
    """
    W2 between a uniform measure on R and N(mean, sd^2).

    The empirical quantile is constant on [(i-1)/K, i/K]. ``quadrature``
    integrates (a_(i) - mean - sd Phi^{-1}(u))^2 cell by cell;
    ``analytic`` uses int Phi^{-1} = phi(z_{i-1}) - phi(z_i) on each cell.
    """
    if a.dim != 1:
        raise ShapeError("Gaussian comparison needs n = 1.")
    if not a.uniform:
        raise DomainError("Gaussian comparison needs uniform weights.")
    if sd < 0:
        raise DomainError("sd must be nonnegative.")
    centered = np.sort(a.points[:, 0]) - mean
    if sd == 0:
        return float(np.sqrt(np.mean(centered**2)))

    K = a.size
    if method == "analytic":
        value = (
            np.sum(centered**2) / K
            - 2.0 * sd * centered @ _gaussian_cells(K)
            + sd**2
        )
        return float(np.sqrt(max(value, 0.0)))
    if method != "quadrature":
        raise DomainError(f"Unknown method '{method}'.")

    total = 0.0
    for i, value in enumerate(centered):
        piece, _ = quad(
            lambda u: (value - sd * ndtri(u)) ** 2,
            i / K,
            (i + 1) / K,
            epsabs=QUADRATURE_TOL / K,
            limit=200,
        )
        total += piece
    return float(np.sqrt(total))


def w2_squared_vs_standard_normal(samples: np.ndarray) -> np.ndarray:
    """
    Row-wise W2^2 between the empirical law of each row and N(0, 1).

    Args:
        samples (np.ndarray): (paths, K) draws.

    Returns:
        np.ndarray: (paths,) analytic W2^2 values.
    """
    samples = np.sort(np.asarray(samples, dtype=float), axis=1)
    K = samples.shape[1]
    cells = _gaussian_cells(K)
    value = np.sum(samples**2, axis=1) / K - 2.0 * samples @ cells + 1.0
    return np.maximum(value, 0.0)


def w2_discrete(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """
    W2 between weighted discrete measures.

    On R the quantile coupling is exact; in higher dimension the
    transport linear program is solved with HiGHS.
    """
    if a.dim != b.dim:
        raise ShapeError(f"Dimensions differ: {a.dim} vs {b.dim}.")
    if a.dim == 1:
        order_a = np.argsort(a.points[:, 0], kind="stable")
        order_b = np.argsort(b.points[:, 0], kind="stable")
        xa, wa = a.points[order_a, 0], a.weights[order_a]
        xb, wb = b.points[order_b, 0], b.weights[order_b]
        ca, cb = np.cumsum(wa), np.cumsum(wb)
        levels = np.union1d(ca, cb)
        levels = levels[levels > 0]
        widths = np.diff(np.concatenate([[0.0], levels]))
        ia = np.minimum(np.searchsorted(ca, levels - 0.5 * widths), a.size - 1)
        ib = np.minimum(np.searchsorted(cb, levels - 0.5 * widths), b.size - 1)
        return float(np.sqrt(np.sum(widths * (xa[ia] - xb[ib]) ** 2)))

    cost = cdist(a.points, b.points, metric="sqeuclidean")
    K, L = cost.shape
    rows = np.kron(np.eye(K), np.ones((1, L)))
    cols = np.kron(np.ones((1, K)), np.eye(L))
    result = linprog(
        cost.ravel(),
        A_eq=np.vstack([rows, cols])[:-1],
        b_eq=np.concatenate([a.weights, b.weights])[:-1],
        bounds=(0, None),
        method="highs",
    )
    if not result.success:
        logger.error(f"Transport LP failed: {result.message}")
        raise DomainError(f"Transport LP failed: {result.message}")
    return float(np.sqrt(max(result.fun, 0.0)))
