import logging
from typing import Iterable, NamedTuple, Tuple

import numpy as np

from src.errors import DomainError

logger = logging.getLogger(__name__)

MOMENT_ORDER = 8


class LogLogFit(NamedTuple):
    slope: float
    intercept: float
    residual: float


def epsilon_N(n: int, N: int) -> float:
    """
    Empirical-measure rate N^(-2 / max(n, 4)), times 1 + log N when n = 4.
    """
    if n < 1 or N < 2:
        raise DomainError("epsilon_N needs n >= 1 and N >= 2.")
    value = float(N) ** (-2.0 / max(n, 4))
    if n == 4:
        value *= 1.0 + np.log(N)
    return float(value)


def fit_loglog_slope(pairs: Iterable[Tuple[float, float]]) -> LogLogFit:
    """
    Least-squares line through (log N, log value).

    Args:
        pairs (iterable): (N, value) pairs, at least three.

    Returns:
        LogLogFit: Slope, intercept and root-mean-square residual.

    Raises:
        DomainError: On fewer than three points or a nonpositive entry.
    """
    data = np.asarray(list(pairs), dtype=float)
    if data.ndim != 2 or data.shape[0] < 3:
        raise DomainError("A log-log fit needs at least three points.")
    if np.any(data <= 0):
        logger.error(f"Nonpositive entry in log-log data {data.tolist()}")
        raise DomainError("Log-log fits need positive N and values.")
    x, y = np.log(data[:, 0]), np.log(data[:, 1])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.sqrt(np.mean((design @ [slope, intercept] - y) ** 2)))
    return LogLogFit(float(slope), float(intercept), residual)


def moment_bound(samples: np.ndarray, q: int = MOMENT_ORDER) -> float:
    """Empirical E|x|^q over samples with the state axis last."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    radii = np.linalg.norm(samples.reshape(-1, samples.shape[-1]), axis=1)
    return float(np.mean(radii**q))
