import logging
from abc import ABC, abstractmethod
from typing import Dict, Optional

import numpy as np

from src.errors import UnsupportedFamilyError
from src.schemas.model_schemas import (
    CoefficientSpec,
    LQParams,
    PerturbationParams,
)

logger = logging.getLogger(__name__)


def rectangular_identity(rows: int, cols: int) -> np.ndarray:
    return np.eye(rows, cols)


class CoefficientBundle(ABC):
    """
    Cost, order-flow and volatility coefficients of one agent.

    Every method is vectorized over leading axes: ``x``, ``phi``, ``c0``
    and ``c`` carry the security axis last and broadcast against each
    other; ``t`` is a scalar.
    """

    def __init__(self, n: int, d0: int, d: int):
        self.n = n
        self.d0 = d0
        self.d = d

    @abstractmethod
    def dfdx(self, t, x, phi, c0, c) -> np.ndarray: ...

    @abstractmethod
    def dgdx(self, x, c0, c) -> np.ndarray: ...

    @abstractmethod
    def flow(self, t, v, c0, c) -> np.ndarray: ...

    @abstractmethod
    def vol0(self, t, c0, c) -> np.ndarray: ...

    @abstractmethod
    def vol(self, t, c0, c) -> np.ndarray: ...

    @abstractmethod
    def fbar(self, t, x, phi, c0, c) -> np.ndarray: ...

    @abstractmethod
    def gbar(self, x, c0, c) -> np.ndarray: ...

    @property
    @abstractmethod
    def gamma_f(self) -> float: ...

    @property
    @abstractmethod
    def gamma_g(self) -> float: ...

    @property
    @abstractmethod
    def gamma_l(self) -> float: ...

    @property
    @abstractmethod
    def L(self) -> float: ...

    @property
    @abstractmethod
    def L_phi(self) -> float: ...

    def gamma(self) -> float:
        """Largest gamma compatible with the price Lipschitz constant."""
        if self.gamma_l <= 0:
            return float("-inf")
        return min(
            self.gamma_f - self.L_phi**2 / (4.0 * self.gamma_l),
            self.gamma_g,
        )

    @abstractmethod
    def to_spec(self) -> CoefficientSpec: ...


class LQBundle(CoefficientBundle):
    def __init__(self, params: LQParams, n: int = 1, d0: int = 1, d: int = 1):
        """
        Quadratic costs, affine order flow and constant volatilities.

        Args:
            params (LQParams): Curvatures, volatilities and flow level.
            n (int): Number of securities.
            d0 (int): Common-noise dimension.
            d (int): Idiosyncratic-noise dimension.
        """
        super().__init__(n, d0, d)
        self.params = params
        self._sigma0 = params.sigma0 * rectangular_identity(n, d0)
        self._sigma = params.sigma * rectangular_identity(n, d)

    def dfdx(self, t, x, phi, c0, c):
        return self.params.gamma_f * np.asarray(x, dtype=float)

    def dgdx(self, x, c0, c):
        return self.params.gamma_g * np.asarray(x, dtype=float)

    def flow(self, t, v, c0, c):
        v = np.asarray(v, dtype=float)
        return self.params.gamma_l * v + self.params.l0

    def vol0(self, t, c0, c):
        return self._sigma0

    def vol(self, t, c0, c):
        return self._sigma

    def fbar(self, t, x, phi, c0, c):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.params.gamma_f * np.sum(x * x, axis=-1)

    def gbar(self, x, c0, c):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.params.gamma_g * np.sum(x * x, axis=-1)

    @property
    def gamma_f(self) -> float:
        return self.params.gamma_f

    @property
    def gamma_g(self) -> float:
        return self.params.gamma_g

    @property
    def gamma_l(self) -> float:
        return self.params.gamma_l

    def _bound_terms(self) -> Dict[str, float]:
        p = self.params
        vol_norm = float(
            np.linalg.norm(self._sigma0) + np.linalg.norm(self._sigma)
        )
        return {
            "cost_growth": 0.5 * (abs(p.gamma_f) + abs(p.gamma_g)),
            "gradient_lipschitz": abs(p.gamma_f) + abs(p.gamma_g),
            "flow_slope": abs(p.gamma_l),
            "flow_level": np.sqrt(self.n) * abs(p.l0) + vol_norm,
        }

    @property
    def L(self) -> float:
        return float(max(self._bound_terms().values()))

    @property
    def L_phi(self) -> float:
        return abs(self.params.gamma_l)

    def to_spec(self) -> CoefficientSpec:
        return CoefficientSpec(family="lq", lq=self.params)


class PerturbedLQBundle(LQBundle):
    """LQ plus log cosh costs, a tanh flow term and a price coupling."""

    def __init__(
        self,
        params: LQParams,
        perturbation: PerturbationParams,
        n: int = 1,
        d0: int = 1,
        d: int = 1,
    ):
        super().__init__(params, n, d0, d)
        self.perturbation = perturbation

    def dfdx(self, t, x, phi, c0, c):
        p = self.perturbation
        x = np.asarray(x, dtype=float)
        return (
            super().dfdx(t, x, phi, c0, c)
            + p.epsilon_f * np.tanh(x)
            + p.rho * np.asarray(phi, dtype=float)
        )

    def dgdx(self, x, c0, c):
        x = np.asarray(x, dtype=float)
        return super().dgdx(x, c0, c) + self.perturbation.epsilon_g * np.tanh(
            x
        )

    def flow(self, t, v, c0, c):
        p = self.perturbation
        v = np.asarray(v, dtype=float)
        return (
            super().flow(t, v, c0, c)
            + p.kappa * np.tanh(v)
            + p.flow_loading * (np.asarray(c0) + np.asarray(c))
        )

    def fbar(self, t, x, phi, c0, c):
        p = self.perturbation
        x = np.asarray(x, dtype=float)
        return (
            super().fbar(t, x, phi, c0, c)
            + p.epsilon_f * np.sum(_log_cosh(x), axis=-1)
            + p.rho * np.sum(x * np.asarray(phi, dtype=float), axis=-1)
        )

    def gbar(self, x, c0, c):
        x = np.asarray(x, dtype=float)
        return super().gbar(x, c0, c) + self.perturbation.epsilon_g * np.sum(
            _log_cosh(x), axis=-1
        )

    def _bound_terms(self) -> Dict[str, float]:
        p = self.perturbation
        terms = super()._bound_terms()
        root_n = np.sqrt(self.n)
        eps = p.epsilon_f + p.epsilon_g
        terms["cost_growth"] += 0.5 * (root_n * eps + abs(p.rho))
        terms["gradient_lipschitz"] += eps
        terms["gradient_level"] = root_n * eps
        terms["price_coupling"] = abs(p.rho)
        terms["flow_level"] += root_n * p.kappa
        terms["flow_loading"] = abs(p.flow_loading)
        return terms

    @property
    def L_phi(self) -> float:
        p = self.perturbation
        return abs(self.params.gamma_l) + p.kappa + abs(p.rho)

    def to_spec(self) -> CoefficientSpec:
        return CoefficientSpec(
            family="perturbed", lq=self.params, perturbation=self.perturbation
        )


def _log_cosh(x: np.ndarray) -> np.ndarray:
    # stable for large |x|
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def bundle_from_spec(
    spec: CoefficientSpec, n: int, d0: int, d: int
) -> CoefficientBundle:
    if spec.family == "lq":
        return LQBundle(spec.lq, n, d0, d)
    if spec.family == "perturbed":
        perturbation = spec.perturbation or PerturbationParams()
        return PerturbedLQBundle(spec.lq, perturbation, n, d0, d)
    logger.error(f"Unknown coefficient family {spec.family}")
    raise UnsupportedFamilyError(f"Unknown coefficient family {spec.family}")


def analytic_margins(bundle: CoefficientBundle) -> Dict[str, float]:
    """Exact margins of the built-in families, no sampling."""
    if not isinstance(bundle, LQBundle):
        raise UnsupportedFamilyError(
            "Analytic margins need a built-in family."
        )
    margins: Dict[str, float] = {
        "convexity_f": bundle.gamma_f,
        "convexity_g": bundle.gamma_g,
        "flow_monotonicity": bundle.gamma_l,
        "gamma_compatibility": bundle.gamma(),
    }
    perturbation: Optional[PerturbationParams] = getattr(
        bundle, "perturbation", None
    )
    if perturbation is not None:
        # log cosh and tanh only add curvature and monotonicity
        margins["perturbation_weights"] = min(
            perturbation.epsilon_f, perturbation.epsilon_g, perturbation.kappa
        )
    return margins
