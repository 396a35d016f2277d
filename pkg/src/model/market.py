import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import AdaptednessError, InvalidModelError
from src.lattice.scenario_lattice import (
    AdaptedProcess,
    ScenarioLattice,
    build_lattice,
)
from src.model.coefficients import (
    CoefficientBundle,
    bundle_from_spec,
    rectangular_identity,
)
from src.schemas.model_schemas import (
    CoefficientSpec,
    ExogenousSpec,
    InitialLawSpec,
    LQParams,
    MarketModelSpec,
    PerturbationParams,
)

logger = logging.getLogger(__name__)

ProcessLike = Union[AdaptedProcess, Sequence[np.ndarray]]

SHARED_FIELDS = ("lam", "delta", "T", "m0", "s0")
MULTIPLICATIVE_FIELDS = ("gamma_f", "gamma_g", "gamma_l", "sigma0", "sigma")
ADDITIVE_FIELDS = ("l0",)


@dataclass(frozen=True)
class InitialLaw:
    family: str
    mean: np.ndarray
    scale: float


class MarketModel:
    def __init__(self, spec: MarketModelSpec):
        """
        Market instance built from a validated JSON document.

        The horizon, discount, fee and initial law come from the base
        coefficient bundle; per-agent bundles may only change the cost,
        flow and volatility parameters.

        Args:
            spec (MarketModelSpec): The model document.

        Raises:
            InvalidModelError: If the document violates a model invariant.
        """
        self.spec = spec
        self.n = spec.n
        self.d0 = spec.d0
        self.d = spec.d
        self.N = spec.N
        base = spec.coefficients.lq
        self.T = base.T
        self.delta = base.delta

        if not 0.0 <= self.delta < 1.0:
            logger.error(f"Terminal discount {self.delta} outside [0, 1)")
            raise InvalidModelError("delta must satisfy 0 <= delta < 1.")

        if spec.Lambda is None:
            Lambda = base.lam * np.eye(self.n)
        else:
            Lambda = np.asarray(spec.Lambda, dtype=float)
        if Lambda.shape != (self.n, self.n):
            raise InvalidModelError(
                f"Lambda must be {self.n}x{self.n}, got {Lambda.shape}."
            )
        if not np.array_equal(Lambda, Lambda.T):
            raise InvalidModelError("Lambda must be symmetric.")
        eigenvalues = np.linalg.eigvalsh(Lambda)
        if eigenvalues[0] <= 0.0:
            logger.error(f"Fee matrix eigenvalues {eigenvalues}")
            raise InvalidModelError("Lambda must be positive definite.")
        self.Lambda = Lambda
        self.Lambda_inv = np.linalg.inv(Lambda)
        self.lambda_min = float(eigenvalues[0])
        self.lambda_max = float(eigenvalues[-1])

        agent_specs = spec.agents or [spec.coefficients] * self.N
        if len(agent_specs) != self.N:
            raise InvalidModelError(
                f"Got {len(agent_specs)} agent bundles for N={self.N}."
            )
        for i, agent_spec in enumerate(agent_specs):
            for field in SHARED_FIELDS:
                if getattr(agent_spec.lq, field) != getattr(base, field):
                    raise InvalidModelError(
                        f"Agent {i} changes the shared parameter '{field}'."
                    )
        self.agent_specs: List[CoefficientSpec] = list(agent_specs)
        self.agents: List[CoefficientBundle] = [
            bundle_from_spec(s, self.n, self.d0, self.d)
            for s in self.agent_specs
        ]
        self.initial_law = InitialLaw(
            family=spec.initial_law.family,
            mean=base.m0 * np.ones(self.n),
            scale=base.s0,
        )
        self.exogenous = spec.exogenous

    @property
    def homogeneous(self) -> bool:
        return all(s == self.agent_specs[0] for s in self.agent_specs)

    def representative(self) -> "MarketModel":
        """One-agent copy used by the mean-field solver."""
        if not self.homogeneous:
            raise InvalidModelError(
                "The mean-field limit needs homogeneous agents."
            )
        spec = self.spec.model_copy(
            update={
                "N": 1,
                "agents": None,
                "coefficients": self.agent_specs[0],
            }
        )
        return MarketModel(spec)

    def with_agents(self, N: int) -> "MarketModel":
        if not self.homogeneous:
            raise InvalidModelError("Only homogeneous models can be resized.")
        spec = self.spec.model_copy(
            update={
                "N": N,
                "agents": None,
                "coefficients": self.agent_specs[0],
            }
        )
        return MarketModel(spec)

    def build_lattice(
        self, M: int, node_limit: Optional[int] = None
    ) -> ScenarioLattice:
        initial_bits = 1 if self.initial_law.scale > 0 else 0
        return build_lattice(
            M, self.N, self.d0, self.d, self.T, initial_bits, node_limit
        )

    def check_lattice(self, lattice: ScenarioLattice) -> None:
        if (
            lattice.n_agents != self.N
            or lattice.d0 != self.d0
            or lattice.d != self.d
            or lattice.horizon != self.T
        ):
            raise InvalidModelError(
                "Lattice dimensions or horizon do not match the model."
            )

    def initial_states(self, lattice: ScenarioLattice) -> np.ndarray:
        return lattice.initial_states(
            self.initial_law.mean, self.initial_law.scale
        )

    def exogenous_paths(
        self, lattice: ScenarioLattice
    ) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(c0, c) at every step; c0 is (nodes, n), c is (nodes, N, n)."""
        ex: ExogenousSpec = self.exogenous
        common_map = rectangular_identity(self.n, self.d0).T
        own_map = rectangular_identity(self.n, self.d).T
        paths = []
        for k in range(lattice.steps + 1):
            w = lattice.brownian(k)
            w0 = w[:, : self.d0]
            wi = w[:, self.d0 :].reshape(w.shape[0], self.N, self.d)
            c0 = ex.c0_level + ex.c0_slope * (w0 @ common_map)
            c = ex.c_level + ex.c_slope * (wi @ own_map)
            paths.append((c0, c))
        return paths

    def rate(self, y: np.ndarray, phi: np.ndarray) -> np.ndarray:
        return -(y + phi) @ self.Lambda_inv.T

    def drift(self, agent, t, y, phi, c0, c) -> np.ndarray:
        """alpha_hat(y, phi) + l_i(t, phi, c0, c)."""
        return self.rate(y, phi) + self.agents[agent].flow(t, phi, c0, c)

    def euler_step(
        self,
        lattice: ScenarioLattice,
        agent: int,
        step: int,
        x: np.ndarray,
        drift: np.ndarray,
        exo: List[Tuple[np.ndarray, np.ndarray]],
    ) -> np.ndarray:
        """X at step k+1 from X_k and the step-k drift of one agent."""
        bundle = self.agents[agent]
        t = lattice.times[step]
        c0, c = exo[step]
        c0 = lattice.expand(c0)
        c = lattice.expand(c[:, agent])
        x_next = lattice.expand(x + drift * lattice.dt)
        dw0 = lattice.common_increments(step + 1)
        dw = lattice.agent_increments(step + 1)[:, agent]
        if self.d0:
            x_next = x_next + (bundle.vol0(t, c0, c) @ dw0[..., None])[..., 0]
        if self.d:
            x_next = x_next + (bundle.vol(t, c0, c) @ dw[..., None])[..., 0]
        return x_next

    def terminal_gradients(
        self, x: np.ndarray, c0: np.ndarray, c: np.ndarray
    ) -> np.ndarray:
        """d/dx gbar_i(X_T^i) for all agents, x is (nodes, N, n)."""
        return np.stack(
            [
                bundle.dgdx(x[:, i], c0, c[:, i])
                for i, bundle in enumerate(self.agents)
            ],
            axis=1,
        )

    def to_json(self) -> str:
        return self.spec.model_dump_json(by_alias=True, indent=2)

    @classmethod
    def from_json(cls, document: str) -> "MarketModel":
        return cls(MarketModelSpec.model_validate_json(document))


def optimal_rate(
    y: np.ndarray, phi: np.ndarray, Lambda: np.ndarray
) -> np.ndarray:
    """Minimizer -Lambda^{-1}(y + phi) of the Hamiltonian in the rate."""
    s = np.asarray(y, dtype=float) + np.asarray(phi, dtype=float)
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    flat = s.reshape(-1, Lambda.shape[0])
    return -np.linalg.solve(Lambda, flat.T).T.reshape(s.shape)


def terminal_map(g_values: np.ndarray, delta: float) -> np.ndarray:
    """
    Terminal adjoints solving Y_T^i = delta * mean_j Y_T^j + dgbar_i.

    Args:
        g_values (np.ndarray): Terminal gradients, agents on axis -2.
        delta (float): Terminal discount in [0, 1).

    Returns:
        np.ndarray: Y_T with the same shape as ``g_values``.
    """
    if not 0.0 <= delta < 1.0:
        logger.error(f"terminal_map called with delta={delta}")
        raise InvalidModelError("delta must satisfy 0 <= delta < 1.")
    g_values = np.asarray(g_values, dtype=float)
    mean = g_values.mean(axis=-2, keepdims=True)
    return g_values + delta / (1.0 - delta) * mean


def _levels(path: ProcessLike) -> List[np.ndarray]:
    if isinstance(path, AdaptedProcess):
        return path.values
    return [np.asarray(level, dtype=float) for level in path]


def check_adapted(
    path: ProcessLike,
    lattice: ScenarioLattice,
    steps: int,
    width: int,
    name: str,
) -> List[np.ndarray]:
    """Shape and measurability check of a node-indexed process."""
    levels = _levels(path)
    if len(levels) < steps:
        raise AdaptednessError(
            f"{name} has {len(levels)} steps, needs {steps}."
        )
    for k in range(steps):
        expected = (lattice.level_size(k), width)
        if levels[k].shape != expected:
            raise AdaptednessError(
                f"{name} at step {k} has shape {levels[k].shape}, "
                f"expected {expected} (one value per node)."
            )
        if not np.all(np.isfinite(levels[k])):
            raise AdaptednessError(f"{name} is not finite at step {k}.")
    if isinstance(path, AdaptedProcess) and path.tag == "common":
        for k in range(steps):
            lattice.check_common(levels[k], k, atol=1e-12)
    return levels[:steps]


def evaluate_cost(
    model: MarketModel,
    lattice: ScenarioLattice,
    agent: int,
    alpha_path: ProcessLike,
    price_path: ProcessLike,
) -> float:
    """
    Expected cost of one agent computed exactly on the lattice.

    Running terms <phi, alpha> + alpha.Lambda.alpha / 2 use left points,
    fbar uses right points and the terminal mark-to-market is
    -delta <phi_T, X_T> + gbar(X_T).

    Args:
        model (MarketModel): Market instance.
        lattice (ScenarioLattice): Scenario tree carrying the noise.
        agent (int): Agent index.
        alpha_path (ProcessLike): Trading rate at steps 0..M-1.
        price_path (ProcessLike): Price at steps 0..M.

    Returns:
        float: J^i(alpha).
    """
    model.check_lattice(lattice)
    M = lattice.steps
    alpha = check_adapted(alpha_path, lattice, M, model.n, "alpha_path")
    phi = check_adapted(price_path, lattice, M + 1, model.n, "price_path")
    bundle = model.agents[agent]
    exo = model.exogenous_paths(lattice)
    dt = lattice.dt

    x = model.initial_states(lattice)[:, agent]
    cost = 0.0
    for k in range(M):
        c0, c = exo[k]
        a = alpha[k]
        running = np.sum(phi[k] * a, axis=-1) + 0.5 * np.sum(
            a * (a @ model.Lambda.T), axis=-1
        )
        cost += float(lattice.expectation(running, k)) * dt
        drift = a + bundle.flow(lattice.times[k], phi[k], c0, c[:, agent])
        x = model.euler_step(lattice, agent, k, x, drift, exo)
        c0, c = exo[k + 1]
        f = bundle.fbar(lattice.times[k + 1], x, phi[k + 1], c0, c[:, agent])
        cost += float(lattice.expectation(f, k + 1)) * dt

    c0, c = exo[M]
    terminal = -model.delta * np.sum(phi[M] * x, axis=-1) + bundle.gbar(
        x, c0, c[:, agent]
    )
    return cost + float(lattice.expectation(terminal, M))


def lq_market(
    params: LQParams,
    N: int,
    n: int = 1,
    d0: int = 1,
    d: int = 1,
    perturbation: Optional[PerturbationParams] = None,
    exogenous: Optional[ExogenousSpec] = None,
    initial_family: str = "gaussian",
) -> MarketModel:
    family = "lq" if perturbation is None else "perturbed"
    spec = MarketModelSpec(
        n=n,
        d0=d0,
        d=d,
        N=N,
        coefficients=CoefficientSpec(
            family=family, lq=params, perturbation=perturbation
        ),
        initial_law=InitialLawSpec(family=initial_family),
        exogenous=exogenous or ExogenousSpec(),
    )
    return MarketModel(spec)


def heterogeneous_model(
    model: MarketModel, etas: Sequence[float], field: str = "gamma_f"
) -> MarketModel:
    """
    Per-agent perturbation of a base bundle.

    Curvature and volatility fields scale as value * (1 + eta_i); the
    flow level l0 shifts as l0 + eta_i.
    """
    if len(etas) != model.N:
        raise InvalidModelError(
            f"Need {model.N} perturbations, got {len(etas)}."
        )
    if field not in MULTIPLICATIVE_FIELDS + ADDITIVE_FIELDS:
        raise InvalidModelError(f"Field '{field}' cannot be perturbed.")
    agents = []
    for spec, eta in zip(model.agent_specs, etas):
        value = getattr(spec.lq, field)
        new = value + eta if field in ADDITIVE_FIELDS else value * (1 + eta)
        lq = spec.lq.model_copy(update={field: new})
        agents.append(spec.model_copy(update={"lq": lq}))
    return MarketModel(model.spec.model_copy(update={"agents": agents}))
