import logging
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from src.errors import NonConvergenceError
from src.fbsde.drivers import DriverBundle, martingale_parts
from src.lattice.scenario_lattice import AdaptedProcess, ScenarioLattice
from src.model.market import MarketModel, check_adapted
from src.schemas.solver_schemas import SolverConfig

logger = logging.getLogger(__name__)


class PriceTakerSolution(NamedTuple):
    """
    Adjoint system of one agent facing an exogenous price.

    Z0[k] is (nodes, n, d0) and Zij[k] is (nodes, n, N, d), the agent's
    exposure to the common noise and to every agent's noise.
    """

    X: List[np.ndarray]
    Y: List[np.ndarray]
    Z0: List[np.ndarray]
    Zij: List[np.ndarray]
    iterations: int
    residual: float


def forward_agent(
    drivers: DriverBundle,
    agent: int,
    y: Sequence[np.ndarray],
    phi: Sequence[np.ndarray],
    x0: np.ndarray,
) -> List[np.ndarray]:
    """Euler sweep of X^i with alpha_hat(Y^i, phi) + l_i."""
    x = [x0]
    for k in range(drivers.lattice.steps):
        drift = drivers.forward(agent, k, y[k], phi[k])
        x.append(drivers.step(agent, k, x[k], drift))
    return x


def backward_agent(
    drivers: DriverBundle,
    agent: int,
    x: Sequence[np.ndarray],
    phi: Sequence[np.ndarray],
    y_terminal: np.ndarray,
) -> List[np.ndarray]:
    """Y_k = E[Y_{k+1} + d/dx fbar(t_{k+1}, X_{k+1}, phi_{k+1}) dt | node]."""
    lattice = drivers.lattice
    y = [y_terminal]
    for k in range(lattice.steps - 1, -1, -1):
        source = drivers.gradient(agent, k + 1, x[k + 1], phi[k + 1])
        y.append(lattice.cond_expect(y[-1] + source * lattice.dt, k + 1))
    return y[::-1]


def solve_decoupled(
    model: MarketModel,
    lattice: ScenarioLattice,
    agent: int,
    price: Union[AdaptedProcess, Sequence[np.ndarray]],
    config: Optional[SolverConfig] = None,
) -> PriceTakerSolution:
    """
    Solves the adjoint system of a price-taking agent by damped Picard.

    Args:
        model (MarketModel): Market instance.
        lattice (ScenarioLattice): Scenario tree.
        agent (int): Agent index.
        price (AdaptedProcess | list): Price at steps 0..M.
        config (SolverConfig): Damping, tolerance and iteration cap.

    Returns:
        PriceTakerSolution: X, Y and the martingale coefficients.
    """
    config = config or SolverConfig()
    drivers = DriverBundle(model, lattice)
    M = lattice.steps
    phi = check_adapted(price, lattice, M + 1, model.n, "price")
    x0 = model.initial_states(lattice)[:, agent]
    y = [np.zeros((lattice.level_size(k), model.n)) for k in range(M + 1)]
    theta = config.damping
    history: List[float] = []

    for iteration in range(1, config.max_iters + 1):
        x = forward_agent(drivers, agent, y, phi, x0)
        y_terminal = -model.delta * phi[M] + drivers.terminal_gradient(
            agent, x[M]
        )
        y_new = backward_agent(drivers, agent, x, phi, y_terminal)
        residual = max(float(np.max(np.abs(a - b))) for a, b in zip(y_new, y))
        history.append(residual)
        if residual <= config.tol:
            y = y_new
            break
        y = [(1 - theta) * a + theta * b for a, b in zip(y, y_new)]
    else:
        logger.error(
            f"Price-taker solve of agent {agent} stalled at {history[-1]:.3e}"
        )
        raise NonConvergenceError(
            f"Decoupled solve did not reach tol={config.tol} in "
            f"{config.max_iters} iterations.",
            history,
        )

    x = forward_agent(drivers, agent, y, phi, x0)
    z0, zj = martingale_parts(lattice, y)
    logger.info(
        f"Agent {agent} best response converged in {iteration} iterations"
    )
    return PriceTakerSolution(x, y, z0, zj, iteration, history[-1])
