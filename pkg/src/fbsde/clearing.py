import logging
from typing import List, Optional, Sequence

import numpy as np

from src.fbsde.equilibrium import EquilibriumSolution
from src.lattice.scenario_lattice import ScenarioLattice
from src.model.market import MarketModel, check_adapted

logger = logging.getLogger(__name__)


def total_rates(
    solution: EquilibriumSolution,
    model: MarketModel,
    lattice: ScenarioLattice,
    price: Optional[Sequence[np.ndarray]] = None,
) -> List[np.ndarray]:
    """Sum over agents of alpha_hat(Y^i, phi) per node, shape (nodes, n)."""
    steps = lattice.steps + 1
    if price is None:
        phi = solution.phi.values
    else:
        phi = check_adapted(price, lattice, steps, model.n, "price")
    return [
        model.rate(y, p[:, None, :]).sum(axis=1)
        for y, p in zip(solution.Y.values, phi)
    ]


def clearing_residual(
    solution: EquilibriumSolution,
    model: MarketModel,
    lattice: ScenarioLattice,
    price: Optional[Sequence[np.ndarray]] = None,
) -> List[np.ndarray]:
    """
    Per-node norm |sum_i alpha_hat(Y^i, phi)| of the aggregate trade.

    Args:
        solution (EquilibriumSolution): Solver output.
        model (MarketModel): Market instance.
        lattice (ScenarioLattice): Lattice the solution lives on.
        price (list): Optional replacement price, steps 0..M.

    Returns:
        list: One (nodes,) array per step.
    """
    residual = [
        np.linalg.norm(rate, axis=-1)
        for rate in total_rates(solution, model, lattice, price)
    ]
    worst = max(float(np.max(level)) for level in residual)
    logger.info(f"Max clearing residual {worst:.3e}")
    return residual


def clearing_l2_norm(
    residual: Sequence[np.ndarray], lattice: ScenarioLattice
) -> float:
    """(dt * sum_k E|r_k|^2)^(1/2) over steps 0..M."""
    total = sum(
        float(lattice.expectation(np.asarray(level) ** 2, k))
        for k, level in enumerate(residual)
    )
    return float(np.sqrt(lattice.dt * total))
