import logging
from typing import List, Tuple

import numpy as np

from src.lattice.scenario_lattice import ScenarioLattice
from src.model.market import MarketModel, terminal_map

logger = logging.getLogger(__name__)


class DriverBundle:
    """
    Forward drift B_i, backward driver F_i and terminal map G_i of the
    coupled system, evaluated node-wise on one lattice.
    """

    def __init__(self, model: MarketModel, lattice: ScenarioLattice):
        model.check_lattice(lattice)
        self.model = model
        self.lattice = lattice
        self.exo: List[Tuple[np.ndarray, np.ndarray]] = model.exogenous_paths(
            lattice
        )

    @staticmethod
    def price(y: np.ndarray) -> np.ndarray:
        """phi = -m(mu), agents on axis 1."""
        return -y.mean(axis=1)

    def forward(
        self, agent: int, step: int, y: np.ndarray, phi: np.ndarray
    ) -> np.ndarray:
        c0, c = self.exo[step]
        return self.model.drift(
            agent, self.lattice.times[step], y, phi, c0, c[:, agent]
        )

    def gradient(
        self, agent: int, step: int, x: np.ndarray, phi: np.ndarray
    ) -> np.ndarray:
        """d/dx fbar_i, i.e. -F_i."""
        c0, c = self.exo[step]
        return self.model.agents[agent].dfdx(
            self.lattice.times[step], x, phi, c0, c[:, agent]
        )

    def terminal(self, x: np.ndarray) -> np.ndarray:
        """G_i for all agents, x is (nodes, N, n)."""
        c0, c = self.exo[self.lattice.steps]
        return terminal_map(
            self.model.terminal_gradients(x, c0, c), self.model.delta
        )

    def terminal_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        c0, c = self.exo[self.lattice.steps]
        return self.model.agents[agent].dgdx(x, c0, c[:, agent])

    def step(
        self, agent: int, step: int, x: np.ndarray, drift: np.ndarray
    ) -> np.ndarray:
        return self.model.euler_step(
            self.lattice, agent, step, x, drift, self.exo
        )


def split_coefficients(
    lattice: ScenarioLattice, z: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split Z along the noise axis into the common block (..., d0) and the
    per-agent blocks (..., N, d).
    """
    z0 = z[..., : lattice.d0]
    zj = z[..., lattice.d0 :].reshape(
        z.shape[:-1] + (lattice.n_agents, lattice.d)
    )
    return z0, zj


def martingale_parts(
    lattice: ScenarioLattice, levels: List[np.ndarray]
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    z0_levels, zj_levels = [], []
    for k in range(lattice.steps):
        z = lattice.martingale_coefficients(levels[k + 1], k + 1)
        z0, zj = split_coefficients(lattice, z)
        z0_levels.append(z0)
        zj_levels.append(zj)
    return z0_levels, zj_levels
