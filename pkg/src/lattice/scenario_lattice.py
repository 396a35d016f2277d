import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.errors import AdaptednessError, CapacityError, ShapeError

logger = logging.getLogger(__name__)

NODE_LIMIT = 2**24


@dataclass
class AdaptedProcess:
    """Node values per step; ``values[k]`` has the step-k nodes on axis 0."""

    values: List[np.ndarray]
    tag: str = "full"

    def __post_init__(self):
        if self.tag not in ("full", "common"):
            raise ShapeError(f"Unknown adaptedness tag: {self.tag}")

    def at(self, step: int) -> np.ndarray:
        return self.values[step]

    @property
    def steps(self) -> int:
        return len(self.values) - 1


class ScenarioLattice:
    def __init__(
        self,
        steps: int,
        n_agents: int,
        d0: int,
        d: int,
        horizon: float,
        initial_bits: int = 0,
        node_limit: int = NODE_LIMIT,
    ):
        """
        Binary scenario tree over the common and idiosyncratic noise.

        Every Brownian coordinate moves by +-sqrt(dt) with probability 1/2
        per step. Nodes of step k are stored flat; the children of node j
        are ``j * branching + digit`` where bit r of the digit is the sign
        of coordinate r. Coordinates 0..d0-1 are common, agent i owns
        coordinates d0 + i*d .. d0 + (i+1)*d - 1.

        Args:
            steps (int): Number of time steps M.
            n_agents (int): Number of agents N.
            d0 (int): Common-noise dimension.
            d (int): Idiosyncratic-noise dimension per agent.
            horizon (float): Horizon T.
            initial_bits (int): 1 adds a two-point initial-law layer with
                one independent bit per agent at t = 0, 0 keeps a single
                root.
            node_limit (int): Size guard on the total node count.
        """
        if not isinstance(steps, int) or steps < 1:
            raise ShapeError("steps must be a positive integer.")
        if n_agents < 1 or d0 < 0 or d < 0:
            raise ShapeError("Need N >= 1, d0 >= 0 and d >= 0.")
        if horizon <= 0:
            raise ShapeError("horizon must be positive.")
        if initial_bits not in (0, 1):
            raise ShapeError("initial_bits must be 0 or 1.")

        self.steps = steps
        self.n_agents = n_agents
        self.d0 = d0
        self.d = d
        self.horizon = float(horizon)
        self.initial_bits = initial_bits
        self.dt = self.horizon / steps
        if self.dt == 0.0:
            raise ShapeError("Time step vanished.")
        self.noise_dim = d0 + n_agents * d
        self.branching = 2**self.noise_dim
        self.initial_branching = 2 ** (n_agents * initial_bits)

        total = sum(self.level_size(k) for k in range(steps + 1))
        if total > node_limit:
            logger.error(f"Lattice needs {total} nodes, limit {node_limit}")
            raise CapacityError(
                f"Lattice would hold {total} nodes, above the limit "
                f"{node_limit} (M={steps}, N={n_agents}, d0={d0}, d={d})."
            )
        self.total_nodes = total
        self.times = np.linspace(0.0, self.horizon, steps + 1)

        digits = np.arange(self.branching)
        bits = (digits[:, None] >> np.arange(self.noise_dim)) & 1
        self.increments = (2.0 * bits - 1.0) * np.sqrt(self.dt)

        init = np.arange(self.initial_branching)
        init_bits = (init[:, None] >> np.arange(n_agents)) & 1
        if initial_bits:
            self.initial_signs = 2.0 * init_bits - 1.0
        else:
            self.initial_signs = np.zeros((1, n_agents))

        self._brownian: List[np.ndarray] = []
        self._common_keys: List[np.ndarray] = []
        self._common_order: Dict[int, np.ndarray] = {}
        logger.info(
            f"Built lattice M={steps} N={n_agents} b={self.branching} "
            f"with {total} nodes"
        )

    def level_size(self, step: int) -> int:
        return self.initial_branching * self.branching**step

    def probability(self, step: int) -> float:
        return 1.0 / self.level_size(step)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Copy step-k node values onto their children at step k+1."""
        return np.repeat(values, self.branching, axis=0)

    def parents(self, step: int) -> np.ndarray:
        return np.arange(self.level_size(step)) // self.branching

    def increments_at(self, step: int) -> np.ndarray:
        """Increments leading into the step-k nodes, shape (nodes, D)."""
        if step < 1 or step > self.steps:
            raise ShapeError(f"No increments lead into step {step}.")
        return np.tile(self.increments, (self.level_size(step - 1), 1))

    def common_increments(self, step: int) -> np.ndarray:
        return self.increments_at(step)[:, : self.d0]

    def agent_increments(self, step: int) -> np.ndarray:
        increments = self.increments_at(step)[:, self.d0 :]
        return increments.reshape(increments.shape[0], self.n_agents, self.d)

    def brownian(self, step: int) -> np.ndarray:
        """Cumulative noise W_{t_k} at every step-k node, shape (nodes, D)."""
        if not self._brownian:
            level = np.zeros((self.level_size(0), self.noise_dim))
            self._brownian.append(level)
            for k in range(1, self.steps + 1):
                level = self.expand(level) + self.increments_at(k)
                self._brownian.append(level)
        return self._brownian[step]

    def common_keys(self, step: int) -> np.ndarray:
        """Integer label of the common-noise prefix of every step-k node."""
        if not self._common_keys:
            keys = np.zeros(self.level_size(0), dtype=np.int64)
            self._common_keys.append(keys)
            mask = 2**self.d0 - 1
            digits = np.arange(self.branching, dtype=np.int64) & mask
            for k in range(1, self.steps + 1):
                keys = self.expand(keys) * 2**self.d0 + np.tile(
                    digits, self.level_size(k - 1)
                )
                self._common_keys.append(keys)
        return self._common_keys[step]

    def common_groups(self, step: int) -> int:
        return 2 ** (self.d0 * step)

    def _check_level(self, values: np.ndarray, step: int) -> None:
        if step < 0 or step > self.steps:
            raise ShapeError(f"Step {step} outside 0..{self.steps}.")
        if values.shape[0] != self.level_size(step):
            raise ShapeError(
                f"Expected {self.level_size(step)} nodes at step {step}, "
                f"got {values.shape[0]}."
            )

    def cond_expect(self, values: np.ndarray, step: int) -> np.ndarray:
        """
        Exact E[. | node] of step-(k+1) values onto the step-k nodes.

        Args:
            values (np.ndarray): Values at step ``step``, nodes on axis 0.
            step (int): Step k+1 the values live at, must be >= 1.

        Returns:
            np.ndarray: Values at step k.
        """
        self._check_level(values, step)
        if step == 0:
            raise ShapeError("Step 0 has no parent step.")
        grouped = values.reshape(
            (self.level_size(step - 1), self.branching) + values.shape[1:]
        )
        return grouped.mean(axis=1)

    def cond_expect_common(self, values: np.ndarray, step: int) -> np.ndarray:
        """
        Average over all step-k nodes sharing a common-noise prefix.

        The result has the same node layout as the input and is constant
        on every common group.
        """
        self._check_level(values, step)
        keys = self.common_keys(step)
        if step not in self._common_order:
            self._common_order[step] = np.argsort(keys, kind="stable")
        order = self._common_order[step]
        groups = self.common_groups(step)
        sorted_values = values[order].reshape(
            (groups, -1) + values.shape[1:]
        )
        return sorted_values.mean(axis=1)[keys]

    def common_values(self, values: np.ndarray, step: int) -> np.ndarray:
        """One value per common prefix, indexed by the prefix key."""
        self._check_level(values, step)
        keys = self.common_keys(step)
        _, first = np.unique(keys, return_index=True)
        return values[first]

    def check_common(
        self, values: np.ndarray, step: int, atol: float = 0.0
    ) -> None:
        """Raise if ``values`` varies inside a common-noise group."""
        spread = np.max(
            np.abs(values - self.cond_expect_common(values, step)),
            initial=0.0,
        )
        if spread > atol:
            raise AdaptednessError(
                f"Common-tagged process varies by {spread} within a "
                f"common-noise group at step {step}."
            )

    def martingale_coefficients(
        self, values: np.ndarray, step: int
    ) -> np.ndarray:
        """
        Z_k[coord] = E[V_{k+1} dW_coord | node] / dt on the step-k nodes.

        The coefficient axis is appended last. The reconstruction
        V_{k+1} = E_k V_{k+1} + sum_coord Z_k dW_coord is exact when the
        noise dimension is one or V_{k+1} is affine in the increments;
        otherwise a remainder orthogonal to every increment is left over.
        """
        self._check_level(values, step)
        if step == 0:
            raise ShapeError("Step 0 has no parent step.")
        grouped = values.reshape(
            (self.level_size(step - 1), self.branching) + values.shape[1:]
        )
        moved = np.moveaxis(grouped, 1, -1)
        return moved @ self.increments / (self.branching * self.dt)

    def reconstruct(
        self, z: np.ndarray, mean: np.ndarray, step: int
    ) -> np.ndarray:
        """Rebuild step-k values from E_{k-1} and the Z coefficients."""
        self._check_level(mean, step - 1)
        expanded = self.expand(z)
        noise = self.increments_at(step)
        shape = (noise.shape[0],) + (1,) * (expanded.ndim - 2)
        noise = noise.reshape(shape + (self.noise_dim,))
        return self.expand(mean) + np.sum(expanded * noise, axis=-1)

    def expectation(self, values: np.ndarray, step: int) -> np.ndarray:
        self._check_level(values, step)
        return values.mean(axis=0)

    def running_max(self, levels: List[np.ndarray]) -> np.ndarray:
        """Pathwise max over steps 0..M, returned on the leaves."""
        best = levels[0]
        for k in range(1, len(levels)):
            best = np.maximum(self.expand(best), levels[k])
        return best

    def initial_states(self, mean: np.ndarray, scale: float) -> np.ndarray:
        """Initial positions xi^i = m0 +- s0 per agent, shape (L0, N, n)."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if scale > 0 and not self.initial_bits:
            raise ShapeError(
                "A random initial position needs a lattice built with "
                "initial_bits=1."
            )
        return mean + scale * self.initial_signs[:, :, None] * np.ones_like(
            mean
        )

    def compatible_with(self, other: "ScenarioLattice") -> bool:
        """Same grid, noise dimensions and initial layer."""
        return (
            self.steps == other.steps
            and self.horizon == other.horizon
            and self.d0 == other.d0
            and self.d == other.d
            and self.initial_bits == other.initial_bits
        )

    def project_agent(
        self, representative: "ScenarioLattice", agent: int
    ) -> List[np.ndarray]:
        """
        Map every node to the node of a one-agent lattice seeing the same
        common noise and the noise of ``agent``.
        """
        if representative.n_agents != 1 or not self.compatible_with(
            representative
        ):
            raise ShapeError(
                "Representative lattice must have N=1 and the same grid."
            )
        if agent < 0 or agent >= self.n_agents:
            raise ShapeError(f"Agent {agent} out of range.")
        init = np.arange(self.level_size(0), dtype=np.int64)
        index = (init >> agent) & 1 if self.initial_bits else init * 0
        projection = [index]
        digits = np.arange(self.branching, dtype=np.int64)
        common = digits & (2**self.d0 - 1)
        own = (digits >> (self.d0 + agent * self.d)) & (2**self.d - 1)
        rep_digits = common | (own << self.d0)
        for k in range(1, self.steps + 1):
            index = self.expand(index) * representative.branching + np.tile(
                rep_digits, self.level_size(k - 1)
            )
            projection.append(index)
        return projection

    def to_rows(
        self, process: AdaptedProcess, name: str
    ) -> List[List[object]]:
        """Rows (step, node, probability, name, component, value)."""
        rows: List[List[object]] = []
        for k, level in enumerate(process.values):
            flat = level.reshape(level.shape[0], -1)
            prob = self.probability(k)
            for node in range(flat.shape[0]):
                for comp in range(flat.shape[1]):
                    rows.append(
                        [k, node, prob, name, comp, float(flat[node, comp])]
                    )
        return rows


def build_lattice(
    M: int,
    N: int,
    d0: int,
    d: int,
    T: float,
    initial_bits: int = 0,
    node_limit: Optional[int] = None,
) -> ScenarioLattice:
    return ScenarioLattice(
        M,
        N,
        d0,
        d,
        T,
        initial_bits=initial_bits,
        node_limit=NODE_LIMIT if node_limit is None else node_limit,
    )
