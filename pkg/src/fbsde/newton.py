import logging
from typing import List, Optional, Tuple

import numpy as np

from src.errors import (
    CapacityError,
    NonConvergenceError,
    SingularJacobianError,
)
from src.fbsde.drivers import DriverBundle
from src.fbsde.equilibrium import EquilibriumSolution, build_solution
from src.lattice.scenario_lattice import ScenarioLattice
from src.model.market import MarketModel
from src.schemas.report_schemas import SolveDiagnostics
from src.schemas.solver_schemas import SolverConfig

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
MIN_STEP_LENGTH = 2.0**-12


class DiscreteSystem:
    """
    The discretized N-agent system as one residual function.

    The unknown vector stacks X then Y, each level by level, with the
    (nodes, N, n) layout flattened in C order.
    """

    def __init__(self, model: MarketModel, lattice: ScenarioLattice):
        self.model = model
        self.lattice = lattice
        self.drivers = DriverBundle(model, lattice)
        self.x0 = model.initial_states(lattice)
        self.shapes = [
            (lattice.level_size(k), model.N, model.n)
            for k in range(lattice.steps + 1)
        ]
        sizes = [int(np.prod(shape)) for shape in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.half = int(self.offsets[-1])
        self.size = 2 * self.half

    def unpack(
        self, u: np.ndarray
    ) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        levels = []
        for part in (u[: self.half], u[self.half :]):
            levels.append(
                [
                    part[self.offsets[k] : self.offsets[k + 1]].reshape(shape)
                    for k, shape in enumerate(self.shapes)
                ]
            )
        return levels[0], levels[1]

    def pack(self, x: List[np.ndarray], y: List[np.ndarray]) -> np.ndarray:
        return np.concatenate([level.ravel() for level in list(x) + list(y)])

    def residual(self, u: np.ndarray) -> np.ndarray:
        x, y = self.unpack(u)
        drivers, lattice = self.drivers, self.lattice
        M = lattice.steps
        phi = [DriverBundle.price(level) for level in y]

        rx = [x[0] - self.x0]
        for k in range(M):
            nxt = []
            for i in range(self.model.N):
                drift = drivers.forward(i, k, y[k][:, i], phi[k])
                nxt.append(drivers.step(i, k, x[k][:, i], drift))
            rx.append(x[k + 1] - np.stack(nxt, axis=1))

        ry = []
        for k in range(M):
            source = np.stack(
                [
                    drivers.gradient(i, k + 1, x[k + 1][:, i], phi[k + 1])
                    for i in range(self.model.N)
                ],
                axis=1,
            )
            target = lattice.cond_expect(y[k + 1] + source * lattice.dt, k + 1)
            ry.append(y[k] - target)
        ry.append(y[M] - drivers.terminal(x[M]))
        return self.pack(rx, ry)

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        """Central finite differences, one column per unknown."""
        jac = np.empty((self.size, self.size))
        for j in range(self.size):
            h = FD_STEP * max(1.0, abs(u[j]))
            up = u.copy()
            down = u.copy()
            up[j] += h
            down[j] -= h
            jac[:, j] = (self.residual(up) - self.residual(down)) / (2.0 * h)
        return jac


def _newton_direction(
    jac: np.ndarray, res: np.ndarray
) -> Tuple[np.ndarray, float]:
    condition = float(np.linalg.cond(jac))
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        logger.error(f"Newton Jacobian is singular, cond={condition:.3e}")
        raise SingularJacobianError(
            f"Jacobian is numerically singular (condition {condition:.3e}).",
            condition,
        )
    try:
        return np.linalg.solve(jac, -res), condition
    except np.linalg.LinAlgError as e:
        logger.error(f"Newton linear solve failed: {e}")
        raise SingularJacobianError(str(e), condition) from e


def solve_global_newton(
    model: MarketModel,
    lattice: ScenarioLattice,
    config: Optional[SolverConfig] = None,
    initial_guess: Optional[np.ndarray] = None,
) -> EquilibriumSolution:
    """
    Independent oracle: damped Newton on every node value at once.

    Args:
        model (MarketModel): Market instance.
        lattice (ScenarioLattice): Scenario tree, small enough for a
            dense Jacobian.
        config (SolverConfig): Size cap, tolerance and iteration cap.
        initial_guess (np.ndarray): Packed (X, Y) start, zero default.

    Returns:
        EquilibriumSolution: Same layout as the Picard solver's output.

    Raises:
        CapacityError: If the unknown count exceeds the size cap.
        SingularJacobianError: If a Newton system cannot be solved.
        NonConvergenceError: If the residual target is not reached.
    """
    config = config or SolverConfig()
    system = DiscreteSystem(model, lattice)
    if system.size > config.newton_size_cap:
        logger.error(
            f"Newton needs {system.size} unknowns, cap "
            f"{config.newton_size_cap}"
        )
        raise CapacityError(
            f"{system.size} unknowns exceed the Newton size cap "
            f"{config.newton_size_cap}."
        )

    u = (
        np.zeros(system.size)
        if initial_guess is None
        else np.array(initial_guess, dtype=float)
    )
    res = system.residual(u)
    norm = float(np.max(np.abs(res)))
    history = [norm]
    condition = None
    iterations = 0

    while norm > config.newton_tol:
        if iterations >= config.newton_max_iters:
            logger.error(f"Newton stalled at residual {norm:.3e}")
            raise NonConvergenceError(
                f"Newton did not reach {config.newton_tol} in "
                f"{config.newton_max_iters} iterations.",
                history,
            )
        iterations += 1
        direction, condition = _newton_direction(system.jacobian(u), res)
        step = 1.0
        while True:
            trial = u + step * direction
            trial_res = system.residual(trial)
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm < norm or step <= MIN_STEP_LENGTH:
                break
            step *= 0.5
        u, res, norm = trial, trial_res, trial_norm
        history.append(norm)
        logger.info(
            f"Newton iteration {iterations}: residual {norm:.3e}, "
            f"step {step}"
        )

    x, y = system.unpack(u)
    diagnostics = SolveDiagnostics(
        solver="newton",
        iterations=iterations,
        residual=norm,
        residual_history=history,
        condition_estimate=condition,
    )
    logger.info(
        f"Newton oracle converged after {iterations} iterations "
        f"({system.size} unknowns)"
    )
    return build_solution(
        model,
        lattice,
        [level.copy() for level in x],
        [level.copy() for level in y],
        diagnostics,
        config.store_cross_z,
    )


def newton_residual(
    model: MarketModel, lattice: ScenarioLattice, solution: EquilibriumSolution
) -> float:
    """Sup-norm of the discrete system residual at a given solution."""
    system = DiscreteSystem(model, lattice)
    u = system.pack(solution.X.values, solution.Y.values)
    return float(np.max(np.abs(system.residual(u))))
