import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import InvalidModelError, NonConvergenceError
from src.fbsde.drivers import DriverBundle, martingale_parts
from src.lattice.scenario_lattice import AdaptedProcess, ScenarioLattice
from src.model.coefficients import analytic_margins
from src.model.market import MarketModel
from src.schemas.report_schemas import SolveDiagnostics
from src.schemas.solver_schemas import SolverConfig

logger = logging.getLogger(__name__)

Levels = List[np.ndarray]


@dataclass
class AuxiliaryInputs:
    """
    Extra forcing of the continuation family, zero in the equilibrium.

    ``forward`` and ``backward`` hold one (nodes, N, n) array per step
    0..M, ``terminal`` is (leaves, N, n).
    """

    forward: Optional[Levels] = None
    backward: Optional[Levels] = None
    terminal: Optional[np.ndarray] = None


@dataclass
class EquilibriumSolution:
    """
    Node-indexed equilibrium of the N-agent system.

    X and Y hold (nodes, N, n) per step; Z0[k] is (nodes, N, n, d0);
    Zij[k] is (nodes, N, n, N, d) with the noise owner on axis 3, or
    (nodes, N, n, d) holding only the own block when cross blocks are
    not stored; phi holds (nodes, n).
    """

    X: AdaptedProcess
    Y: AdaptedProcess
    Z0: Levels
    Zij: Levels
    phi: AdaptedProcess
    diagnostics: SolveDiagnostics
    lattice: ScenarioLattice

    def alpha(self, model: MarketModel) -> Levels:
        """Optimal rates alpha_hat(Y^i, phi) per step."""
        return [
            model.rate(y, phi[:, None, :])
            for y, phi in zip(self.Y.values, self.phi.values)
        ]


def homotopy_gamma(model: MarketModel) -> float:
    gamma = min(bundle.gamma() for bundle in model.agents)
    if gamma <= 0:
        logger.warning(
            f"Compatibility constant {gamma} is not positive; the "
            f"continuation base case uses gamma = 1"
        )
        return 1.0
    return gamma


def check_margins(model: MarketModel, allow_invalid: bool) -> None:
    failing = []
    for i, bundle in enumerate(model.agents):
        margins = analytic_margins(bundle)
        if (
            margins["gamma_compatibility"] <= 0
            or margins["convexity_f"] < 0
            or margins["convexity_g"] < 0
            or margins["flow_monotonicity"] <= 0
        ):
            failing.append(i)
    if not failing:
        return
    if allow_invalid:
        logger.warning(
            f"Agents {failing} fail the analytic assumption margins; "
            f"solving anyway"
        )
        return
    logger.error(f"Agents {failing} fail the analytic assumption margins")
    raise InvalidModelError(
        f"Agents {failing} violate the convexity or monotonicity "
        f"assumptions; set allow_invalid to solve anyway."
    )


def _initial_adjoint(
    model: MarketModel,
    lattice: ScenarioLattice,
    initial_price: Union[None, float, Sequence[np.ndarray]],
) -> Levels:
    y = []
    for k in range(lattice.steps + 1):
        shape = (lattice.level_size(k), model.N, model.n)
        if initial_price is None:
            y.append(np.zeros(shape))
        elif np.isscalar(initial_price):
            y.append(np.full(shape, -float(initial_price)))
        else:
            phi = np.asarray(initial_price[k], dtype=float)
            y.append(np.broadcast_to(-phi[:, None, :], shape).copy())
    return y


class ContinuationSweeper:
    """
    One forward-backward pass of the continuation family at weight rho.

    ``terminal`` maps the leaf positions (leaves, N, n) to the target
    terminal adjoints G.
    """

    def __init__(
        self,
        drivers: DriverBundle,
        terminal: Callable[[np.ndarray], np.ndarray],
        gamma: float,
        aux: Optional[AuxiliaryInputs] = None,
        pool: Optional[ThreadPoolExecutor] = None,
    ):
        self.drivers = drivers
        self.model = drivers.model
        self.lattice = drivers.lattice
        self.terminal = terminal
        self.aux = aux or AuxiliaryInputs()
        self.gamma = gamma
        self.pool = pool
        self.x0 = self.model.initial_states(self.lattice)

    def _map(self, fn: Callable[[int], Levels]) -> List[Levels]:
        agents = range(self.model.N)
        if self.pool is None:
            return [fn(i) for i in agents]
        return list(self.pool.map(fn, agents))

    def forward(self, y: Levels, phi: Levels, rho: float) -> Levels:
        drivers, aux = self.drivers, self.aux

        def run(i: int) -> Levels:
            x = [self.x0[:, i]]
            for k in range(self.lattice.steps):
                drift = rho * drivers.forward(i, k, y[k][:, i], phi[k])
                if aux.forward is not None:
                    drift = drift + aux.forward[k][:, i]
                x.append(drivers.step(i, k, x[k], drift))
            return x

        return _stack(self._map(run))

    def backward(self, x: Levels, phi: Levels, rho: float) -> Levels:
        drivers, aux, lattice = self.drivers, self.aux, self.lattice
        M = lattice.steps
        y_terminal = rho * self.terminal(x[M]) + (1 - rho) * x[M]
        if aux.terminal is not None:
            y_terminal = y_terminal + aux.terminal

        def run(i: int) -> Levels:
            y = [y_terminal[:, i]]
            for k in range(M - 1, -1, -1):
                source = (1 - rho) * self.gamma * x[k + 1][:, i]
                source = source + rho * drivers.gradient(
                    i, k + 1, x[k + 1][:, i], phi[k + 1]
                )
                if aux.backward is not None:
                    source = source + aux.backward[k + 1][:, i]
                y.append(
                    lattice.cond_expect(y[-1] + source * lattice.dt, k + 1)
                )
            return y[::-1]

        return _stack(self._map(run))


def _stack(per_agent: List[Levels]) -> Levels:
    steps = len(per_agent[0])
    return [
        np.stack([levels[k] for levels in per_agent], axis=1)
        for k in range(steps)
    ]


def _prices(y: Levels) -> Levels:
    return [DriverBundle.price(level) for level in y]


def build_solution(
    model: MarketModel,
    lattice: ScenarioLattice,
    x: Levels,
    y: Levels,
    diagnostics: SolveDiagnostics,
    store_cross_z: bool = True,
) -> EquilibriumSolution:
    z0, zij = martingale_parts(lattice, y)
    if not store_cross_z:
        own = np.arange(model.N)
        # advanced indices on axes 1 and 3 move the agent axis first
        zij = [np.moveaxis(z[:, own, :, own, :], 0, 1) for z in zij]
        logger.warning("Cross-agent Z blocks dropped; only own blocks kept")
    diagnostics.cross_z_stored = store_cross_z
    return EquilibriumSolution(
        X=AdaptedProcess(x),
        Y=AdaptedProcess(y),
        Z0=z0,
        Zij=zij,
        phi=AdaptedProcess(_prices(y)),
        diagnostics=diagnostics,
        lattice=lattice,
    )


def continuation_picard(
    sweeper: ContinuationSweeper,
    y: Levels,
    prices: Callable[[Levels], Levels],
    config: SolverConfig,
) -> Tuple[Levels, Levels, List[float]]:
    """
    Damped Picard on Y for every continuation weight of the schedule.

    Returns the forward sweep at the converged Y, the converged Y and
    the residual after every sweep.
    """
    theta = config.damping
    history: List[float] = []
    for rho in config.schedule:
        for _ in range(config.max_iters):
            phi = prices(y)
            x = sweeper.forward(y, phi, rho)
            y_new = sweeper.backward(x, phi, rho)
            residual = max(
                float(np.max(np.abs(a - b))) for a, b in zip(y_new, y)
            )
            history.append(residual)
            if residual <= config.tol:
                y = y_new
                break
            y = [(1 - theta) * a + theta * b for a, b in zip(y, y_new)]
        else:
            logger.error(
                f"Picard stalled at rho={rho} with residual "
                f"{history[-1]:.3e}"
            )
            raise NonConvergenceError(
                f"No convergence at continuation weight {rho} within "
                f"{config.max_iters} iterations.",
                history,
            )
        logger.info(
            f"Continuation weight {rho} converged, residual "
            f"{history[-1]:.3e}"
        )
    x = sweeper.forward(y, prices(y), 1.0)
    return x, y, history


def solve_equilibrium(
    model: MarketModel,
    lattice: ScenarioLattice,
    config: Optional[SolverConfig] = None,
    initial_price: Union[None, float, Sequence[np.ndarray]] = None,
    aux: Optional[AuxiliaryInputs] = None,
) -> EquilibriumSolution:
    """
    Market-clearing equilibrium by damped Picard with continuation.

    For every weight rho of the schedule the iteration maps Y to the
    solution of the decoupled system with forward drift
    rho * B_i(Y, phi) + I^b, backward source
    (1 - rho) * gamma * X + rho * d/dx fbar_i + I^f and terminal value
    rho * G_i + (1 - rho) * X_T + eta, where phi = -mean_i Y^i comes
    from the current iterate. Each weight is warm-started from the
    previous one.

    Args:
        model (MarketModel): Market instance.
        lattice (ScenarioLattice): Scenario tree.
        config (SolverConfig): Damping, tolerance and schedule.
        initial_price (float | list): Starting price guess, zero default.
        aux (AuxiliaryInputs): Extra forcing, zero default.

    Returns:
        EquilibriumSolution: Converged processes and diagnostics.
    """
    config = config or SolverConfig()
    check_margins(model, config.allow_invalid)
    drivers = DriverBundle(model, lattice)
    y = _initial_adjoint(model, lattice, initial_price)

    pool = (
        ThreadPoolExecutor(max_workers=config.threads)
        if config.threads > 1
        else None
    )
    try:
        sweeper = ContinuationSweeper(
            drivers, drivers.terminal, homotopy_gamma(model), aux, pool
        )
        x, y, history = continuation_picard(sweeper, y, _prices, config)
    finally:
        if pool is not None:
            pool.shutdown()

    diagnostics = SolveDiagnostics(
        solver="picard",
        iterations=len(history),
        residual=history[-1],
        residual_history=history,
        continuation=list(config.schedule),
    )
    logger.info(f"Equilibrium found after {len(history)} sweeps")
    return build_solution(
        model, lattice, x, y, diagnostics, config.store_cross_z
    )
