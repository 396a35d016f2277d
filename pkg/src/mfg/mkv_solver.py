import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.errors import InvalidModelError, ShapeError
from src.fbsde.decoupled import solve_decoupled
from src.fbsde.drivers import DriverBundle, martingale_parts
from src.fbsde.equilibrium import (
    ContinuationSweeper,
    check_margins,
    continuation_picard,
    homotopy_gamma,
)
from src.lattice.scenario_lattice import AdaptedProcess, ScenarioLattice
from src.model.market import MarketModel
from src.schemas.report_schemas import SolveDiagnostics
from src.schemas.solver_schemas import SolverConfig

logger = logging.getLogger(__name__)

Levels = List[np.ndarray]


@dataclass
class MkvSolution:
    """
    Representative agent of the conditional McKean-Vlasov limit.

    X and Y hold (nodes, n) per step on a one-agent lattice; ``m`` is
    E[Ybar | common noise], common-tagged, and phi_mfg = -m. Z0[k] is
    (nodes, n, d0) and Zii[k] is (nodes, n, d).
    """

    X: AdaptedProcess
    Y: AdaptedProcess
    m: AdaptedProcess
    phi_mfg: AdaptedProcess
    Z0: Levels
    Zii: Levels
    diagnostics: SolveDiagnostics
    lattice: ScenarioLattice

    def fixed_point_residual(self) -> float:
        """sup |m - E[Ybar | common noise]| over all nodes."""
        return max(
            float(
                np.max(
                    np.abs(m - self.lattice.cond_expect_common(y, k)),
                    initial=0.0,
                )
            )
            for k, (m, y) in enumerate(zip(self.m.values, self.Y.values))
        )


@dataclass
class LiftedMeanField:
    """
    Mean-field processes of every agent of an N-agent lattice.

    X and Y are (nodes, N, n) per step, Z0 is (nodes, N, n, d0), Zii is
    (nodes, N, n, d) and phi is (nodes, n).
    """

    X: Levels
    Y: Levels
    Z0: Levels
    Zii: Levels
    phi: Levels


def _conditional_prices(lattice: ScenarioLattice):
    def prices(y: Levels) -> Levels:
        return [
            -lattice.cond_expect_common(level[:, 0], k)
            for k, level in enumerate(y)
        ]

    return prices


def _mkv_terminal(drivers: DriverBundle):
    model, lattice = drivers.model, drivers.lattice
    M = lattice.steps
    c0, c = drivers.exo[M]
    weight = model.delta / (1.0 - model.delta)

    def terminal(x: np.ndarray) -> np.ndarray:
        g = model.terminal_gradients(x, c0, c)
        return g + weight * lattice.cond_expect_common(g, M)

    return terminal


def solve_mkv(
    model: MarketModel,
    lattice: ScenarioLattice,
    config: Optional[SolverConfig] = None,
    initial_mean: Optional[float] = None,
) -> MkvSolution:
    """
    Conditional McKean-Vlasov limit of a homogeneous market.

    The price fed to the representative agent is -E[Ybar | common noise]
    of the current iterate and the terminal adjoint is
    delta / (1 - delta) * E[dgbar | common noise] + dgbar; the loop is
    the damped continuation Picard of the N-agent solver.

    Args:
        model (MarketModel): Homogeneous market; any N, only the agent
            bundle is used.
        lattice (ScenarioLattice): One-agent lattice.
        config (SolverConfig): Damping, tolerance and schedule.
        initial_mean (float): Starting guess for m, zero default.

    Returns:
        MkvSolution: Representative processes and the mean-field price.
    """
    config = config or SolverConfig()
    if not model.homogeneous:
        logger.error("solve_mkv called with heterogeneous agents")
        raise InvalidModelError(
            "The mean-field limit needs homogeneous agents."
        )
    representative = model if model.N == 1 else model.representative()
    if lattice.n_agents != 1:
        raise ShapeError(
            f"The representative lattice must have N=1, got "
            f"{lattice.n_agents}."
        )
    check_margins(representative, config.allow_invalid)
    drivers = DriverBundle(representative, lattice)
    start = 0.0 if initial_mean is None else float(initial_mean)
    y = [
        np.full((lattice.level_size(k), 1, representative.n), start)
        for k in range(lattice.steps + 1)
    ]
    sweeper = ContinuationSweeper(
        drivers, _mkv_terminal(drivers), homotopy_gamma(representative)
    )
    prices = _conditional_prices(lattice)
    x, y, history = continuation_picard(sweeper, y, prices, config)

    phi = prices(y)
    m = [-level for level in phi]
    z0, zj = martingale_parts(lattice, y)
    diagnostics = SolveDiagnostics(
        solver="mkv",
        iterations=len(history),
        residual=history[-1],
        residual_history=history,
        continuation=list(config.schedule),
    )
    logger.info(f"Mean-field limit found after {len(history)} sweeps")
    return MkvSolution(
        X=AdaptedProcess([level[:, 0] for level in x]),
        Y=AdaptedProcess([level[:, 0] for level in y]),
        m=AdaptedProcess(m, tag="common"),
        phi_mfg=AdaptedProcess(phi, tag="common"),
        Z0=[z[:, 0] for z in z0],
        Zii=[z[:, 0, :, 0] for z in zj],
        diagnostics=diagnostics,
        lattice=lattice,
    )


def extend_price(
    mkv: MkvSolution, lattice: ScenarioLattice
) -> AdaptedProcess:
    """phi_mfg on an N-agent lattice through the common-noise prefix."""
    projection = lattice.project_agent(mkv.lattice, 0)
    return AdaptedProcess(
        [level[index] for level, index in zip(mkv.phi_mfg.values, projection)],
        tag="common",
    )


def lift_to_agents(
    mkv: MkvSolution, lattice: ScenarioLattice
) -> LiftedMeanField:
    """
    Copies of the representative agent driven by each agent's own noise.

    Raises:
        ShapeError: If the grids or noise dimensions differ.
    """
    projections = [
        lattice.project_agent(mkv.lattice, i) for i in range(lattice.n_agents)
    ]

    def lift(levels: Levels, steps: int) -> Levels:
        return [
            np.stack([levels[k][proj[k]] for proj in projections], axis=1)
            for k in range(steps)
        ]

    M = lattice.steps
    return LiftedMeanField(
        X=lift(mkv.X.values, M + 1),
        Y=lift(mkv.Y.values, M + 1),
        Z0=lift(mkv.Z0, M),
        Zii=lift(mkv.Zii, M),
        phi=extend_price(mkv, lattice).values,
    )


def mfg_clearing_residual(
    mkv: MkvSolution,
    model: MarketModel,
    lattice: ScenarioLattice,
    config: Optional[SolverConfig] = None,
) -> Levels:
    """
    Per-capita aggregate trade (1/N)|sum_i alpha_hat^i| when every agent
    of ``lattice`` best-responds to the mean-field price.

    Args:
        mkv (MkvSolution): Solved mean-field limit.
        model (MarketModel): Homogeneous market, resized to the lattice.
        lattice (ScenarioLattice): N-agent lattice on the same grid.
        config (SolverConfig): Settings of the price-taker solves.

    Returns:
        list: One (nodes,) array per step.
    """
    if not lattice.compatible_with(mkv.lattice):
        raise ShapeError("N-agent lattice and mean-field grid differ.")
    N = lattice.n_agents
    market = model if model.N == N else model.with_agents(N)
    phi = extend_price(mkv, lattice)
    total = [
        np.zeros((lattice.level_size(k), market.n))
        for k in range(lattice.steps + 1)
    ]
    for i in range(N):
        best = solve_decoupled(market, lattice, i, phi, config)
        for k, y in enumerate(best.Y):
            total[k] += market.rate(y, phi.values[k])
    residual = [np.linalg.norm(level, axis=-1) / N for level in total]
    logger.info(
        f"Mean-field price leaves a per-capita trade of at most "
        f"{max(float(np.max(r)) for r in residual):.3e} with N={N}"
    )
    return residual
