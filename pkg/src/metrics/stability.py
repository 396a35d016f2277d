import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.errors import InvalidModelError, ShapeError
from src.fbsde.equilibrium import EquilibriumSolution
from src.lattice.scenario_lattice import ScenarioLattice
from src.metrics.wasserstein import EmpiricalMeasure, w2_discrete
from src.mfg.mkv_solver import LiftedMeanField, MkvSolution, lift_to_agents
from src.model.market import MarketModel, terminal_map
from src.schemas.report_schemas import StabilityReport

logger = logging.getLogger(__name__)

Levels = List[np.ndarray]

CALIBRATION_FACTOR = 2.0


class ProcessTuple(NamedTuple):
    """
    (X, Y, Z0, Zij) of N agents; X, Y are (nodes, N, n), Z0 is
    (nodes, N, n, d0) and Zij is (nodes, N, n, N, d).
    """

    X: Levels
    Y: Levels
    Z0: Levels
    Zij: Levels


def processes(solution: EquilibriumSolution) -> ProcessTuple:
    if not solution.diagnostics.cross_z_stored:
        raise ShapeError("Stability checks need the cross-agent Z blocks.")
    return ProcessTuple(
        solution.X.values, solution.Y.values, solution.Z0, solution.Zij
    )


def lifted_processes(lifted: LiftedMeanField) -> ProcessTuple:
    """Mean-field copies with Z^{i,j} = delta_ij Zbar^{i,i}."""
    zij = []
    for z in lifted.Zii:
        nodes, N, n, d = z.shape
        full = np.zeros((nodes, N, n, N, d))
        for i in range(N):
            full[:, i, :, i, :] = z[:, i]
        zij.append(full)
    return ProcessTuple(lifted.X, lifted.Y, lifted.Z0, zij)


def _squared(levels: Sequence[np.ndarray], axes: Tuple[int, ...]) -> Levels:
    return [np.sum(np.asarray(level) ** 2, axis=axes) for level in levels]


def _sup_term(lattice: ScenarioLattice, levels: Levels) -> float:
    """sum_i E[sup_k |V^i_k|^2] for (nodes, N) squared norms."""
    best = lattice.running_max(levels)
    return float(np.sum(lattice.expectation(best, lattice.steps)))


def _integral_term(lattice: ScenarioLattice, levels: Levels) -> float:
    """sum_i sum_k E|V^i_k|^2 dt over the levels given, level k at step k."""
    return lattice.dt * sum(
        float(np.sum(lattice.expectation(level, k)))
        for k, level in enumerate(levels)
    )


def process_norm(lattice: ScenarioLattice, proc: ProcessTuple) -> float:
    """
    sum_i E[sup|X^i|^2 + sup|Y^i|^2 + int |Z^{i,0}|^2 + sum_j |Z^{i,j}|^2].
    """
    return (
        _sup_term(lattice, _squared(proc.X, (2,)))
        + _sup_term(lattice, _squared(proc.Y, (2,)))
        + _integral_term(lattice, _squared(proc.Z0, (2, 3)))
        + _integral_term(lattice, _squared(proc.Zij, (2, 3, 4)))
    )


def _difference(a: ProcessTuple, b: ProcessTuple) -> ProcessTuple:
    return ProcessTuple(
        *[
            [np.asarray(u) - np.asarray(v) for u, v in zip(la, lb)]
            for la, lb in zip(a, b)
        ]
    )


def process_gap_lhs(
    base: ProcessTuple, other: ProcessTuple, lattice: ScenarioLattice
) -> float:
    """Solution-gap side of the N-agent stability estimate."""
    return process_norm(lattice, _difference(base, other))


@dataclass
class DifferenceTerms:
    """
    Coefficient gaps evaluated along a reference solution.

    ``B``, ``sigma0`` and ``sigma`` hold steps 0..M-1, ``F`` holds
    steps 1..M, all with (nodes, N, ...) layout; ``G`` is (leaves, N, n)
    and ``xi`` is (roots, N, n).
    """

    xi: np.ndarray
    G: np.ndarray
    F: Levels
    B: Levels
    sigma0: Levels
    sigma: Levels

    def per_agent(self, lattice: ScenarioLattice) -> np.ndarray:
        """E[|dxi|^2 + |G|^2 + int(|F|^2 + |B|^2 + |s0|^2 + |s|^2)]."""
        M = lattice.steps
        total = lattice.expectation(np.sum(self.xi**2, axis=-1), 0)
        total = total + lattice.expectation(np.sum(self.G**2, axis=-1), M)
        for k in range(M):
            running = (
                lattice.expectation(np.sum(self.B[k] ** 2, axis=-1), k)
                + lattice.expectation(np.sum(self.F[k] ** 2, axis=-1), k + 1)
                + lattice.expectation(
                    np.sum(self.sigma0[k] ** 2, axis=(-2, -1)), k
                )
                + lattice.expectation(
                    np.sum(self.sigma[k] ** 2, axis=(-2, -1)), k
                )
            )
            total = total + running * lattice.dt
        return np.asarray(total)

    def rhs(self, lattice: ScenarioLattice) -> float:
        return float(np.sum(self.per_agent(lattice)))


def _vol_levels(
    model: MarketModel, lattice: ScenarioLattice, exo, which: str
) -> Levels:
    levels = []
    for k in range(lattice.steps):
        c0, c = exo[k]
        per_agent = []
        for i, bundle in enumerate(model.agents):
            vol = getattr(bundle, which)(lattice.times[k], c0, c[:, i])
            width = model.d0 if which == "vol0" else model.d
            per_agent.append(
                np.broadcast_to(
                    vol, (lattice.level_size(k), model.n, width)
                )
            )
        levels.append(np.stack(per_agent, axis=1))
    return levels


def difference_terms(
    model: MarketModel,
    reference_model: MarketModel,
    reference: EquilibriumSolution,
    lattice: ScenarioLattice,
) -> DifferenceTerms:
    """
    B, F, G and sigma gaps between two coefficient sets, evaluated on
    the reference model's solution.

    Args:
        model (MarketModel): Coefficients being compared.
        reference_model (MarketModel): Coefficients of ``reference``.
        reference (EquilibriumSolution): Trajectories to evaluate on.
        lattice (ScenarioLattice): Common lattice.

    Returns:
        DifferenceTerms: The gaps as node-indexed arrays.
    """
    model.check_lattice(lattice)
    reference_model.check_lattice(lattice)
    if model.n != reference_model.n:
        raise ShapeError("Models trade different numbers of securities.")
    M = lattice.steps
    exo = model.exogenous_paths(lattice)
    exo_ref = reference_model.exogenous_paths(lattice)
    x, y, phi = reference.X.values, reference.Y.values, reference.phi.values

    B, F = [], []
    for k in range(M):
        t = lattice.times[k]
        c0, c = exo[k]
        c0r, cr = exo_ref[k]
        B.append(
            np.stack(
                [
                    model.drift(i, t, y[k][:, i], phi[k], c0, c[:, i])
                    - reference_model.drift(
                        i, t, y[k][:, i], phi[k], c0r, cr[:, i]
                    )
                    for i in range(model.N)
                ],
                axis=1,
            )
        )
        t = lattice.times[k + 1]
        c0, c = exo[k + 1]
        c0r, cr = exo_ref[k + 1]
        F.append(
            np.stack(
                [
                    reference_model.agents[i].dfdx(
                        t, x[k + 1][:, i], phi[k + 1], c0r, cr[:, i]
                    )
                    - model.agents[i].dfdx(
                        t, x[k + 1][:, i], phi[k + 1], c0, c[:, i]
                    )
                    for i in range(model.N)
                ],
                axis=1,
            )
        )

    c0, c = exo[M]
    c0r, cr = exo_ref[M]
    G = terminal_map(
        model.terminal_gradients(x[M], c0, c), model.delta
    ) - terminal_map(
        reference_model.terminal_gradients(x[M], c0r, cr),
        reference_model.delta,
    )
    xi = model.initial_states(lattice) - reference_model.initial_states(
        lattice
    )
    sigma0 = [
        a - b
        for a, b in zip(
            _vol_levels(model, lattice, exo, "vol0"),
            _vol_levels(reference_model, lattice, exo_ref, "vol0"),
        )
    ]
    sigma = [
        a - b
        for a, b in zip(
            _vol_levels(model, lattice, exo, "vol"),
            _vol_levels(reference_model, lattice, exo_ref, "vol"),
        )
    ]
    return DifferenceTerms(xi=xi, G=G, F=F, B=B, sigma0=sigma0, sigma=sigma)


def _report(lhs: float, rhs: float) -> StabilityReport:
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else float("inf")
    else:
        ratio = lhs / rhs
    return StabilityReport(lhs=lhs, rhs=rhs, ratio=ratio)


def stability_bound_check(
    base: EquilibriumSolution,
    perturbed: EquilibriumSolution,
    terms: DifferenceTerms,
) -> StabilityReport:
    """
    Both sides of the N-agent stability estimate on one lattice.

    Raises:
        ShapeError: If the solutions live on different lattices.
    """
    lattice = base.lattice
    if perturbed.lattice is not lattice and not (
        perturbed.lattice.compatible_with(lattice)
        and perturbed.lattice.n_agents == lattice.n_agents
    ):
        raise ShapeError("Solutions live on different lattices.")
    lhs = process_gap_lhs(processes(base), processes(perturbed), lattice)
    report = _report(lhs, terms.rhs(lattice))
    logger.info(
        f"Stability check lhs={report.lhs:.3e} rhs={report.rhs:.3e} "
        f"ratio={report.ratio:.3f}"
    )
    return report


def apriori_bound_check(
    solution: EquilibriumSolution, model: MarketModel
) -> StabilityReport:
    """
    Solution norm against the size of the coefficients at zero:
    xi, dgbar(0), dfbar(0, 0), l(0) and the volatilities.
    """
    lattice = solution.lattice
    M = lattice.steps
    exo = model.exogenous_paths(lattice)
    lhs = process_norm(lattice, processes(solution))

    rhs = float(
        np.sum(
            lattice.expectation(
                np.sum(model.initial_states(lattice) ** 2, axis=-1), 0
            )
        )
    )
    zero = np.zeros((1, model.n))
    for i, bundle in enumerate(model.agents):
        c0, c = exo[M]
        g0 = bundle.dgdx(np.zeros_like(c0), c0, c[:, i])
        rhs += float(lattice.expectation(np.sum(g0**2, axis=-1), M))
        for k in range(M):
            c0, c = exo[k]
            t = lattice.times[k]
            nodes = np.zeros((lattice.level_size(k), model.n))
            flow = bundle.flow(t, nodes, c0, c[:, i])
            vol0 = np.broadcast_to(
                bundle.vol0(t, c0, c[:, i]),
                (lattice.level_size(k), model.n, model.d0),
            )
            vol = np.broadcast_to(
                bundle.vol(t, c0, c[:, i]),
                (lattice.level_size(k), model.n, model.d),
            )
            c0n, cn = exo[k + 1]
            grad = bundle.dfdx(
                lattice.times[k + 1],
                np.zeros_like(c0n),
                zero,
                c0n,
                cn[:, i],
            )
            running = (
                lattice.expectation(np.sum(flow**2, axis=-1), k)
                + lattice.expectation(np.sum(vol0**2, axis=(-2, -1)), k)
                + lattice.expectation(np.sum(vol**2, axis=(-2, -1)), k)
                + lattice.expectation(np.sum(grad**2, axis=-1), k + 1)
            )
            rhs += float(running) * lattice.dt
    return _report(lhs, rhs)


def price_gap_terms(
    phi: Sequence[np.ndarray], mkv: MkvSolution, lattice: ScenarioLattice
) -> Tuple[float, float]:
    """
    sup_k E|phi_k - phi_mfg_k|^2 and E[sup_k |E[phi_k | common] -
    phi_mfg_k|^2] for an N-agent price on ``lattice``.
    """
    phi_mfg = lift_to_agents(mkv, lattice).phi
    gaps, conditional = [], []
    for k, (p, q) in enumerate(zip(phi, phi_mfg)):
        gap = np.sum((np.asarray(p) - q) ** 2, axis=-1)
        gaps.append(float(lattice.expectation(gap, k)))
        mean = lattice.cond_expect_common(np.asarray(p), k)
        conditional.append(np.sum((mean - q) ** 2, axis=-1))
    sup_gap = max(gaps)
    sup_conditional = float(
        lattice.expectation(lattice.running_max(conditional), lattice.steps)
    )
    return sup_gap, sup_conditional


def _group_measures(
    rep: ScenarioLattice, values: np.ndarray, step: int
) -> Dict[int, EmpiricalMeasure]:
    keys = rep.common_keys(step)
    return {
        int(key): EmpiricalMeasure(values[keys == key])
        for key in np.unique(keys)
    }


def conditional_w2_terms(
    mkv: MkvSolution, model: MarketModel, lattice: ScenarioLattice
) -> Tuple[float, float]:
    """
    sup_k E[W2(mubar^N_k, L^0_k(Ybar))^2] and E[W2(mubar^N_g, L^0_g)^2].

    The empirical measures collect the N lifted mean-field copies at a
    node; the conditional laws are the representative lattice's values
    over the node's common-noise group. ``model`` is the homogeneous base
    market the mean-field limit was solved for, not a perturbed one.

    Raises:
        InvalidModelError: If ``model`` has heterogeneous agents.
    """
    if not model.homogeneous:
        logger.error("Conditional W2 terms need the homogeneous base model")
        raise InvalidModelError(
            "conditional_w2_terms needs the homogeneous base model."
        )
    rep = mkv.lattice
    lifted = lift_to_agents(mkv, lattice)
    projection = lattice.project_agent(rep, 0)
    M = lattice.steps

    def expected_w2(values_rep, values_n, step) -> float:
        laws = _group_measures(rep, values_rep, step)
        keys = rep.common_keys(step)[projection[step]]
        costs = np.array(
            [
                w2_discrete(EmpiricalMeasure(values_n[node]), laws[int(key)])
                ** 2
                for node, key in enumerate(keys)
            ]
        )
        return float(lattice.expectation(costs, step))

    sup_w2 = max(
        expected_w2(mkv.Y.values[k], lifted.Y[k], k) for k in range(M + 1)
    )
    representative = model if model.N == 1 else model.representative()
    N = lattice.n_agents
    market = model if model.N == N else model.with_agents(N)
    bundle = model.agents[0]
    c0, c = representative.exogenous_paths(rep)[M]
    g_rep = bundle.dgdx(mkv.X.values[M], c0, c[:, 0])
    c0n, cn = market.exogenous_paths(lattice)[M]
    g_n = np.stack(
        [
            bundle.dgdx(lifted.X[M][:, i], c0n, cn[:, i])
            for i in range(N)
        ],
        axis=1,
    )
    terminal_w2 = expected_w2(g_rep, g_n, M)
    return sup_w2, terminal_w2


def strong_convergence_gap(
    solution: EquilibriumSolution, mkv: MkvSolution
) -> float:
    """
    (1/N) sum_i E[sup|X^i - Xbar^i|^2 + sup|Y^i - Ybar^i|^2 + int ...]
    with Z^{i,j} compared against delta_ij Zbar^{i,i}.
    """
    lattice = solution.lattice
    lifted = lifted_processes(lift_to_agents(mkv, lattice))
    return (
        process_gap_lhs(processes(solution), lifted, lattice)
        / lattice.n_agents
    )


def price_stability_check(
    phi: Sequence[np.ndarray],
    mkv: MkvSolution,
    model: MarketModel,
    lattice: ScenarioLattice,
    terms: Optional[DifferenceTerms] = None,
) -> StabilityReport:
    """
    Price gap to the mean-field limit against the conditional W2 terms
    plus the per-capita coefficient gaps of heterogeneous agents.

    ``model`` is the homogeneous base market; a perturbed population enters
    through ``phi`` and ``terms`` only.
    """
    lhs = sum(price_gap_terms(phi, mkv, lattice))
    rhs = sum(conditional_w2_terms(mkv, model, lattice))
    if terms is not None:
        rhs += terms.rhs(lattice) / lattice.n_agents
    return _report(lhs, rhs)


def calibrate_constant(
    reference: StabilityReport, factor: float = CALIBRATION_FACTOR
) -> float:
    """Constant of an estimate fixed from one reference run."""
    return factor * reference.ratio
