import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.errors import DomainError, UnsupportedFamilyError
from src.lqoracle.riccati import (
    RiccatiSolution,
    discrete_riccati,
)
from src.model.coefficients import rectangular_identity
from src.schemas.model_schemas import LQParams

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096


@dataclass
class PathEnsemble:
    """
    Simulated LQ equilibrium paths, arrays are (paths, steps + 1, n).

    ``deviations`` holds X^i - xbar for the first few agents under the
    mean-field price, (paths, steps + 1, agents, n), when requested.
    """

    times: np.ndarray
    phi_ho: np.ndarray
    phi_mfg: np.ndarray
    xbar_N: np.ndarray
    xbar: np.ndarray
    riccati: RiccatiSolution
    deviations: Optional[np.ndarray] = None

    @property
    def paths(self) -> int:
        return self.phi_ho.shape[0]

    def mean_field_adjoints(self) -> np.ndarray:
        """Ybar^i = m + p (X^i - xbar) with m = P xbar + q."""
        if self.deviations is None:
            raise DomainError("The ensemble was simulated without agents.")
        p = self.riccati.p[None, :, None, None]
        m = -self.phi_mfg[:, :, None, :]
        return m + p * self.deviations

    def squared_price_gap(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-step mean of |phi_ho - phi_mfg|^2 and its standard error."""
        gap = np.sum((self.phi_ho - self.phi_mfg) ** 2, axis=-1)
        stderr = gap.std(axis=0, ddof=1) / np.sqrt(self.paths)
        return gap.mean(axis=0), stderr


def _simulate_block(
    params: LQParams,
    riccati: RiccatiSolution,
    N: int,
    paths: int,
    n: int,
    d0: int,
    d: int,
    agents: int,
    seed: np.random.SeedSequence,
):
    rng = np.random.default_rng(seed)
    steps = len(riccati.times) - 1
    dt = riccati.dt
    root_dt = np.sqrt(dt)
    common_map = params.sigma0 * rectangular_identity(n, d0).T
    own_map = params.sigma * rectangular_identity(n, d).T

    xbar_N = np.empty((paths, steps + 1, n))
    xbar = np.empty((paths, steps + 1, n))
    xbar_N[:, 0] = params.m0 + params.s0 / np.sqrt(N) * rng.standard_normal(
        (paths, n)
    )
    xbar[:, 0] = params.m0
    dev = None
    if agents:
        dev = np.empty((paths, steps + 1, agents, n))
        dev[:, 0] = params.s0 * rng.standard_normal((paths, agents, n))

    for k in range(steps):
        dw0 = root_dt * rng.standard_normal((paths, d0)) @ common_map
        db = root_dt * rng.standard_normal((paths, d)) @ own_map
        drift_N = -params.gamma_l * (
            riccati.P[k] * xbar_N[:, k] + riccati.q[k]
        )
        drift = -params.gamma_l * (riccati.P[k] * xbar[:, k] + riccati.q[k])
        xbar_N[:, k + 1] = (
            xbar_N[:, k] + (drift_N + params.l0) * dt + dw0 + db / np.sqrt(N)
        )
        xbar[:, k + 1] = xbar[:, k] + (drift + params.l0) * dt + dw0
        if agents:
            dwi = root_dt * rng.standard_normal((paths, agents, d)) @ own_map
            dev[:, k + 1] = (
                1.0 - riccati.p[k] * dt / params.lam
            ) * dev[:, k] + dwi
    return xbar_N, xbar, dev


def simulate_lq(
    params: LQParams,
    N: int,
    steps: int,
    paths: int,
    seed: int,
    n: int = 1,
    d0: int = 1,
    d: int = 1,
    agents: int = 0,
    initial_family: str = "gaussian",
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> PathEnsemble:
    """
    Exact-in-law simulation of the N-agent and mean-field LQ prices.

    Xbar^N follows the scheme's average dynamics driven by
    sigma0 dW0 + sigma dB / sqrt(N), which has the law of the averaged
    idiosyncratic noise; xbar uses the same common draw. Prices are
    phi_ho = -(P Xbar^N + q) and phi_mfg = -(P xbar + q).

    Args:
        params (LQParams): LQ coefficients.
        N (int): Number of agents.
        steps (int): Time steps.
        paths (int): Number of paths.
        seed (int): Root seed; block b uses the b-th spawned stream.
        n, d0, d (int): Dimensions.
        agents (int): Number of per-agent deviation paths to keep.
        initial_family (str): Only "gaussian" is supported.
        threads (int): Worker threads over path blocks.
        block_size (int): Paths per RNG stream.

    Returns:
        PathEnsemble: Paths combined in block order.
    """
    if initial_family != "gaussian":
        raise UnsupportedFamilyError(
            f"Path simulation needs a Gaussian initial law, got "
            f"'{initial_family}'."
        )
    if N < 1 or paths < 1 or steps < 1:
        raise DomainError("N, paths and steps must be >= 1.")
    riccati = discrete_riccati(params, steps)
    counts = [
        min(block_size, paths - start) for start in range(0, paths, block_size)
    ]
    streams = np.random.SeedSequence(seed).spawn(len(counts))

    def run(block: int):
        return _simulate_block(
            params, riccati, N, counts[block], n, d0, d, agents, streams[block]
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, range(len(counts))))
    else:
        blocks = [run(b) for b in range(len(counts))]

    xbar_N = np.concatenate([b[0] for b in blocks])
    xbar = np.concatenate([b[1] for b in blocks])
    deviations = np.concatenate([b[2] for b in blocks]) if agents else None
    P = riccati.P[None, :, None]
    q = riccati.q[None, :, None]
    logger.info(
        f"Simulated {paths} LQ paths for N={N} over {steps} steps "
        f"in {len(counts)} blocks"
    )
    return PathEnsemble(
        times=riccati.times,
        phi_ho=-(P * xbar_N + q),
        phi_mfg=-(P * xbar + q),
        xbar_N=xbar_N,
        xbar=xbar,
        riccati=riccati,
        deviations=deviations,
    )
