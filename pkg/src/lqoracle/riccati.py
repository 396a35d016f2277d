import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from src.errors import DegenerateParameterError, DomainError
from src.schemas.model_schemas import LQParams

logger = logging.getLogger(__name__)

MEAN = "mean"
DEVIATION = "deviation"

ODE_RTOL = 1e-11
ODE_ATOL = 1e-13


@dataclass
class RiccatiSolution:
    """
    Loadings of the affine LQ equilibrium on a time grid.

    The average adjoint is P * Xbar + q and the deviation of agent i is
    p * (X^i - Xbar).
    """

    times: np.ndarray
    P: np.ndarray
    p: np.ndarray
    q: np.ndarray
    k: float
    c: float
    k_dev: float
    c_dev: float

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def reconstruct(self, x_levels: Sequence[np.ndarray]) -> List[np.ndarray]:
        """
        Y^i = p (X^i - Xbar) + P Xbar + q for (nodes, N, n) positions.
        """
        out = []
        for k, x in enumerate(x_levels):
            xbar = x.mean(axis=1, keepdims=True)
            out.append(self.p[k] * (x - xbar) + self.P[k] * xbar + self.q[k])
        return out


@dataclass
class GapVarianceSolution:
    """Variance of Xbar^N - xbar and the implied price gap P^2 v."""

    times: np.ndarray
    v: np.ndarray
    P: np.ndarray

    @property
    def predicted_gap(self) -> np.ndarray:
        return self.P**2 * self.v


def terminal_value(params: LQParams, which: str) -> float:
    if which == MEAN:
        return params.gamma_g / (1.0 - params.delta)
    if which == DEVIATION:
        return params.gamma_g
    raise DomainError(f"Unknown Riccati branch '{which}'.")


def _rates(params: LQParams, which: str):
    """(source, quadratic) of dP/dtau = source - quadratic * P^2."""
    if which == MEAN:
        if params.gamma_l == 0.0:
            raise DegenerateParameterError(
                "The mean Riccati equation needs gamma_l != 0."
            )
        return params.gamma_f, params.gamma_l
    if which == DEVIATION:
        if params.lam == 0.0:
            raise DegenerateParameterError(
                "The deviation Riccati equation needs lambda != 0."
            )
        return params.gamma_f, 1.0 / params.lam
    raise DomainError(f"Unknown Riccati branch '{which}'.")


def riccati_constants(params: LQParams, which: str):
    """(k, c) with k the fixed point and c the relaxation rate."""
    source, quadratic = _rates(params, which)
    if source < 0 or quadratic < 0:
        raise DegenerateParameterError(
            f"Closed form needs nonnegative rates, got gamma_f={source}, "
            f"quadratic rate {quadratic}."
        )
    return (
        float(np.sqrt(source / quadratic)),
        float(np.sqrt(source * quadratic)),
    )


def riccati_closed_form(
    params: LQParams, which: str, t: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    Hyperbolic solution of the scalar Riccati equation.

    The mean branch solves dP/dt = gamma_l P^2 - gamma_f with
    P_T = gamma_g / (1 - delta); the deviation branch solves
    dp/dt = p^2 / lambda - gamma_f with p_T = gamma_g.

    Args:
        params (LQParams): LQ coefficients.
        which (str): "mean" or "deviation".
        t (float | np.ndarray): Time(s) in [0, T].

    Returns:
        float | np.ndarray: The loading at ``t``.

    Raises:
        DegenerateParameterError: If gamma_l (mean) or lambda (deviation)
            vanishes.
    """
    source, quadratic = _rates(params, which)
    k, c = riccati_constants(params, which)
    terminal = terminal_value(params, which)
    tau = params.T - np.asarray(t, dtype=float)
    if source == 0.0:
        value = terminal / (1.0 + quadratic * terminal * tau)
    else:
        ch = np.cosh(c * tau)
        sh = np.sinh(c * tau)
        value = k * (terminal * ch + k * sh) / (k * ch + terminal * sh)
    return float(value) if np.ndim(value) == 0 else value


def riccati_rk4(params: LQParams, which: str, steps: int) -> np.ndarray:
    """
    Classical fourth-order Runge-Kutta, integrated backward from T.

    Returns:
        np.ndarray: Loadings at t_0..t_steps, index k at t_k.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1.")
    source, quadratic = _rates(params, which)
    h = params.T / steps

    def rhs(P: float) -> float:
        return source - quadratic * P * P

    values = np.empty(steps + 1)
    P = terminal_value(params, which)
    values[steps] = P
    for k in range(steps - 1, -1, -1):
        k1 = rhs(P)
        k2 = rhs(P + 0.5 * h * k1)
        k3 = rhs(P + 0.5 * h * k2)
        k4 = rhs(P + h * k3)
        P = P + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        values[k] = P
    return values


def riccati_offset(params: LQParams, times: np.ndarray) -> np.ndarray:
    """Mean offset q solving dq/dt = gamma_l P q - P l0 with q_T = 0."""
    times = np.asarray(times, dtype=float)
    if params.l0 == 0.0:
        return np.zeros_like(times)

    def rhs(t, q):
        P = riccati_closed_form(params, MEAN, t)
        return params.gamma_l * P * q - P * params.l0

    sol = solve_ivp(
        rhs,
        (params.T, 0.0),
        [0.0],
        t_eval=times[::-1],
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    if not sol.success:
        raise DegenerateParameterError(f"Offset ODE failed: {sol.message}")
    return sol.y[0][::-1]


def continuous_riccati(params: LQParams, steps: int) -> RiccatiSolution:
    times = np.linspace(0.0, params.T, steps + 1)
    k, c = riccati_constants(params, MEAN)
    k_dev, c_dev = riccati_constants(params, DEVIATION)
    return RiccatiSolution(
        times=times,
        P=np.asarray(riccati_closed_form(params, MEAN, times)),
        p=np.asarray(riccati_closed_form(params, DEVIATION, times)),
        q=riccati_offset(params, times),
        k=k,
        c=c,
        k_dev=k_dev,
        c_dev=c_dev,
    )


def discrete_riccati(
    params: LQParams, steps: int, horizon: Optional[float] = None
) -> RiccatiSolution:
    """
    Loadings of the lattice scheme, exact for the discrete system.

    Backward steps Y_k = E_k[Y_{k+1} + gamma_f X_{k+1} dt] with the
    forward Euler step at t_k give
    P_k = R / (1 + gamma_l R dt) with R = P_{k+1} + gamma_f dt,
    q_k = (q_{k+1} + R l0 dt) / (1 + gamma_l R dt) and
    p_k = r / (1 + r dt / lambda) with r = p_{k+1} + gamma_f dt.

    Args:
        params (LQParams): LQ coefficients.
        steps (int): Number of time steps M.
        horizon (float): Horizon, defaults to params.T.

    Returns:
        RiccatiSolution: P, p, q on t_0..t_M.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1.")
    horizon = params.T if horizon is None else horizon
    dt = horizon / steps
    P = np.empty(steps + 1)
    p = np.empty(steps + 1)
    q = np.empty(steps + 1)
    P[steps] = terminal_value(params, MEAN)
    p[steps] = terminal_value(params, DEVIATION)
    q[steps] = 0.0
    for k in range(steps - 1, -1, -1):
        R = P[k + 1] + params.gamma_f * dt
        scale = 1.0 + params.gamma_l * R * dt
        if scale == 0.0:
            raise DegenerateParameterError(
                f"Mean recursion breaks at step {k}."
            )
        P[k] = R / scale
        q[k] = (q[k + 1] + R * params.l0 * dt) / scale
        r = p[k + 1] + params.gamma_f * dt
        p[k] = r / (1.0 + r * dt / params.lam)

    try:
        k_mean, c_mean = riccati_constants(params, MEAN)
    except DegenerateParameterError:
        k_mean, c_mean = float("nan"), float("nan")
    k_dev, c_dev = riccati_constants(params, DEVIATION)
    return RiccatiSolution(
        times=np.linspace(0.0, horizon, steps + 1),
        P=P,
        p=p,
        q=q,
        k=k_mean,
        c=c_mean,
        k_dev=k_dev,
        c_dev=c_dev,
    )


def noise_trace(params: LQParams, n: int = 1, d: int = 1) -> float:
    """tr(sigma sigma^T) of the idiosyncratic volatility sigma * I_{n x d}."""
    return params.sigma**2 * min(n, d)


def _variance_ode(rate, source: float, v0: float, times: np.ndarray):
    """Integrates v' = -2 rate(t) v + source forward over ``times``."""

    def rhs(t, v):
        return -2.0 * rate(t) * v + source

    sol = solve_ivp(
        rhs,
        (times[0], times[-1]),
        [v0],
        t_eval=times,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    if not sol.success:
        raise DegenerateParameterError(f"Variance ODE failed: {sol.message}")
    return sol.y[0]


def _variance_recursion(
    factors: np.ndarray, source: float, v0: float
) -> np.ndarray:
    """v_{k+1} = factors_k^2 v_k + source."""
    v = np.empty(len(factors) + 1)
    v[0] = v0
    for k, factor in enumerate(factors):
        v[k + 1] = factor**2 * v[k] + source
    return v


def gap_variance(
    params: LQParams, N: int, steps: int = 1000, n: int = 1, d: int = 1
) -> GapVarianceSolution:
    """
    E|Xbar^N_t - xbar_t|^2 from v' = -2 gamma_l P v + tr / N.

    Xbar^N - xbar mean-reverts at rate gamma_l P and is driven by the
    averaged idiosyncratic noise; v(0) = s0^2 n / N.
    """
    if N < 1:
        raise DomainError("N must be >= 1.")
    times = np.linspace(0.0, params.T, steps + 1)
    v = _variance_ode(
        lambda t: params.gamma_l * riccati_closed_form(params, MEAN, t),
        noise_trace(params, n, d) / N,
        params.s0**2 * n / N,
        times,
    )
    P = np.asarray(riccati_closed_form(params, MEAN, times))
    return GapVarianceSolution(times=times, v=v, P=P)


def discrete_gap_variance(
    params: LQParams, N: int, steps: int, n: int = 1, d: int = 1
) -> GapVarianceSolution:
    """Scheme-exact v_{k+1} = (1 - gamma_l P_k dt)^2 v_k + tr dt / N."""
    riccati = discrete_riccati(params, steps)
    dt = riccati.dt
    v = _variance_recursion(
        1.0 - params.gamma_l * riccati.P[:-1] * dt,
        noise_trace(params, n, d) * dt / N,
        params.s0**2 * n / N,
    )
    return GapVarianceSolution(times=riccati.times, v=v, P=riccati.P)


def clearing_variance(
    params: LQParams, N: int, steps: int = 1000, n: int = 1, d: int = 1
) -> GapVarianceSolution:
    """
    Variance u of the population mean of X^i - E[X^i | common noise] when
    every agent best-responds to the mean-field price.

    The per-capita aggregate trade is -(p / lambda) times that mean, so
    its second moment is (p / lambda)^2 u. The ``P`` field holds
    p / lambda.
    """
    times = np.linspace(0.0, params.T, steps + 1)
    u = _variance_ode(
        lambda t: riccati_closed_form(params, DEVIATION, t) / params.lam,
        noise_trace(params, n, d) / N,
        params.s0**2 * n / N,
        times,
    )
    loading = np.asarray(riccati_closed_form(params, DEVIATION, times))
    return GapVarianceSolution(times=times, v=u, P=loading / params.lam)


def discrete_clearing_variance(
    params: LQParams, N: int, steps: int, n: int = 1, d: int = 1
) -> GapVarianceSolution:
    """u_{k+1} = (1 - p_k dt / lambda)^2 u_k + tr dt / N."""
    riccati = discrete_riccati(params, steps)
    dt = riccati.dt
    u = _variance_recursion(
        1.0 - riccati.p[:-1] * dt / params.lam,
        noise_trace(params, n, d) * dt / N,
        params.s0**2 * n / N,
    )
    return GapVarianceSolution(
        times=riccati.times, v=u, P=riccati.p / params.lam
    )


def conditional_deviation_variance(
    params: LQParams, steps: int
) -> np.ndarray:
    """
    Per-coordinate variance w_k of X^i - E[X^i | common noise] for one
    agent facing the mean-field price: w_{k+1} = (1 - p_k dt /
    lambda)^2 w_k + sigma^2 dt, w_0 = s0^2.

    Given the common noise, Ybar^i is Gaussian with mean m_k and
    variance p_k^2 w_k.
    """
    riccati = discrete_riccati(params, steps)
    dt = riccati.dt
    return _variance_recursion(
        1.0 - riccati.p[:-1] * dt / params.lam,
        params.sigma**2 * dt,
        params.s0**2,
    )
