import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional, Tuple

import numpy as np

from src.model.market import MarketModel
from src.schemas.report_schemas import AssumptionCheck, AssumptionReport

logger = logging.getLogger(__name__)

Draw = Dict[str, np.ndarray]
ChunkResult = Dict[str, Tuple[float, Optional[float]]]

FD_STEP = 1e-5
FD_TOLERANCE = 1e-6


def _norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v, axis=-1)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


class AssumptionValidator:
    def __init__(
        self,
        model: MarketModel,
        box: float = 5.0,
        chunk_size: int = 2500,
        threads: int = 1,
        group_size: int = 8,
        tolerance: float = 1e-9,
    ):
        """
        Sampling checks of the convexity, Lipschitz, growth and
        monotonicity conditions a market model must satisfy.

        Args:
            model (MarketModel): The model to check.
            box (float): Half-width of the sampling box per coordinate.
            chunk_size (int): Samples per independently seeded chunk.
            threads (int): Worker threads over chunks.
            group_size (int): Members per group when sampling conditional
                expectations.
            tolerance (float): Slack granted to rounding.
        """
        if not isinstance(model, MarketModel):
            raise ValueError("model must be a MarketModel.")
        if box <= 0:
            raise ValueError("box must be positive.")
        if not isinstance(chunk_size, int) or chunk_size <= 0:
            raise ValueError("chunk_size must be a positive integer.")
        if not isinstance(threads, int) or threads <= 0:
            raise ValueError("threads must be a positive integer.")
        if not isinstance(group_size, int) or group_size < 2:
            raise ValueError("group_size must be an integer >= 2.")

        self.model = model
        self.box = box
        self.chunk_size = chunk_size
        self.threads = threads
        self.group_size = group_size
        self.tolerance = tolerance
        bundles = model.agents
        self.L = max(b.L for b in bundles)
        self.L_phi = max(b.L_phi for b in bundles)
        self.gamma_f = min(b.gamma_f for b in bundles)
        self.gamma_g = min(b.gamma_g for b in bundles)
        self.gamma_l = min(b.gamma_l for b in bundles)
        # l identically flat makes gamma -inf; keep reports finite
        self.gamma = max(
            min(b.gamma() for b in bundles), -np.finfo(float).max
        )

    def validate(self, samples: int, seed: int) -> AssumptionReport:
        """
        Samples tuples, evaluates every inequality and keeps the worst
        slack of each.

        Args:
            samples (int): Number of sampled tuples.
            seed (int): Seed of the sampler.

        Returns:
            AssumptionReport: Pass flags and minimal margins.
        """
        if not isinstance(samples, int) or samples < 1:
            raise ValueError("samples must be a positive integer.")
        sizes = [
            min(self.chunk_size, samples - start)
            for start in range(0, samples, self.chunk_size)
        ]
        streams = np.random.SeedSequence(seed).spawn(len(sizes))
        jobs = list(zip(streams, sizes))
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(lambda j: self._chunk(*j), jobs))
        else:
            results = [self._chunk(*job) for job in jobs]

        merged: ChunkResult = {}
        for result in results:
            for name, (margin, observed) in result.items():
                if name not in merged:
                    merged[name] = (margin, observed)
                    continue
                old_margin, old_observed = merged[name]
                merged[name] = (
                    min(old_margin, margin),
                    None if observed is None else min(old_observed, observed),
                )

        checks = self._judge(merged)
        for name, check in checks.items():
            if not check.passed:
                logger.warning(
                    f"Assumption check '{name}' failed with margin "
                    f"{check.margin:.3e}"
                )
        return AssumptionReport(checks=checks, samples=samples, seed=seed)

    def _draw(self, rng: np.random.Generator, size: int) -> Draw:
        n, N, B = self.model.n, self.model.N, self.box

        def box(*shape):
            return rng.uniform(-B, B, size=shape)

        return {
            "t": rng.uniform(0.0, self.model.T, size=(size, 1)),
            "x": box(size, n),
            "xp": box(size, n),
            "phi": box(size, n),
            "phip": box(size, n),
            "c0": box(size, n),
            "c": box(size, n),
            "X": box(size, N, n),
            "Xp": box(size, N, n),
            "C": box(size, N, n),
            "G": box(size, self.group_size, n),
            "Gp": box(size, self.group_size, n),
        }

    def _chunk(
        self, stream: np.random.SeedSequence, size: int
    ) -> ChunkResult:
        draw = self._draw(np.random.default_rng(stream), size)
        result: ChunkResult = {}
        for bundle_index in range(len(self.model.agents)):
            for name, (margins, observed) in self._pointwise(
                draw, bundle_index
            ).items():
                value = (
                    float(np.min(margins)),
                    None if observed is None else float(np.min(observed)),
                )
                if name in result:
                    value = (
                        min(result[name][0], value[0]),
                        None
                        if value[1] is None
                        else min(result[name][1], value[1]),
                    )
                result[name] = value
        for name, value in self._population(draw).items():
            result[name] = value
        return result

    def _pointwise(
        self, draw: Draw, agent: int
    ) -> Dict[str, Tuple[np.ndarray, Optional[np.ndarray]]]:
        bundle = self.model.agents[agent]
        t, x, xp = draw["t"], draw["x"], draw["xp"]
        phi, phip, c0, c = draw["phi"], draw["phip"], draw["c0"], draw["c"]
        L, L_phi = self.L, self.L_phi

        f = bundle.fbar(t, x, phi, c0, c)
        g = bundle.gbar(x, c0, c)
        df, dfp = bundle.dfdx(t, x, phi, c0, c), bundle.dfdx(t, xp, phi, c0, c)
        dg, dgp = bundle.dgdx(x, c0, c), bundle.dgdx(xp, c0, c)
        size = (
            1.0
            + _dot(x, x)
            + _dot(phi, phi)
            + _dot(c0, c0)
            + _dot(c, c)
        )
        linear = 1.0 + _norm(x) + _norm(phi) + _norm(c0) + _norm(c)
        dx = x - xp
        dx2 = np.maximum(_dot(dx, dx), 1e-300)

        vol_norm = np.linalg.norm(
            bundle.vol0(t, c0, c), axis=(-2, -1)
        ) + np.linalg.norm(bundle.vol(t, c0, c), axis=(-2, -1))
        flow = bundle.flow(t, phi, c0, c)
        flow_p = bundle.flow(t, phip, c0, c)
        dfp_phi = bundle.dfdx(t, x, phip, c0, c)

        convex_f = _dot(dx, df - dfp) / dx2
        convex_g = _dot(dx, dg - dgp) / dx2

        return {
            "cost_growth": (L * size - (np.abs(f) + np.abs(g)), None),
            "gradient_lipschitz": (
                L * _norm(dx) - (_norm(df - dfp) + _norm(dg - dgp)),
                None,
            ),
            "gradient_growth": (L * linear - (_norm(df) + _norm(dg)), None),
            "convexity_f": (
                np.minimum(convex_f - bundle.gamma_f, convex_f),
                convex_f,
            ),
            "convexity_g": (
                np.minimum(convex_g - bundle.gamma_g, convex_g),
                convex_g,
            ),
            "flow_growth": (
                L * (1.0 + _norm(phi) + _norm(c0) + _norm(c))
                - (_norm(flow) + vol_norm),
                None,
            ),
            "price_lipschitz": (
                L_phi * _norm(phi - phip)
                - (_norm(df - dfp_phi) + _norm(flow - flow_p)),
                None,
            ),
            "gradient_consistency": (
                FD_TOLERANCE - self._gradient_error(bundle, draw), None
            ),
        }

    def _gradient_error(self, bundle, draw: Draw) -> np.ndarray:
        t, x, phi, c0, c = (
            draw["t"],
            draw["x"],
            draw["phi"],
            draw["c0"],
            draw["c"],
        )
        df = bundle.dfdx(t, x, phi, c0, c)
        dg = bundle.dgdx(x, c0, c)
        worst = np.zeros(x.shape[0])
        for r in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[r] = FD_STEP
            fd_f = (
                bundle.fbar(t, x + e, phi, c0, c)
                - bundle.fbar(t, x - e, phi, c0, c)
            ) / (2 * FD_STEP)
            fd_g = (bundle.gbar(x + e, c0, c) - bundle.gbar(x - e, c0, c)) / (
                2 * FD_STEP
            )
            err_f = np.abs(fd_f - df[:, r]) / np.maximum(1.0, np.abs(df[:, r]))
            err_g = np.abs(fd_g - dg[:, r]) / np.maximum(1.0, np.abs(dg[:, r]))
            worst = np.maximum(worst, np.maximum(err_f, err_g))
        return worst

    def _population(self, draw: Draw) -> ChunkResult:
        model = self.model
        N, delta = model.N, model.delta
        t, X, Xp = draw["t"], draw["X"], draw["Xp"]
        C, c0 = draw["C"], draw["c0"]
        result: ChunkResult = {}

        xbar, xbar_p = X.mean(axis=1), Xp.mean(axis=1)
        dbar = xbar - xbar_p
        dbar2 = np.maximum(_dot(dbar, dbar), 1e-300)
        lhs = np.zeros(X.shape[0])
        for i, bundle in enumerate(model.agents):
            lhs += _dot(
                bundle.flow(t, xbar, c0, C[:, i])
                - bundle.flow(t, xbar_p, c0, C[:, i]),
                X[:, i] - Xp[:, i],
            )
        modulus = lhs / (N * dbar2)
        result["flow_monotonicity"] = (
            float(np.min(modulus - self.gamma_l)),
            float(np.min(modulus)),
        )

        grads = model.terminal_gradients(X, c0, C)
        grads_p = model.terminal_gradients(Xp, c0, C)
        mean_gap = grads.mean(axis=1) - grads_p.mean(axis=1)
        dX = X - Xp
        spread = np.maximum(np.sum(dX * dX, axis=(1, 2)), 1e-300)
        tilt = np.sum(_dot(mean_gap[:, None, :], dX), axis=1)
        excess = self.gamma - self.gamma_g
        slack = delta / (1 - delta) * tilt - excess * spread
        result["terminal_monotonicity"] = (
            float(np.min(slack / spread)),
            None,
        )

        if model.homogeneous:
            bundle = model.agents[0]
            G, Gp = draw["G"], draw["Gp"]
            dG = G - Gp
            cond = G.mean(axis=1, keepdims=True)
            cond_p = Gp.mean(axis=1, keepdims=True)
            t_g = t[:, :, None]
            c0_g = c0[:, None, :]
            flow_gap = bundle.flow(t_g, cond, c0_g, 0.0) - bundle.flow(
                t_g, cond_p, c0_g, 0.0
            )
            cond_gap = np.broadcast_to(cond - cond_p, dG.shape)
            lhs = np.mean(_dot(flow_gap, dG), axis=1)
            rhs = np.mean(_dot(cond_gap, cond_gap), axis=1)
            modulus = lhs / np.maximum(rhs, 1e-300)
            result["conditional_flow_monotonicity"] = (
                float(np.min(modulus - bundle.gamma_l)),
                float(np.min(modulus)),
            )

            g_gap = bundle.dgdx(G, c0_g, 0.0) - bundle.dgdx(Gp, c0_g, 0.0)
            cond_g_gap = np.broadcast_to(
                g_gap.mean(axis=1, keepdims=True), dG.shape
            )
            tilt = np.mean(_dot(cond_g_gap, dG), axis=1)
            spread = np.maximum(np.mean(_dot(dG, dG), axis=1), 1e-300)
            slack = (
                delta / (1 - delta) * tilt
                - (self.gamma - self.gamma_g) * spread
            )
            result["conditional_terminal_monotonicity"] = (
                float(np.min(slack / spread)),
                None,
            )
        return result

    def _judge(self, merged: ChunkResult) -> Dict[str, AssumptionCheck]:
        tol = self.tolerance
        model = self.model
        checks: Dict[str, AssumptionCheck] = {}

        checks["fee_matrix_definite"] = AssumptionCheck(
            passed=model.lambda_min > 0,
            margin=model.lambda_min,
            observed=model.lambda_min,
        )
        checks["discount_range"] = AssumptionCheck(
            passed=0.0 <= model.delta < 1.0,
            margin=min(model.delta, 1.0 - model.delta),
        )
        constants = [
            value
            for b in model.agents
            for value in (b.gamma_f, b.gamma_g, b.gamma_l, b.L, b.L_phi)
        ]
        checks["constants_nonnegative"] = AssumptionCheck(
            passed=min(constants) >= 0.0, margin=min(constants)
        )
        checks["gamma_compatibility"] = AssumptionCheck(
            passed=self.gamma > 0.0, margin=self.gamma, observed=self.gamma
        )

        for name, (margin, observed) in merged.items():
            scale = 1.0 if observed is None else max(1.0, abs(observed))
            passed = margin >= -tol * scale
            if name in ("flow_monotonicity", "conditional_flow_monotonicity"):
                passed = passed and self.gamma_l > 0.0
                margin = min(margin, self.gamma_l)
            if name == "conditional_terminal_monotonicity":
                passed = passed and self.gamma > 0.0
            checks[name] = AssumptionCheck(
                passed=bool(passed), margin=margin, observed=observed
            )
        return checks


def validate_assumptions(
    model: MarketModel,
    samples: int = 10_000,
    seed: int = 0,
    box: float = 5.0,
    threads: int = 1,
) -> AssumptionReport:
    return AssumptionValidator(model, box=box, threads=threads).validate(
        samples, seed
    )
