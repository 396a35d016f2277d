"Data schemas for solver diagnostics and experiment reports"

from typing import Dict, List, Optional
from pydantic import BaseModel, Field


class AssumptionCheck(BaseModel):
    passed: bool = Field(..., description="Inequality held on every sample")
    margin: float = Field(
        ..., description="Smallest observed slack of the inequality"
    )
    observed: Optional[float] = Field(
        None, description="Observed constant, e.g. a convexity modulus"
    )


class AssumptionReport(BaseModel):
    """Outcome of validating a model against the standing assumptions."""

    checks: Dict[str, AssumptionCheck] = Field(
        ..., description="Per-inequality pass flag and margin"
    )
    samples: int = Field(..., description="Number of sampled tuples")
    seed: int = Field(..., description="Seed of the sampler")

    @property
    def all_passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    def failures(self) -> List[str]:
        return [
            name for name, check in self.checks.items() if not check.passed
        ]


class SolveDiagnostics(BaseModel):
    solver: str = Field(..., description="picard, newton or mkv")
    iterations: int = Field(..., description="Total iterations")
    residual: float = Field(..., description="Final sup-norm residual")
    residual_history: List[float] = Field(
        default_factory=list, description="Residual after every iteration"
    )
    continuation: List[float] = Field(
        default_factory=list, description="Continuation weights visited"
    )
    cross_z_stored: bool = Field(
        True, description="Whether cross-agent Z blocks were kept"
    )
    condition_estimate: Optional[float] = Field(
        None, description="Newton Jacobian condition number"
    )


class RatePoint(BaseModel):
    N: int = Field(..., description="Population size")
    statistic: str = Field(..., description="Name of the estimated quantity")
    value: float = Field(..., description="Monte Carlo or exact estimate")
    stderr: float = Field(0.0, description="Monte Carlo standard error")
    prediction: Optional[float] = Field(
        None, description="Closed-form prediction where available"
    )


class RateExperimentReport(BaseModel):
    """Empirical convergence rates against the population size."""

    n_grid: List[int] = Field(..., description="Population sizes")
    points: List[RatePoint] = Field(..., description="Per-N estimates")
    slopes: Dict[str, float] = Field(
        ..., description="Fitted log-log slope per statistic"
    )
    intercepts: Dict[str, float] = Field(
        ..., description="Fitted log-log intercept per statistic"
    )
    moment_bounds: Dict[str, float] = Field(
        default_factory=dict,
        description="Empirical 8th moments of the sampled states",
    )


class StabilityReport(BaseModel):
    lhs: float = Field(..., description="Solution-gap side")
    rhs: float = Field(..., description="Coefficient-gap side")
    ratio: float = Field(..., description="lhs / rhs, 0 when both vanish")
