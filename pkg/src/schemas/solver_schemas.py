"Data schemas for solver settings"

from typing import List
from pydantic import BaseModel, ConfigDict, Field, field_validator


class SolverConfig(BaseModel):
    """Damped Picard, continuation and Newton settings."""

    model_config = ConfigDict(extra="forbid")

    damping: float = Field(
        0.5, gt=0.0, le=1.0, description="Picard damping theta"
    )
    tol: float = Field(
        1e-10, gt=0.0, description="Sup-norm tolerance on the Y update"
    )
    max_iters: int = Field(
        2000, ge=1, description="Picard iterations per continuation step"
    )
    schedule: List[float] = Field(
        default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0],
        description="Continuation weights, strictly increasing from 0 to 1",
    )
    newton_enabled: bool = Field(
        True, description="Allow the global Newton oracle"
    )
    newton_size_cap: int = Field(
        20000, ge=1, description="Largest Newton unknown count"
    )
    newton_max_iters: int = Field(
        50, ge=1, description="Newton iterations before giving up"
    )
    newton_tol: float = Field(
        1e-10, gt=0.0, description="Newton residual sup-norm target"
    )
    store_cross_z: bool = Field(
        True,
        description="Store Z blocks of agent i on the noise of agent j != i",
    )
    threads: int = Field(
        1, ge=1, description="Worker threads for per-agent sweeps"
    )
    allow_invalid: bool = Field(
        False,
        description="Solve even when the analytic assumption margins fail",
    )

    @field_validator("schedule")
    @classmethod
    def check_schedule(cls, schedule: List[float]) -> List[float]:
        if not schedule or schedule[0] != 0.0 or schedule[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1.")
        if any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("schedule must be strictly increasing.")
        return schedule
