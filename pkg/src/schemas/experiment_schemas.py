"Data schemas for experiment documents"

from typing import List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.schemas.model_schemas import MarketModelSpec
from src.schemas.solver_schemas import SolverConfig

ExperimentKind = Literal[
    "validate",
    "solve-lattice",
    "solve-newton",
    "solve-mkv",
    "lq-oracle",
    "experiment-convergence",
    "experiment-stability",
    "experiment-clearing",
]

RANDOMIZED_KINDS = ("validate", "lq-oracle", "experiment-convergence")


class LatticeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    M: int = Field(2, ge=1, description="Number of lattice time steps")
    node_limit: int = Field(
        2**24, ge=1, description="Size guard on the total node count"
    )


class ExperimentConfig(BaseModel):
    """One reproducible run; a single JSON document."""

    model_config = ConfigDict(extra="forbid")

    kind: Optional[ExperimentKind] = Field(
        None, description="What to run; the CLI subcommand fills it in"
    )
    model: Optional[MarketModelSpec] = Field(
        None, description="Inline market model document"
    )
    model_file: Optional[str] = Field(
        None,
        description="Path to a model JSON file, relative to the config file",
    )
    lattice: LatticeSpec = Field(
        default_factory=LatticeSpec, description="Scenario lattice size"
    )
    solver: SolverConfig = Field(
        default_factory=SolverConfig, description="Solver settings"
    )
    n_grid: List[int] = Field(
        default_factory=lambda: [10, 100, 1000, 10000],
        description="Population sizes of the rate experiments",
    )
    paths: int = Field(
        2000, ge=0, description="Monte Carlo paths per population size"
    )
    time_steps: int = Field(
        50, ge=1, description="Time steps of the LQ path simulation"
    )
    samples: int = Field(
        10000, ge=1, description="Sampled tuples of the assumption validator"
    )
    seed: Optional[int] = Field(
        None,
        ge=0,
        lt=2**64,
        description="Root seed, required by randomized kinds",
    )
    stability_field: Literal["l0", "gamma_g"] = Field(
        "l0", description="Per-agent parameter perturbed in the stability run"
    )
    stability_steps: List[float] = Field(
        default_factory=lambda: [0.2, 0.1, 0.05],
        description="Perturbation sizes h, the smallest one calibrates C",
    )
    dump_lattice: bool = Field(
        False,
        description="Also write X, Y and phi as per-node lattice rows",
    )
    output_dir: Optional[str] = Field(
        None, description="Artifact directory, overrides MCE_OUTPUT_DIR"
    )

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        if self.model is not None and self.model_file is not None:
            raise ValueError("Give either 'model' or 'model_file', not both.")
        if self.kind in RANDOMIZED_KINDS and self.seed is None:
            raise ValueError(f"Experiment kind '{self.kind}' needs a seed.")
        if any(N < 1 for N in self.n_grid):
            raise ValueError("n_grid entries must be positive.")
        if any(h <= 0 for h in self.stability_steps):
            raise ValueError("stability_steps must be positive.")
        return self
