"Data schemas for market model documents"

from typing import List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


class LQParams(BaseModel):
    """Linear-quadratic coefficient family."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    gamma_f: float = Field(
        1.0, description="Curvature of the running inventory cost"
    )
    gamma_g: float = Field(
        1.0, description="Curvature of the terminal inventory cost"
    )
    gamma_l: float = Field(
        1.0, description="Sensitivity of the order flow to the price"
    )
    lam: float = Field(
        1.0,
        alias="lambda",
        description="Scalar exchange fee, the fee matrix is lambda * I",
    )
    sigma0: float = Field(
        0.0, description="Common-noise volatility (position/sqrt(time))"
    )
    sigma: float = Field(
        0.0, description="Idiosyncratic volatility (position/sqrt(time))"
    )
    l0: float = Field(
        0.0, description="Constant baseline order flow (position/time)"
    )
    m0: float = Field(0.0, description="Mean of the initial position")
    s0: float = Field(
        0.0, ge=0.0, description="Standard deviation of the initial position"
    )
    delta: float = Field(
        0.0, description="Terminal discount applied to the price"
    )
    T: float = Field(1.0, gt=0.0, description="Horizon (time units)")


class PerturbationParams(BaseModel):
    """Smooth non-quadratic additions to the LQ family."""

    model_config = ConfigDict(extra="forbid")

    epsilon_f: float = Field(
        0.0,
        ge=0.0,
        description="Weight of sum(log cosh(x)) in the running cost",
    )
    epsilon_g: float = Field(
        0.0,
        ge=0.0,
        description="Weight of sum(log cosh(x)) in the terminal cost",
    )
    kappa: float = Field(
        0.0, ge=0.0, description="Weight of tanh added to the order flow"
    )
    rho: float = Field(
        0.0, description="Price coupling rho * <x, phi> in the running cost"
    )
    flow_loading: float = Field(
        0.0,
        description="Loading of the exogenous processes c0 + c in the flow",
    )


class CoefficientSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: Literal["lq", "perturbed"] = Field(
        "lq", description="Built-in coefficient family"
    )
    lq: LQParams = Field(
        default_factory=LQParams, description="Quadratic part"
    )
    perturbation: Optional[PerturbationParams] = Field(
        None, description="Smooth additions, family 'perturbed' only"
    )

    @model_validator(mode="after")
    def check_family(self):
        if self.family == "lq" and self.perturbation is not None:
            raise ValueError("family 'lq' does not take a perturbation.")
        return self


class InitialLawSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: Literal["gaussian", "two_point"] = Field(
        "gaussian", description="Distribution family of the initial position"
    )


class ExogenousSpec(BaseModel):
    """c0 = c0_level + c0_slope * W0 and c = c_level + c_slope * W."""

    model_config = ConfigDict(extra="forbid")

    c0_level: float = Field(0.0, description="Constant part of c0")
    c0_slope: float = Field(0.0, description="Loading of c0 on W0")
    c_level: float = Field(0.0, description="Constant part of c")
    c_slope: float = Field(0.0, description="Loading of c on the agent noise")


class MarketModelSpec(BaseModel):
    """JSON document describing a market instance."""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(1, ge=1, description="Number of securities")
    d0: int = Field(1, ge=0, description="Common-noise dimension")
    d: int = Field(1, ge=0, description="Idiosyncratic-noise dimension")
    N: int = Field(2, ge=1, description="Number of agents")
    coefficients: CoefficientSpec = Field(
        default_factory=CoefficientSpec,
        description="Base coefficient bundle shared by the agents",
    )
    agents: Optional[List[CoefficientSpec]] = Field(
        None, description="Per-agent bundles overriding the base bundle"
    )
    Lambda: Optional[List[List[float]]] = Field(
        None, description="Fee matrix, defaults to lambda * I"
    )
    initial_law: InitialLawSpec = Field(
        default_factory=InitialLawSpec, description="Initial position law"
    )
    exogenous: ExogenousSpec = Field(
        default_factory=ExogenousSpec, description="Exogenous processes"
    )

    @model_validator(mode="after")
    def check_agents(self):
        if self.agents is not None and len(self.agents) != self.N:
            raise ValueError(
                f"agents lists {len(self.agents)} bundles, expected "
                f"N={self.N}."
            )
        return self
