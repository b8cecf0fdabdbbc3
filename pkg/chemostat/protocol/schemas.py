import warnings
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from chemostat.protocol.enums import CaseLabel

BREAK_EVEN_TOLERANCE = 1e-9


class GrowthCurve(BaseModel):
    """Dimensionless Monod kinetics with death rate: a*z/(b+z) - gamma"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float = Field(..., gt=0, description="Dimensionless maximum growth rate")
    b: float = Field(..., gt=0, description="Dimensionless Michaelis constant")
    gamma: float = Field(0.0, ge=0, description="Dimensionless death rate, 0 recovers the no-death model")

    @model_validator(mode="after")
    def check_break_even(self) -> "GrowthCurve":
        # Off-manifold curves are allowed for parameter exploration
        expected = self.a / (self.b + 1.0) - 1.0
        if abs(self.gamma - expected) > BREAK_EVEN_TOLERANCE:
            warnings.warn(
                f"gamma={self.gamma} differs from a/(b+1)-1={expected:.12g}; curve does not pass through (1, 1)",
                stacklevel=2,
            )
        return self

    @classmethod
    def from_break_even(cls, a: float, b: float) -> "GrowthCurve":
        """Build the curve whose death rate places the break-even point at z=1."""
        return cls(a=a, b=b, gamma=max(a / (b + 1.0) - 1.0, 0.0))

    @property
    def asymptotic_rate(self) -> float:
        """Growth rate as z -> infinity."""
        return self.a - self.gamma


class GeneralNoise(BaseModel):
    """Independent multiplicative noise on x, y and z"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["general"] = "general"
    sigma1: float = Field(0.0, ge=0, description="Noise intensity on x")
    sigma2: float = Field(0.0, ge=0, description="Noise intensity on y")
    sigma3: float = Field(0.0, ge=0, description="Noise intensity on z")

    @property
    def n_channels(self) -> int:
        return 3


class DilutionRateNoise(BaseModel):
    """Noise on the dilution rate, one Wiener process shared by all three equations"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["dilution_rate"] = "dilution_rate"
    sigma: float = Field(0.0, ge=0, description="Noise intensity")
    sigma_z: Optional[float] = Field(None, ge=0, description="Optional reduced intensity in the substrate equation")

    @property
    def n_channels(self) -> int:
        return 1

    @property
    def substrate_sigma(self) -> float:
        return self.sigma if self.sigma_z is None else self.sigma_z


class NoNoise(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["none"] = "none"

    @property
    def n_channels(self) -> int:
        return 1


NoiseSpec = Annotated[Union[GeneralNoise, DilutionRateNoise, NoNoise], Field(discriminator="kind")]


class ChemostatParams(BaseModel):
    """Full dimensionless configuration of the two-population chemostat"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    theta: float = Field(..., gt=0, description="Dimensionless dilution rate (mean rate under dilution noise)")
    z_f: float = Field(..., description="Dimensionless substrate feed")
    curve_x: GrowthCurve = Field(..., description="Growth curve of population x")
    curve_y: GrowthCurve = Field(..., description="Growth curve of population y")
    noise: NoiseSpec = Field(default_factory=NoNoise, description="Noise structure")

    @field_validator("z_f")
    @classmethod
    def validate_z_f(cls, v: float) -> float:
        if not v > 1:
            raise ValueError("z_f > 1 required")
        return v

    @property
    def has_death(self) -> bool:
        return self.curve_x.gamma > 0 or self.curve_y.gamma > 0

    def with_updates(self, **changes) -> "ChemostatParams":
        """Copy with validated field changes; dotted keys address curve fields, e.g. 'curve_x.gamma'."""
        data = self.model_dump()
        for key, value in changes.items():
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = value
        return ChemostatParams.model_validate(data)


class MonodCurve(BaseModel):
    """Dimensional Monod growth with death: mu_m*s/(K_s+s) - d"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mu_m: float = Field(..., gt=0, description="Maximum specific growth rate per unit time")
    K_s: float = Field(..., gt=0, description="Michaelis constant")
    d: float = Field(0.0, ge=0, description="Death rate per unit time")

    def rate(self, s: float) -> float:
        return self.mu_m * s / (self.K_s + s) - self.d


class DimensionalParams(BaseModel):
    """Dimensional chemostat: two populations, yields, feed and dilution"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mu_m: Tuple[float, float] = Field(..., description="Maximum specific growth rates")
    K_s: Tuple[float, float] = Field(..., description="Michaelis constants")
    d: Tuple[float, float] = Field((0.0, 0.0), description="Death rates")
    Y: Tuple[float, float] = Field((1.0, 1.0), description="Yield coefficients")
    s_f: float = Field(..., gt=0, description="Feed substrate concentration")
    q_over_V: float = Field(..., gt=0, description="Dilution rate per unit time")

    @field_validator("mu_m", "K_s", "Y")
    @classmethod
    def validate_positive(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if min(v) <= 0:
            raise ValueError("values must be strictly positive")
        return v

    @field_validator("d")
    @classmethod
    def validate_death(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if min(v) < 0:
            raise ValueError("death rates must be non-negative")
        return v

    def curve(self, index: int) -> MonodCurve:
        return MonodCurve(mu_m=self.mu_m[index], K_s=self.K_s[index], d=self.d[index])


class IntersectionReport(BaseModel):
    roots: List[float] = Field(default_factory=list, description="Substrate values where the curves cross")
    case_label: CaseLabel = Field(..., description="Crossing geometry")
    growth_at_roots: List[float] = Field(default_factory=list, description="Common growth rate at each root")
    coefficients: Tuple[float, float, float] = Field(..., description="Quadratic coefficients (A, B, C)")


class OdeControls(BaseModel):
    """Tolerances and output grid of a deterministic integration"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    rtol: float = Field(1e-9, gt=0, description="Relative tolerance")
    atol_fraction: float = Field(1e-9, gt=0, description="Absolute tolerance as a fraction of z_f")
    method: Literal["RK45", "DOP853", "LSODA", "Radau", "BDF"] = Field("RK45", description="scipy solve_ivp method")
    n_output: int = Field(201, ge=2, description="Number of equally spaced output times including 0 and t_end")
    max_step: Optional[float] = Field(None, gt=0, description="Optional cap on the integrator step")

    def halved(self) -> "OdeControls":
        return self.model_copy(update={"rtol": self.rtol / 2, "atol_fraction": self.atol_fraction / 2})
