"""
Run Configuration
One JSON document per run; command-line flags override only the seed and the output directory
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from mechanism_engine.distributions import DensitySpec
from mechanism_engine.menu_core import MechanismKind
from mechanism_engine.training import TrainConfig

Command = Literal["train", "connect", "audit", "reduce", "discretize", "eval", "gap", "landscape"]

# Input files each command reads (menus, or a path for audit)
INPUT_COUNTS = {
    "train": (0, 0),
    "connect": (2, 2),
    "audit": (1, 2),
    "reduce": (1, 1),
    "discretize": (1, 1),
    "eval": (1, 1),
    "gap": (0, 1),
    "landscape": (0, 0),
}

NEEDS_DISTRIBUTION = {"train", "audit", "reduce", "eval", "landscape"}


class TrainSection(TrainConfig):
    """Training hyperparameters plus the mechanism shape; the seed comes from the run"""
    kind: MechanismKind = MechanismKind.ROCHET
    num_buyers: int = Field(1, ge=1)
    num_items: int = Field(1, ge=1)

    def train_config(self, seed: int) -> TrainConfig:
        fields = self.model_dump(include=set(TrainConfig.model_fields))
        fields["seed"] = seed
        return TrainConfig(**fields)


class ConnectSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["zero", "reducible", "large"]
    epsilon: Optional[float] = Field(None, gt=0.0, le=1.0)
    reduction_sets: Optional[List[List[int]]] = Field(None, min_length=2, max_length=2)
    enforce_threshold: bool = True

    @model_validator(mode="after")
    def check_mode_fields(self) -> "ConnectSection":
        if self.mode == "large" and self.epsilon is None:
            raise ValueError("mode 'large' needs epsilon")
        if self.mode != "large" and self.reduction_sets is None:
            raise ValueError(f"mode '{self.mode}' needs reduction_sets [K1, K2]")
        return self


class AuditSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(10_000, ge=1)
    grid_points: int = Field(11, ge=2)
    epsilon: float = Field(0.0, ge=0.0)
    method: Literal["auto", "monte_carlo", "analytic"] = "auto"


class ReduceSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(10_000, ge=1)
    epsilon: float = Field(0.01, ge=0.0, le=1.0)


class DiscretizeSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(..., gt=0.0, le=1.0)


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(100_000, ge=1)
    smoothing_Y: Optional[float] = Field(None, ge=1.0)


class GapSection(BaseModel):
    """Y plus either an input menu or an explicit shape"""
    model_config = ConfigDict(extra="forbid")

    Y: float = Field(..., ge=1.0)
    density_bound: Optional[float] = Field(None, gt=0.0)
    samples: int = Field(100_000, ge=1)
    kind: MechanismKind = MechanismKind.ROCHET
    K: Optional[int] = Field(None, ge=0)
    n: int = Field(1, ge=1)
    m: int = Field(1, ge=1)


class LandscapeSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x_step: float = Field(0.005, gt=0.0, le=1.0)
    p_step: float = Field(0.005, gt=0.0, le=1.0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Optional[Command] = None
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    inputs: List[str] = Field(default_factory=list)
    output: Optional[str] = None
    distribution: Optional[DensitySpec] = None
    train: Optional[TrainSection] = None
    connect: Optional[ConnectSection] = None
    audit: AuditSection = Field(default_factory=AuditSection)
    reduce: ReduceSection = Field(default_factory=ReduceSection)
    discretize: Optional[DiscretizeSection] = None
    eval: EvalSection = Field(default_factory=EvalSection)
    gap: Optional[GapSection] = None
    landscape: LandscapeSection = Field(default_factory=LandscapeSection)

    def requirements(self, command: str) -> List[str]:
        """Problems that keep `command` from running with this config"""
        problems = []
        low, high = INPUT_COUNTS[command]
        if not low <= len(self.inputs) <= high:
            expected = str(low) if low == high else f"{low} to {high}"
            problems.append(f"inputs: '{command}' reads {expected} file(s), got {len(self.inputs)}")
        if command in NEEDS_DISTRIBUTION and self.distribution is None:
            problems.append(f"distribution: '{command}' needs a distribution")
        for section in ("train", "connect", "discretize", "gap"):
            if command == section and getattr(self, section) is None:
                problems.append(f"{section}: '{command}' needs a '{section}' section")
        if command == "gap" and self.gap is not None and not self.inputs and self.gap.K is None:
            problems.append("gap.K: without an input menu the gap section needs K")
        if self.seed is None:
            problems.append("seed: a seed is mandatory (config 'seed' or --seed)")
        return problems
