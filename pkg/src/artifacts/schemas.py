"""
Artifact Documents
Pydantic models for every JSON artifact: menus, paths, reduction sets and reports
"""

from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mechanism_engine.connectivity import ReductionSet
from mechanism_engine.menu_core import AmaMenu, MechanismKind, Menu, MenuPath, RochetMenu, path_from_menus

Allocation = Union[List[float], List[List[float]]]


class OptionDocument(BaseModel):
    """One menu option; RochetNet options carry a price, AMA options a boost"""
    model_config = ConfigDict(extra="forbid")

    allocation: Allocation
    price: Optional[float] = None
    boost: Optional[float] = None


class MenuDocument(BaseModel):
    """{"kind", "m", "n", "options": [{"allocation", "price" | "boost"}]}"""
    model_config = ConfigDict(extra="forbid")

    kind: MechanismKind
    m: int = Field(1, ge=1)
    n: int = Field(..., ge=1)
    options: List[OptionDocument] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_options(self) -> "MenuDocument":
        scalar = "price" if self.kind is MechanismKind.ROCHET else "boost"
        for index, option in enumerate(self.options):
            if getattr(option, scalar) is None:
                raise ValueError(f"option {index} of a {self.kind.value} menu needs a {scalar}")
            expected = (self.n,) if self.kind is MechanismKind.ROCHET else (self.m, self.n)
            shape = np.shape(option.allocation)
            if shape != expected:
                raise ValueError(f"option {index} allocation has shape {shape}, expected {expected}")
        if self.kind is MechanismKind.ROCHET and self.m != 1:
            raise ValueError(f"RochetNet menus have a single buyer, got m={self.m}")
        return self

    @classmethod
    def from_menu(cls, menu: Menu) -> "MenuDocument":
        if menu.kind is MechanismKind.ROCHET:
            options = [OptionDocument(allocation=o.allocation.tolist(), price=o.price) for o in menu.options]
        else:
            options = [OptionDocument(allocation=o.allocation.tolist(), boost=o.boost) for o in menu.options]
        return cls(kind=menu.kind, m=menu.num_buyers, n=menu.num_items, options=options)

    def to_menu(self) -> Menu:
        allocations = np.array([option.allocation for option in self.options], dtype=float)
        if self.kind is MechanismKind.ROCHET:
            return RochetMenu(allocations, [option.price for option in self.options])
        return AmaMenu(allocations, [option.boost for option in self.options])


class PathDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    breakpoints: List[MenuDocument] = Field(..., min_length=2)

    @classmethod
    def from_path(cls, path: MenuPath) -> "PathDocument":
        return cls(breakpoints=[MenuDocument.from_menu(menu) for menu in path.breakpoints])

    def to_path(self) -> MenuPath:
        return path_from_menus([document.to_menu() for document in self.breakpoints])


class ReductionSetDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    indices: List[int] = Field(..., min_length=1)

    @classmethod
    def from_set(cls, reduction: ReductionSet) -> "ReductionSetDocument":
        return cls(indices=list(reduction.indices))

    def to_set(self) -> ReductionSet:
        return ReductionSet.of(self.indices)


class RevenueDocument(BaseModel):
    estimate: float
    stderr: float
    samples: int
    smoothing_Y: Optional[float] = None
    analytic: Optional[float] = None


class PathReportDocument(BaseModel):
    passed: bool
    method: str
    epsilon: float
    samples: int
    floor: float
    worst_t: float
    min_estimate: float
    min_per_sample_slack: float
    num_pieces: int


class ReducibilityDocument(BaseModel):
    selected: List[int]
    epsilon_hat: float
    samples: int
    cap: int
    target: float
    reached_target: bool
    history: List[Tuple[int, float]]
    event_frequency: Optional[float] = None


class GapDocument(BaseModel):
    kind: MechanismKind
    K: int
    n: int
    m: int
    Y: float
    density_bound: float
    bound: float
    empirical: Optional[float] = None
    stderr: Optional[float] = None
    argmax_revenue: Optional[float] = None
    softmax_revenue: Optional[float] = None
    within_bound: bool


class TrainSummaryDocument(BaseModel):
    kind: MechanismKind
    steps: int
    final_softmax_objective: Optional[float] = None
    final_argmax_revenue: Optional[float] = None
    smoothing_bound: Optional[float] = None


class ConnectSummaryDocument(BaseModel):
    mode: Literal["zero", "reducible", "large"]
    kind: MechanismKind
    num_pieces: int
    menu_size: int
    reduction_sets: List[List[int]] = Field(default_factory=list)
    threshold: Optional[int] = None


class ManifestEntry(BaseModel):
    name: str
    sha256: str


class ManifestDocument(BaseModel):
    command: str
    seed: int
    config_sha256: str
    files: List[ManifestEntry]
