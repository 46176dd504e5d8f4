"""
Valuation Distributions
Density specifications, seeded counter-based samplers and exact revenue for single-item menus
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import argrelmax

from mechanism_engine.errors import PreconditionError, SpecError
from mechanism_engine.menu_core import Profile, RochetMenu
from mechanism_engine.rochet_mechanism import active_option

logger = logging.getLogger(__name__)

# Allowed deviation of a piecewise density from total mass 1
MASS_TOL = 1e-9

# Largest dimension sampled by rejection from the unit cube
MAX_REJECTION_ITEMS = 4


class DensityPiece(BaseModel):
    """Constant density on (previous upto, upto]"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    upto: float = Field(..., gt=0.0, le=1.0)
    density: float = Field(..., ge=0.0)


class DensitySpec(BaseModel):
    """
    Valuation distribution F

    uniform_box: iid U[0,1] per item, divided by n when `rescale` is set.
    simplex_rejection: uniform on [0,1]^n conditioned on sum <= 1.
    piecewise_1d: single item, constant densities on consecutive pieces of [0, 1].
    product_of: one spec per buyer; profiles draw buyer i from buyers[i].
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["uniform_box", "simplex_rejection", "piecewise_1d", "product_of"]
    rescale: bool = False
    pieces: Optional[List[DensityPiece]] = None
    buyers: Optional[List["DensitySpec"]] = None
    density_bound: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def check_kind_fields(self) -> "DensitySpec":
        if self.kind == "piecewise_1d":
            if not self.pieces:
                raise ValueError("piecewise_1d needs at least one piece")
            edges = [piece.upto for piece in self.pieces]
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError("piece endpoints must be strictly increasing")
            if edges[-1] != 1.0:
                raise ValueError(f"the last piece must end at 1, got {edges[-1]}")
            mass = sum(p.density * (p.upto - lo) for p, lo in zip(self.pieces, [0.0] + edges[:-1]))
            if abs(mass - 1.0) > MASS_TOL:
                raise ValueError(f"density integrates to {mass:.12g}, expected 1")
            top = max(p.density for p in self.pieces)
            if self.density_bound is not None and self.density_bound < top:
                raise ValueError(f"density_bound {self.density_bound} is below the peak density {top}")
        if self.kind == "product_of" and not self.buyers:
            raise ValueError("product_of needs one spec per buyer")
        return self

    def edges(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(lower ends, upper ends, densities) of the 1-D pieces"""
        if self.kind == "piecewise_1d":
            upper = np.array([p.upto for p in self.pieces])
            densities = np.array([p.density for p in self.pieces])
        elif self.kind in ("uniform_box", "simplex_rejection"):
            upper, densities = np.array([1.0]), np.array([1.0])
        else:
            raise SpecError(f"{self.kind} has no single-item density")
        lower = np.concatenate([[0.0], upper[:-1]])
        return lower, upper, densities


DensitySpec.model_rebuild()


def uniform_1d() -> DensitySpec:
    return DensitySpec(kind="uniform_box", density_bound=1.0)


def bimodal_example_spec() -> DensitySpec:
    """Density 1.5 on (0, 29/60], 0 on (29/60, 49/60], 1.5 on (49/60, 1]"""
    first_gap = Fraction(1, 3) + Fraction(3, 20)
    second_gap = Fraction(2, 3) + Fraction(3, 20)
    return DensitySpec(
        kind="piecewise_1d",
        pieces=[
            DensityPiece(upto=float(first_gap), density=1.5),
            DensityPiece(upto=float(second_gap), density=0.0),
            DensityPiece(upto=1.0, density=1.5),
        ],
        density_bound=1.5,
    )


def effective_density_bound(spec: DensitySpec, num_items: int = 1) -> float:
    """Upper bound on the density of one buyer's valuation"""
    if spec.density_bound is not None:
        return spec.density_bound
    if spec.kind == "piecewise_1d":
        return max(piece.density for piece in spec.pieces)
    if spec.kind == "uniform_box":
        return float(num_items ** num_items) if spec.rescale else 1.0
    if spec.kind == "simplex_rejection":
        return float(math.factorial(num_items))
    return max(effective_density_bound(buyer, num_items) for buyer in spec.buyers)


def cdf_1d(spec: DensitySpec, t):
    """F(t) of a single-item spec; t outside [0, 1] is clamped"""
    lower, upper, densities = spec.edges()
    points = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    covered = np.clip(points[..., None], lower, upper) - lower
    mass = (covered * densities).sum(axis=-1)
    result = np.minimum(mass, 1.0)
    return float(result) if np.ndim(result) == 0 else result


def _inverse_cdf(spec: DensitySpec, u: np.ndarray) -> np.ndarray:
    lower, upper, densities = spec.edges()
    positive = densities > 0.0
    lower, upper, densities = lower[positive], upper[positive], densities[positive]
    mass_before = np.concatenate([[0.0], np.cumsum(densities * (upper - lower))[:-1]])
    piece = np.clip(np.searchsorted(mass_before, u, side="right") - 1, 0, len(lower) - 1)
    return np.minimum(lower[piece] + (u - mass_before[piece]) / densities[piece], upper[piece])


@dataclass(frozen=True)
class SamplerCheckpoint:
    seed: int
    position: int
    bit_state: Dict[str, Any]


@dataclass
class SeededSampler:
    """
    Counter-based sampler: Philox keyed by the seed

    `position` counts the valuations drawn so far; checkpoint() captures it
    together with the Philox counter so resume() reopens the stream exactly
    there. substream(i) gives an independent stream for worker i.
    """
    spec: DensitySpec
    seed: int
    position: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self._rng = np.random.Generator(np.random.Philox(key=int(self.seed)))

    @property
    def rng(self) -> np.random.Generator:
        return self._rng

    def checkpoint(self) -> SamplerCheckpoint:
        return SamplerCheckpoint(self.seed, self.position, copy.deepcopy(self._rng.bit_generator.state))

    @classmethod
    def resume(cls, spec: DensitySpec, checkpoint: SamplerCheckpoint) -> "SeededSampler":
        """Sampler that continues where `checkpoint` was taken"""
        sampler = cls(spec, checkpoint.seed, position=checkpoint.position)
        sampler._rng.bit_generator.state = copy.deepcopy(checkpoint.bit_state)
        return sampler

    def substream(self, index: int) -> "SeededSampler":
        child = SeededSampler(self.spec, self.seed)
        child._rng = np.random.Generator(np.random.Philox(key=int(self.seed)).jumped(index + 1))
        return child

    def valuations(self, count: int, num_items: int, spec: Optional[DensitySpec] = None) -> np.ndarray:
        """(count, n) valuations of a single buyer"""
        spec = spec or self.spec
        rng = self._rng
        if spec.kind == "product_of":
            raise SpecError("product_of describes profiles; draw them with profiles()")
        if spec.kind == "uniform_box":
            if num_items > 1 and not spec.rescale:
                raise SpecError(
                    f"uniform_box with n={num_items} leaves the unit simplex; set rescale or use simplex_rejection"
                )
            values = rng.random((count, num_items))
            drawn = values / num_items if spec.rescale else values
        elif spec.kind == "simplex_rejection":
            if num_items > MAX_REJECTION_ITEMS:
                raise SpecError(
                    f"simplex_rejection supports n <= {MAX_REJECTION_ITEMS}, got {num_items}; use rescaled uniform_box"
                )
            kept: List[np.ndarray] = []
            remaining = count
            while remaining > 0:
                proposal = rng.random((max(2 * remaining * math.factorial(num_items), 16), num_items))
                accepted = proposal[proposal.sum(axis=1) <= 1.0][:remaining]
                kept.append(accepted)
                remaining -= accepted.shape[0]
            drawn = np.concatenate(kept) if kept else np.empty((0, num_items))
        else:
            if num_items != 1:
                raise SpecError(f"piecewise_1d describes a single item, got n={num_items}")
            drawn = _inverse_cdf(spec, rng.random(count))[:, None]
        self.position += count
        return drawn

    def profiles(self, count: int, num_buyers: int, num_items: int) -> np.ndarray:
        """(count, m, n) profiles; buyers are independent"""
        if self.spec.kind == "product_of":
            if len(self.spec.buyers) != num_buyers:
                raise SpecError(f"product_of lists {len(self.spec.buyers)} buyers, expected {num_buyers}")
            specs = list(self.spec.buyers)
        else:
            specs = [self.spec] * num_buyers
        columns = [self.valuations(count, num_items, spec) for spec in specs]
        return np.stack(columns, axis=1)


def sample_profile(sampler: SeededSampler, num_buyers: int, num_items: int) -> Profile:
    return Profile(sampler.profiles(1, num_buyers, num_items)[0])


def sample_profiles(sampler: SeededSampler, count: int, num_buyers: int, num_items: int) -> np.ndarray:
    return sampler.profiles(count, num_buyers, num_items)


def _single_item(menu: RochetMenu) -> None:
    if menu.num_items != 1:
        raise PreconditionError(f"exact revenue needs a single-item menu, got n={menu.num_items}")


def analytic_revenue_1d(menu: RochetMenu, spec: DensitySpec) -> float:
    """
    Exact expected revenue of a single-item menu

    The buyer's best option is constant between consecutive crossings of the
    utility lines v*x_k - p_k, so revenue is a finite sum of price times
    probability mass over those intervals.
    """
    _single_item(menu)
    slopes, prices = menu.allocations[:, 0], menu.prices
    lower, upper, _ = spec.edges()

    with np.errstate(divide="ignore", invalid="ignore"):
        crossings = (prices[:, None] - prices[None, :]) / (slopes[:, None] - slopes[None, :])
    crossings = crossings[np.isfinite(crossings)]
    knots = np.unique(np.concatenate([[0.0, 1.0], lower, upper, crossings[(crossings > 0.0) & (crossings < 1.0)]]))

    midpoints = 0.5 * (knots[:-1] + knots[1:])
    chosen = active_option(menu, midpoints[:, None])
    mass = np.diff(cdf_1d(spec, knots))
    return float(np.dot(prices[chosen], mass))


def landscape_grid(spec: DensitySpec, xs, ps) -> np.ndarray:
    """Revenue of {(0,0), (x_i, p_j)} for every grid pair; buyers at indifference buy"""
    xs = np.asarray(xs, dtype=float)[:, None]
    ps = np.asarray(ps, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        cutoff = np.where(xs > 0.0, ps / xs, np.inf)
    buying = 1.0 - np.where(np.isfinite(cutoff), cdf_1d(spec, np.minimum(cutoff, 1.0)), 1.0)
    buying = np.where(cutoff > 1.0, 0.0, buying)
    return np.where(ps > 0.0, ps * buying, 0.0)


def landscape_local_maxima(row) -> np.ndarray:
    """Indices of strict interior local maxima of one landscape row"""
    return argrelmax(np.asarray(row, dtype=float))[0]


def landscape_rows(spec: DensitySpec, xs, ps) -> List[Tuple[float, float, float]]:
    """(x, p, revenue) rows of the grid in x-major order"""
    grid = landscape_grid(spec, xs, ps)
    return [(float(x), float(p), float(grid[i, j])) for i, x in enumerate(xs) for j, p in enumerate(ps)]
