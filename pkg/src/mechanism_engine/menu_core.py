"""
Menu Core - shared domain types for menu-based mechanisms
Valuations, RochetNet / AMA menus, piecewise-linear paths in menu-parameter space
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np

from mechanism_engine.errors import CongruenceError, PathStructureError, PreconditionError

# Slack on the simplex / unit-supply constraints; absorbs drift from interpolation
SIMPLEX_TOL = 1e-12


class MechanismKind(str, Enum):
    ROCHET = "rochet"
    AMA = "ama"


def _frozen(values, ndim: Optional[int] = None) -> np.ndarray:
    array = np.array(values, dtype=float)
    if ndim is not None and array.ndim != ndim:
        raise PreconditionError(f"expected a {ndim}-d array, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Valuation:
    """Additive valuation of one buyer, normalized to the unit simplex"""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.ravel(self.values)))

    @property
    def num_items(self) -> int:
        return int(self.values.shape[0])

    def violations(self) -> List[str]:
        problems = []
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            problems.append("entries must lie in [0, 1]")
        if float(self.values.sum()) > 1.0 + SIMPLEX_TOL:
            problems.append(f"sum of entries {self.values.sum():.6g} exceeds 1")
        return problems


@dataclass(frozen=True, eq=False)
class Profile:
    """Valuations of all m buyers, stored as an (m, n) array"""
    buyers: np.ndarray

    def __post_init__(self):
        raw = self.buyers
        if isinstance(raw, (list, tuple)) and raw and isinstance(raw[0], Valuation):
            raw = [valuation.values for valuation in raw]
        object.__setattr__(self, "buyers", _frozen(raw, ndim=2))

    @property
    def num_buyers(self) -> int:
        return int(self.buyers.shape[0])

    @property
    def num_items(self) -> int:
        return int(self.buyers.shape[1])

    def valuation(self, i: int) -> Valuation:
        return Valuation(self.buyers[i])

    def without(self, i: int) -> np.ndarray:
        """v_{-i}: the profile with buyer i omitted"""
        return np.delete(self.buyers, i, axis=0)

    def violations(self) -> List[str]:
        problems = []
        for i in range(self.num_buyers):
            problems.extend(f"buyer {i}: {p}" for p in self.valuation(i).violations())
        return problems


@dataclass(frozen=True, eq=False)
class RochetOption:
    allocation: np.ndarray
    price: float


@dataclass(frozen=True, eq=False)
class RochetMenu:
    """
    Single-buyer menu {(x^(k), p^(k))}, k = 0..K

    allocations has shape (K+1, n), prices shape (K+1,). Option 0 is the
    default option (0, 0).
    """
    allocations: np.ndarray
    prices: np.ndarray

    kind: ClassVar[MechanismKind] = MechanismKind.ROCHET

    def __post_init__(self):
        allocations = _frozen(self.allocations, ndim=2)
        prices = _frozen(np.ravel(self.prices))
        if allocations.shape[0] == 0 or prices.shape[0] != allocations.shape[0]:
            raise PreconditionError(
                f"menu needs K+1 >= 1 options with one price each, got "
                f"{allocations.shape[0]} allocations and {prices.shape[0]} prices"
            )
        object.__setattr__(self, "allocations", allocations)
        object.__setattr__(self, "prices", prices)

    @classmethod
    def from_options(cls, options: Sequence[Tuple[Sequence[float], float]]) -> "RochetMenu":
        allocations = [np.ravel(np.asarray(allocation, dtype=float)) for allocation, _ in options]
        return cls(np.vstack(allocations), [price for _, price in options])

    @classmethod
    def with_default(cls, allocations, prices) -> "RochetMenu":
        """Build a menu from the K regular options, prepending the default option"""
        allocations = np.atleast_2d(np.asarray(allocations, dtype=float))
        n = allocations.shape[1]
        return cls(
            np.vstack([np.zeros((1, n)), allocations]),
            np.concatenate([[0.0], np.ravel(prices)]),
        )

    @property
    def size(self) -> int:
        return int(self.prices.shape[0])

    @property
    def num_regular(self) -> int:
        return self.size - 1

    @property
    def num_items(self) -> int:
        return int(self.allocations.shape[1])

    @property
    def num_buyers(self) -> int:
        return 1

    @property
    def scalars(self) -> np.ndarray:
        return self.prices

    @property
    def options(self) -> Tuple[RochetOption, ...]:
        return tuple(RochetOption(self.allocations[k], float(self.prices[k])) for k in range(self.size))

    def rebuild(self, allocations, scalars) -> "RochetMenu":
        return RochetMenu(allocations, scalars)

    def replace(self, allocations=None, prices=None) -> "RochetMenu":
        return RochetMenu(
            self.allocations if allocations is None else allocations,
            self.prices if prices is None else prices,
        )

    def take(self, indices: Sequence[int]) -> "RochetMenu":
        index = np.asarray(indices, dtype=int)
        return RochetMenu(self.allocations[index], self.prices[index])

    def allclose(self, other: "RochetMenu", atol: float = 0.0) -> bool:
        return (
            isinstance(other, RochetMenu)
            and self.allocations.shape == other.allocations.shape
            and np.allclose(self.allocations, other.allocations, rtol=0.0, atol=atol)
            and np.allclose(self.prices, other.prices, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class AmaOption:
    allocation: np.ndarray
    boost: float


@dataclass(frozen=True, eq=False)
class AmaMenu:
    """
    Multi-buyer affine maximizer menu {(x^(k), beta^(k))}, k = 0..K

    allocations has shape (K+1, m, n): entry (k, i, j) is the share of item j
    given to buyer i by option k. Buyer weights are fixed to 1.
    """
    allocations: np.ndarray
    boosts: np.ndarray

    kind: ClassVar[MechanismKind] = MechanismKind.AMA

    def __post_init__(self):
        allocations = _frozen(self.allocations, ndim=3)
        boosts = _frozen(np.ravel(self.boosts))
        if allocations.shape[0] == 0 or boosts.shape[0] != allocations.shape[0]:
            raise PreconditionError(
                f"menu needs K+1 >= 1 options with one boost each, got "
                f"{allocations.shape[0]} allocations and {boosts.shape[0]} boosts"
            )
        object.__setattr__(self, "allocations", allocations)
        object.__setattr__(self, "boosts", boosts)

    @classmethod
    def from_options(cls, options: Sequence[Tuple[Sequence[Sequence[float]], float]]) -> "AmaMenu":
        allocations = [np.asarray(allocation, dtype=float) for allocation, _ in options]
        return cls(np.stack(allocations), [boost for _, boost in options])

    @classmethod
    def with_default(cls, allocations, boosts) -> "AmaMenu":
        allocations = np.asarray(allocations, dtype=float)
        if allocations.ndim == 2:
            allocations = allocations[None]
        _, m, n = allocations.shape
        return cls(
            np.concatenate([np.zeros((1, m, n)), allocations]),
            np.concatenate([[0.0], np.ravel(boosts)]),
        )

    @property
    def size(self) -> int:
        return int(self.boosts.shape[0])

    @property
    def num_regular(self) -> int:
        return self.size - 1

    @property
    def num_buyers(self) -> int:
        return int(self.allocations.shape[1])

    @property
    def num_items(self) -> int:
        return int(self.allocations.shape[2])

    @property
    def scalars(self) -> np.ndarray:
        return self.boosts

    @property
    def options(self) -> Tuple[AmaOption, ...]:
        return tuple(AmaOption(self.allocations[k], float(self.boosts[k])) for k in range(self.size))

    def rebuild(self, allocations, scalars) -> "AmaMenu":
        return AmaMenu(allocations, scalars)

    def replace(self, allocations=None, boosts=None) -> "AmaMenu":
        return AmaMenu(
            self.allocations if allocations is None else allocations,
            self.boosts if boosts is None else boosts,
        )

    def take(self, indices: Sequence[int]) -> "AmaMenu":
        index = np.asarray(indices, dtype=int)
        return AmaMenu(self.allocations[index], self.boosts[index])

    def allclose(self, other: "AmaMenu", atol: float = 0.0) -> bool:
        return (
            isinstance(other, AmaMenu)
            and self.allocations.shape == other.allocations.shape
            and np.allclose(self.allocations, other.allocations, rtol=0.0, atol=atol)
            and np.allclose(self.boosts, other.boosts, rtol=0.0, atol=atol)
        )


Menu = Union[RochetMenu, AmaMenu]


@dataclass(frozen=True)
class Violation:
    option_index: Optional[int]
    constraint: str
    detail: str


def check_congruent(menu_a: Menu, menu_b: Menu) -> None:
    """Raise CongruenceError unless both menus have the same kind, option count and dimensions"""
    if type(menu_a) is not type(menu_b):
        raise CongruenceError(f"cannot combine a {menu_a.kind.value} menu with a {menu_b.kind.value} menu")
    if menu_a.allocations.shape != menu_b.allocations.shape:
        raise CongruenceError(
            f"menu shapes differ: {menu_a.allocations.shape} vs {menu_b.allocations.shape}"
        )


def interpolate(menu_a: Menu, menu_b: Menu, lam: float) -> Menu:
    """
    Convex combination lam * menu_a + (1 - lam) * menu_b, entrywise

    lam = 1 returns menu_a and lam = 0 returns menu_b exactly.
    """
    check_congruent(menu_a, menu_b)
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise PreconditionError(f"interpolation weight must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return menu_a
    if lam == 0.0:
        return menu_b
    return menu_a.rebuild(
        lam * menu_a.allocations + (1.0 - lam) * menu_b.allocations,
        lam * menu_a.scalars + (1.0 - lam) * menu_b.scalars,
    )


@dataclass(frozen=True, eq=False)
class MenuPath:
    """Piecewise-linear curve through congruent breakpoint menus"""
    breakpoints: Tuple[Menu, ...]

    def __post_init__(self):
        breakpoints = tuple(self.breakpoints)
        if len(breakpoints) < 2:
            raise PathStructureError(f"a path needs at least 2 breakpoints, got {len(breakpoints)}")
        for index, menu in enumerate(breakpoints[1:], start=1):
            try:
                check_congruent(breakpoints[0], menu)
            except CongruenceError as exc:
                raise PathStructureError(f"breakpoint {index} is not congruent with breakpoint 0: {exc}") from exc
        object.__setattr__(self, "breakpoints", breakpoints)

    @property
    def num_pieces(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def kind(self) -> MechanismKind:
        return self.breakpoints[0].kind

    @property
    def start(self) -> Menu:
        return self.breakpoints[0]

    @property
    def end(self) -> Menu:
        return self.breakpoints[-1]

    def pieces(self) -> List[Tuple[Menu, Menu]]:
        return list(zip(self.breakpoints[:-1], self.breakpoints[1:]))

    def locate(self, t: float) -> Tuple[int, float]:
        """Piece index and local parameter (0 at the piece start) for path time t"""
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise PreconditionError(f"path time must lie in [0, 1], got {t}")
        scaled = t * self.num_pieces
        piece = min(int(math.floor(scaled)), self.num_pieces - 1)
        return piece, min(max(scaled - piece, 0.0), 1.0)


def straight_line(menu_a: Menu, menu_b: Menu) -> MenuPath:
    return MenuPath((menu_a, menu_b))


def path_from_menus(menus: Sequence[Menu]) -> MenuPath:
    return MenuPath(tuple(menus))


def path_point(path: MenuPath, t: float) -> Menu:
    """
    Menu at time t; every piece occupies an equal share 1/P of [0, 1]

    path_point(path, 0) is the first breakpoint and path_point(path, 1) the last.
    """
    if not path.breakpoints:
        raise PathStructureError("empty path")
    piece, local = path.locate(t)
    return interpolate(path.breakpoints[piece + 1], path.breakpoints[piece], local)


def validate(menu: Menu) -> List[Violation]:
    """All violated menu invariants; an empty list means the menu is valid"""
    violations: List[Violation] = []
    allocations, scalars = menu.allocations, menu.scalars
    scalar_name = "price" if menu.kind is MechanismKind.ROCHET else "boost"

    for k in range(menu.size):
        block = allocations[k]
        if not np.all(np.isfinite(block)) or not np.isfinite(scalars[k]):
            violations.append(Violation(k, "finite", "allocation or " + scalar_name + " is not finite"))
            continue
        if np.any(block < -SIMPLEX_TOL) or np.any(block > 1.0 + SIMPLEX_TOL):
            violations.append(Violation(k, "allocation-range", f"allocation entries outside [0, 1]: {block.tolist()}"))
        if menu.kind is MechanismKind.ROCHET and scalars[k] < 0.0:
            violations.append(Violation(k, "price-nonnegative", f"price {scalars[k]:.6g} < 0"))
        if menu.kind is MechanismKind.AMA:
            supply = block.sum(axis=0)
            for j in np.flatnonzero(supply > 1.0 + SIMPLEX_TOL):
                violations.append(Violation(k, "unit-supply", f"item {int(j)} allocated {supply[j]:.6g} > 1"))

    if np.any(allocations[0] != 0.0) or scalars[0] != 0.0:
        violations.append(Violation(0, "default-option", f"option 0 must be (0, 0), got {scalar_name} {scalars[0]:.6g}"))
    return violations


def ceil_sqrt(value: int) -> int:
    root = math.isqrt(value)
    return root if root * root == value else root + 1


def padded_square_size(size: int, min_root: int = 0) -> int:
    """Smallest perfect square >= size whose root is at least min_root"""
    root = max(ceil_sqrt(size), min_root)
    return root * root


def pad_menu(menu: Menu, size: int) -> Menu:
    """Append copies of the default option until the menu has `size` options"""
    if size < menu.size:
        raise PreconditionError(f"cannot pad a menu of {menu.size} options down to {size}")
    if size == menu.size:
        return menu
    extra = size - menu.size
    filler = np.zeros((extra,) + menu.allocations.shape[1:])
    return menu.rebuild(
        np.concatenate([menu.allocations, filler]),
        np.concatenate([menu.scalars, np.zeros(extra)]),
    )


# Scores within TIE_TOL of the maximum count as tied before the secondary rule applies
TIE_TOL = 1e-12


def tie_broken_argmax(scores: np.ndarray, preference: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """
    Argmax over the last axis of `scores` with deterministic tie-breaking

    Among options whose score is within `tol` of the maximum, the one with the
    largest `preference` wins; remaining ties go to the lowest index.
    """
    scores = np.asarray(scores, dtype=float)
    best = scores.max(axis=-1, keepdims=True)
    ranked = np.where(scores >= best - tol, preference, -np.inf)
    top = ranked.max(axis=-1, keepdims=True)
    return np.argmax(ranked == top, axis=-1)
