"""
Connectivity Engine - piecewise-linear paths between menus

Bijection over option indices, menu replication, the price-inflation and
boost-deflation reductions, grid discretization, and the 3- and 5-piece path
assemblies for RochetNet and AMA menus.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Tuple, Union

import numpy as np

from mechanism_engine.errors import CongruenceError, InvariantViolation, PreconditionError, SizeError
from mechanism_engine.menu_core import (
    AmaMenu,
    MechanismKind,
    Menu,
    MenuPath,
    RochetMenu,
    pad_menu,
    padded_square_size,
)

logger = logging.getLogger(__name__)

# Any price above 1 makes an option unattractive to every normalized buyer
INFLATED_PRICE = 2.0

# Slack on grid snapping, in units of the grid step
GRID_SNAP_TOL = 1e-9


@dataclass(frozen=True)
class ReductionSet:
    """Option indices that carry the mechanism; always contains the default option 0"""
    indices: Tuple[int, ...]

    def __post_init__(self):
        indices = tuple(sorted({int(k) for k in self.indices}))
        if not indices or indices[0] != 0:
            raise PreconditionError(f"a reduction set must contain option 0, got {list(indices)}")
        object.__setattr__(self, "indices", indices)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "ReductionSet":
        return cls(tuple(indices))

    @classmethod
    def everything(cls, size: int) -> "ReductionSet":
        return cls(tuple(range(size)))

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, k) -> bool:
        return int(k) in self.indices

    def __iter__(self):
        return iter(self.indices)

    @staticmethod
    def cap(size: int) -> int:
        """Largest admissible set size for a menu of `size` options"""
        return math.isqrt(size)

    def fits(self, size: int) -> bool:
        return self.indices[-1] < size and len(self) <= self.cap(size)

    def extended(self, target: int, size: int) -> "ReductionSet":
        """Add the smallest unused indices until the set has `target` members"""
        if target > size:
            raise SizeError(f"cannot pick {target} indices out of {size} options")
        chosen = set(self.indices)
        for k in range(size):
            if len(chosen) >= target:
                break
            chosen.add(k)
        return ReductionSet(tuple(chosen))


def _index_tuple(indices: Iterable[int]) -> Tuple[int, ...]:
    return tuple(sorted({int(k) for k in indices}))


@dataclass(frozen=True)
class Bijection:
    """phi: option index k -> (index in K1, index in K2), listed for k = 0..K"""
    forward: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.forward)

    def __call__(self, k: int) -> Tuple[int, int]:
        return self.forward[k]

    @property
    def first(self) -> np.ndarray:
        return np.array([pair[0] for pair in self.forward], dtype=int)

    @property
    def second(self) -> np.ndarray:
        return np.array([pair[1] for pair in self.forward], dtype=int)

    def inverse(self, pair: Tuple[int, int]) -> int:
        return self.forward.index((int(pair[0]), int(pair[1])))

    def verify(self, first_set: Iterable[int], second_set: Iterable[int]) -> None:
        """Enumerate every pair and raise InvariantViolation on the first broken property"""
        first_set, second_set = _index_tuple(first_set), _index_tuple(second_set)
        expected = {(a, b) for a in first_set for b in second_set}
        seen = set(self.forward)
        if len(seen) != len(self.forward) or seen != expected:
            raise InvariantViolation("forward map is not a bijection onto K1 x K2")
        for k, (a, b) in enumerate(self.forward):
            if k in first_set and a != k:
                raise InvariantViolation(f"phi({k}) = {(a, b)} but {k} in K1 requires first component {k}")
            if k in second_set and b != k:
                raise InvariantViolation(f"phi({k}) = {(a, b)} but {k} in K2 requires second component {k}")


def build_bijection(size: int, first_set: Iterable[int], second_set: Iterable[int]) -> Bijection:
    """
    phi over {0..size-1} with phi(k) in {k} x K2 for k in K1 and phi(k) in K1 x {k} for k in K2

    size must be a perfect square r*r and both sets must have exactly r members.
    Pairs not pinned by those constraints are assigned in sorted order.
    """
    first_set, second_set = _index_tuple(first_set), _index_tuple(second_set)
    root = math.isqrt(size)
    if root * root != size:
        raise SizeError(f"bijection needs a square number of options, got {size}")
    for name, index_set in (("K1", first_set), ("K2", second_set)):
        if len(index_set) != root:
            raise SizeError(f"{name} must have exactly {root} members for {size} options, got {len(index_set)}")
        if index_set[-1] >= size:
            raise SizeError(f"{name} contains index {index_set[-1]} outside 0..{size - 1}")

    left, right = set(first_set), set(second_set)
    assigned: Dict[int, Tuple[int, int]] = {}
    shared = sorted(left & right)
    if shared:
        pivot = shared[0]
        for k in shared:
            assigned[k] = (k, k)
        for k in sorted(left - right):
            assigned[k] = (k, pivot)
        for k in sorted(right - left):
            assigned[k] = (pivot, k)
    else:
        a1, a2 = first_set[:2]
        b1, b2 = second_set[:2]
        assigned[a1] = (a1, b1)
        assigned[a2] = (a2, b2)
        assigned[b1] = (a2, b1)
        assigned[b2] = (a1, b2)
        for k in first_set[2:]:
            assigned[k] = (k, b1)
        for k in second_set[2:]:
            assigned[k] = (a1, k)

    used = set(assigned.values())
    spare_pairs = iter(sorted((a, b) for a in first_set for b in second_set if (a, b) not in used))
    forward = tuple(assigned[k] if k in assigned else next(spare_pairs) for k in range(size))

    bijection = Bijection(forward)
    bijection.verify(first_set, second_set)
    return bijection


def replicate_menu(menu: Menu, bijection: Bijection, component: int) -> Menu:
    """Option k of the result is option phi_c(k) of `menu`"""
    if component not in (1, 2):
        raise PreconditionError(f"component must be 1 or 2, got {component}")
    if menu.size != len(bijection):
        raise CongruenceError(f"bijection covers {len(bijection)} options but the menu has {menu.size}")
    return menu.take(bijection.first if component == 1 else bijection.second)


def _resolve_kind(menu_a: Menu, menu_b: Menu, mode: Union[MechanismKind, str, None]) -> MechanismKind:
    if type(menu_a) is not type(menu_b):
        raise CongruenceError(f"cannot connect a {menu_a.kind.value} menu with a {menu_b.kind.value} menu")
    if menu_a.allocations.shape[1:] != menu_b.allocations.shape[1:]:
        raise CongruenceError(
            f"option shapes differ: {menu_a.allocations.shape[1:]} vs {menu_b.allocations.shape[1:]}"
        )
    if mode is not None and MechanismKind(mode) is not menu_a.kind:
        raise PreconditionError(f"mode {MechanismKind(mode).value} does not match {menu_a.kind.value} menus")
    return menu_a.kind


def _square_up(
    menu_a: Menu, keep_a: ReductionSet, menu_b: Menu, keep_b: ReductionSet
) -> Tuple[Menu, ReductionSet, Menu, ReductionSet]:
    """Pad both menus to a common square size and grow both sets to its root"""
    for name, menu, keep in (("K1", menu_a, keep_a), ("K2", menu_b, keep_b)):
        if keep.indices[-1] >= menu.size:
            raise SizeError(f"{name} contains index {keep.indices[-1]} but the menu has {menu.size} options")
    size = padded_square_size(max(menu_a.size, menu_b.size), min_root=max(len(keep_a), len(keep_b)))
    root = math.isqrt(size)
    if size != menu_a.size or size != menu_b.size:
        logger.debug(f"Padding menus of {menu_a.size} and {menu_b.size} options to {size}")
    return (
        pad_menu(menu_a, size),
        keep_a.extended(root, size),
        pad_menu(menu_b, size),
        keep_b.extended(root, size),
    )


def _zero_reducible_middle(
    menu_a: Menu, keep_a: ReductionSet, menu_b: Menu, keep_b: ReductionSet
) -> Tuple[Menu, Menu]:
    bijection = build_bijection(menu_a.size, keep_a, keep_b)
    return replicate_menu(menu_a, bijection, 1), replicate_menu(menu_b, bijection, 2)


def connect_zero_reducible(
    menu_a: Menu, keep_a: ReductionSet, menu_b: Menu, keep_b: ReductionSet
) -> MenuPath:
    """Three-piece path [M1, M1-hat, M2-hat, M2] between 0-reducible menus"""
    _resolve_kind(menu_a, menu_b, None)
    menu_a, keep_a, menu_b, keep_b = _square_up(menu_a, keep_a, menu_b, keep_b)
    hat_a, hat_b = _zero_reducible_middle(menu_a, keep_a, menu_b, keep_b)
    return MenuPath((menu_a, hat_a, hat_b, menu_b))


def reduce_by_price_inflation(menu: RochetMenu, keep: ReductionSet) -> RochetMenu:
    """Options outside `keep` get a price no normalized buyer accepts"""
    prices = np.array(menu.prices)
    dropped = np.setdiff1d(np.arange(menu.size), np.asarray(keep.indices))
    prices[dropped] = INFLATED_PRICE
    return menu.replace(prices=prices)


def deflated_boost(num_buyers: int) -> float:
    return -(num_buyers + 1.0)


def reduce_by_boost_deflation(menu: AmaMenu, keep: ReductionSet) -> AmaMenu:
    """Options outside `keep` get a boost below -m, so the default option always beats them"""
    boosts = np.array(menu.boosts)
    dropped = np.setdiff1d(np.arange(menu.size), np.asarray(keep.indices))
    boosts[dropped] = deflated_boost(menu.num_buyers)
    return menu.replace(boosts=boosts)


def reduce_menu(menu: Menu, keep: ReductionSet) -> Menu:
    if menu.kind is MechanismKind.ROCHET:
        return reduce_by_price_inflation(menu, keep)
    return reduce_by_boost_deflation(menu, keep)


def connect_epsilon_reducible(
    menu_a: Menu,
    keep_a: ReductionSet,
    menu_b: Menu,
    keep_b: ReductionSet,
    mode: Union[MechanismKind, str, None] = None,
) -> MenuPath:
    """Five-piece path [M1, M1-tilde, M1-hat, M2-hat, M2-tilde, M2] between eps-reducible menus"""
    _resolve_kind(menu_a, menu_b, mode)
    menu_a, keep_a, menu_b, keep_b = _square_up(menu_a, keep_a, menu_b, keep_b)
    reduced_a, reduced_b = reduce_menu(menu_a, keep_a), reduce_menu(menu_b, keep_b)
    hat_a, hat_b = _zero_reducible_middle(reduced_a, keep_a, reduced_b, keep_b)
    return MenuPath((menu_a, reduced_a, hat_a, hat_b, reduced_b, menu_b))


def _grid_floor(values: np.ndarray, step: float) -> np.ndarray:
    """step * floor(values / step); values already on the grid stay put"""
    return step * np.floor(np.asarray(values) / step + GRID_SNAP_TOL)


def _check_epsilon(epsilon: float, upper: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 < epsilon <= upper:
        raise PreconditionError(f"epsilon must lie in (0, {upper:g}], got {epsilon}")
    return epsilon


@dataclass(frozen=True)
class DiscretizationGrid:
    """Grid step and scalar discount used by one discretization"""
    kind: MechanismKind
    epsilon: float
    fine_epsilon: float
    step: float
    discount: float
    num_buyers: int = 1

    def loss_bound(self) -> float:
        """Worst per-valuation revenue loss along a segment to the discretized menu"""
        if self.kind is MechanismKind.ROCHET:
            return 2.0 * math.sqrt(self.fine_epsilon)
        delta = self.discount
        m = self.num_buyers
        return m * self.fine_epsilon + m * m * delta / (1.0 - delta) + self.fine_epsilon / delta


def rochet_grid(epsilon: float) -> DiscretizationGrid:
    epsilon = _check_epsilon(epsilon, 1.0)
    fine = epsilon * epsilon / 4.0
    return DiscretizationGrid(MechanismKind.ROCHET, epsilon, fine, step=fine, discount=math.sqrt(fine))


def ama_grid(epsilon: float, num_buyers: int) -> DiscretizationGrid:
    epsilon = _check_epsilon(epsilon, 0.25)
    m = num_buyers
    fine = epsilon * epsilon / (16.0 * m * m)
    return DiscretizationGrid(MechanismKind.AMA, epsilon, fine, step=fine / m, discount=math.sqrt(fine) / m, num_buyers=m)


def discretize_rochet(menu: RochetMenu, epsilon: float) -> RochetMenu:
    """Round allocations down to the eps^2/4 grid and discount prices by (1 - eps/2)"""
    grid = rochet_grid(epsilon)
    allocations = np.clip(_grid_floor(menu.allocations, grid.step), 0.0, 1.0)
    return menu.replace(allocations=allocations, prices=(1.0 - grid.discount) * menu.prices)


def discretize_ama(menu: AmaMenu, epsilon: float) -> AmaMenu:
    """Round allocations down to the eps~/m grid and scale boosts by (1 - delta)"""
    grid = ama_grid(epsilon, menu.num_buyers)
    allocations = np.clip(_grid_floor(menu.allocations, grid.step), 0.0, 1.0)
    # snapping tolerance may not push an item's total supply above 1
    supply = allocations.sum(axis=1, keepdims=True)
    strict = grid.step * np.floor(np.asarray(menu.allocations) / grid.step)
    allocations = np.where(supply > 1.0, strict, allocations)
    return menu.replace(allocations=allocations, boosts=(1.0 - grid.discount) * menu.boosts)


def discretize(menu: Menu, epsilon: float) -> Menu:
    if menu.kind is MechanismKind.ROCHET:
        return discretize_rochet(menu, epsilon)
    return discretize_ama(menu, epsilon)


def distinct_allocations(menu: Menu) -> int:
    flat = np.asarray(menu.allocations).reshape(menu.size, -1)
    return int(np.unique(flat, axis=0).shape[0])


def reduction_set_of_discretized(menu: Menu) -> ReductionSet:
    """
    One representative per distinct allocation, plus option 0

    The representative is the option that wins among its copies: the cheapest
    one for RochetNet, the largest boost for AMA; equal scalars go to the
    lowest index.
    """
    flat = np.asarray(menu.allocations).reshape(menu.size, -1)
    _, groups = np.unique(flat, axis=0, return_inverse=True)
    groups = np.ravel(groups)
    # higher rank wins inside a group
    rank = -menu.prices if menu.kind is MechanismKind.ROCHET else np.asarray(menu.boosts)
    chosen = {0}
    for group in np.unique(groups):
        members = np.flatnonzero(groups == group)
        best = members[rank[members] == rank[members].max()]
        chosen.add(int(best.min()))
    return ReductionSet(tuple(chosen))


def large_menu_threshold(kind: Union[MechanismKind, str], epsilon: float, num_items: int, num_buyers: int = 1) -> int:
    """Menu size from which discretization alone yields a short path"""
    kind = MechanismKind(kind)
    eps = Fraction(str(float(epsilon)))
    if kind is MechanismKind.ROCHET:
        _check_epsilon(epsilon, 1.0)
        base = math.ceil(Fraction(4) / (eps * eps))
        return base ** (2 * num_items)
    _check_epsilon(epsilon, 0.25)
    base = math.ceil(Fraction(16 * num_buyers ** 3) / (eps * eps))
    return base ** (2 * num_items * num_buyers)


def connect_large(
    menu_a: Menu,
    menu_b: Menu,
    epsilon: float,
    mode: Union[MechanismKind, str, None] = None,
    enforce_threshold: bool = True,
) -> MenuPath:
    """
    Five-piece path through the discretized menus

    With enforce_threshold the per-valuation guarantee (revenue at least the
    smaller endpoint revenue minus epsilon) is backed by the size threshold;
    without it the path is still built, padding the reduction sets as needed.
    """
    kind = _resolve_kind(menu_a, menu_b, mode)
    if enforce_threshold:
        threshold = large_menu_threshold(kind, epsilon, menu_a.num_items, menu_a.num_buyers)
        smaller = min(menu_a.size, menu_b.size)
        if smaller < threshold:
            raise PreconditionError(
                f"connect_large needs menus with at least {threshold} options for "
                f"epsilon={epsilon:g}, got {smaller}"
            )
    fine_a, fine_b = discretize(menu_a, epsilon), discretize(menu_b, epsilon)
    keep_a, keep_b = reduction_set_of_discretized(fine_a), reduction_set_of_discretized(fine_b)
    logger.info(
        f"Discretized reduction sets: |K1|={len(keep_a)} |K2|={len(keep_b)} "
        f"for {menu_a.size} and {menu_b.size} options"
    )

    menu_a, keep_a, menu_b, keep_b = _square_up(menu_a, keep_a, menu_b, keep_b)
    fine_a, fine_b = pad_menu(fine_a, menu_a.size), pad_menu(fine_b, menu_b.size)
    hat_a, hat_b = _zero_reducible_middle(fine_a, keep_a, fine_b, keep_b)
    return MenuPath((menu_a, fine_a, hat_a, hat_b, fine_b, menu_b))
