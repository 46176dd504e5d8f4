"""
Affine Maximizer Auction Engine (unit buyer weights)
Boosted-welfare maximization, VCG prices and the softmax-expected payments
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import softmax

from mechanism_engine.errors import InvariantViolation, PreconditionError
from mechanism_engine.menu_core import AmaMenu, RochetMenu, tie_broken_argmax
from mechanism_engine.rochet_mechanism import SoftmaxConfig

logger = logging.getLogger(__name__)

# Allowed gap between the per-buyer price sum and the total-payment identity
PAYMENT_TOL = 1e-9


@dataclass(frozen=True)
class AmaOutcome:
    winner: int
    winners_without: np.ndarray  # k(v_-i) for every buyer i
    prices: np.ndarray
    total_payment: float


@dataclass(frozen=True)
class PaymentBatch:
    """Vectorized outcome for N profiles"""
    winners: np.ndarray  # (N,)
    winners_without: np.ndarray  # (N, m)
    prices: np.ndarray  # (N, m)
    total_payments: np.ndarray  # (N,)


@dataclass(frozen=True)
class AmaGradient:
    """Gradient w.r.t. the regular options 1..K"""
    allocations: np.ndarray  # (K, m, n)
    boosts: np.ndarray  # (K,)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.allocations.ravel(), self.boosts])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.as_vector()), initial=0.0))


def _profiles(profile) -> np.ndarray:
    return np.asarray(getattr(profile, "buyers", profile), dtype=float)


def buyer_welfare(menu: AmaMenu, profiles) -> np.ndarray:
    """v_i . x_i^(k) for every buyer and option; shape (N, m, K+1)"""
    return np.einsum("bin,kin->bik", _profiles(profiles), menu.allocations)


def welfare_table(menu: AmaMenu, profiles, exclude: Optional[int] = None) -> np.ndarray:
    """Boosted welfare of every option, optionally without buyer `exclude`; shape (N, K+1)"""
    per_buyer = buyer_welfare(menu, profiles)
    table = per_buyer.sum(axis=1) + menu.boosts
    if exclude is not None:
        table = table - per_buyer[:, exclude, :]
    return table


def boosted_welfare(menu: AmaMenu, profile, k: int, exclude: Optional[int] = None) -> float:
    """sum_i v_i . x_i^(k) + beta^(k), omitting buyer `exclude` when given"""
    profiles = _profiles(profile)[None]
    return float(welfare_table(menu, profiles, exclude)[0, k])


def _select(menu: AmaMenu, table: np.ndarray) -> np.ndarray:
    # max welfare, then smallest boost, then lowest index
    return tie_broken_argmax(table, -menu.boosts)


def winner(menu: AmaMenu, profile, exclude: Optional[int] = None) -> Union[int, np.ndarray]:
    """k(v) (or k(v_-i) when `exclude` = i); accepts one (m, n) profile or a batch"""
    profiles = _profiles(profile)
    single = profiles.ndim == 2
    chosen = _select(menu, welfare_table(menu, profiles[None] if single else profiles, exclude))
    return int(chosen[0]) if single else chosen


def vcg_payments(menu: AmaMenu, profiles) -> PaymentBatch:
    """
    VCG prices for a batch of profiles, cross-checked against the total-payment identity

    sum_i p_i must equal sum_i BW(v_-i) - (m-1) BW(v) - beta^(k(v)).
    """
    profiles = _profiles(profiles)
    per_buyer = buyer_welfare(menu, profiles)
    full = per_buyer.sum(axis=1) + menu.boosts
    winners = _select(menu, full)
    rows = np.arange(profiles.shape[0])
    m = menu.num_buyers

    winners_without = np.empty((profiles.shape[0], m), dtype=int)
    prices = np.empty((profiles.shape[0], m))
    best_without = np.empty((profiles.shape[0], m))
    for i in range(m):
        without = full - per_buyer[:, i, :]
        chosen = _select(menu, without)
        winners_without[:, i] = chosen
        best_without[:, i] = without[rows, chosen]
        prices[:, i] = best_without[:, i] - without[rows, winners]

    totals = prices.sum(axis=1)
    identity = best_without.sum(axis=1) - (m - 1) * full[rows, winners] - menu.boosts[winners]
    gap = np.abs(totals - identity)
    if gap.size and gap.max() > PAYMENT_TOL:
        worst = int(np.argmax(gap))
        raise InvariantViolation(
            f"price sum {totals[worst]:.12g} differs from total-payment identity "
            f"{identity[worst]:.12g} on profile {worst}"
        )
    return PaymentBatch(winners=winners, winners_without=winners_without, prices=prices, total_payments=totals)


def vcg_prices(menu: AmaMenu, profile) -> AmaOutcome:
    batch = vcg_payments(menu, _profiles(profile)[None])
    return AmaOutcome(
        winner=int(batch.winners[0]),
        winners_without=batch.winners_without[0],
        prices=batch.prices[0],
        total_payment=float(batch.total_payments[0]),
    )


def total_payment(menu: AmaMenu, profile) -> Union[float, np.ndarray]:
    profiles = _profiles(profile)
    if profiles.ndim == 2:
        return vcg_prices(menu, profiles).total_payment
    return vcg_payments(menu, profiles).total_payments


def total_payment_identity(menu: AmaMenu, profile) -> float:
    """Total payment computed directly from boosted welfares (no per-buyer prices)"""
    profiles = _profiles(profile)[None]
    full = welfare_table(menu, profiles)
    k = int(_select(menu, full)[0])
    total = -(menu.num_buyers - 1) * full[0, k] - menu.boosts[k]
    for i in range(menu.num_buyers):
        without = welfare_table(menu, profiles, exclude=i)
        total += without[0, int(_select(menu, without)[0])]
    return float(total)


def buyer_utilities(menu: AmaMenu, profile, reported=None) -> np.ndarray:
    """Quasi-linear utilities v_i . x_i^(k) - p_i when the mechanism runs on `reported` bids"""
    truth = _profiles(profile)
    outcome = vcg_prices(menu, truth if reported is None else _profiles(reported))
    allocation = menu.allocations[outcome.winner]
    return np.einsum("in,in->i", truth, allocation) - outcome.prices


def deviation_gain(menu: AmaMenu, profile, buyer: int, bid) -> float:
    """Utility change for `buyer` when bidding `bid` instead of the true valuation"""
    truth = _profiles(profile)
    reported = truth.copy()
    reported[buyer] = np.asarray(bid, dtype=float)
    honest = buyer_utilities(menu, truth)[buyer]
    return float(buyer_utilities(menu, truth, reported)[buyer] - honest)


def rochet_equivalent(menu: AmaMenu) -> RochetMenu:
    """Single-buyer AMA as the RochetNet menu with p^(k) = -beta^(k)"""
    if menu.num_buyers != 1:
        raise PreconditionError(f"only single-buyer AMAs map to RochetNet menus, got m={menu.num_buyers}")
    return RochetMenu(menu.allocations[:, 0, :], -menu.boosts)


def _softmax_terms(menu: AmaMenu, profiles: np.ndarray, cfg: SoftmaxConfig):
    per_buyer = buyer_welfare(menu, profiles)  # (N, m, K+1)
    full = per_buyer.sum(axis=1) + menu.boosts  # (N, K+1)
    without = full[:, None, :] - per_buyer  # (N, m, K+1): BW of v_-i
    weights = softmax(cfg.Y * full, axis=-1)  # distribution of k_softmax(v)
    weights_without = softmax(cfg.Y * without, axis=-1)  # distribution of k_softmax(v_-i)
    expected_without = np.einsum("bik,bik->bi", weights_without, without)
    expected_with = np.einsum("bk,bik->bi", weights, without)
    return per_buyer, without, weights, weights_without, expected_without, expected_with


def softmax_expected_payment(menu: AmaMenu, profile, cfg: SoftmaxConfig) -> Union[float, np.ndarray]:
    """
    Sum over buyers of E[BW_-i(k_softmax(v_-i))] - E[BW_-i(k_softmax(v))]

    The expectations are exact weighted sums over the softmax distributions.
    """
    profiles = _profiles(profile)
    single = profiles.ndim == 2
    batch = profiles[None] if single else profiles
    *_, expected_without, expected_with = _softmax_terms(menu, batch, cfg)
    totals = (expected_without - expected_with).sum(axis=1)
    return float(totals[0]) if single else totals


def softmax_payment_gradient(menu: AmaMenu, profile, cfg: SoftmaxConfig) -> Tuple[float, AmaGradient]:
    """Batch-mean softmax payment and its exact gradient over (x^(k), beta^(k)), k >= 1"""
    profiles = _profiles(profile)
    if profiles.ndim == 2:
        profiles = profiles[None]
    _, without, weights, weights_without, expected_without, expected_with = _softmax_terms(menu, profiles, cfg)
    Y = cfg.Y

    # coefficient of BW_-i(k): first expectation (weights and values) minus the value term of the second
    coef_without = (
        weights_without * (1.0 + Y * (without - expected_without[:, :, None]))
        - weights[:, None, :]
    )
    # coefficient of BW(k): the weights of the second expectation
    coef_full = (Y * weights[:, None, :] * (without - expected_with[:, :, None])).sum(axis=1)

    boost_grad = coef_without.sum(axis=1) - coef_full  # (N, K+1)
    shared = coef_without.sum(axis=1)[:, None, :] - coef_without - coef_full[:, None, :]  # (N, m, K+1)
    allocation_grad = np.einsum("blk,bln->bkln", shared, profiles)

    count = profiles.shape[0]
    value = (expected_without - expected_with).sum(axis=1)
    gradient = AmaGradient(
        allocations=allocation_grad.sum(axis=0)[1:] / count,
        boosts=boost_grad.sum(axis=0)[1:] / count,
    )
    return float(value.sum() / count), gradient
