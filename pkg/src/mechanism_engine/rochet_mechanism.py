"""
RochetNet Mechanism Engine
Option selection, realized prices and the softmax-smoothed revenue with its analytic gradient
"""

from dataclasses import dataclass
from typing import Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import softmax

from mechanism_engine.menu_core import RochetMenu, tie_broken_argmax

ArrayOrScalar = Union[np.ndarray, float, int]


class SoftmaxConfig(BaseModel):
    """Smoothing temperature Y; the default option always takes part in the softmax"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    Y: float = Field(..., ge=1.0, description="softmax temperature")
    include_default: Literal[True] = True


@dataclass(frozen=True)
class RochetGradient:
    """Gradient w.r.t. the regular options 1..K; the default option is fixed"""
    allocations: np.ndarray  # (K, n)
    prices: np.ndarray  # (K,)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.allocations.ravel(), self.prices])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.as_vector()), initial=0.0))


def _valuations(v) -> np.ndarray:
    return np.asarray(getattr(v, "values", v), dtype=float)


def utilities(menu: RochetMenu, v) -> np.ndarray:
    """u_k = v . x^(k) - p^(k) for every option; shape (..., K+1)"""
    return _valuations(v) @ menu.allocations.T - menu.prices


def active_option(menu: RochetMenu, v) -> ArrayOrScalar:
    """
    Utility-maximizing option; ties go to the higher price, then the lower index

    Accepts a single valuation (n,) or a batch (N, n).
    """
    values = _valuations(v)
    single = values.ndim == 1
    choice = tie_broken_argmax(utilities(menu, np.atleast_2d(values)), menu.prices)
    return int(choice[0]) if single else choice


def revenue_sample(menu: RochetMenu, v) -> ArrayOrScalar:
    """Price paid by a buyer with valuation v (argmax semantics)"""
    chosen = active_option(menu, v)
    prices = menu.prices[chosen]
    return float(prices) if np.ndim(prices) == 0 else prices


def softmax_weights(menu: RochetMenu, v, cfg: SoftmaxConfig) -> np.ndarray:
    """exp(Y u_k) / sum_k' exp(Y u_k'), default option included; overflow safe"""
    return softmax(cfg.Y * utilities(menu, v), axis=-1)


def softmax_revenue_sample(menu: RochetMenu, v, cfg: SoftmaxConfig) -> ArrayOrScalar:
    revenue = softmax_weights(menu, v, cfg) @ menu.prices
    return float(revenue) if np.ndim(revenue) == 0 else revenue


def softmax_revenue_gradient(menu: RochetMenu, v, cfg: SoftmaxConfig) -> Tuple[float, RochetGradient]:
    """
    Smoothed revenue and its exact gradient

    For a batch of valuations both the value and the gradient are batch means,
    accumulated in sample order.
    """
    values = np.atleast_2d(_valuations(v))
    weights = softmax_weights(menu, values, cfg)  # (N, K+1)
    revenue = weights @ menu.prices  # (N,)

    # d revenue / d u_k = Y w_k (p_k - revenue)
    through_utility = cfg.Y * weights * (menu.prices[None, :] - revenue[:, None])
    price_grad = weights - through_utility
    allocation_grad = through_utility[:, :, None] * values[:, None, :]

    count = values.shape[0]
    gradient = RochetGradient(
        allocations=allocation_grad.sum(axis=0)[1:] / count,
        prices=price_grad.sum(axis=0)[1:] / count,
    )
    return float(revenue.sum() / count), gradient


def buyer_utility(menu: RochetMenu, v) -> ArrayOrScalar:
    """Utility the buyer obtains from the active option (never negative)"""
    values = _valuations(v)
    single = values.ndim == 1
    batch = np.atleast_2d(values)
    chosen = tie_broken_argmax(utilities(menu, batch), menu.prices)
    realized = np.take_along_axis(utilities(menu, batch), chosen[:, None], axis=1)[:, 0]
    return float(realized[0]) if single else realized
