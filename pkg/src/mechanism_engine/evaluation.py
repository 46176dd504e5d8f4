"""
Evaluation Engine
Monte-Carlo revenue, common-random-number path audits, empirical reducibility
and the closed-form softmax smoothing bounds
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from scipy.special import softmax

from mechanism_engine import ama_mechanism, rochet_mechanism
from mechanism_engine.connectivity import ReductionSet
from mechanism_engine.distributions import DensitySpec, SeededSampler, analytic_revenue_1d, effective_density_bound
from mechanism_engine.errors import PreconditionError, SpecError
from mechanism_engine.menu_core import MechanismKind, Menu, MenuPath, path_point
from mechanism_engine.rochet_mechanism import SoftmaxConfig
from mechanism_engine.settings import max_workers

logger = logging.getLogger(__name__)

# Audit failures need the estimate to drop this many standard errors below the floor
AUDIT_STDERR_MULTIPLIER = 3.0

# Empirical smoothing gaps are compared against the bound with this many standard errors of slack
GAP_STDERR_MULTIPLIER = 4.0

AuditMethod = Literal["auto", "monte_carlo", "analytic"]


@dataclass(frozen=True)
class RevenueEstimate:
    estimate: float
    stderr: float
    samples: int


def draw_profiles(menu: Menu, spec: DensitySpec, samples: int, seed: int) -> np.ndarray:
    """(N, m, n) sample set for `menu`'s shape"""
    if samples < 1:
        raise PreconditionError(f"need at least one sample, got {samples}")
    return SeededSampler(spec, seed).profiles(samples, menu.num_buyers, menu.num_items)


def per_sample_revenue(menu: Menu, profiles: np.ndarray, smoothing: Optional[SoftmaxConfig] = None) -> np.ndarray:
    """Revenue (RochetNet price, AMA total payment, or their softmax versions) per profile"""
    if menu.kind is MechanismKind.ROCHET:
        valuations = profiles[:, 0, :]
        if smoothing is None:
            return np.asarray(rochet_mechanism.revenue_sample(menu, valuations), dtype=float)
        return np.asarray(rochet_mechanism.softmax_revenue_sample(menu, valuations, smoothing), dtype=float)
    if smoothing is None:
        return np.asarray(ama_mechanism.total_payment(menu, profiles), dtype=float)
    return np.asarray(ama_mechanism.softmax_expected_payment(menu, profiles, smoothing), dtype=float)


def _summarize(values: np.ndarray) -> RevenueEstimate:
    count = int(values.shape[0])
    stderr = float(np.std(values, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    return RevenueEstimate(float(np.mean(values)), stderr, count)


def mc_revenue(menu: Menu, spec: DensitySpec, samples: int, seed: int,
               smoothing: Optional[SoftmaxConfig] = None) -> RevenueEstimate:
    """Sample-mean revenue with stderr = sample std / sqrt(N)"""
    profiles = draw_profiles(menu, spec, samples, seed)
    return _summarize(per_sample_revenue(menu, profiles, smoothing))


@dataclass
class PathReport:
    ts: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    slack_by_t: np.ndarray  # min over samples of revenue minus the per-sample floor
    min_per_sample_slack: float
    epsilon: float
    passed: bool
    method: str
    samples: int

    @property
    def floor(self) -> float:
        return float(min(self.estimates[0], self.estimates[-1]) - self.epsilon)

    @property
    def worst_t(self) -> float:
        return float(self.ts[int(np.argmin(self.estimates))])

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"t": float(t), "rev_estimate": float(est), "stderr": float(se), "min_per_sample_slack": float(slack)}
            for t, est, se, slack in zip(self.ts, self.estimates, self.stderrs, self.slack_by_t)
        ]


def analytic_audit_available(path: MenuPath, spec: DensitySpec) -> bool:
    return path.kind is MechanismKind.ROCHET and path.start.num_items == 1 and spec.kind != "product_of"


def revenue_matrix(path: MenuPath, ts, profiles: np.ndarray) -> np.ndarray:
    """(T, N) realized revenues along the path, one fixed sample set for every t"""
    ts = [float(t) for t in ts]
    with ThreadPoolExecutor(max_workers=min(max_workers(), len(ts))) as pool:
        rows = list(pool.map(lambda t: per_sample_revenue(path_point(path, t), profiles), ts))
    return np.vstack(rows)


def path_audit(path: MenuPath, spec: DensitySpec, samples: int, grid_points: int, epsilon: float, seed: int,
               method: AuditMethod = "auto") -> PathReport:
    """
    Audit revenue along a path on an evenly spaced t grid

    Passes iff min_t estimate >= min(endpoint estimates) - epsilon - 3 * max stderr.
    The analytic method evaluates single-item RochetNet revenue exactly
    (stderr 0); the per-sample slack always comes from the common sample set.
    """
    if grid_points < 2:
        raise PreconditionError(f"an audit grid needs at least 2 points (the endpoints), got {grid_points}")
    if epsilon < 0:
        raise PreconditionError(f"epsilon must be non-negative, got {epsilon}")
    if method == "analytic" and not analytic_audit_available(path, spec):
        raise PreconditionError("analytic audits need a single-item RochetNet path and a single-item density")
    use_analytic = method == "analytic" or (method == "auto" and analytic_audit_available(path, spec))

    ts = np.linspace(0.0, 1.0, grid_points)
    profiles = draw_profiles(path.start, spec, samples, seed)
    revenues = revenue_matrix(path, ts, profiles)

    floor_per_sample = np.minimum(revenues[0], revenues[-1]) - epsilon
    slack_by_t = (revenues - floor_per_sample).min(axis=1)
    if use_analytic:
        estimates = np.array([analytic_revenue_1d(path_point(path, t), spec) for t in ts])
        stderrs = np.zeros_like(estimates)
    else:
        summaries = [_summarize(row) for row in revenues]
        estimates = np.array([s.estimate for s in summaries])
        stderrs = np.array([s.stderr for s in summaries])

    threshold = min(estimates[0], estimates[-1]) - epsilon - AUDIT_STDERR_MULTIPLIER * float(stderrs.max())
    passed = bool(estimates.min() >= threshold)
    report = PathReport(
        ts=ts,
        estimates=estimates,
        stderrs=stderrs,
        slack_by_t=slack_by_t,
        min_per_sample_slack=float(slack_by_t.min()),
        epsilon=float(epsilon),
        passed=passed,
        method="analytic" if use_analytic else "monte_carlo",
        samples=int(profiles.shape[0]),
    )
    logger.info(
        f"Path audit ({report.method}, {path.num_pieces} pieces, {grid_points} points): "
        f"min revenue {estimates.min():.6f} at t={report.worst_t:.3f}, floor {report.floor:.6f}, "
        f"min per-sample slack {report.min_per_sample_slack:.3g} -> {'PASS' if passed else 'FAIL'}"
    )
    return report


@dataclass
class ReducibilityReport:
    selected: ReductionSet
    epsilon_hat: float
    samples: int
    cap: int
    target: float  # required event frequency
    history: List[Tuple[int, float]] = field(default_factory=list)
    event_frequency: Optional[float] = None  # AMA: joint winner event

    @property
    def reached_target(self) -> bool:
        return 1.0 - self.epsilon_hat >= self.target


def winner_table(menu: Menu, profiles: np.ndarray) -> np.ndarray:
    """(N, m+1) AMA winners [k(v), k(v_-1), ...]; a single column for RochetNet"""
    if menu.kind is MechanismKind.ROCHET:
        return np.asarray(rochet_mechanism.active_option(menu, profiles[:, 0, :]))[:, None]
    batch = ama_mechanism.vcg_payments(menu, profiles)
    return np.column_stack([batch.winners, batch.winners_without])


def estimate_reducibility(menu: Menu, spec: DensitySpec, samples: int, epsilon: float, seed: int) -> ReducibilityReport:
    """
    Greedy empirical reduction set

    Starts from {0} and adds options by decreasing frequency of appearing among
    the winners until the winner event reaches 1 - epsilon (RochetNet) or
    1 - epsilon/m (AMA, joint over k(v) and every k(v_-i)), or the
    sqrt(K+1) cap binds.
    """
    profiles = draw_profiles(menu, spec, samples, seed)
    winners = winner_table(menu, profiles)
    count = winners.shape[0]
    target = 1.0 - (epsilon if menu.kind is MechanismKind.ROCHET else epsilon / menu.num_buyers)
    cap = ReductionSet.cap(menu.size)

    appearances = np.zeros(menu.size, dtype=int)
    for k in range(menu.size):
        appearances[k] = int(np.any(winners == k, axis=1).sum())
    # stable sort keeps the lower index first among equal frequencies
    order = [int(k) for k in np.argsort(-appearances, kind="stable") if k != 0 and appearances[k] > 0]

    selected = [0]
    covered = np.all(np.isin(winners, selected), axis=1)
    epsilon_hat = 1.0 - covered.mean()
    history = [(1, float(epsilon_hat))]
    for k in order:
        if 1.0 - epsilon_hat >= target or len(selected) >= cap:
            break
        selected.append(k)
        covered = np.all(np.isin(winners, selected), axis=1)
        epsilon_hat = 1.0 - covered.mean()
        history.append((len(selected), float(epsilon_hat)))

    report = ReducibilityReport(
        selected=ReductionSet.of(selected),
        epsilon_hat=float(epsilon_hat),
        samples=count,
        cap=cap,
        target=target,
        history=history,
        event_frequency=None if menu.kind is MechanismKind.ROCHET else float(covered.mean()),
    )
    logger.info(
        f"Reducibility: |K'|={len(report.selected)} of {menu.size} (cap {cap}), "
        f"epsilon_hat={report.epsilon_hat:.5f}, target event frequency {target:.5f}"
    )
    return report


def rochet_smoothing_bound(num_regular: int, num_items: int, Y: float, density_bound: float) -> float:
    """(K+1)/Y * ((n X + 1 + X/Y) log(Y/X) + X)"""
    _check_smoothing_args(Y, density_bound)
    X = density_bound
    return (num_regular + 1) / Y * ((num_items * X + 1.0 + X / Y) * math.log(Y / X) + X)


def ama_smoothing_bound(num_regular: int, num_items: int, num_buyers: int, Y: float, density_bound: float) -> float:
    """m(K+1)/(eY) + n m X (K+1)/Y * (1 + log(mY / (mX)))"""
    _check_smoothing_args(Y, density_bound)
    X, m, size = density_bound, num_buyers, num_regular + 1
    return m * size / (math.e * Y) + num_items * m * X * size / Y * (1.0 + math.log(m * Y / (m * X)))


def _check_smoothing_args(Y: float, density_bound: Optional[float]) -> None:
    if Y < 1.0:
        raise PreconditionError(f"softmax temperature must be >= 1, got {Y}")
    if density_bound is None:
        raise SpecError("the smoothing bound needs a density bound X")
    if density_bound <= 0.0:
        raise PreconditionError(f"density bound must be positive, got {density_bound}")


def softmax_shortfall(values, Y: float) -> np.ndarray:
    """max(a) - softmax(Y a)-weighted average of a, over the last axis"""
    values = np.asarray(values, dtype=float)
    weights = softmax(Y * values, axis=-1)
    return values.max(axis=-1) - (weights * values).sum(axis=-1)


def shortfall_bound(num_values: int, Y: float) -> float:
    """L / (e Y)"""
    return num_values / (math.e * Y)


@dataclass(frozen=True)
class MenuShape:
    kind: MechanismKind
    num_regular: int
    num_items: int
    num_buyers: int = 1

    @classmethod
    def of(cls, menu: Menu) -> "MenuShape":
        return cls(menu.kind, menu.num_regular, menu.num_items, menu.num_buyers)


@dataclass(frozen=True)
class GapReport:
    shape: MenuShape
    Y: float
    density_bound: float
    bound: float
    empirical: Optional[float] = None
    stderr: Optional[float] = None
    argmax_revenue: Optional[float] = None
    softmax_revenue: Optional[float] = None

    @property
    def within_bound(self) -> bool:
        if self.empirical is None:
            return True
        return self.empirical <= self.bound + GAP_STDERR_MULTIPLIER * self.stderr


def smoothing_bound(shape: MenuShape, Y: float, density_bound: float) -> float:
    if shape.kind is MechanismKind.ROCHET:
        return rochet_smoothing_bound(shape.num_regular, shape.num_items, Y, density_bound)
    return ama_smoothing_bound(shape.num_regular, shape.num_items, shape.num_buyers, Y, density_bound)


def softmax_gap_report(shape: Union[MenuShape, Menu], Y: float, density_bound: Optional[float] = None,
                       menu: Optional[Menu] = None, spec: Optional[DensitySpec] = None,
                       samples: int = 100_000, seed: int = 0) -> GapReport:
    """
    Closed-form bound on |Rev - Rev_softmax|, plus the Monte-Carlo gap when a menu and spec are given

    The empirical gap is |mean(argmax revenue - softmax revenue)| on one common
    sample set, with the stderr of that paired difference.
    """
    if not isinstance(shape, MenuShape):
        menu = shape if menu is None else menu
        shape = MenuShape.of(shape)
    if density_bound is None and spec is not None:
        density_bound = effective_density_bound(spec, shape.num_items)
    bound = smoothing_bound(shape, Y, density_bound)
    if menu is None or spec is None:
        return GapReport(shape=shape, Y=float(Y), density_bound=float(density_bound), bound=bound)

    profiles = draw_profiles(menu, spec, samples, seed)
    hard = per_sample_revenue(menu, profiles)
    smooth = per_sample_revenue(menu, profiles, SoftmaxConfig(Y=Y))
    difference = _summarize(hard - smooth)
    report = GapReport(
        shape=shape,
        Y=float(Y),
        density_bound=float(density_bound),
        bound=bound,
        empirical=abs(difference.estimate),
        stderr=difference.stderr,
        argmax_revenue=float(hard.mean()),
        softmax_revenue=float(smooth.mean()),
    )
    logger.info(
        f"Softmax gap at Y={Y:g}: empirical {report.empirical:.6f} (stderr {report.stderr:.2g}) "
        f"vs bound {bound:.6f}"
    )
    if not report.within_bound:
        logger.warning(f"Empirical softmax gap {report.empirical:.6f} exceeds the bound {bound:.6f}")
    return report
