"""
Menu Training
Softmax-smoothed stochastic gradient ascent for RochetNet and AMA menus
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mechanism_engine.ama_mechanism import softmax_payment_gradient, total_payment
from mechanism_engine.distributions import DensitySpec, SeededSampler
from mechanism_engine.errors import DivergenceError
from mechanism_engine.menu_core import SIMPLEX_TOL, AmaMenu, MechanismKind, Menu, RochetMenu
from mechanism_engine.rochet_mechanism import SoftmaxConfig, revenue_sample, softmax_revenue_gradient

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Hyperparameters of one training run (plain SGA, constant step)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    K: int = Field(..., ge=1, description="number of regular options")
    Y: float = Field(200.0, ge=1.0)
    steps: int = Field(2000, ge=0)
    batch_size: int = Field(512, ge=1)
    learning_rate: float = Field(0.05, ge=0.0)
    seed: int = Field(0, ge=0)
    init_scheme: Literal["uniform"] = "uniform"
    projection: Literal["clip_rescale"] = "clip_rescale"
    eval_every: int = Field(250, ge=0, description="argmax evaluation period; 0 disables")
    eval_samples: int = Field(4096, ge=1)
    log_every: int = Field(100, ge=1)

    @property
    def softmax(self) -> SoftmaxConfig:
        return SoftmaxConfig(Y=self.Y)


@dataclass(frozen=True)
class TrainRecord:
    step: int
    softmax_objective: float
    argmax_revenue: Optional[float] = None


@dataclass
class TrainResult:
    menu: Menu
    initial_menu: Menu
    history: List[TrainRecord] = field(default_factory=list)

    @property
    def objectives(self) -> List[float]:
        return [record.softmax_objective for record in self.history]

    @property
    def final_revenue(self) -> Optional[float]:
        evaluated = [r.argmax_revenue for r in self.history if r.argmax_revenue is not None]
        return evaluated[-1] if evaluated else None


def project_menu(menu: Menu) -> Menu:
    """
    Clip allocations to [0, 1], clamp prices at 0, rescale over-supplied AMA items

    Option 0 is reset to the default option. Feasible menus pass through unchanged.
    """
    allocations = np.clip(menu.allocations, 0.0, 1.0)
    allocations[0] = 0.0
    scalars = np.array(menu.scalars)
    scalars[0] = 0.0
    if menu.kind is MechanismKind.ROCHET:
        scalars = np.maximum(scalars, 0.0)
    else:
        supply = allocations.sum(axis=1, keepdims=True)
        allocations = np.where(supply > 1.0 + SIMPLEX_TOL, allocations / np.maximum(supply, 1.0), allocations)
    return menu.rebuild(allocations, scalars)


def init_menu(cfg: TrainConfig, kind: Union[MechanismKind, str], num_buyers: int, num_items: int,
              rng: np.random.Generator) -> Menu:
    """Random feasible menu with K regular options plus the default option"""
    kind = MechanismKind(kind)
    if kind is MechanismKind.ROCHET:
        allocations = rng.random((cfg.K, num_items))
        prices = rng.random(cfg.K)
        return RochetMenu.with_default(allocations, prices)
    allocations = rng.random((cfg.K, num_buyers, num_items))
    boosts = rng.uniform(-0.1, 0.0, cfg.K)
    return project_menu(AmaMenu.with_default(allocations, boosts))


def objective_and_gradient(menu: Menu, profiles: np.ndarray, cfg: SoftmaxConfig):
    """Batch-mean softmax objective and gradient; profiles have shape (N, m, n)"""
    if menu.kind is MechanismKind.ROCHET:
        return softmax_revenue_gradient(menu, profiles[:, 0, :], cfg)
    return softmax_payment_gradient(menu, profiles, cfg)


def argmax_revenue(menu: Menu, profiles: np.ndarray) -> float:
    if menu.kind is MechanismKind.ROCHET:
        return float(np.mean(revenue_sample(menu, profiles[:, 0, :])))
    return float(np.mean(total_payment(menu, profiles)))


def ascent_step(menu: Menu, gradient, learning_rate: float) -> Menu:
    """One projected ascent step on the regular options"""
    allocations = np.array(menu.allocations)
    scalars = np.array(menu.scalars)
    allocations[1:] += learning_rate * gradient.allocations
    scalars[1:] += learning_rate * (gradient.prices if menu.kind is MechanismKind.ROCHET else gradient.boosts)
    return project_menu(menu.rebuild(allocations, scalars))


def train(cfg: TrainConfig, kind: Union[MechanismKind, str], spec: DensitySpec,
          num_buyers: int = 1, num_items: int = 1, initial: Optional[Menu] = None) -> TrainResult:
    """
    Maximize the softmax objective by stochastic gradient ascent

    Batches come from the sampler's main stream; initialization and the
    held-out argmax evaluation sample use their own substreams, so the run is
    a deterministic function of the config.
    """
    kind = MechanismKind(kind)
    if kind is MechanismKind.ROCHET:
        num_buyers = 1
    sampler = SeededSampler(spec, cfg.seed)
    if initial is None:
        initial = init_menu(cfg, kind, num_buyers, num_items, sampler.substream(0).rng)
    held_out = sampler.substream(1).profiles(cfg.eval_samples, num_buyers, num_items) if cfg.eval_every else None
    smoothing = cfg.softmax

    logger.info(
        f"Training {kind.value} menu: K={cfg.K} m={num_buyers} n={num_items} Y={cfg.Y} "
        f"steps={cfg.steps} batch={cfg.batch_size} lr={cfg.learning_rate}"
    )
    menu = initial
    history: List[TrainRecord] = []
    for step in range(1, cfg.steps + 1):
        batch = sampler.profiles(cfg.batch_size, num_buyers, num_items)
        objective, gradient = objective_and_gradient(menu, batch, smoothing)
        if not np.isfinite(objective) or not np.all(np.isfinite(gradient.as_vector())):
            last = history[-1].softmax_objective if history else float("nan")
            raise DivergenceError(
                f"objective became {objective} at step {step} (last finite value {last:.6g}, "
                f"learning_rate={cfg.learning_rate}, Y={cfg.Y})"
            )
        menu = ascent_step(menu, gradient, cfg.learning_rate)

        revenue = None
        if held_out is not None and (step % cfg.eval_every == 0 or step == cfg.steps):
            revenue = argmax_revenue(menu, held_out)
        history.append(TrainRecord(step, objective, revenue))
        if step % cfg.log_every == 0:
            logger.info(f"step {step}: softmax objective {objective:.5f}"
                        + (f", argmax revenue {revenue:.5f}" if revenue is not None else ""))

    return TrainResult(menu=menu, initial_menu=initial, history=history)


def history_rows(result: TrainResult) -> List[Dict[str, Union[int, float, str]]]:
    """CSV rows: step, softmax_objective, argmax_revenue_estimate (blank between evaluations)"""
    return [
        {
            "step": record.step,
            "softmax_objective": record.softmax_objective,
            "argmax_revenue_estimate": "" if record.argmax_revenue is None else record.argmax_revenue,
        }
        for record in result.history
    ]


def backtracking_check(menu: Menu, profiles: np.ndarray, cfg: SoftmaxConfig,
                       step: float = 1e-3, shrink: float = 0.5, attempts: int = 30) -> Tuple[float, float]:
    """
    Full-batch ascent with step halving until the objective does not decrease

    Returns (objective before, objective after the accepted or last step).
    """
    before, gradient = objective_and_gradient(menu, profiles, cfg)
    after = before
    for _ in range(attempts):
        candidate = ascent_step(menu, gradient, step)
        after, _ = objective_and_gradient(candidate, profiles, cfg)
        if after >= before:
            break
        step *= shrink
    return before, after
