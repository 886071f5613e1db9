"""Adam and the beta annealing schedule.

The optimizer works on flat lists of parameter arrays so it does not
care how a model organises its layers; callers pass gradients in the
same order as the parameters.  Updates happen in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AdamState:
    """First/second moment accumulators plus hyper-parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    """Allocate zeroed moment buffers shaped like ``params``."""
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, step_count=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, mutating ``params`` and ``state``.

    With a constant gradient of 1 the first step moves each coordinate
    by ``-lr / (1 + epsilon)`` because the bias corrections cancel at
    ``t = 1``.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params/grads do not match the optimizer state")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear warm-up of the KL weight.

    ``beta_at(schedule, step)`` returns
    ``beta_cap * min(1, step / total_anneal_steps)``; a non-positive
    ``total_anneal_steps`` means no warm-up, i.e. ``beta_cap`` from the
    very first step.
    """

    total_anneal_steps: int
    beta_cap: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta_cap <= 1.0:
            raise ValueError(f"beta_cap must lie in [0, 1], got {self.beta_cap}")


def beta_at(schedule: AnnealSchedule, step: int) -> float:
    """The KL weight in force at global step ``step`` (0-based)."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if schedule.total_anneal_steps <= 0:
        return schedule.beta_cap
    return schedule.beta_cap * min(1.0, step / schedule.total_anneal_steps)


def capture_best_beta(schedule: AnnealSchedule, history) -> float:
    """Beta at the step whose validation metric peaked.

    ``history`` is a sequence of ``(step, metric)`` pairs in evaluation
    order.  Ties go to the earliest step, i.e. the smallest beta.
    """
    history = list(history)
    if not history:
        raise ValueError("empty validation history")
    best_step, best_metric = history[0]
    for step, metric in history[1:]:
        if metric > best_metric:
            best_step, best_metric = step, metric
    return beta_at(schedule, best_step)
