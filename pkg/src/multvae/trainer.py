"""Mini-batch training loop with KL annealing and validation tracking.

Each epoch visits every training user once in a freshly shuffled order
(the trailing partial batch is used, not dropped).  The KL weight at
optimizer step ``t`` is exactly ``beta_at(schedule, t)``.  Validation
runs on a fold-in split at a configurable step cadence (default: once
per epoch); whenever the validation metric improves, the parameters are
snapshotted and, if a checkpoint path is configured, written atomically,
so an aborted run always leaves the last improvement on disk.

:func:`train_two_phase` implements the annealing protocol: anneal the
KL weight all the way to 1.0 while recording the validation curve, read
off the weight where the metric peaked, then retrain from scratch with
the same warm-up slope but capped at that best weight.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import EvalSplit, SparseClicks
from .errors import ConfigError, ShapeError
from .fileio import atomic_write
from .metrics import evaluate_model, evaluate_scores
from .models import (DAE, ModelParams, ModelSpec, clone_params, init_params,
                     objective_and_grads, param_arrays, save_checkpoint)
from .optim import (AnnealSchedule, adam_step, beta_at, capture_best_beta,
                    init_adam)

log = logging.getLogger(__name__)

# Second word of the shuffle stream's seed sequence; keeps epoch
# shuffles decorrelated from the per-step noise seeds, which use the
# step index as their second word.
_SHUFFLE_STREAM = 2 ** 32 + 1


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run."""

    epochs: int = 20
    batch_size: int = 500
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    total_anneal_steps: int = 200000
    beta_cap: float = 1.0
    # None picks the model-kind default: 0.01 for the denoising kind,
    # 0.0 for the variational one.
    weight_decay: float | None = None
    seed: int = 0
    metric: str = "ndcg@100"
    eval_every: int = 0
    eval_batch_size: int = 500
    checkpoint_path: str | None = None
    # Optionally stop raising beta once validation has worsened for
    # `anneal_patience` consecutive evaluations.
    freeze_beta_on_plateau: bool = False
    anneal_patience: int = 3


@dataclass
class EvalPoint:
    epoch: int
    step: int
    beta: float
    train_loss: float
    metric: float


@dataclass
class TrainReport:
    """Validation history and the best model seen during a run."""

    metric_name: str
    history: list[EvalPoint] = field(default_factory=list)
    best_metric: float = -np.inf
    best_step: int = 0
    best_epoch: int = 0
    best_beta: float = 0.0
    checkpoint_path: str | None = None
    best_params: ModelParams | None = None
    final_params: ModelParams | None = None

    def to_text(self) -> str:
        lines = [f"epoch\tstep\tbeta\ttrain_loss\t{self.metric_name}"]
        for p in self.history:
            lines.append(
                f"{p.epoch}\t{p.step}\t{p.beta:.6f}\t{p.train_loss:.6f}\t"
                f"{p.metric:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with atomic_write(path, "w") as handle:
            handle.write(self.to_text())


def step_seed(seed: int, step: int) -> int:
    """A decorrelated per-step seed for dropout and latent noise."""
    ss = np.random.SeedSequence([seed, step])
    return int(ss.generate_state(1, np.uint64)[0])


def resolve_weight_decay(spec: ModelSpec, cfg: TrainConfig) -> float:
    if cfg.weight_decay is not None:
        return cfg.weight_decay
    return 0.01 if spec.kind == DAE else 0.0


def train(train_clicks: SparseClicks, val_split: EvalSplit, spec: ModelSpec,
          cfg: TrainConfig) -> TrainReport:
    """Fit a model and return its validation history and best snapshot.

    Identical inputs, spec, and config produce an identical report and
    identical parameters; all randomness flows from ``cfg.seed``.
    """
    if train_clicks.n_items != spec.n_items:
        raise ShapeError(
            f"corpus has {train_clicks.n_items} items, model expects "
            f"{spec.n_items}"
        )
    if cfg.epochs < 1:
        raise ConfigError("epochs must be positive")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size must be positive")
    weight_decay = resolve_weight_decay(spec, cfg)
    schedule = AnnealSchedule(cfg.total_anneal_steps, cfg.beta_cap)
    params = init_params(spec, cfg.seed)
    arrays = param_arrays(params)
    adam = init_adam(arrays, lr=cfg.lr, beta1=cfg.adam_beta1,
                     beta2=cfg.adam_beta2, epsilon=cfg.adam_epsilon)
    # Dedicated stream for epoch shuffles, decorrelated from step seeds.
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, _SHUFFLE_STREAM])
    )
    report = TrainReport(metric_name=cfg.metric,
                         checkpoint_path=cfg.checkpoint_path)
    n_users = train_clicks.n_users
    step = 0
    losses: list[float] = []
    frozen_beta: float | None = None
    worse_streak = 0
    last_metric = -np.inf
    started = time.monotonic()

    def run_validation(epoch: int) -> None:
        nonlocal worse_streak, last_metric, frozen_beta
        beta_now = frozen_beta if frozen_beta is not None \
            else beta_at(schedule, step)
        val = evaluate_model(params, spec, val_split, [cfg.metric],
                             batch_size=cfg.eval_batch_size)
        metric = val.metrics[cfg.metric].mean
        train_loss = float(np.mean(losses)) if losses else float("nan")
        losses.clear()
        report.history.append(EvalPoint(epoch, step, beta_now, train_loss,
                                        metric))
        if metric > report.best_metric:
            report.best_metric = metric
            report.best_step = step
            report.best_epoch = epoch
            report.best_beta = beta_now
            report.best_params = clone_params(params)
            if cfg.checkpoint_path:
                save_checkpoint(cfg.checkpoint_path, params, spec,
                                train_clicks.item_ids)
        if cfg.freeze_beta_on_plateau and frozen_beta is None:
            worse_streak = worse_streak + 1 if metric < last_metric else 0
            if worse_streak >= cfg.anneal_patience:
                frozen_beta = beta_at(schedule, step)
                log.info("freezing beta at %.4f after %d worsening "
                         "validations", frozen_beta, worse_streak)
        last_metric = metric

    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n_users)
        for start in range(0, n_users, cfg.batch_size):
            chunk = perm[start:start + cfg.batch_size]
            beta = frozen_beta if frozen_beta is not None \
                else beta_at(schedule, step)
            x = train_clicks.dense_rows(chunk)
            loss, grads = objective_and_grads(
                params, spec, x, beta=beta, seed=step_seed(cfg.seed, step),
                train_mode=True, weight_decay=weight_decay,
            )
            adam_step(adam, arrays, grads)
            losses.append(loss)
            step += 1
            if cfg.eval_every > 0 and step % cfg.eval_every == 0:
                run_validation(epoch)
        if cfg.eval_every == 0:
            run_validation(epoch)
    if not report.history or report.history[-1].step != step:
        run_validation(cfg.epochs)
    report.final_params = params
    log.info("trained %d steps in %.1fs; best %s=%.4f at step %d (beta %.3f)",
             step, time.monotonic() - started, cfg.metric,
             report.best_metric, report.best_step, report.best_beta)
    return report


@dataclass
class TwoPhaseReport:
    """Results of the anneal-then-cap protocol."""

    phase1: TrainReport
    phase2: TrainReport
    best_beta: float


def train_two_phase(train_clicks: SparseClicks, val_split: EvalSplit,
                    spec: ModelSpec, cfg: TrainConfig) -> TwoPhaseReport:
    """Anneal beta to 1.0, find where validation peaked, retrain capped.

    Phase two reuses the warm-up slope: its anneal length is
    ``round(best_beta * total_anneal_steps)`` so beta grows at the same
    rate per step, just stopping at ``best_beta``.  Both phases start
    from the same seed, hence the same initialisation.
    """
    phase1_cfg = replace(cfg, beta_cap=1.0, checkpoint_path=None)
    phase1 = train(train_clicks, val_split, spec, phase1_cfg)
    schedule = AnnealSchedule(cfg.total_anneal_steps, 1.0)
    best_beta = capture_best_beta(
        schedule, [(p.step, p.metric) for p in phase1.history]
    )
    phase2_cfg = replace(
        cfg,
        total_anneal_steps=int(round(best_beta * cfg.total_anneal_steps)),
        beta_cap=best_beta,
    )
    phase2 = train(train_clicks, val_split, spec, phase2_cfg)
    return TwoPhaseReport(phase1, phase2, best_beta)


def popularity_scores(train_clicks: SparseClicks) -> np.ndarray:
    """Score every item by how many training users clicked it."""
    return train_clicks.item_counts().astype(np.float64)


def evaluate_popularity(train_clicks: SparseClicks, split: EvalSplit,
                        metric_names, batch_size: int = 500):
    """Evaluate the no-model popularity ranking under the same protocol
    as a trained model (fold-in items excluded per user)."""
    counts = popularity_scores(train_clicks)
    if len(counts) != split.fold_in.n_items:
        raise ShapeError("popularity scores do not match the split's items")

    def score_fn(fold_rows):
        return np.tile(counts, (fold_rows.shape[0], 1))

    return evaluate_scores(score_fn, split, metric_names,
                           batch_size=batch_size)
