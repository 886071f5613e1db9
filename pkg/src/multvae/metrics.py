"""Top-R ranking metrics and the held-out evaluation loop.

Scores are turned into a full ranking (descending score, ties broken by
ascending item index), fold-in items are removed from the candidate set
by forcing their scores to the most negative finite float, and each
user's held-out items are scored with Recall@R and truncated NDCG@R.
Means come with standard errors so models can be compared honestly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .corpus import EvalSplit
from .errors import ConfigError, DataError, ShapeError
from .fileio import atomic_write
from .models import NEG_INF_SENTINEL, ModelParams, ModelSpec, predict_scores

log = logging.getLogger(__name__)


def rank(scores: np.ndarray) -> np.ndarray:
    """Item indices from best to worst score; ties go to the smaller
    index.  Works on a single score vector or row-wise on a batch."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim not in (1, 2):
        raise ShapeError(f"expected 1-D or 2-D scores, got {scores.ndim}-D")
    # Stable sort on the negated scores keeps equal-score items in
    # ascending index order.
    return np.argsort(-scores, axis=-1, kind="stable")


def recall_at_r(ranked: np.ndarray, held_out: np.ndarray, r: int) -> float:
    """Fraction of the top ``r`` that hits ``held_out``, normalised by
    ``min(r, |held_out|)`` so a perfect ranking always scores 1."""
    if r < 1:
        raise ValueError(f"r must be positive, got {r}")
    held_out = np.asarray(held_out)
    if held_out.size == 0:
        raise DataError("cannot compute recall for an empty held-out set")
    hits = int(np.isin(ranked[:r], held_out).sum())
    return hits / min(r, held_out.size)


def ndcg_at_r(ranked: np.ndarray, held_out: np.ndarray, r: int) -> float:
    """Truncated NDCG@r with binary relevance.

    The gain ``2^rel - 1`` reduces to the 0/1 relevance itself, so
    ``DCG = sum_hits 1 / log2(position + 1)`` (positions start at 1) and
    the normaliser puts every held-out item (up to ``r``) at the top.
    """
    if r < 1:
        raise ValueError(f"r must be positive, got {r}")
    held_out = np.asarray(held_out)
    if held_out.size == 0:
        raise DataError("cannot compute ndcg for an empty held-out set")
    discounts = 1.0 / np.log2(np.arange(r, dtype=np.float64) + 2.0)
    hits = np.isin(ranked[:r], held_out)
    # fsum is exactly rounded, so the score does not depend on the
    # accumulation order and written reports are bit-identical across
    # builds (a BLAS dot product here is not)
    dcg = math.fsum(discounts[:hits.size][hits])
    ideal = math.fsum(discounts[:min(r, held_out.size)])
    return dcg / ideal


def parse_metric(name: str) -> tuple[str, int]:
    """Split ``"ndcg@100"`` into ``("ndcg", 100)``."""
    try:
        kind, at = name.strip().lower().split("@")
        r = int(at)
    except ValueError:
        raise ConfigError(
            f"bad metric {name!r}, expected e.g. 'ndcg@100' or 'recall@20'"
        ) from None
    if kind not in ("ndcg", "recall"):
        raise ConfigError(f"unknown metric kind {kind!r}")
    if r < 1:
        raise ConfigError(f"metric cutoff must be positive, got {r}")
    return kind, r


@dataclass
class MetricSummary:
    mean: float
    stderr: float
    per_user: np.ndarray


@dataclass
class EvalReport:
    """Per-metric summaries over the evaluated users."""

    n_users: int
    metrics: dict[str, MetricSummary] = field(default_factory=dict)
    dropped_users: int = 0

    def to_text(self) -> str:
        lines = ["metric\tmean\tstderr\tn_users"]
        for name, summary in self.metrics.items():
            lines.append(
                f"{name}\t{summary.mean:.6f}\t{summary.stderr:.6f}\t"
                f"{self.n_users}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with atomic_write(path, "w") as handle:
            handle.write(self.to_text())


def _metric_value(kind: str, ranked: np.ndarray, held: np.ndarray,
                  r: int) -> float:
    if kind == "ndcg":
        return ndcg_at_r(ranked, held, r)
    return recall_at_r(ranked, held, r)


def evaluate_scores(score_fn, split: EvalSplit, metric_names,
                    batch_size: int = 500, threads: int = 1) -> EvalReport:
    """Score every user in ``split`` and summarise the given metrics.

    ``score_fn`` receives a dense (batch, n_items) fold-in matrix and
    returns one score per item and user.  Fold-in items are excluded
    from the candidate set here regardless of what the scorer did, so
    every scorer is evaluated under the same protocol.  Users with an
    empty held-out row are skipped with a logged count.
    """
    parsed = [(name, *parse_metric(name)) for name in metric_names]
    if not parsed:
        raise ConfigError("no metrics requested")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    n = split.n_users
    values = {name: np.full(n, np.nan) for name, _, _ in parsed}
    skipped = np.zeros(n, dtype=bool)
    chunks = [np.arange(start, min(start + batch_size, n))
              for start in range(0, n, batch_size)]

    def run_chunk(chunk):
        fold_rows = split.fold_in.dense_rows(chunk)
        scores = np.array(score_fn(fold_rows), dtype=np.float64, copy=True)
        if scores.shape != fold_rows.shape:
            raise ShapeError(
                f"scorer returned shape {scores.shape}, expected "
                f"{fold_rows.shape}"
            )
        scores[fold_rows > 0] = NEG_INF_SENTINEL
        ranked = rank(scores)
        for pos, u in enumerate(chunk):
            held = split.held_out.row(int(u))
            if held.size == 0:
                skipped[u] = True
                continue
            for name, kind, r in parsed:
                values[name][u] = _metric_value(kind, ranked[pos], held, r)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for chunk in chunks:
            run_chunk(chunk)

    kept = ~skipped
    n_kept = int(kept.sum())
    if n_kept == 0:
        raise DataError("no user had a non-empty held-out row")
    if n_kept < n:
        log.info("evaluate: skipped %d users with empty held-out rows",
                 n - n_kept)
    report = EvalReport(n_users=n_kept, dropped_users=n - n_kept)
    for name, _, _ in parsed:
        per_user = values[name][kept]
        stderr = (float(per_user.std(ddof=1)) / np.sqrt(n_kept)
                  if n_kept > 1 else 0.0)
        report.metrics[name] = MetricSummary(float(per_user.mean()), stderr,
                                             per_user)
    return report


def evaluate_model(params: ModelParams, spec: ModelSpec, split: EvalSplit,
                   metric_names, batch_size: int = 500,
                   threads: int = 1) -> EvalReport:
    """Evaluate a trained autoencoder under the fold-in protocol."""
    if spec.n_items != split.fold_in.n_items:
        raise ShapeError(
            f"model scores {spec.n_items} items but the split has "
            f"{split.fold_in.n_items}"
        )

    def score_fn(fold_rows):
        return predict_scores(params, spec, fold_rows, exclude_fold_in=True)

    return evaluate_scores(score_fn, split, metric_names,
                           batch_size=batch_size, threads=threads)


@dataclass
class ActivityBin:
    """Summary of one user-activity bin (users sorted by fold-in size)."""

    n_users: int
    min_activity: int
    max_activity: int
    mean: float
    stderr: float


def _activity_bins(n: int, n_bins: int) -> list[np.ndarray]:
    if n_bins < 1:
        raise ConfigError("need at least one bin")
    if n < n_bins:
        raise DataError(f"cannot split {n} users into {n_bins} bins")
    base = n // n_bins
    remainder = n % n_bins
    sizes = [base + (1 if b < remainder else 0) for b in range(n_bins)]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [np.arange(edges[b], edges[b + 1]) for b in range(n_bins)]


def activity_breakdown(per_user: np.ndarray, fold_in_sizes: np.ndarray,
                       n_bins: int = 5) -> list[ActivityBin]:
    """Mean metric per user-activity bin.

    Users are sorted by fold-in click count (stable, so equal counts
    keep their original order) and split into ``n_bins`` near-equal
    groups; when the count does not divide evenly the earlier (least
    active) bins get the extra user.
    """
    per_user = np.asarray(per_user, dtype=np.float64)
    fold_in_sizes = np.asarray(fold_in_sizes)
    if per_user.shape != fold_in_sizes.shape:
        raise ShapeError("per-user values and activities differ in length")
    order = np.argsort(fold_in_sizes, kind="stable")
    out = []
    for idx in _activity_bins(len(per_user), n_bins):
        members = order[idx]
        vals = per_user[members]
        acts = fold_in_sizes[members]
        stderr = (float(vals.std(ddof=1)) / np.sqrt(len(vals))
                  if len(vals) > 1 else 0.0)
        out.append(ActivityBin(len(members), int(acts.min()),
                               int(acts.max()), float(vals.mean()), stderr))
    return out


@dataclass
class PairedBin(ActivityBin):
    """Activity bin comparing two models on the same users."""

    mean_other: float = 0.0
    diff: float = 0.0
    t_stat: float = 0.0
    p_value: float = 1.0
    stars: str = ""


def significance_stars(p_value: float) -> str:
    """``***``, ``**``, ``*`` at the 0.001, 0.01, 0.05 levels."""
    for stars, alpha in (("***", 0.001), ("**", 0.01), ("*", 0.05)):
        if p_value < alpha:
            return stars
    return ""


def paired_activity_breakdown(per_user_a: np.ndarray,
                              per_user_b: np.ndarray,
                              fold_in_sizes: np.ndarray,
                              n_bins: int = 5) -> list[PairedBin]:
    """Like :func:`activity_breakdown` but for two models evaluated on
    identical users, with a two-sided paired t-test per bin on the
    per-user differences ``a - b``."""
    a = np.asarray(per_user_a, dtype=np.float64)
    b = np.asarray(per_user_b, dtype=np.float64)
    fold_in_sizes = np.asarray(fold_in_sizes)
    if a.shape != b.shape or a.shape != fold_in_sizes.shape:
        raise ShapeError("paired breakdown needs equal-length inputs")
    order = np.argsort(fold_in_sizes, kind="stable")
    out = []
    for idx in _activity_bins(len(a), n_bins):
        members = order[idx]
        va, vb = a[members], b[members]
        acts = fold_in_sizes[members]
        diff = va - vb
        if len(diff) > 1 and diff.std(ddof=1) > 0:
            t_stat, p_value = stats.ttest_rel(va, vb)
        elif np.any(diff != 0):
            # Identical non-zero difference for every user: zero variance,
            # so the t statistic degenerates to a sure win.
            t_stat, p_value = np.inf * np.sign(float(diff.mean())), 0.0
        else:
            t_stat, p_value = 0.0, 1.0
        stderr = (float(va.std(ddof=1)) / np.sqrt(len(va))
                  if len(va) > 1 else 0.0)
        out.append(PairedBin(
            n_users=len(members), min_activity=int(acts.min()),
            max_activity=int(acts.max()), mean=float(va.mean()),
            stderr=stderr, mean_other=float(vb.mean()),
            diff=float(diff.mean()), t_stat=float(t_stat),
            p_value=float(p_value), stars=significance_stars(float(p_value)),
        ))
    return out
