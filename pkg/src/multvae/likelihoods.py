"""Per-user log-likelihoods of a click row given decoder outputs.

Each function returns the log-likelihood per row together with its exact
gradient with respect to the decoder output, so callers never have to
differentiate through a softmax or a sigmoid themselves.  Inputs may be
a single row (1-D) or a batch (2-D); the result keeps the leading batch
axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

MULTINOMIAL = "multinomial"
GAUSSIAN = "gaussian"
LOGISTIC = "logistic"

LIKELIHOOD_KINDS = (MULTINOMIAL, GAUSSIAN, LOGISTIC)


@dataclass(frozen=True)
class LikelihoodKind:
    """Which observation model to use, plus its hyper-parameters.

    ``gaussian_c0``/``gaussian_c1`` are the confidence weights applied to
    unclicked and clicked entries of the Gaussian model; the clicked
    weight must exceed the unclicked one and both must be positive.
    """

    kind: str = MULTINOMIAL
    gaussian_c0: float = 1.0
    gaussian_c1: float = 2.0

    def __post_init__(self):
        if self.kind not in LIKELIHOOD_KINDS:
            raise ValueError(f"unknown likelihood kind {self.kind!r}")
        if not 0.0 < self.gaussian_c0 < self.gaussian_c1:
            raise ValueError(
                "gaussian confidence weights need 0 < c0 < c1, got "
                f"c0={self.gaussian_c0}, c1={self.gaussian_c1}"
            )


def _check_pair(x, f):
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if x.shape != f.shape:
        raise ShapeError(f"data shape {x.shape} != output shape {f.shape}")
    if x.ndim not in (1, 2):
        raise ShapeError(f"expected 1-D or 2-D arrays, got {x.ndim}-D")
    return x, f


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, stabilised by max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def multinomial_ll(x: np.ndarray, logits: np.ndarray):
    """Multinomial log-likelihood ``sum_i x_i * log softmax(logits)_i``.

    The additive ``log N_u!`` style constant that does not depend on the
    logits is dropped.  Gradient w.r.t. the logits is
    ``x - N_u * softmax(logits)`` with ``N_u = sum_i x_i``.
    """
    x, logits = _check_pair(x, logits)
    ls = log_softmax(logits)
    ll = (x * ls).sum(axis=-1)
    n_u = x.sum(axis=-1, keepdims=True)
    grad = x - n_u * np.exp(ls)
    return ll, grad


def gaussian_ll(x: np.ndarray, f: np.ndarray, c0: float = 1.0,
                c1: float = 2.0):
    """Confidence-weighted Gaussian log-likelihood.

    ``ll = -sum_i (c_i / 2) (x_i - f_i)^2`` with ``c_i = c1`` where
    ``x_i > 0`` and ``c_i = c0`` elsewhere; constants independent of ``f``
    are dropped.  Gradient w.r.t. ``f`` is ``c * (x - f)``.
    """
    x, f = _check_pair(x, f)
    c = np.where(x > 0, c1, c0)
    diff = x - f
    ll = -0.5 * (c * diff * diff).sum(axis=-1)
    return ll, c * diff


def logistic_ll(x: np.ndarray, f: np.ndarray):
    """Bernoulli log-likelihood of binary ``x`` under logits ``f``.

    Computed as ``-sum_i softplus(-s_i f_i)`` with ``s = 2x - 1``, which
    is the numerically safe form of
    ``sum_i x_i log sigma(f_i) + (1 - x_i) log(1 - sigma(f_i))``.
    Gradient w.r.t. ``f`` is ``x - sigma(f)``.
    """
    x, f = _check_pair(x, f)
    s = 2.0 * x - 1.0
    ll = -np.logaddexp(0.0, -s * f).sum(axis=-1)
    sigma = np.exp(-np.logaddexp(0.0, -f))
    return ll, x - sigma


def log_likelihood(kind: LikelihoodKind, x: np.ndarray, f: np.ndarray):
    """Dispatch to the configured likelihood; returns ``(ll, grad_f)``."""
    if kind.kind == MULTINOMIAL:
        return multinomial_ll(x, f)
    if kind.kind == GAUSSIAN:
        return gaussian_ll(x, f, kind.gaussian_c0, kind.gaussian_c1)
    return logistic_ll(x, f)
