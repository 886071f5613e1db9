"""Dense layers with hand-written forward and backward passes.

Everything here works on float64 numpy arrays.  A multilayer perceptron
is just a list of :class:`DenseLayer`; the forward pass records a tape
of per-layer inputs and outputs, and the backward pass replays it in
reverse to produce exact gradients.  No autograd framework is involved,
which is the point: the gradients are checked against central finite
differences in the test-suite and by the ``gradcheck`` command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

TANH = "tanh"
IDENTITY = "identity"

_ACTIVATIONS = (TANH, IDENTITY)


@dataclass
class DenseLayer:
    """A fully connected layer ``y = act(x @ weight + bias)``.

    Parameters
    ----------
    weight : ndarray of shape (fan_in, fan_out)
    bias : ndarray of shape (fan_out,)
    activation : str
        Either ``"tanh"`` or ``"identity"``.
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError("layer weight must be 2-D (fan_in, fan_out)")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match fan_out "
                f"{self.weight.shape[1]}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


def glorot_layer(fan_in: int, fan_out: int, activation: str,
                 rng: np.random.Generator) -> DenseLayer:
    """Initialise a layer with Glorot-uniform weights and zero biases.

    Weights are drawn from U(-a, a) with ``a = sqrt(6 / (fan_in + fan_out))``.
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return DenseLayer(weight, np.zeros(fan_out), activation)


def _tanh_backward(grad_out: np.ndarray, activated: np.ndarray) -> np.ndarray:
    # d tanh(p)/dp expressed through the cached layer output tanh(p).
    return grad_out * (1.0 - activated * activated)


def forward_mlp(layers: list[DenseLayer], x: np.ndarray):
    """Run ``x`` through the stack and record a tape for the backward pass.

    Parameters
    ----------
    layers : list of DenseLayer
    x : ndarray of shape (batch, fan_in of first layer)

    Returns
    -------
    output : ndarray of shape (batch, fan_out of last layer)
    tape : list of (layer_input, layer_output) pairs, one per layer
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
    if not layers:
        raise ShapeError("forward_mlp needs at least one layer")
    if x.shape[1] != layers[0].fan_in:
        raise ShapeError(
            f"input width {x.shape[1]} does not match first layer fan_in "
            f"{layers[0].fan_in}"
        )
    tape = []
    out = x
    for layer in layers:
        pre = out @ layer.weight + layer.bias
        post = np.tanh(pre) if layer.activation == TANH else pre
        tape.append((out, post))
        out = post
    return out, tape


def backward_mlp(layers: list[DenseLayer], tape, grad_output: np.ndarray):
    """Backpropagate ``grad_output`` through a taped forward pass.

    Returns
    -------
    grads : list of (grad_weight, grad_bias), aligned with ``layers``
    grad_input : ndarray, gradient with respect to the batch input
    """
    if len(tape) != len(layers):
        raise ShapeError("tape length does not match layer count")
    grad = np.asarray(grad_output, dtype=np.float64)
    if grad.shape != tape[-1][1].shape:
        raise ShapeError(
            f"grad_output shape {grad.shape} does not match forward output "
            f"{tape[-1][1].shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        layer_in, layer_out = tape[k]
        if layer.activation == TANH:
            grad = _tanh_backward(grad, layer_out)
        grads[k] = (layer_in.T @ grad, grad.sum(axis=0))
        grad = grad @ layer.weight.T
    return grads, grad


def input_dropout(x: np.ndarray, keep_prob: float, seed,
                  train_mode: bool = True) -> np.ndarray:
    """Inverted dropout: zero entries with prob ``1 - keep_prob``, scale
    survivors by ``1 / keep_prob`` so the expectation is unchanged.

    In eval mode (``train_mode=False``) or with ``keep_prob == 1`` the
    input is returned untouched.  The mask is a pure function of ``seed``.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    x = np.asarray(x, dtype=np.float64)
    if not train_mode or keep_prob == 1.0:
        return x
    rng = np.random.default_rng(seed)
    mask = rng.random(x.shape) < keep_prob
    return x * (mask / keep_prob)


def grad_check(loss_fn, named_params, analytic_grads, step: float = 1e-5):
    """Compare analytic gradients against central finite differences.

    Parameters
    ----------
    loss_fn : callable () -> float
        Evaluates the scalar loss at the *current* contents of the
        parameter arrays.  It is called repeatedly while entries of the
        arrays in ``named_params`` are perturbed in place.
    named_params : list of (name, ndarray)
        The parameter blocks to probe.  Arrays are restored afterwards.
    analytic_grads : dict name -> ndarray
        Analytic gradient for each block, same shape as the block.
    step : float
        Finite-difference half-step.

    Returns
    -------
    worst : float
        Max over all coordinates of ``|analytic - numeric| / denom`` with
        ``denom = max(|analytic|, |numeric|, 1e-8)``.
    per_block : dict name -> float
        The same maximum taken per parameter block.
    """
    per_block: dict[str, float] = {}
    for name, param in named_params:
        grad = np.asarray(analytic_grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(
                f"analytic gradient for {name!r} has shape {grad.shape}, "
                f"expected {param.shape}"
            )
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            loss_plus = loss_fn()
            flat[i] = saved - step
            loss_minus = loss_fn()
            flat[i] = saved
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NumericError(
                    f"non-finite loss while probing {name!r} coordinate {i}"
                )
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
        per_block[name] = worst
    return max(per_block.values()), per_block
