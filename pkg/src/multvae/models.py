"""Variational and denoising autoencoders over click rows.

Both model kinds share the same skeleton: L2-normalise a user's click
row, apply input dropout (training only), run the encoder MLP, then the
decoder MLP, and score the reconstruction with one of the likelihoods.
The variational model's encoder emits mean and log-variance of a
diagonal Gaussian over the latent code and the objective subtracts
``beta`` times the KL divergence to the standard normal prior; the
denoising model maps straight to a latent point and relies on the input
dropout for regularisation, usually together with weight decay.

Hidden junctions use tanh; the layers producing the latent statistics,
the latent code, and the decoder output are linear.  All gradients are
hand-derived and validated against finite differences.
"""

from __future__ import annotations

import copy
import io
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (CorruptCheckpointError, DataError, NumericError,
                     ShapeError)
from .fileio import atomic_write, read_string_table, write_string_table
from .likelihoods import (GAUSSIAN, LIKELIHOOD_KINDS, LOGISTIC, MULTINOMIAL,
                          LikelihoodKind, log_likelihood)
from .tensor import (IDENTITY, TANH, DenseLayer, backward_mlp, forward_mlp,
                     glorot_layer, input_dropout)

VAE = "vae"
DAE = "dae"

LOGVAR_CLAMP = 10.0

NEG_INF_SENTINEL = np.finfo(np.float64).min

_MAGIC = b"MVAE"
_VERSION = 1
_KIND_CODES = {VAE: 0, DAE: 1}
_LIKELIHOOD_CODES = {MULTINOMIAL: 0, GAUSSIAN: 1, LOGISTIC: 2}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and observation model of an autoencoder.

    ``hidden_dims`` lists the widths of the symmetric hidden layers (at
    most two); the decoder mirrors them in reverse.  ``input_keep_prob``
    is the keep probability of the input dropout applied during
    training.
    """

    kind: str
    n_items: int
    latent_dim: int
    hidden_dims: tuple[int, ...] = ()
    likelihood: LikelihoodKind = LikelihoodKind()
    input_keep_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in (VAE, DAE):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.n_items < 1:
            raise ValueError("n_items must be positive")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if len(self.hidden_dims) > 2:
            raise ValueError("at most two hidden layers are supported")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be positive")
        if not 0.0 < self.input_keep_prob <= 1.0:
            raise ValueError("input_keep_prob must be in (0, 1]")


@dataclass
class ModelParams:
    """Encoder and decoder layer stacks."""

    encoder: list[DenseLayer]
    decoder: list[DenseLayer]


def encoder_dims(spec: ModelSpec) -> list[int]:
    out = spec.latent_dim * 2 if spec.kind == VAE else spec.latent_dim
    return [spec.n_items, *spec.hidden_dims, out]


def decoder_dims(spec: ModelSpec) -> list[int]:
    return [spec.latent_dim, *reversed(spec.hidden_dims), spec.n_items]


def _make_stack(dims: list[int], rng: np.random.Generator) -> list[DenseLayer]:
    # tanh on every junction except the last, which stays linear.
    layers = []
    for k in range(len(dims) - 1):
        act = TANH if k < len(dims) - 2 else IDENTITY
        layers.append(glorot_layer(dims[k], dims[k + 1], act, rng))
    return layers


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-initialised parameters, a pure function of ``seed``."""
    rng = np.random.default_rng(seed)
    return ModelParams(_make_stack(encoder_dims(spec), rng),
                       _make_stack(decoder_dims(spec), rng))


def param_arrays(params: ModelParams) -> list[np.ndarray]:
    """All parameter arrays, encoder first, weight before bias."""
    out = []
    for layer in [*params.encoder, *params.decoder]:
        out.append(layer.weight)
        out.append(layer.bias)
    return out


def named_param_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Like :func:`param_arrays` but with dotted block names such as
    ``encoder.0.weight``, used by the gradient checker to report which
    layer disagrees."""
    out = []
    for stack_name, stack in (("encoder", params.encoder),
                              ("decoder", params.decoder)):
        for k, layer in enumerate(stack):
            out.append((f"{stack_name}.{k}.weight", layer.weight))
            out.append((f"{stack_name}.{k}.bias", layer.bias))
    return out


def clone_params(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; all-zero rows pass through."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms)


@dataclass
class VariationalState:
    """Encoder outputs for a batch: Gaussian statistics and the sample
    actually taken (``eps`` is all zeros in eval mode, so ``z == mu``)."""

    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray
    z: np.ndarray


def _child_seeds(seed: int):
    dropout_seq, eps_seq = np.random.SeedSequence(seed).spawn(2)
    return dropout_seq, eps_seq


def _encoder_input(spec: ModelSpec, x: np.ndarray, seed: int,
                   train_mode: bool) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.n_items:
        raise ShapeError(
            f"click rows have {x.shape[1]} columns, model expects "
            f"{spec.n_items}"
        )
    dropout_seq, _ = _child_seeds(seed)
    return input_dropout(normalize_rows(x), spec.input_keep_prob,
                         dropout_seq, train_mode)


def encode(params: ModelParams, spec: ModelSpec, x: np.ndarray,
           seed: int = 0, train_mode: bool = False):
    """Map click rows to latent codes.

    For the variational kind returns a :class:`VariationalState`; the
    log-variance head is clamped to ``[-LOGVAR_CLAMP, LOGVAR_CLAMP]``
    and the sample is ``mu + eps * exp(logvar / 2)`` with ``eps`` drawn
    from the seeded generator in train mode and zero in eval mode.  For
    the denoising kind returns the latent batch directly.
    """
    h, _ = forward_mlp(params.encoder,
                       _encoder_input(spec, x, seed, train_mode))
    if spec.kind == DAE:
        return h
    k = spec.latent_dim
    mu = h[:, :k]
    logvar = np.clip(h[:, k:], -LOGVAR_CLAMP, LOGVAR_CLAMP)
    if train_mode:
        _, eps_seq = _child_seeds(seed)
        eps = np.random.default_rng(eps_seq).standard_normal(mu.shape)
    else:
        eps = np.zeros_like(mu)
    z = mu + eps * np.exp(0.5 * logvar)
    return VariationalState(mu, logvar, eps, z)


def decode(params: ModelParams, spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    """Map latent codes to one decoder output per item."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != spec.latent_dim:
        raise ShapeError(
            f"latent batch has width {z.shape[1]}, model expects "
            f"{spec.latent_dim}"
        )
    out, _ = forward_mlp(params.decoder, z)
    return out


def kl_diag_gaussian(mu: np.ndarray, logvar: np.ndarray):
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) per row, with gradients.

    ``kl = 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)``;
    ``d kl / d mu = mu`` and ``d kl / d logvar = 0.5 (exp(logvar) - 1)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError("mu and logvar must have the same shape")
    ev = np.exp(logvar)
    kl = 0.5 * (ev + mu * mu - 1.0 - logvar).sum(axis=-1)
    return kl, mu.copy(), 0.5 * (ev - 1.0)


def objective_and_grads(params: ModelParams, spec: ModelSpec,
                        x_batch: np.ndarray, beta: float = 1.0,
                        seed: int = 0, train_mode: bool = True,
                        weight_decay: float = 0.0):
    """Mini-batch training loss and its gradients.

    Variational kind: ``loss = -(1/B) sum_u [ ll_u - beta * kl_u ]``
    with a single reparametrised sample per user.  Denoising kind:
    ``loss = -(1/B) sum_u ll_u`` plus, when ``weight_decay`` is
    non-zero, ``weight_decay * 0.5 * ||params||^2`` (the penalty term is
    part of the returned loss and of the gradients, for either kind).
    The reconstruction target is the raw click row; normalisation and
    dropout only affect the encoder input.

    Returns ``(loss, grads)`` where ``grads`` aligns with
    :func:`param_arrays`.
    """
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    batch = x_batch.shape[0]
    x_in = _encoder_input(spec, x_batch, seed, train_mode)
    h, enc_tape = forward_mlp(params.encoder, x_in)

    if spec.kind == VAE:
        k = spec.latent_dim
        mu = h[:, :k]
        raw_logvar = h[:, k:]
        logvar = np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
        if train_mode:
            _, eps_seq = _child_seeds(seed)
            eps = np.random.default_rng(eps_seq).standard_normal(mu.shape)
        else:
            eps = np.zeros_like(mu)
        sigma = np.exp(0.5 * logvar)
        z = mu + eps * sigma
    else:
        z = h

    f, dec_tape = forward_mlp(params.decoder, z)
    ll, grad_f = log_likelihood(spec.likelihood, x_batch, f)
    if not np.all(np.isfinite(ll)):
        raise NumericError("non-finite reconstruction term in the objective")

    loss = -ll.sum() / batch
    dec_grads, grad_z = backward_mlp(params.decoder, dec_tape,
                                     grad_f * (-1.0 / batch))

    if spec.kind == VAE:
        kl, kl_mu, kl_logvar = kl_diag_gaussian(mu, logvar)
        if not np.all(np.isfinite(kl)):
            raise NumericError("non-finite KL term in the objective")
        loss += beta * kl.sum() / batch
        grad_mu = grad_z + (beta / batch) * kl_mu
        grad_logvar = grad_z * eps * sigma * 0.5 + (beta / batch) * kl_logvar
        # The clamp has zero derivative wherever it is active.
        grad_logvar = np.where(np.abs(raw_logvar) < LOGVAR_CLAMP,
                               grad_logvar, 0.0)
        grad_h = np.concatenate([grad_mu, grad_logvar], axis=1)
    else:
        grad_h = grad_z

    enc_grads, _ = backward_mlp(params.encoder, enc_tape, grad_h)

    grads: list[np.ndarray] = []
    for gw, gb in [*enc_grads, *dec_grads]:
        grads.append(gw)
        grads.append(gb)
    if weight_decay:
        arrays = param_arrays(params)
        loss += weight_decay * 0.5 * sum(float(np.sum(p * p)) for p in arrays)
        for g, p in zip(grads, arrays):
            g += weight_decay * p
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")
    return loss, grads


def predict_scores(params: ModelParams, spec: ModelSpec,
                   fold_in_rows: np.ndarray,
                   exclude_fold_in: bool = True) -> np.ndarray:
    """Deterministic evaluation-mode scores for every item.

    The latent code is the posterior mean (variational) or the encoder
    output (denoising); no dropout, no sampling.  When
    ``exclude_fold_in`` is set, items present in the input rows get the
    most negative finite float64 as score so they rank behind every
    real candidate.
    """
    fold_in_rows = np.atleast_2d(np.asarray(fold_in_rows, dtype=np.float64))
    state = encode(params, spec, fold_in_rows, train_mode=False)
    z = state.z if spec.kind == VAE else state
    scores = decode(params, spec, z)
    if exclude_fold_in:
        scores = scores.copy()
        scores[fold_in_rows > 0] = NEG_INF_SENTINEL
    return scores


class _CrcWriter:
    """File-like wrapper that maintains a running CRC32 of everything
    written through it."""

    def __init__(self, handle):
        self._handle = handle
        self.crc = 0

    def write(self, data: bytes):
        self.crc = zlib.crc32(data, self.crc)
        self._handle.write(data)


def save_checkpoint(path, params: ModelParams, spec: ModelSpec,
                    item_ids: list[str]) -> None:
    """Serialise a trained model to the binary checkpoint format.

    Layout (little-endian): magic ``MVAE``, u32 version, u8 model kind,
    u8 likelihood kind, u64 item count, u64 latent width, u8 hidden
    layer count followed by one u64 per hidden width, the two f64
    Gaussian confidence weights, then every parameter tensor in
    encoder-then-decoder order (per layer: the weight matrix, then the
    bias as a 1-row matrix; each tensor is u64 rows, u64 cols, row-major
    f64 data), the item-id string table, and a trailing u32 CRC32 of all
    preceding bytes.  The write is atomic.

    A checkpoint is an inference artifact: the input dropout rate is not
    stored, and :func:`load_checkpoint` returns a spec with
    ``input_keep_prob = 1.0``.
    """
    if len(item_ids) != spec.n_items:
        raise ShapeError(
            f"item table has {len(item_ids)} entries, model expects "
            f"{spec.n_items}"
        )
    with atomic_write(path) as raw_handle:
        handle = _CrcWriter(raw_handle)
        handle.write(_MAGIC)
        handle.write(struct.pack("<I", _VERSION))
        handle.write(struct.pack("<B", _KIND_CODES[spec.kind]))
        handle.write(struct.pack("<B",
                                 _LIKELIHOOD_CODES[spec.likelihood.kind]))
        handle.write(struct.pack("<Q", spec.n_items))
        handle.write(struct.pack("<Q", spec.latent_dim))
        handle.write(struct.pack("<B", len(spec.hidden_dims)))
        for width in spec.hidden_dims:
            handle.write(struct.pack("<Q", width))
        handle.write(struct.pack("<d", spec.likelihood.gaussian_c0))
        handle.write(struct.pack("<d", spec.likelihood.gaussian_c1))
        for layer in [*params.encoder, *params.decoder]:
            for tensor in (layer.weight, layer.bias.reshape(1, -1)):
                handle.write(struct.pack("<QQ", *tensor.shape))
                handle.write(np.ascontiguousarray(tensor, dtype="<f8")
                             .tobytes())
        buf = io.BytesIO()
        write_string_table(buf, item_ids)
        handle.write(buf.getvalue())
        raw_handle.write(struct.pack("<I", handle.crc))


def load_checkpoint(path):
    """Read a checkpoint back; returns ``(params, spec, item_ids)``.

    Raises :class:`CorruptCheckpointError` when the magic, version, CRC,
    or any structural field is wrong.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"checkpoint file does not exist: {path}")
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptCheckpointError(f"{path}: CRC mismatch, file is damaged")
    stream = io.BytesIO(blob[4:-4])

    def unpack(fmt):
        size = struct.calcsize(fmt)
        data = stream.read(size)
        if len(data) != size:
            raise CorruptCheckpointError(f"{path}: truncated checkpoint")
        return struct.unpack(fmt, data)

    (version,) = unpack("<I")
    if version != _VERSION:
        raise CorruptCheckpointError(
            f"{path}: unsupported checkpoint version {version}"
        )
    (kind_code,) = unpack("<B")
    (ll_code,) = unpack("<B")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    lls = {v: k for k, v in _LIKELIHOOD_CODES.items()}
    if kind_code not in kinds or ll_code not in lls:
        raise CorruptCheckpointError(f"{path}: unknown model/likelihood code")
    (n_items,) = unpack("<Q")
    (latent_dim,) = unpack("<Q")
    (n_hidden,) = unpack("<B")
    hidden = tuple(unpack("<Q")[0] for _ in range(n_hidden))
    (c0,) = unpack("<d")
    (c1,) = unpack("<d")
    try:
        spec = ModelSpec(
            kind=kinds[kind_code], n_items=n_items, latent_dim=latent_dim,
            hidden_dims=hidden,
            likelihood=LikelihoodKind(lls[ll_code], c0, c1),
            input_keep_prob=1.0,
        )
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None

    def read_stack(dims):
        layers = []
        for k in range(len(dims) - 1):
            act = TANH if k < len(dims) - 2 else IDENTITY
            shapes = [(dims[k], dims[k + 1]), (1, dims[k + 1])]
            tensors = []
            for expected in shapes:
                rows, cols = unpack("<QQ")
                if (rows, cols) != expected:
                    raise CorruptCheckpointError(
                        f"{path}: tensor shape ({rows}, {cols}) does not "
                        f"match architecture {expected}"
                    )
                data = stream.read(8 * rows * cols)
                if len(data) != 8 * rows * cols:
                    raise CorruptCheckpointError(f"{path}: truncated tensor")
                tensors.append(
                    np.frombuffer(data, dtype="<f8").reshape(rows, cols)
                    .astype(np.float64)
                )
            layers.append(DenseLayer(tensors[0], tensors[1][0], act))
        return layers

    params = ModelParams(read_stack(encoder_dims(spec)),
                         read_stack(decoder_dims(spec)))
    try:
        item_ids = read_string_table(stream, n_items)
    except DataError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    if stream.read(1):
        raise CorruptCheckpointError(f"{path}: trailing bytes after item table")
    return params, spec, item_ids
