"""Variational and denoising autoencoders for implicit feedback.

The public surface re-exported here covers the whole workflow: turn a
ratings file into a binary click corpus, split users for strong
generalization, train a multinomial-likelihood autoencoder with an
annealed KL weight, and evaluate rankings on held-out users.
"""

from .corpus import (EvalSplit, FormatConfig, RawInteractions, SparseClicks,
                     binarize_and_filter, ingest, make_fold_in, read_corpus,
                     split_users, write_corpus)
from .errors import (ConfigError, CorruptCheckpointError, DataError,
                     EmptyCorpusError, MultvaeError, NumericError, ParseError,
                     ShapeError)
from .likelihoods import (LikelihoodKind, gaussian_ll, log_likelihood,
                          log_softmax, logistic_ll, multinomial_ll)
from .metrics import (EvalReport, activity_breakdown, evaluate_model,
                      evaluate_scores, ndcg_at_r, paired_activity_breakdown,
                      rank, recall_at_r)
from .models import (ModelParams, ModelSpec, decode, encode, init_params,
                     kl_diag_gaussian, load_checkpoint, objective_and_grads,
                     predict_scores, save_checkpoint)
from .optim import (AdamState, AnnealSchedule, adam_step, beta_at,
                    capture_best_beta, init_adam)
from .synthetic import sample_synthetic_clicks
from .tensor import (DenseLayer, backward_mlp, forward_mlp, grad_check,
                     input_dropout)
from .trainer import (TrainConfig, TrainReport, evaluate_popularity, train,
                      train_two_phase)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AnnealSchedule", "ConfigError", "CorruptCheckpointError",
    "DataError", "DenseLayer", "EmptyCorpusError", "EvalReport", "EvalSplit",
    "FormatConfig", "LikelihoodKind", "ModelParams", "ModelSpec",
    "MultvaeError", "NumericError", "ParseError", "RawInteractions",
    "ShapeError", "SparseClicks", "TrainConfig", "TrainReport", "adam_step",
    "activity_breakdown", "backward_mlp", "beta_at", "binarize_and_filter",
    "capture_best_beta", "decode", "encode", "evaluate_model",
    "evaluate_popularity", "evaluate_scores", "forward_mlp", "gaussian_ll",
    "grad_check", "ingest", "init_adam", "init_params", "input_dropout",
    "kl_diag_gaussian", "load_checkpoint", "log_likelihood", "log_softmax",
    "logistic_ll", "make_fold_in", "multinomial_ll", "ndcg_at_r",
    "objective_and_grads", "paired_activity_breakdown", "predict_scores",
    "rank", "read_corpus", "recall_at_r", "sample_synthetic_clicks",
    "save_checkpoint", "split_users", "train", "train_two_phase",
    "write_corpus",
]
