"""Flat ``key = value`` run configuration files.

One option per line, ``#`` starts a comment, blank lines are ignored.
Every key must appear in the registry below, which also documents its
type and default; unknown keys are rejected loudly rather than silently
ignored.  After the file is read, environment variables of the form
``MULTVAE_<KEY>`` (dots replaced by underscores, upper-cased, e.g.
``MULTVAE_TRAIN_EPOCHS``) override file values, which makes sweeps easy
to script without rewriting configs.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

from .errors import ConfigError

log = logging.getLogger(__name__)

ENV_PREFIX = "MULTVAE_"

_REQUIRED = object()


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def _parse_str(raw: str) -> str:
    return raw.strip()


def _parse_int_list(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw or raw.lower() == "none":
        return ()
    return tuple(int(part.strip()) for part in raw.split(","))


def _parse_column(raw: str):
    """A column reference: 0-based index, header name, or ``none``."""
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if raw.lstrip("-").isdigit():
        return int(raw)
    return raw


def _parse_auto_float(raw: str):
    raw = raw.strip()
    if raw.lower() == "auto":
        return None
    return float(raw)


@dataclass(frozen=True)
class KeySpec:
    parse: callable
    default: object
    doc: str


REGISTRY: dict[str, KeySpec] = {
    # --- raw data ingestion (preprocess) ---
    "data.path": KeySpec(_parse_str, _REQUIRED,
                         "delimited interactions file to ingest"),
    "data.delimiter": KeySpec(_parse_str, ",", "field delimiter"),
    "data.header": KeySpec(_parse_bool, True,
                           "whether the first line is a header"),
    "data.user_col": KeySpec(_parse_column, "userId",
                             "user column (name or 0-based index)"),
    "data.item_col": KeySpec(_parse_column, "movieId",
                             "item column (name or 0-based index)"),
    "data.rating_col": KeySpec(_parse_column, "rating",
                               "rating column, or 'none' for implicit data"),
    "data.timestamp_col": KeySpec(_parse_column, None,
                                  "timestamp column, or 'none'"),
    "data.min_rating": KeySpec(_parse_float, 4.0,
                               "ratings below this are not clicks"),
    "data.min_user_items": KeySpec(_parse_int, 5,
                                   "drop users with fewer distinct clicks"),
    "data.min_item_users": KeySpec(_parse_int, 1,
                                   "drop items clicked by fewer users"),
    # --- preprocessed corpus location ---
    "corpus.path": KeySpec(_parse_str, _REQUIRED,
                           "binary click-corpus file (.mrcx)"),
    # --- user split (split) ---
    "split.dir": KeySpec(_parse_str, _REQUIRED,
                         "directory for the five split files"),
    "split.n_val": KeySpec(_parse_int, _REQUIRED,
                           "number of validation users"),
    "split.n_test": KeySpec(_parse_int, _REQUIRED, "number of test users"),
    "split.seed": KeySpec(_parse_int, 0, "seed for the user permutation"),
    "split.fold_in_fraction": KeySpec(_parse_float, 0.8,
                                      "share of each held-out user's clicks "
                                      "given to the model at eval time"),
    "split.fold_in_seed": KeySpec(_parse_int, 0,
                                  "seed for the per-user fold-in draw"),
    # --- model architecture ---
    "model.kind": KeySpec(_parse_str, "vae", "'vae' or 'dae'"),
    "model.latent_dim": KeySpec(_parse_int, 200, "latent width K"),
    "model.hidden_dims": KeySpec(_parse_int_list, (600,),
                                 "comma-separated hidden widths (max 2), "
                                 "or 'none'"),
    "model.likelihood": KeySpec(_parse_str, "multinomial",
                                "'multinomial', 'gaussian', or 'logistic'"),
    "model.gaussian_c0": KeySpec(_parse_float, 1.0,
                                 "gaussian confidence for non-clicks"),
    "model.gaussian_c1": KeySpec(_parse_float, 2.0,
                                 "gaussian confidence for clicks"),
    "model.keep_prob": KeySpec(_parse_float, 0.5,
                               "input dropout keep probability"),
    # --- training ---
    "train.out_dir": KeySpec(_parse_str, _REQUIRED,
                             "directory for checkpoint and training report"),
    "train.epochs": KeySpec(_parse_int, 20, "training epochs"),
    "train.batch_size": KeySpec(_parse_int, 500, "users per batch"),
    "train.lr": KeySpec(_parse_float, 1e-3, "Adam learning rate"),
    "train.adam_beta1": KeySpec(_parse_float, 0.9, "Adam first-moment decay"),
    "train.adam_beta2": KeySpec(_parse_float, 0.999,
                                "Adam second-moment decay"),
    "train.adam_epsilon": KeySpec(_parse_float, 1e-8, "Adam denominator fuzz"),
    "train.weight_decay": KeySpec(_parse_auto_float, None,
                                  "L2 penalty weight; 'auto' = 0.01 for dae, "
                                  "0 for vae"),
    "train.seed": KeySpec(_parse_int, 0, "master seed for the run"),
    "train.metric": KeySpec(_parse_str, "ndcg@100",
                            "validation metric, e.g. ndcg@100"),
    "train.eval_every": KeySpec(_parse_int, 0,
                                "validate every N steps (0 = once per epoch)"),
    "train.total_anneal_steps": KeySpec(_parse_int, 200000,
                                        "steps to reach the full KL weight"),
    "train.beta_cap": KeySpec(_parse_float, 1.0, "maximum KL weight"),
    "train.two_phase": KeySpec(_parse_bool, False,
                               "anneal to 1.0, then retrain capped at the "
                               "best KL weight"),
    "train.freeze_beta_on_plateau": KeySpec(_parse_bool, False,
                                            "stop raising beta when "
                                            "validation keeps worsening"),
    "train.anneal_patience": KeySpec(_parse_int, 3,
                                     "worsening validations before the "
                                     "freeze kicks in"),
    # --- evaluation ---
    "eval.split": KeySpec(_parse_str, "test",
                          "'val' or 'test': which fold-in pair to score"),
    "eval.metrics": KeySpec(_parse_str, "recall@20,recall@50,ndcg@100",
                            "comma-separated metric list"),
    "eval.batch_size": KeySpec(_parse_int, 500, "users per scoring batch"),
}


class RunConfig:
    """Typed view over parsed config values plus registry defaults."""

    def __init__(self, values: dict | None = None):
        self.values = dict(values or {})

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        spec = REGISTRY[key]
        if spec.default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return spec.default

    def has(self, key: str) -> bool:
        return key in self.values

    def set(self, key: str, raw: str) -> None:
        """Parse and store a raw string value for ``key``."""
        spec = REGISTRY.get(key)
        if spec is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[key] = spec.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"{source} line {line_number}: expected 'key = value', "
                f"got {stripped!r}"
            )
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in REGISTRY:
            raise ConfigError(
                f"{source} line {line_number}: unknown config key {key!r}"
            )
        try:
            cfg.values[key] = REGISTRY[key].parse(raw)
        except ValueError as exc:
            raise ConfigError(
                f"{source} line {line_number}: bad value for {key}: {exc}"
            ) from None
    return cfg


def apply_env_overrides(cfg: RunConfig, environ=None) -> list[str]:
    """Overlay ``MULTVAE_*`` environment variables; returns the keys
    that were overridden (for logging)."""
    environ = os.environ if environ is None else environ
    by_env_name = {
        ENV_PREFIX + key.upper().replace(".", "_"): key for key in REGISTRY
    }
    overridden = []
    for env_name, raw in environ.items():
        key = by_env_name.get(env_name)
        if key is None:
            continue
        try:
            cfg.values[key] = REGISTRY[key].parse(raw)
        except ValueError as exc:
            raise ConfigError(
                f"bad value in ${env_name}: {exc}"
            ) from None
        overridden.append(key)
    return sorted(overridden)


def load_config(path, environ=None) -> RunConfig:
    """Read a config file and apply environment overrides."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, encoding="utf-8") as handle:
        cfg = parse_config_text(handle.read(), source=path)
    overridden = apply_env_overrides(cfg, environ)
    if overridden:
        log.info("config overridden from environment: %s",
                 ", ".join(overridden))
    return cfg
