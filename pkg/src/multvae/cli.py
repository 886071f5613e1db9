"""Command line front end.

Subcommands cover the full workflow: ``preprocess`` a ratings file into
a binary click corpus, ``split`` it into train/validation/test user
groups with fold-in pairs, ``train`` a model, ``evaluate`` a checkpoint,
``recommend`` items for an ad-hoc click list, ``gradcheck`` the
hand-written gradients, and ``sweep`` the KL-weight annealing curve.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
data problems (missing or malformed files, corrupt checkpoints), 3 for
numeric failures.  Every run with the same inputs, config, and seeds
produces byte-identical outputs; ``--strict`` additionally forces
single-threaded evaluation (the default unless ``--threads`` is given).
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import corpus as corpus_mod
from .errors import (ConfigError, DataError, MultvaeError, NumericError,
                     ShapeError)
from .likelihoods import LIKELIHOOD_KINDS, LikelihoodKind
from .metrics import (activity_breakdown, evaluate_model,
                      paired_activity_breakdown, parse_metric, rank)
from .models import (DAE, VAE, ModelSpec, init_params, load_checkpoint,
                     named_param_arrays, objective_and_grads, predict_scores)
from .optim import AnnealSchedule, capture_best_beta
from .tensor import grad_check
from .trainer import TrainConfig, evaluate_popularity, train, train_two_phase

log = logging.getLogger(__name__)

SPLIT_FILES = {
    "train": "train.mrcx",
    "val_fold_in": "val_fold_in.mrcx",
    "val_held_out": "val_held_out.mrcx",
    "test_fold_in": "test_fold_in.mrcx",
    "test_held_out": "test_held_out.mrcx",
}

CHECKPOINT_FILE = "model.mvae"
TRAIN_REPORT_FILE = "train_report.tsv"
ANNEAL_CURVE_FILE = "anneal_curve.tsv"
EVAL_REPORT_FILE = "eval_report.tsv"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _format_config(cfg: config_mod.RunConfig) -> corpus_mod.FormatConfig:
    return corpus_mod.FormatConfig(
        delimiter=cfg.get("data.delimiter"),
        header=cfg.get("data.header"),
        user_col=cfg.get("data.user_col"),
        item_col=cfg.get("data.item_col"),
        rating_col=cfg.get("data.rating_col"),
        timestamp_col=cfg.get("data.timestamp_col"),
    )


def _model_spec(cfg: config_mod.RunConfig, n_items: int) -> ModelSpec:
    kind = cfg.get("model.kind").lower()
    if kind not in (VAE, DAE):
        raise ConfigError(f"model.kind must be 'vae' or 'dae', got {kind!r}")
    ll_name = cfg.get("model.likelihood").lower()
    if ll_name not in LIKELIHOOD_KINDS:
        raise ConfigError(f"unknown model.likelihood {ll_name!r}")
    try:
        return ModelSpec(
            kind=kind,
            n_items=n_items,
            latent_dim=cfg.get("model.latent_dim"),
            hidden_dims=cfg.get("model.hidden_dims"),
            likelihood=LikelihoodKind(ll_name, cfg.get("model.gaussian_c0"),
                                      cfg.get("model.gaussian_c1")),
            input_keep_prob=cfg.get("model.keep_prob"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg: config_mod.RunConfig, checkpoint_path) -> TrainConfig:
    parse_metric(cfg.get("train.metric"))
    return TrainConfig(
        epochs=cfg.get("train.epochs"),
        batch_size=cfg.get("train.batch_size"),
        lr=cfg.get("train.lr"),
        adam_beta1=cfg.get("train.adam_beta1"),
        adam_beta2=cfg.get("train.adam_beta2"),
        adam_epsilon=cfg.get("train.adam_epsilon"),
        total_anneal_steps=cfg.get("train.total_anneal_steps"),
        beta_cap=cfg.get("train.beta_cap"),
        weight_decay=cfg.get("train.weight_decay"),
        seed=cfg.get("train.seed"),
        metric=cfg.get("train.metric"),
        eval_every=cfg.get("train.eval_every"),
        eval_batch_size=cfg.get("eval.batch_size"),
        checkpoint_path=checkpoint_path,
        freeze_beta_on_plateau=cfg.get("train.freeze_beta_on_plateau"),
        anneal_patience=cfg.get("train.anneal_patience"),
    )


def _split_path(cfg: config_mod.RunConfig, name: str) -> str:
    return os.path.join(cfg.get("split.dir"), SPLIT_FILES[name])


def _read_eval_split(cfg: config_mod.RunConfig,
                     which: str) -> corpus_mod.EvalSplit:
    if which not in ("val", "test"):
        raise ConfigError(f"eval.split must be 'val' or 'test', got {which!r}")
    fold_in = corpus_mod.read_corpus(_split_path(cfg, f"{which}_fold_in"))
    held_out = corpus_mod.read_corpus(_split_path(cfg, f"{which}_held_out"))
    return corpus_mod.EvalSplit(fold_in, held_out)


def cmd_preprocess(args) -> int:
    cfg = config_mod.load_config(args.config)
    out_path = cfg.get("corpus.path")
    raw = corpus_mod.ingest(cfg.get("data.path"), _format_config(cfg))
    clicks = corpus_mod.binarize_and_filter(
        raw,
        min_rating=cfg.get("data.min_rating"),
        min_user_items=cfg.get("data.min_user_items"),
        min_item_users=cfg.get("data.min_item_users"),
    )
    corpus_mod.write_corpus(clicks, out_path)
    stats = corpus_mod.summary(clicks)
    print(f"users         {stats['users']:,}")
    print(f"items         {stats['items']:,}")
    print(f"interactions  {stats['interactions']:,}")
    print(f"density       {100.0 * stats['density']:.2f}%")
    print(f"wrote {out_path}")
    return 0


def cmd_split(args) -> int:
    cfg = config_mod.load_config(args.config)
    clicks = corpus_mod.read_corpus(cfg.get("corpus.path"))
    n_val = cfg.get("split.n_val")
    n_test = cfg.get("split.n_test")
    train_clicks, val_clicks, test_clicks = corpus_mod.split_users(
        clicks, n_val, n_test, cfg.get("split.seed")
    )
    os.makedirs(cfg.get("split.dir"), exist_ok=True)
    corpus_mod.write_corpus(train_clicks, _split_path(cfg, "train"))
    fraction = cfg.get("split.fold_in_fraction")
    fold_seed = cfg.get("split.fold_in_seed")
    for name, group in (("val", val_clicks), ("test", test_clicks)):
        split = corpus_mod.make_fold_in(group, fraction, fold_seed)
        corpus_mod.write_corpus(split.fold_in,
                                _split_path(cfg, f"{name}_fold_in"))
        corpus_mod.write_corpus(split.held_out,
                                _split_path(cfg, f"{name}_held_out"))
        dropped = group.n_users - split.n_users
        print(f"{name} users    {split.n_users:,}"
              + (f" ({dropped} dropped by fold-in)" if dropped else ""))
    held_total = val_clicks.n_users + test_clicks.n_users
    dropped_users = clicks.n_users - train_clicks.n_users - held_total
    print(f"train users  {train_clicks.n_users:,}")
    print(f"items        {train_clicks.n_items:,}")
    if dropped_users:
        print(f"dropped      {dropped_users:,} held-out users with no "
              "trainable items")
    print(f"wrote 5 files to {cfg.get('split.dir')}")
    return 0


def cmd_train(args) -> int:
    cfg = config_mod.load_config(args.config)
    out_dir = cfg.get("train.out_dir")
    checkpoint_path = os.path.join(out_dir, CHECKPOINT_FILE)
    train_cfg = _train_config(cfg, checkpoint_path)
    _model_spec(cfg, n_items=1)  # surface config errors before any compute
    train_clicks = corpus_mod.read_corpus(_split_path(cfg, "train"))
    val_split = _read_eval_split(cfg, "val")
    spec = _model_spec(cfg, train_clicks.n_items)
    os.makedirs(out_dir, exist_ok=True)
    if cfg.get("train.two_phase"):
        two = train_two_phase(train_clicks, val_split, spec, train_cfg)
        two.phase1.write(os.path.join(out_dir, ANNEAL_CURVE_FILE))
        report = two.phase2
        print(f"phase 1 best beta {two.best_beta:.4f}")
    else:
        report = train(train_clicks, val_split, spec, train_cfg)
    report.write(os.path.join(out_dir, TRAIN_REPORT_FILE))
    print(f"best {report.metric_name} {report.best_metric:.4f} at step "
          f"{report.best_step} (beta {report.best_beta:.4f})")
    print(f"wrote {checkpoint_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = config_mod.load_config(args.config)
    out_dir = cfg.get("train.out_dir")
    train_cfg = _train_config(cfg, None)
    _model_spec(cfg, n_items=1)
    train_clicks = corpus_mod.read_corpus(_split_path(cfg, "train"))
    val_split = _read_eval_split(cfg, "val")
    spec = _model_spec(cfg, train_clicks.n_items)
    os.makedirs(out_dir, exist_ok=True)
    report = train(train_clicks, val_split, spec,
                   replace(train_cfg, beta_cap=1.0))
    report.write(os.path.join(out_dir, ANNEAL_CURVE_FILE))
    schedule = AnnealSchedule(train_cfg.total_anneal_steps, 1.0)
    best_beta = capture_best_beta(
        schedule, [(p.step, p.metric) for p in report.history]
    )
    print(f"best beta {best_beta:.4f} "
          f"({report.metric_name} {report.best_metric:.4f} at step "
          f"{report.best_step})")
    print(f"wrote {os.path.join(out_dir, ANNEAL_CURVE_FILE)}")
    return 0


def _print_report(report, heading: str) -> None:
    print(heading)
    for name, summary in report.metrics.items():
        print(f"  {name:12s} {summary.mean:.4f} +/- {summary.stderr:.4f} "
              f"(n={report.n_users})")


def cmd_evaluate(args) -> int:
    cfg = config_mod.load_config(args.config)
    checkpoint = args.checkpoint or os.path.join(cfg.get("train.out_dir"),
                                                 CHECKPOINT_FILE)
    params, spec, item_ids = load_checkpoint(checkpoint)
    which = args.split or cfg.get("eval.split")
    split = _read_eval_split(cfg, which)
    if item_ids != split.fold_in.item_ids:
        raise DataError(
            "checkpoint item table does not match the split's items; "
            "was the model trained on a different corpus?"
        )
    metric_names = [m.strip() for m in
                    (args.metrics or cfg.get("eval.metrics")).split(",")
                    if m.strip()]
    threads = 1 if args.strict else max(1, args.threads)
    report = evaluate_model(params, spec, split, metric_names,
                            batch_size=cfg.get("eval.batch_size"),
                            threads=threads)
    _print_report(report, f"{which} ({report.n_users} users)")
    out_path = args.out or os.path.join(os.path.dirname(checkpoint) or ".",
                                        EVAL_REPORT_FILE)
    report.write(out_path)
    print(f"wrote {out_path}")

    if args.baseline:
        train_clicks = corpus_mod.read_corpus(_split_path(cfg, "train"))
        pop = evaluate_popularity(train_clicks, split, metric_names,
                                  batch_size=cfg.get("eval.batch_size"))
        _print_report(pop, "popularity baseline")

    if args.breakdown or args.compare:
        primary = metric_names[0]
        sizes = split.fold_in.row_lengths()
        kept = np.flatnonzero(np.diff(split.held_out.row_offsets) > 0)
        sizes = sizes[kept]
        if args.compare:
            other_params, other_spec, other_items = load_checkpoint(
                args.compare)
            if other_items != split.fold_in.item_ids:
                raise DataError(
                    "comparison checkpoint was trained on different items"
                )
            other = evaluate_model(other_params, other_spec, split,
                                   [primary],
                                   batch_size=cfg.get("eval.batch_size"),
                                   threads=threads)
            bins = paired_activity_breakdown(
                report.metrics[primary].per_user,
                other.metrics[primary].per_user, sizes, n_bins=5,
            )
            print(f"{primary} by activity quintile (this vs "
                  f"{os.path.basename(args.compare)})")
            print("bin\tusers\tactivity\tthis\tother\tdiff\tsig")
            for k, b in enumerate(bins, start=1):
                print(f"{k}\t{b.n_users}\t{b.min_activity}-{b.max_activity}"
                      f"\t{b.mean:.4f}\t{b.mean_other:.4f}"
                      f"\t{b.diff:+.4f}\t{b.stars}")
        else:
            bins = activity_breakdown(report.metrics[primary].per_user,
                                      sizes, n_bins=5)
            print(f"{primary} by activity quintile")
            print("bin\tusers\tactivity\tmean\tstderr")
            for k, b in enumerate(bins, start=1):
                print(f"{k}\t{b.n_users}\t{b.min_activity}-{b.max_activity}"
                      f"\t{b.mean:.4f}\t{b.stderr:.4f}")
    return 0


def cmd_recommend(args) -> int:
    params, spec, item_ids = load_checkpoint(args.checkpoint)
    wanted = [part.strip() for part in args.items.split(",") if part.strip()]
    if not wanted:
        raise ConfigError("no item ids given")
    index = {item: j for j, item in enumerate(item_ids)}
    known = []
    for item in wanted:
        if item in index:
            known.append(index[item])
        else:
            log.warning("skipping unknown item id %r", item)
    if not known:
        raise DataError("none of the given item ids exist in the model")
    row = np.zeros((1, spec.n_items))
    row[0, known] = 1.0
    scores = predict_scores(params, spec, row, exclude_fold_in=True)
    top = rank(scores[0])[:args.top]
    print("rank\titem\tscore")
    for position, j in enumerate(top, start=1):
        print(f"{position}\t{item_ids[int(j)]}\t{scores[0, int(j)]:.6f}")
    return 0


GRADCHECK_ITEMS = 20
GRADCHECK_LATENT = 4
GRADCHECK_HIDDEN = 8
GRADCHECK_BATCH = 6


def gradcheck_configs():
    """The 18 architecture/likelihood combinations exercised by
    ``gradcheck``: both model kinds, all three likelihoods, zero to two
    hidden layers."""
    hiddens = [(), (GRADCHECK_HIDDEN,), (GRADCHECK_HIDDEN, GRADCHECK_HIDDEN)]
    for kind, ll, hidden in itertools.product((VAE, DAE), LIKELIHOOD_KINDS,
                                              hiddens):
        yield ModelSpec(
            kind=kind, n_items=GRADCHECK_ITEMS, latent_dim=GRADCHECK_LATENT,
            hidden_dims=hidden, likelihood=LikelihoodKind(ll),
            input_keep_prob=0.5,
        )


def run_gradcheck(step: float, tol: float, seed: int = 0):
    """Check analytic gradients of every config against central finite
    differences.  Returns ``(all_ok, lines)`` where each line describes
    one config's worst relative error and the parameter block it came
    from."""
    lines = []
    all_ok = True
    for idx, spec in enumerate(gradcheck_configs()):
        rng = np.random.default_rng([seed, idx])
        params = init_params(spec, seed=idx)
        x = (rng.random((GRADCHECK_BATCH, spec.n_items)) < 0.3).astype(float)
        x[np.arange(GRADCHECK_BATCH), rng.integers(0, spec.n_items,
                                                   GRADCHECK_BATCH)] = 1.0
        noise_seed = int(rng.integers(0, 2 ** 31))
        beta = 0.7
        weight_decay = 0.01

        def loss_fn():
            loss, _ = objective_and_grads(
                params, spec, x, beta=beta, seed=noise_seed, train_mode=True,
                weight_decay=weight_decay,
            )
            return loss

        _, grads = objective_and_grads(
            params, spec, x, beta=beta, seed=noise_seed, train_mode=True,
            weight_decay=weight_decay,
        )
        named = named_param_arrays(params)
        analytic = {name: g for (name, _), g in zip(named, grads)}
        worst, per_block = grad_check(loss_fn, named, analytic, step=step)
        worst_block = max(per_block, key=per_block.get)
        ok = worst < tol
        all_ok = all_ok and ok
        hidden = "x".join(map(str, spec.hidden_dims)) or "-"
        lines.append(
            f"{'ok  ' if ok else 'FAIL'} {spec.kind:3s} "
            f"{spec.likelihood.kind:11s} hidden={hidden:5s} "
            f"max_rel_err={worst:.3e} worst_block={worst_block}"
        )
    return all_ok, lines


def cmd_gradcheck(args) -> int:
    all_ok, lines = run_gradcheck(args.step, args.tol, args.seed)
    for line in lines:
        print(line)
    if not all_ok:
        print("gradient check FAILED", file=sys.stderr)
        return 3
    print("all gradient checks passed")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="multvae",
                     description="Variational and denoising autoencoders "
                                 "for implicit-feedback recommendation.")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="log progress details to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True,
                           help="path to a key = value config file")
        p.set_defaults(func=func)
        return p

    add("preprocess", cmd_preprocess,
        "ingest a ratings file into a binary click corpus")
    add("split", cmd_split,
        "partition users into train/val/test with fold-in pairs")
    add("train", cmd_train, "fit a model and checkpoint the best epoch")
    add("sweep", cmd_sweep,
        "anneal the KL weight to 1.0 and report where validation peaks")

    p = add("evaluate", cmd_evaluate, "score a checkpoint on held-out users")
    p.add_argument("--checkpoint", help="checkpoint to evaluate "
                                        "(default: train.out_dir/model.mvae)")
    p.add_argument("--split", choices=("val", "test"),
                   help="override eval.split")
    p.add_argument("--metrics", help="override eval.metrics")
    p.add_argument("--out", help="where to write the report TSV")
    p.add_argument("--baseline", action="store_true",
                   help="also score the popularity ranking")
    p.add_argument("--breakdown", action="store_true",
                   help="print the first metric by user-activity quintile")
    p.add_argument("--compare", metavar="CHECKPOINT",
                   help="paired comparison against another checkpoint, "
                        "with significance stars")
    p.add_argument("--threads", type=int, default=1,
                   help="evaluation worker threads")
    p.add_argument("--strict", action="store_true",
                   help="force single-threaded evaluation")

    p = add("recommend", cmd_recommend,
            "rank items for an ad-hoc list of clicked item ids",
            config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--items", required=True,
                   help="comma-separated clicked item ids")
    p.add_argument("--top", type=int, default=10,
                   help="how many recommendations to print")

    p = add("gradcheck", cmd_gradcheck,
            "verify analytic gradients against finite differences",
            config=False)
    p.add_argument("--step", type=float, default=1e-5,
                   help="finite-difference half-step")
    p.add_argument("--tol", type=float, default=1e-4,
                   help="maximum allowed relative error")
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except ConfigError as exc:
        print(f"multvae: config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError) as exc:
        print(f"multvae: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"multvae: numeric error: {exc}", file=sys.stderr)
        return 3
    except MultvaeError as exc:
        print(f"multvae: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main(None))
