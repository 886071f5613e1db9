"""
Who benefits: slicing results by user activity
==============================================

Mean metrics hide who a model serves.  Bucket test users into activity
quintiles by fold-in size, then compare the variational model against
the denoising one per bucket with a paired t-test; stars mark buckets
where the difference is unlikely to be noise.
"""

import numpy as np

from multvae.corpus import make_fold_in, split_users
from multvae.metrics import (activity_breakdown, evaluate_model,
                             paired_activity_breakdown)
from multvae.models import ModelSpec
from multvae.synthetic import sample_synthetic_clicks
from multvae.trainer import TrainConfig, train

clicks = sample_synthetic_clicks(n_users=2000, n_items=100, latent_dim=8,
                                 clicks_lo=10, clicks_hi=50, seed=0)
train_clicks, val_clicks, test_clicks = split_users(clicks, n_val=200,
                                                    n_test=200, seed=0)
val_split = make_fold_in(val_clicks, fraction=0.8, seed=0)
test_split = make_fold_in(test_clicks, fraction=0.8, seed=0)
cfg = TrainConfig(epochs=30, batch_size=250, metric="ndcg@100", seed=0)

results = {}
for kind in ("vae", "dae"):
    spec = ModelSpec(kind, n_items=train_clicks.n_items, latent_dim=16,
                     hidden_dims=(64,), input_keep_prob=0.5)
    report = train(train_clicks, val_split, spec, cfg)
    results[kind] = evaluate_model(report.best_params, spec, test_split,
                                   ["ndcg@100"])

# users with an empty held-out set were dropped while the split was
# built, so fold-in rows line up one-to-one with per-user metrics
sizes = test_split.fold_in.row_lengths()

print("variational model, ndcg@100 by activity quintile")
print("bin  users  fold-in clicks   mean    stderr")
vae_per_user = results["vae"].metrics["ndcg@100"].per_user
for k, b in enumerate(activity_breakdown(vae_per_user, sizes), start=1):
    print(f"{k:3d}  {b.n_users:5d}  {b.min_activity:6d}-{b.max_activity:<6d}"
          f" {b.mean:.4f}  {b.stderr:.4f}")

print()
print("variational vs denoising, paired per user")
print("bin  users   vae     dae     diff     sig")
dae_per_user = results["dae"].metrics["ndcg@100"].per_user
bins = paired_activity_breakdown(vae_per_user, dae_per_user, sizes)
for k, b in enumerate(bins, start=1):
    print(f"{k:3d}  {b.n_users:5d}  {b.mean:.4f}  {b.mean_other:.4f}"
          f"  {b.diff:+.4f}  {b.stars}")

gap = float(np.mean(vae_per_user - dae_per_user))
print(f"\noverall paired gap (vae - dae): {gap:+.4f}")
