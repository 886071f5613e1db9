"""
Three likelihoods on the same corpus
====================================

The decoder output can be read as multinomial logits, as the mean of a
confidence-weighted Gaussian, or as independent logistic logits.  On
click data the multinomial reading, which makes items compete for a
fixed probability budget, tends to rank best.
"""

from multvae.corpus import make_fold_in, split_users
from multvae.likelihoods import LIKELIHOOD_KINDS, LikelihoodKind
from multvae.metrics import evaluate_model
from multvae.models import ModelSpec
from multvae.synthetic import sample_synthetic_clicks
from multvae.trainer import TrainConfig, train

clicks = sample_synthetic_clicks(n_users=2000, n_items=100, latent_dim=8,
                                 clicks_lo=10, clicks_hi=50, seed=0)
train_clicks, val_clicks, test_clicks = split_users(clicks, n_val=200,
                                                    n_test=200, seed=0)
val_split = make_fold_in(val_clicks, fraction=0.8, seed=0)
test_split = make_fold_in(test_clicks, fraction=0.8, seed=0)

print("likelihood    test ndcg@100   test recall@20")
for kind in LIKELIHOOD_KINDS:
    spec = ModelSpec("vae", n_items=train_clicks.n_items, latent_dim=16,
                     hidden_dims=(64,), likelihood=LikelihoodKind(kind),
                     input_keep_prob=0.5)
    cfg = TrainConfig(epochs=30, batch_size=250, metric="ndcg@100", seed=0)
    report = train(train_clicks, val_split, spec, cfg)
    out = evaluate_model(report.best_params, spec, test_split,
                         ["ndcg@100", "recall@20"])
    print(f"{kind:12s}  {out.metrics['ndcg@100'].mean:14.4f}"
          f"  {out.metrics['recall@20'].mean:15.4f}")
