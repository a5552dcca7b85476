"""A small training run on synthetic pen strokes, VAE against IWAE.

Takes about half a minute per model on one core.
"""

import tempfile

from iwae_lab.config import RunConfig, load_data
from iwae_lab.evaluation import evaluate_nll, unit_activity
from iwae_lab.training import train

common = dict(synthetic_train=1000, synthetic_test=500, stochastic_dims="20",
              deterministic_dims="200,200", stage_first=0, stage_last=3, seed=0)

for objective, k in [("vae", 1), ("iwae", 5)]:
    cfg = RunConfig(**common, objective=objective, k=k)
    train_data, test_data = load_data(cfg)
    with tempfile.TemporaryDirectory() as out:
        ckpt = train(cfg, train_data, out)
        with open(f"{out}/metrics.jsonl") as f:
            n_passes = sum(1 for _ in f)
    nll = evaluate_nll(ckpt.params, test_data, k_eval=100, seed=0)
    act = unit_activity(ckpt.params, test_data)
    print(f"{objective:4s} k={k}: {n_passes} passes, test NLL {nll.mean_nll:.2f} +- {nll.stderr:.2f}, "
          f"active units {act.label}")
