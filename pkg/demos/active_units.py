"""Measuring latent activity and removing dead units.

A freshly built model gets one unit killed by hand; the activity statistic
finds it and pinning it leaves the bound untouched.
"""

import numpy as np

from iwae_lab.data import synthetic_strokes
from iwae_lab.evaluation import ablate_inactive, evaluate_nll, unit_activity
from iwae_lab.mathcore import make_rng
from iwae_lab.model import ArchitectureSpec, init_params

arch = ArchitectureSpec((6,), ((50,),), 64)
params = init_params(arch, make_rng(0))
images = synthetic_strokes(200, make_rng(1), side=8)
x = (make_rng(2).random(images.shape) < images).astype(float)

# unit 4: zero mean, unit variance whatever the input, and the decoder ignores it
rec = params.recognition[0]
for head in (rec.mean_head, rec.logvar_head):
    head.weight[4] = 0.0
    head.bias[4] = 0.0
params.decoder.trunk.layers[0].weight[:, 4] = 0.0

report = unit_activity(params, x)
print(report.to_text())

before = evaluate_nll(params, x, k_eval=50, seed=0)
after = evaluate_nll(ablate_inactive(params, report, threshold=1e-4), x, k_eval=50, seed=0)
print(f"NLL before {before.mean_nll:.6f}, after ablation {after.mean_nll:.6f}")
print("identical:", np.array_equal(before.per_example_bounds, after.per_example_bounds))
