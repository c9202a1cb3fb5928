# %% [markdown]
# # Predictor cost against K
#
# At a fixed budget T the recurrence runs ceil(T/K) steps, so emitting more
# components per step should cut predictor time roughly by 1/K when the cell
# width is matched. Weights are random here because timing does not depend
# on them.

# %%
import numpy as np

from cqsr.eval_bench import runtime_profile
from cqsr.model import ModelConfig, build_model

# %%
models = {K: build_model(ModelConfig(D=64, n_resblocks=1, width=256, K=K, T_max=16), seed=K) for K in (1, 2, 3)}
records = runtime_profile(models, T=16, repeats=20, n_cells=1024)

base = records[0].median_ms
for r in records:
    print(
        f"K={r.K}  steps={r.steps:2d}  median {r.median_ms:7.2f} ms  iqr {r.iqr_ms:5.2f}"
        f"  ratio {r.median_ms / base:.2f}  (1/K = {1 / r.K:.2f})  full pipeline {r.pipeline_ms:.1f} ms"
    )

# %% [markdown]
# The full-pipeline column includes the encoder, which does not depend on K,
# so its ratio stays closer to 1.

# %%
print("pipeline ratios:", np.round([r.pipeline_ms / records[0].pipeline_ms for r in records], 2))
