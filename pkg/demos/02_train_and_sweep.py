# %% [markdown]
# # Training with a random budget, then sweeping it
#
# Each batch draws a budget `T` uniformly from 1..T_max and supervises only
# the image reconstructed from the first `T` components. At test time any
# prefix is a valid output, so the budget can be chosen per call.
#
# This runs a short desk-scale fit on one bundled image (a few minutes on one
# core). Set `STEPS` higher for cleaner curves.

# %%
import time

import numpy as np
import torch

from cqsr.datapipe import bicubic_resize, bundled_corpus_dir, load_image_dir
from cqsr.eval_bench import cq_sweep, psnr_y
from cqsr.training import TrainConfig, fit

torch.set_num_threads(1)
STEPS = 400

# %% [markdown]
# ## Data and configuration

# %%
corpus = load_image_dir(bundled_corpus_dir(), ["a_edges.png"])
hr = corpus[0]
print("image", corpus.names()[0], hr.shape)

config = TrainConfig(D=32, n_resblocks=2, width=128, K=2, T_max=16, batch_size=8, repeat=8, epochs=STEPS, lr=1e-3)

# %% [markdown]
# ## Fit

# %%
t0 = time.perf_counter()
model, history = fit(config, corpus)
print(f"{len(history)} steps in {time.perf_counter() - t0:.0f}s")
for row in history[:: max(1, len(history) // 8)]:
    print(f"step {row['step']:4d}  T={row['T_used']:2d}  l1={row['l_image']:.4f}  align={row['l_align']:+.3f}")

# %% [markdown]
# ## Quality against budget
#
# Two recurrence steps produce four components at K=2.

# %%
lr = bicubic_resize(hr, 96, 96)
for T in (16, 8, 4, 2, 1):
    sr = model.super_resolve(lr, 192, 192, T=T)
    print(f"T={T:2d}  steps={-(-T // config.K)}  PSNR(Y) {psnr_y(sr, hr, 2):.2f} dB")

print("bicubic baseline", round(psnr_y(bicubic_resize(lr, 192, 192), hr, 2), 2), "dB")

# %% [markdown]
# ## The same numbers through the sweep harness

# %%
for rec in cq_sweep(model, corpus, T_list=[16, 8, 4], scale_list=[2, (2, 3)]):
    print(rec)
