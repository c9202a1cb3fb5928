# %% [markdown]
# # Fourier components as a pixel basis
#
# A latent cell predicts a small set of sinusoids plus a DC colour. The pixel
# value at local offset `delta` is the DC term plus every component evaluated
# at that offset. This demo builds a set by hand, checks it against the
# closed-form image, and shows what top-T truncation keeps.

# %%
import numpy as np
import torch

from cqsr import ComponentSet, FourierComponent, reconstruct_batch, truncate_top_t
from cqsr.fourier_core import alignment_loss, spectrum_anisotropy

# %% [markdown]
# ## One component reproduces a plane wave exactly

# %%
wave = ComponentSet.from_components(
    [FourierComponent((2.0, 1.0), (0.3, 0.3, 0.3), (0.0, 0.0, 0.0))],
    dc=(0.5, 0.5, 0.5),
)
g = np.linspace(-1, 1, 9)
xy = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
rgb = reconstruct_batch(wave, torch.from_numpy(xy)).numpy()
closed = 0.5 + 0.3 * np.cos(np.pi * (2 * xy[:, 0] + xy[:, 1]))
print("max error vs closed form:", np.abs(rgb[:, 0] - closed).max())

# %% [markdown]
# ## Truncation keeps the largest amplitudes
#
# Magnitude is the norm of the six amplitude numbers. Ties keep the earlier
# component.

# %%
rng = np.random.default_rng(0)
amps = rng.normal(0, 1, (6, 3)) * np.array([0.5, 0.05, 0.3, 0.01, 0.2, 0.02])[:, None]
s = ComponentSet(
    torch.from_numpy(rng.normal(0, 2, (6, 2))),
    torch.from_numpy(amps),
    torch.zeros(6, 3, dtype=torch.float64),
    torch.full((3,), 0.5, dtype=torch.float64),
)
top = truncate_top_t(s, 3)
print("magnitudes:", np.round(np.linalg.norm(amps, axis=1), 3))
print("kept:      ", np.round(top.amp_cos.norm(dim=-1).numpy(), 3))

delta = torch.from_numpy(rng.uniform(-1, 1, (200, 2)))
full, cut = reconstruct_batch(s, delta), reconstruct_batch(top, delta)
print("mean |full - top3|:", float((full - cut).abs().mean()))

# %% [markdown]
# ## Alignment of the K frequencies in one step
#
# The loss is the negative mean pairwise cosine, so parallel frequencies give
# -1 and orthogonal ones 0.

# %%
parallel = torch.tensor([[1.0, 0.5], [2.0, 1.0]])
orthogonal = torch.tensor([[1.0, 0.0], [0.0, 3.0]])
print("parallel:", alignment_loss(parallel).item(), "orthogonal:", alignment_loss(orthogonal).item())

# %% [markdown]
# ## Edges have a one-directional spectrum
#
# A straight edge puts its energy on a line through the origin of the
# spectrum; isotropic noise does not.

# %%
yy, xx = np.mgrid[0:64, 0:64]
edge = (np.cos(np.deg2rad(30)) * yy + np.sin(np.deg2rad(30)) * xx > 40).astype(float)
noise = rng.random((64, 64))
print("anisotropy edge:", round(spectrum_anisotropy(edge), 2), "noise:", round(spectrum_anisotropy(noise), 2))
