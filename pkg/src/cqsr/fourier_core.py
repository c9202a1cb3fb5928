"""Fourier-sum reconstruction of local pixel values.

A pixel inside a latent cell is modelled as a DC colour plus a sum of
sinusoids of the local offset ``delta``::

    rgb(delta) = dc + sum_t amp_cos_t * cos(pi f_t . delta) + amp_sin_t * sin(pi f_t . delta)

Everything here works on torch tensors so it can sit inside the training
graph. Batched layouts put the component axis second to last:
``freq (..., T, 2)``, ``amp_cos/amp_sin (..., T, 3)``, ``dc (..., 3)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

__all__ = [
    "FourierComponent",
    "ComponentSet",
    "reconstruct_rgb",
    "reconstruct_batch",
    "component_magnitudes",
    "truncate_top_t",
    "alignment_loss",
    "amplitude_spectrum",
    "spectrum_anisotropy",
]

ALIGN_EPS = 1e-8


@dataclass(frozen=True)
class FourierComponent:
    freq: tuple[float, float]
    amp_cos: tuple[float, float, float]
    amp_sin: tuple[float, float, float]


@dataclass
class ComponentSet:
    """Ordered Fourier components plus a DC colour.

    Tensors may carry any number of leading batch dimensions (one set per
    latent cell, for example). Order along the component axis is prediction
    order unless the set came out of :func:`truncate_top_t`.
    """

    freq: torch.Tensor
    amp_cos: torch.Tensor
    amp_sin: torch.Tensor
    dc: torch.Tensor

    def __post_init__(self):
        n = self.freq.shape[-2]
        if self.freq.shape[-1] != 2:
            raise ValueError(f"freq must end in 2, got shape {tuple(self.freq.shape)}")
        for name in ("amp_cos", "amp_sin"):
            a = getattr(self, name)
            if a.shape[-1] != 3 or a.shape[-2] != n:
                raise ValueError(f"{name} shape {tuple(a.shape)} does not match {n} components")
        if self.dc.shape[-1] != 3:
            raise ValueError(f"dc must end in 3, got shape {tuple(self.dc.shape)}")

    @classmethod
    def from_components(cls, components: Sequence[FourierComponent], dc, dtype=torch.float64):
        dc = torch.as_tensor(dc, dtype=dtype)
        if not components:
            empty = torch.zeros(0, 2, dtype=dtype)
            return cls(empty, torch.zeros(0, 3, dtype=dtype), torch.zeros(0, 3, dtype=dtype), dc)
        return cls(
            torch.tensor([c.freq for c in components], dtype=dtype),
            torch.tensor([c.amp_cos for c in components], dtype=dtype),
            torch.tensor([c.amp_sin for c in components], dtype=dtype),
            dc,
        )

    @property
    def n_components(self) -> int:
        return self.freq.shape[-2]

    def __len__(self):
        return self.n_components

    @property
    def components(self) -> list[FourierComponent]:
        """Unbatched view as a list of plain components."""
        if self.freq.dim() != 2:
            raise ValueError("components view is only defined for an unbatched set")
        return [
            FourierComponent(
                tuple(self.freq[t].tolist()),
                tuple(self.amp_cos[t].tolist()),
                tuple(self.amp_sin[t].tolist()),
            )
            for t in range(self.n_components)
        ]

    def head(self, n: int) -> "ComponentSet":
        return ComponentSet(self.freq[..., :n, :], self.amp_cos[..., :n, :], self.amp_sin[..., :n, :], self.dc)

    def index(self, idx) -> "ComponentSet":
        """Select along the leading batch dimension."""
        return ComponentSet(self.freq[idx], self.amp_cos[idx], self.amp_sin[idx], self.dc[idx])


def _check_finite(**named):
    for name, t in named.items():
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite values in {name}")


def _fourier_sum(s: ComponentSet, delta: torch.Tensor) -> torch.Tensor:
    # (..., T) phases; delta broadcasts over the component axis
    phase = torch.pi * (s.freq * delta.unsqueeze(-2)).sum(-1)
    out = (s.amp_cos * torch.cos(phase).unsqueeze(-1)).sum(-2)
    out = out + (s.amp_sin * torch.sin(phase).unsqueeze(-1)).sum(-2)
    return s.dc + out


def reconstruct_rgb(s: ComponentSet, delta) -> torch.Tensor:
    """RGB value of one component set at one local offset. Not clamped."""
    delta = torch.as_tensor(delta, dtype=s.freq.dtype)
    if delta.shape[-1] != 2:
        raise ValueError(f"offset must be a 2-vector, got shape {tuple(delta.shape)}")
    _check_finite(freq=s.freq, amp_cos=s.amp_cos, amp_sin=s.amp_sin, dc=s.dc, offset=delta)
    return _fourier_sum(s, delta)


def reconstruct_batch(s: ComponentSet, deltas: torch.Tensor) -> torch.Tensor:
    """Vectorised reconstruction for ``N`` queries.

    ``s`` is either one set per query (leading dimension ``N``) or a single
    unbatched set shared by all queries. ``deltas`` has shape ``(N, 2)``.
    """
    deltas = torch.as_tensor(deltas, dtype=s.freq.dtype)
    if deltas.dim() != 2 or deltas.shape[-1] != 2:
        raise ValueError(f"offsets must have shape (N, 2), got {tuple(deltas.shape)}")
    if s.freq.dim() == 3 and s.freq.shape[0] != deltas.shape[0]:
        raise ValueError(f"{s.freq.shape[0]} component sets for {deltas.shape[0]} offsets")
    if deltas.shape[0] == 0:
        return deltas.new_zeros(0, 3)
    return _fourier_sum(s, deltas)


def component_magnitudes(s: ComponentSet) -> torch.Tensor:
    """Euclidean norm of the 6-vector (amp_cos, amp_sin) per component."""
    return torch.cat([s.amp_cos, s.amp_sin], dim=-1).norm(dim=-1)


def truncate_top_t(s: ComponentSet, T: int) -> ComponentSet:
    """Keep the ``T`` largest-magnitude components, largest first.

    Ties go to the earlier component. Works per batch row when the set is
    batched.
    """
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    mags = component_magnitudes(s)
    # stable sort keeps original order among equal magnitudes
    order = torch.sort(mags, dim=-1, descending=True, stable=True).indices[..., :T]

    def take(a):
        return torch.gather(a, -2, order.unsqueeze(-1).expand(*order.shape, a.shape[-1]))

    return ComponentSet(take(s.freq), take(s.amp_cos), take(s.amp_sin), s.dc)


def alignment_loss(freqs: torch.Tensor, absolute: bool = False, eps: float = ALIGN_EPS) -> torch.Tensor:
    """Negative mean pairwise cosine among the K frequencies of each group.

    ``freqs`` has shape ``(..., K, 2)``; every leading index is one group
    (one recurrence step of one cell). Returns the mean over groups. With
    ``absolute=True`` the cosine magnitude is used so anti-parallel pairs
    count as aligned.
    """
    freqs = torch.as_tensor(freqs)
    if torch.isnan(freqs).any():
        raise ValueError("NaN in frequencies")
    if freqs.dim() < 2 or freqs.shape[-1] != 2:
        raise ValueError(f"frequency groups must have shape (..., K, 2), got {tuple(freqs.shape)}")
    K = freqs.shape[-2]
    groups = freqs.reshape(-1, K, 2)
    if groups.shape[0] == 0:
        warnings.warn("alignment_loss called with no frequency groups", stacklevel=2)
        return freqs.new_zeros(())
    if K == 1:
        return freqs.sum() * 0.0
    unit = groups / groups.norm(dim=-1, keepdim=True).clamp_min(eps)
    cos = unit @ unit.transpose(-1, -2)
    iu = torch.triu_indices(K, K, offset=1, device=freqs.device)
    pair = cos[:, iu[0], iu[1]]
    if absolute:
        pair = pair.abs()
    return -pair.mean()


def amplitude_spectrum(image, log: bool = True) -> np.ndarray:
    """Centred DFT magnitude of a single-channel image, ``log(1 + |F|)`` by default."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ValueError(f"expected a 2-D image of at least 2x2, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("non-finite pixels in image")
    mag = np.abs(np.fft.fftshift(np.fft.fft2(img)))
    return np.log1p(mag) if log else mag


def spectrum_anisotropy(image, window: bool = True) -> float | None:
    """Ratio of principal second moments of the off-centre power spectrum.

    Large values mean energy lies along one line through the origin. Returns
    ``None`` when there is no off-centre energy (e.g. a constant image).
    A Hann window suppresses the axis-aligned leakage from the periodic
    wrap-around of the image borders.
    """
    img = np.asarray(image, dtype=np.float64)
    img = img - img.mean()
    if window:
        img = img * np.outer(np.hanning(img.shape[0]), np.hanning(img.shape[1]))
    power = amplitude_spectrum(img, log=False) ** 2
    h, w = power.shape
    cy, cx = h // 2, w // 2
    power[cy, cx] = 0.0
    total = power.sum()
    if total <= 1e-12 * max(1.0, float((img ** 2).sum())):
        return None
    # frequencies in cycles per pixel so both axes share a unit
    fy = (np.arange(h) - cy)[:, None] / h
    fx = (np.arange(w) - cx)[None, :] / w
    m = np.array(
        [
            [(power * fy * fy).sum(), (power * fy * fx).sum()],
            [(power * fy * fx).sum(), (power * fx * fx).sum()],
        ]
    ) / total
    lo, hi = np.linalg.eigvalsh(m)
    if lo <= 0:
        return float("inf")
    return float(hi / lo)
