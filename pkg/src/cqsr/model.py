"""Encoder, recurrent Fourier-component predictor and query pipeline.

The predictor is a stateful recurrence that emits ``K`` components per step.
Because each step depends only on the latent code and the steps before it,
stopping after ``ceil(T / K)`` steps gives exactly the prefix a longer run
would have produced. That prefix property is what makes the component budget
``T`` a free inference-time knob.

Head output layout per component slot: ``[freq(2), amp_cos(3), amp_sin(3)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datapipe import coord_grid
from .fourier_core import ComponentSet, reconstruct_batch, truncate_top_t

SLOT = 8
COORD_EPS = 1e-6
MIN_LR_SIZE = 8
# initial per-step frequency offsets span the band a x4 cell can resolve
FREQ_SPREAD = 2.0


@dataclass
class CQConfig:
    K: int = 2
    T_max: int = 16
    T: int | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.T_max < 1 or self.K > self.T_max:
            raise ValueError(f"need 1 <= K <= T_max, got K={self.K}, T_max={self.T_max}")
        if self.T is None:
            self.T = self.T_max
        if not 0 <= self.T <= self.T_max:
            raise ValueError(f"T={self.T} outside [0, {self.T_max}]")

    def steps(self, T: int | None = None) -> int:
        return math.ceil((self.T if T is None else T) / self.K)


@dataclass
class ModelConfig:
    """Architecture descriptor; enough to rebuild every parameter shape."""

    D: int = 64
    n_resblocks: int = 4
    width: int = 256
    K: int = 2
    T_max: int = 16
    cell: str = "gru"

    def __post_init__(self):
        CQConfig(self.K, self.T_max)
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell {self.cell!r}; choose from {sorted(CELLS)}")
        for name in ("D", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_resblocks < 0:
            raise ValueError("n_resblocks must be >= 0")

    def to_dict(self):
        return asdict(self)


class ResBlock(nn.Module):
    def __init__(self, ch, res_scale=1.0):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.res_scale * self.conv2(F.relu(self.conv1(x)))


class Encoder(nn.Module):
    """EDSR-style residual conv stack without upsampling."""

    def __init__(self, D=64, n_resblocks=4):
        super().__init__()
        self.head = nn.Conv2d(3, D, 3, padding=1)
        self.body = nn.Sequential(*[ResBlock(D) for _ in range(n_resblocks)])
        self.tail = nn.Conv2d(D, D, 3, padding=1)

    def forward(self, x):
        x = self.head(x - 0.5)
        return x + self.tail(self.body(x))


class GRUStateCell(nn.Module):
    """Gated recurrent cell; the state is the hidden vector itself."""

    def __init__(self, width):
        super().__init__()
        self.width = width
        self.state_size = width
        self.cell = nn.GRUCell(width, width)

    def initial(self, token):
        return token

    def forward(self, x, state):
        h = self.cell(x, state)
        return h, h


class LinearAttentionCell(nn.Module):
    """Single-layer causal linear attention run as a recurrence.

    The state holds the running key-value outer-product sum, the key sum used
    for normalisation, and the previous output token; its size is fixed no
    matter how many steps follow.
    """

    def __init__(self, width):
        super().__init__()
        self.width = width
        self.state_size = width * width + 2 * width
        self.q = nn.Linear(width, width, bias=False)
        self.k = nn.Linear(width, width, bias=False)
        self.v = nn.Linear(width, width, bias=False)
        self.o = nn.Linear(width, width)
        self.ff = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, width))
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)

    @staticmethod
    def _phi(x):
        return F.elu(x) + 1

    def _unpack(self, state):
        w = self.width
        kv = state[:, : w * w].reshape(-1, w, w)
        ksum = state[:, w * w : w * w + w]
        prev = state[:, w * w + w :]
        return kv, ksum, prev

    def _pack(self, kv, ksum, prev):
        return torch.cat([kv.flatten(1), ksum, prev], dim=1)

    def initial(self, token):
        k = self._phi(self.k(token))
        v = self.v(token)
        return self._pack(k.unsqueeze(-1) * v.unsqueeze(-2), k, token)

    def forward(self, x, state):
        kv, ksum, prev = self._unpack(state)
        tok = x + prev
        u = self.norm1(tok)
        q, k, v = self._phi(self.q(u)), self._phi(self.k(u)), self.v(u)
        kv = kv + k.unsqueeze(-1) * v.unsqueeze(-2)
        ksum = ksum + k
        att = torch.einsum("nd,nde->ne", q, kv) / (q * ksum).sum(-1, keepdim=True).clamp_min(1e-6)
        tok = tok + self.o(att)
        tok = tok + self.ff(self.norm2(tok))
        return tok, self._pack(kv, ksum, tok)


CELLS = {"gru": GRUStateCell, "linear_attention": LinearAttentionCell}


@dataclass
class PredictorState:
    hidden: torch.Tensor  # (N, state_size)
    step_index: int
    last_output: torch.Tensor  # (N, K * 8)

    def to_numpy(self) -> dict:
        return {
            "hidden": self.hidden.detach().cpu().numpy(),
            "step_index": np.int64(self.step_index),
            "last_output": self.last_output.detach().cpu().numpy(),
        }

    @classmethod
    def from_numpy(cls, d) -> "PredictorState":
        return cls(torch.from_numpy(np.array(d["hidden"])), int(d["step_index"]), torch.from_numpy(np.array(d["last_output"])))


@dataclass
class Prediction:
    """Per-cell components plus the raw frequency groups of every executed step."""

    components: ComponentSet
    groups: torch.Tensor  # (N, steps, K, 2)
    steps: int = field(default=0)


class CQSR(nn.Module):
    def __init__(self, config: ModelConfig | None = None, **kwargs):
        super().__init__()
        self.config = config = config or ModelConfig(**kwargs)
        self.K = config.K
        self.T_max = config.T_max
        self.encoder = Encoder(config.D, config.n_resblocks)
        self.cell = CELLS[config.cell](config.width)
        self.init_map = nn.Linear(config.D, config.width)
        self.embed = nn.Linear(SLOT * config.K, config.width)
        # learned per-step output offset; without it every step starts from the
        # same frequencies and later steps only re-weight earlier sinusoids
        self.position = nn.Embedding(math.ceil(config.T_max / config.K), SLOT * config.K)
        self.head = nn.Linear(config.width, SLOT * config.K)
        self.dc_head = nn.Linear(config.D, 3)
        self.step_count = 0

    def reset_parameters(self, generator: torch.Generator | None = None):
        """Fan-in uniform init; distinct frequency biases per slot."""

        def uniform_(t, bound):
            with torch.no_grad():
                t.copy_(torch.rand(t.shape, generator=generator, dtype=t.dtype) * 2 * bound - bound)

        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Conv2d)):
                bound = 1 / math.sqrt(m.weight[0].numel())
                uniform_(m.weight, bound)
                if m.bias is not None:
                    uniform_(m.bias, bound)
            elif isinstance(m, nn.GRUCell):
                for p in m.parameters():
                    uniform_(p, 1 / math.sqrt(m.hidden_size))
            elif isinstance(m, nn.LayerNorm):
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()

        K = self.K
        with torch.no_grad():
            pos = self.position.weight.view(-1, K, SLOT)
            pos.zero_()
            pos[..., :2] = torch.rand(pos.shape[0], K, 2, generator=generator, dtype=pos.dtype) * 2 * FREQ_SPREAD - FREQ_SPREAD
            w = self.head.weight.view(K, SLOT, -1)
            b = self.head.bias.view(K, SLOT)
            w[:, 2:] *= 0.1
            b[:, 2:] = 0.0
            b[:, :2] = torch.rand(K, 2, generator=generator, dtype=b.dtype) * 2 - 1
            self.dc_head.bias.fill_(0.5)
            self.dc_head.weight.mul_(0.1)
        return self

    # encoder

    def encode(self, lr) -> torch.Tensor:
        """LR image(s) to a latent grid ``(B, D, h, w)``.

        Accepts an ``H x W x 3`` array or a ``(B, 3, H, W)`` tensor.
        """
        x = _as_nchw(lr, self._dtype())
        if x.shape[-2] < MIN_LR_SIZE or x.shape[-1] < MIN_LR_SIZE:
            raise ValueError(f"LR input {tuple(x.shape[-2:])} smaller than {MIN_LR_SIZE}x{MIN_LR_SIZE}")
        return self.encoder(x)

    # predictor

    def init_state(self, z: torch.Tensor) -> PredictorState:
        z = torch.as_tensor(z, dtype=self._dtype())
        if z.dim() == 1:
            z = z.unsqueeze(0)
        hidden = self.cell.initial(self.init_map(z))
        return PredictorState(hidden, 0, z.new_zeros(z.shape[0], SLOT * self.K))

    def step(self, state: PredictorState):
        """One recurrence: ``(N, K, 8)`` raw component slots and the next state."""
        if state.hidden.shape[-1] != self.cell.state_size:
            raise ValueError(f"state size {state.hidden.shape[-1]} != expected {self.cell.state_size}")
        if state.step_index >= self.position.num_embeddings:
            raise ValueError(f"step {state.step_index + 1} exceeds the {self.position.num_embeddings} steps of T_max={self.T_max}")
        out, hidden = self.cell(self.embed(state.last_output), state.hidden)
        raw = self.head(out) + self.position.weight[state.step_index]
        self.step_count += 1
        return raw.view(-1, self.K, SLOT), PredictorState(hidden, state.step_index + 1, raw)

    def predict(self, z: torch.Tensor, T: int) -> Prediction:
        if not 0 <= T <= self.T_max:
            raise ValueError(f"T={T} outside [0, {self.T_max}]")
        z = torch.as_tensor(z, dtype=self._dtype())
        if z.dim() == 1:
            z = z.unsqueeze(0)
        n = z.shape[0]
        dc = self.dc_head(z)
        steps = math.ceil(T / self.K)
        state = self.init_state(z)
        outs = []
        for _ in range(steps):
            raw, state = self.step(state)
            outs.append(raw)
        if outs:
            raw = torch.stack(outs, dim=1)  # (N, steps, K, 8)
        else:
            raw = z.new_zeros(n, 0, self.K, SLOT)
        groups = raw[..., :2]
        flat = raw.reshape(n, steps * self.K, SLOT)[:, :T]
        comps = ComponentSet(flat[..., :2], flat[..., 2:5], flat[..., 5:8], dc)
        return Prediction(comps, groups, steps)

    def predict_components(self, z: torch.Tensor, T: int) -> ComponentSet:
        return self.predict(z, T).components

    # query pipeline

    def query(self, grid: torch.Tensor, coords, T: int, truncate_to: int | None = None):
        """RGB at HR-normalised ``coords`` (``(B, Q, 2)``) plus the prediction used.

        Each query reads the component set of its nearest latent cell; sets are
        computed once per distinct cell. With ``truncate_to`` the ``T``
        predicted components are cut to the top ``truncate_to`` by magnitude.
        """
        coords = torch.as_tensor(coords, dtype=grid.dtype)
        if coords.dim() == 2:
            coords = coords.unsqueeze(0)
        B, D, h, w = grid.shape
        if coords.shape[0] != B or coords.shape[-1] != 2:
            raise ValueError(f"coords shape {tuple(coords.shape)} does not match grid batch {B}")
        if coords.numel() and coords.abs().max() > 1 + COORD_EPS:
            raise ValueError("query coordinates outside [-1, 1]")
        cell, delta = nearest_cell(coords, h, w)
        flat = (torch.arange(B).view(B, 1) * (h * w) + cell[..., 0] * w + cell[..., 1]).reshape(-1)
        uniq, inverse = torch.unique(flat, return_inverse=True)
        z = grid.permute(0, 2, 3, 1).reshape(-1, D)[uniq]
        pred = self.predict(z, T)
        sets = pred.components
        if truncate_to is not None and truncate_to < sets.n_components:
            sets = truncate_top_t(sets, truncate_to)
        rgb = reconstruct_batch(sets.index(inverse), delta.reshape(-1, 2))
        return rgb.view(B, -1, 3), pred

    def query_rgb(self, grid, coords, T: int, truncate_to: int | None = None) -> torch.Tensor:
        return self.query(grid, coords, T, truncate_to)[0]

    @torch.no_grad()
    def super_resolve(self, lr, out_h: int, out_w: int, T: int | None = None, truncate_to: int | None = None) -> np.ndarray:
        """Full ``out_h x out_w x 3`` image in [0, 1] from an ``H x W x 3`` LR image."""
        if out_h <= 0 or out_w <= 0:
            raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
        lr = np.asarray(lr)
        if out_h < lr.shape[0] or out_w < lr.shape[1]:
            raise ValueError(f"output {out_h}x{out_w} smaller than input {lr.shape[0]}x{lr.shape[1]}")
        T = self.T_max if T is None else T
        grid = self.encode(lr)
        coords = torch.from_numpy(coord_grid(out_h, out_w).reshape(1, -1, 2))
        rgb = self.query_rgb(grid, coords, T, truncate_to)
        return rgb.view(out_h, out_w, 3).clamp(0, 1).double().numpy()

    def _dtype(self):
        return self.head.weight.dtype


def nearest_cell(coords: torch.Tensor, h: int, w: int):
    """Nearest latent cell index and the per-cell scaled offset.

    Offsets are scaled by the grid size so one cell spans [-1, 1]. A query
    on a cell boundary goes to the lower-index cell, giving an offset of +1.
    """
    size = torch.tensor([h, w], dtype=coords.dtype)
    pos = (coords + 1) * size / 2
    idx = torch.ceil(pos).long() - 1
    idx = torch.minimum(idx.clamp_min(0), (size.long() - 1))
    centre = -1 + (2 * idx + 1).to(coords.dtype) / size
    delta = (coords - centre) * size
    return idx, delta


def _as_nchw(img, dtype) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        x = img
        if x.dim() == 3:
            x = x.permute(2, 0, 1).unsqueeze(0)
    else:
        arr = np.asarray(img)
        if arr.ndim == 3:
            arr = arr.transpose(2, 0, 1)[None]
        elif arr.ndim == 4:
            arr = arr.transpose(0, 3, 1, 2)
        else:
            raise ValueError(f"expected H x W x 3 image(s), got shape {arr.shape}")
        x = torch.from_numpy(np.ascontiguousarray(arr))
    if x.shape[1] != 3:
        raise ValueError(f"expected 3 channels, got {x.shape[1]}")
    return x.to(dtype)


def build_model(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> CQSR:
    gen = torch.Generator().manual_seed(seed)
    model = CQSR(config).to(dtype)
    return model.reset_parameters(gen)
