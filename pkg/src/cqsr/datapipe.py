"""Image ingestion, bicubic resampling and training-sample generation.

Coordinates follow the usual implicit-image convention: an ``h x w`` grid
covers ``[-1, 1]^2`` and pixel ``(i, j)`` sits at the centre of its cell.
The first coordinate is the row axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

LR_PATCH = 48
SCALE_RANGE = (1.0, 4.0)
MAX_SCALE_RETRIES = 8


def coord_grid(h: int, w: int) -> np.ndarray:
    """Cell centres of an ``h x w`` grid, shape ``(h, w, 2)``."""
    ys = -1 + (2 * np.arange(h) + 1) / h
    xs = -1 + (2 * np.arange(w) + 1) / w
    return np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1)


def keys_kernel(x, a: float = -0.5) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation weights with clamped edges."""
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    base = np.floor(pos).astype(int)
    mat = np.zeros((n_out, n_in))
    for off in range(-1, 3):
        src = base + off
        wgt = keys_kernel(pos - src)
        np.add.at(mat, (np.arange(n_out), np.clip(src, 0, n_in - 1)), wgt)
    return mat


def bicubic_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Separable Keys (a=-0.5) resampling, centre-aligned, clamped to [0, 1]."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ry = _resample_matrix(h, out_h)
    rx = _resample_matrix(w, out_w)
    out = np.einsum("ah,hwc->awc", ry, img.reshape(h, w, -1))
    out = np.einsum("bw,awc->abc", rx, out)
    return np.clip(out.reshape((out_h, out_w) + img.shape[2:]), 0.0, 1.0)


def sample_scale_pair(rng: np.random.Generator) -> tuple[float, float]:
    lo, hi = SCALE_RANGE
    s_y, s_x = rng.uniform(lo, hi, size=2)
    return float(s_y), float(s_x)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``, schedule independent."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


@dataclass
class PatchPair:
    hr_patch: np.ndarray
    lr_patch: np.ndarray
    s_y: float
    s_x: float


@dataclass
class QuerySet:
    """Query coordinates on HR pixel centres and their ground-truth colours."""

    coords: np.ndarray  # (n, 2)
    rgb: np.ndarray  # (n, 3)
    index: np.ndarray  # (n, 2) integer pixel index into the HR patch

    def __len__(self):
        return len(self.coords)


def make_training_sample(hr_image, rng: np.random.Generator, n_queries: int = 256, scales=None):
    """Random crop, bicubic downscale to 48x48, and ``n_queries`` distinct queries."""
    hr_image = np.asarray(hr_image)
    H, W = hr_image.shape[:2]
    for _ in range(MAX_SCALE_RETRIES):
        s_y, s_x = scales if scales is not None else sample_scale_pair(rng)
        ph = max(LR_PATCH, int(round(LR_PATCH * s_y)))
        pw = max(LR_PATCH, int(round(LR_PATCH * s_x)))
        if ph <= H and pw <= W:
            break
        if scales is not None:
            raise ValueError(f"image {H}x{W} too small for scales {scales}")
    else:
        raise ValueError(f"image {H}x{W} too small after {MAX_SCALE_RETRIES} scale draws")

    y0 = int(rng.integers(0, H - ph + 1))
    x0 = int(rng.integers(0, W - pw + 1))
    hr = hr_image[y0 : y0 + ph, x0 : x0 + pw]
    lr = bicubic_resize(hr, LR_PATCH, LR_PATCH)

    n = min(n_queries, ph * pw)
    flat = rng.choice(ph * pw, size=n, replace=False)
    idx = np.stack([flat // pw, flat % pw], axis=-1)
    coords = coord_grid(ph, pw)[idx[:, 0], idx[:, 1]]
    rgb = hr[idx[:, 0], idx[:, 1]]
    return PatchPair(hr, lr, s_y, s_x), QuerySet(coords, np.asarray(rgb, dtype=np.float64), idx)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path, img) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


class ImageDataset:
    """Lexicographically ordered PNG directory, decoded on access."""

    def __init__(self, path, include=None):
        self.root = Path(path)
        if not self.root.is_dir():
            raise ValueError(f"not a directory: {self.root}")
        files = []
        candidates = sorted(self.root.glob("*.png"))
        if include:
            missing = set(include) - {p.name for p in candidates}
            if missing:
                raise ValueError(f"images not found in {self.root}: {sorted(missing)}")
            candidates = [p for p in candidates if p.name in set(include)]
        for p in candidates:
            try:
                with Image.open(p) as im:
                    im.verify()
            except Exception as exc:  # PIL raises a zoo of types here
                log.warning("skipping unreadable image %s: %s", p, exc)
                continue
            files.append(p)
        if not files:
            raise ValueError(f"no readable PNG images in {self.root}")
        self.files = tuple(files)

    def __len__(self):
        return len(self.files)

    def __getitem__(self, i) -> np.ndarray:
        return read_png(self.files[i])

    def names(self) -> list[str]:
        return [p.name for p in self.files]


def load_image_dir(path, include=None) -> ImageDataset:
    return ImageDataset(path, include)


def bundled_corpus_dir() -> Path:
    return Path(__file__).parent / "data" / "desk"


def make_desk_corpus(size: int = 192) -> dict[str, np.ndarray]:
    """Three synthetic images: oriented edges, a texture and a smooth photo-like scene."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = {}

    # soft-edged oriented stripes plus a diagonal step
    theta = np.deg2rad(30)
    u = np.cos(theta) * xx + np.sin(theta) * yy
    stripes = 0.5 + 0.5 * np.tanh(6 * np.sin(2 * np.pi * 5 * u))
    step = (xx - yy > 0.1).astype(float)
    edges = 0.15 + 0.55 * stripes[..., None] * np.array([0.9, 0.7, 0.4]) + 0.25 * step[..., None] * np.array([0.2, 0.5, 0.9])
    images["a_edges.png"] = edges

    # band-limited texture from a few random sinusoids
    rng = np.random.default_rng(7)
    tex = np.zeros((size, size, 3))
    for _ in range(12):
        f = rng.uniform(2, 14, size=2) * rng.choice([-1, 1], size=2)
        ph = rng.uniform(0, 2 * np.pi)
        col = rng.uniform(0.02, 0.08, size=3)
        tex += col * np.cos(2 * np.pi * (f[0] * yy + f[1] * xx) + ph)[..., None]
    images["b_texture.png"] = 0.5 + tex

    # sky gradient, a blurred sun disc and a horizon band
    sky = np.stack([0.35 + 0.3 * yy, 0.5 + 0.25 * yy, 0.85 - 0.3 * yy], axis=-1)
    r = np.hypot(yy - 0.35, xx - 0.65)
    sun = 1 / (1 + np.exp((r - 0.12) / 0.02))
    sky = sky * (1 - sun[..., None]) + sun[..., None] * np.array([1.0, 0.85, 0.5])
    ground = 1 / (1 + np.exp(-(yy - 0.7 - 0.05 * np.sin(2 * np.pi * 2 * xx)) / 0.015))
    scene = sky * (1 - ground[..., None]) + ground[..., None] * np.stack(
        [0.25 + 0.1 * xx, 0.45 - 0.1 * yy, 0.2 + 0 * xx], axis=-1
    )
    images["c_scene.png"] = scene

    return {k: np.clip(v, 0, 1) for k, v in images.items()}
