"""Checkpoint file format.

Layout (all integers little-endian)::

    b"CQSRCKPT"  u32 version  u32 manifest_len  manifest (UTF-8 JSON, sorted keys)
    u32 n_blobs
    per blob: u16 name_len, name, u8 ndim, ndim x u32 dims, float32 data

Model parameters are stored under their ``state_dict`` names. Adam moments,
when present, use ``optim.exp_avg.<name>`` and ``optim.exp_avg_sq.<name>``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import CQSR, ModelConfig

MAGIC = b"CQSRCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    manifest: dict
    blobs: dict[str, np.ndarray]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.manifest["architecture"])

    def build_model(self) -> CQSR:
        model = CQSR(self.model_config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.blobs.items() if not k.startswith("optim.")})
        return model.eval()

    def restore(self, model: CQSR, optimizer: torch.optim.Optimizer | None = None) -> None:
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.blobs.items() if not k.startswith("optim.")})
        if optimizer is None:
            return
        steps = self.manifest.get("optim_steps", {})
        for name, p in model.named_parameters():
            if name not in steps:
                continue
            optimizer.state[p] = {
                "step": torch.tensor(float(steps[name])),
                "exp_avg": torch.from_numpy(self.blobs[f"optim.exp_avg.{name}"].copy()),
                "exp_avg_sq": torch.from_numpy(self.blobs[f"optim.exp_avg_sq.{name}"].copy()),
            }


def encode(manifest: dict, blobs: dict[str, np.ndarray]) -> bytes:
    meta = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, mlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    manifest = json.loads(data[pos : pos + mlen])
    pos += mlen
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blobs = {}
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + klen].decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    return Checkpoint(manifest, blobs)


def save(path, manifest: dict, blobs: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(manifest, blobs))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def history_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".loss.csv")


def model_blobs(model: CQSR) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().float().numpy() for k, v in model.state_dict().items()}


def make_manifest(model: CQSR, **extra) -> dict:
    arch = model.config.to_dict()
    return {
        "format_version": FORMAT_VERSION,
        "architecture": arch,
        "D": arch["D"],
        "K": arch["K"],
        "T_max": arch["T_max"],
        "cell": arch["cell"],
        **extra,
    }


def save_model(path, model: CQSR, **extra) -> None:
    save(path, make_manifest(model, **extra), model_blobs(model))


def save_training(path, model: CQSR, optimizer, config, epoch: int, history) -> None:
    from .training import write_history

    hpath = history_path(path)
    write_history(hpath, history)
    blobs = model_blobs(model)
    steps = {}
    params = dict(model.named_parameters())
    for name, p in params.items():
        st = optimizer.state.get(p)
        if not st:
            continue
        steps[name] = int(st["step"])
        blobs[f"optim.exp_avg.{name}"] = st["exp_avg"].detach().float().numpy()
        blobs[f"optim.exp_avg_sq.{name}"] = st["exp_avg_sq"].detach().float().numpy()
    manifest = make_manifest(
        model,
        seed=config.seed,
        epoch=epoch,
        fixed_T=config.fixed_T,
        train_config=config.to_dict(),
        loss_history_digest=digest(hpath),
        loss_history_rows=len(history),
        optim_steps=steps,
    )
    save(path, manifest, blobs)
