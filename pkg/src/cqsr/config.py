"""Sectioned ``key = value`` run configuration.

Example::

    # desk.cfg
    [data]
    dir = src/cqsr/data/desk
    images = c_scene.png

    [model]
    K = 2
    T_max = 16

    [train]
    epochs = 200
    seed = 1

Every key of :class:`~cqsr.training.TrainConfig` is accepted in ``[model]`` or
``[train]``; ``[data]`` takes ``dir`` and ``images``; ``[output]`` takes
``dir`` and ``name``. Unknown keys are errors. ``CQSR_<SECTION>_<KEY>``
environment variables override the file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .datapipe import bundled_corpus_dir
from .training import TrainConfig

ENV_PREFIX = "CQSR_"
MODEL_KEYS = ("D", "n_resblocks", "width", "cell", "K", "T_max")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in MODEL_KEYS) + ("deterministic",)
SECTIONS = {
    "data": ("dir", "images"),
    "model": MODEL_KEYS,
    "train": TRAIN_KEYS,
    "output": ("dir", "name"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: Path = field(default_factory=bundled_corpus_dir)
    images: tuple[str, ...] = ()
    out_dir: Path = Path("runs/desk")
    name: str = "model"
    deterministic: bool = False

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / f"{self.name}.ckpt"

    def to_ini(self) -> str:
        lines = ["# fully resolved configuration", "[data]", f"dir = {self.data_dir}", f"images = {','.join(self.images)}", "", "[model]"]
        t = self.train.to_dict()
        lines += [f"{k} = {_fmt(t[k])}" for k in MODEL_KEYS]
        lines += ["", "[train]"]
        lines += [f"{k} = {_fmt(t[k])}" for k in TRAIN_KEYS if k != "deterministic"]
        lines += [f"deterministic = {_fmt(self.deterministic)}", "", "[output]", f"dir = {self.out_dir}", f"name = {self.name}", ""]
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _field_types() -> dict:
    defaults = TrainConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(TrainConfig)}


def _parse(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if key == "e_half":
            return None if raw.lower() in ("", "none") else int(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def load_run_config(path=None, env=None, overrides: dict | None = None) -> RunConfig:
    """Parse ``path`` (optional), apply env and explicit overrides, validate."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    if path is not None:
        text = Path(path).read_text()
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0]) from None

    values: dict[tuple[str, str], str] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, val in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            values[(section, key)] = val
    for name, val in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        section, _, key = rest.partition("_")
        section = section.lower()
        match = [k for k in SECTIONS.get(section, ()) if k.lower() == key.lower()]
        if not match:
            raise ConfigError(f"unknown config key in environment variable {name}")
        values[(section, match[0])] = val
    for (section, key), val in (overrides or {}).items():
        values[(section, key)] = str(val)

    types = _field_types()
    train_kw = {}
    run = RunConfig()
    for (section, key), raw in values.items():
        if section in ("model", "train") and key in types:
            train_kw[key] = _parse(key, raw, types[key])
        elif (section, key) == ("train", "deterministic"):
            run.deterministic = _parse(key, raw, bool)
        elif (section, key) == ("data", "dir"):
            run.data_dir = Path(raw.strip())
        elif (section, key) == ("data", "images"):
            run.images = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif (section, key) == ("output", "dir"):
            run.out_dir = Path(raw.strip())
        elif (section, key) == ("output", "name"):
            run.name = raw.strip()
    try:
        run.train = TrainConfig(**train_kw)
        run.train.model_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return run
