"""Command-line entry point: ``cqsr {train,sweep,infer,profile,spectrum}``.

Errors print a single ``error: <kind>: <message>`` line on stderr; exit code
2 for bad arguments or configuration, 1 for runtime failures, 130 when a
training run was interrupted after writing its checkpoint.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import eval_bench
from .config import ConfigError, load_run_config
from .datapipe import load_image_dir, read_png, write_png
from .fourier_core import amplitude_spectrum, spectrum_anisotropy
from .training import fit

log = logging.getLogger("cqsr")


class UsageError(Exception):
    pass


def set_deterministic(flag: bool) -> None:
    if flag:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _parse_list(text: str, kind=int) -> list:
    try:
        return [kind(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _parse_scales(text: str) -> list[tuple[float, float]]:
    """``"2,4"`` or ``"2x3,4"`` into ``[(sy, sx), ...]``."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            if "x" in tok:
                sy, sx = (float(v) for v in tok.split("x"))
            else:
                sy = sx = float(tok)
        except ValueError:
            raise UsageError(f"cannot parse scale {tok!r}") from None
        if sy < 1 or sx < 1:
            raise UsageError(f"scale {tok} below 1")
        out.append((sy, sx))
    return out


def _write_sidecar(path: Path, **payload) -> None:
    sidecar = path.with_name(path.name + ".sidecar.json")
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    return ckpt.load(path)


# commands


def cmd_train(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides[("train", "seed")] = args.seed
    if args.deterministic:
        overrides[("train", "deterministic")] = "true"
    if args.out is not None:
        overrides[("output", "dir")] = args.out
    run = load_run_config(args.config, overrides=overrides)
    set_deterministic(run.deterministic)
    dataset = load_image_dir(run.data_dir, run.images or None)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    (run.out_dir / f"{run.name}.resolved.cfg").write_text(run.to_ini())

    stop = {"flag": False}

    def handler(signum, frame):
        stop["flag"] = True

    old = {s: signal.signal(s, handler) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        fit(run.train, dataset, run.checkpoint_path, resume=not args.fresh, should_stop=lambda: stop["flag"])
    finally:
        for s, h in old.items():
            signal.signal(s, h)
    print(f"checkpoint={run.checkpoint_path} loss_csv={ckpt.history_path(run.checkpoint_path)}")
    if stop["flag"]:
        print("error: interrupted: checkpoint written", file=sys.stderr)
        return 130
    return 0


def cmd_sweep(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    base_state = None
    if args.baseline is not None:
        base_state = _load_checkpoint(args.baseline)
        if not base_state.manifest.get("fixed_T", False):
            raise UsageError(f"--baseline needs a checkpoint trained with fixed T; {args.baseline} used random T")
    T_max = state.manifest["T_max"]
    T_list = _parse_list(args.T_list) if args.T_list else eval_bench.default_t_list(T_max)
    for T in T_list:
        if not 1 <= T <= T_max:
            raise UsageError(f"T={T} outside [1, T_max={T_max}] of {args.checkpoint}")
    scales = _parse_scales(args.scales)
    dataset = load_image_dir(args.data, _parse_list(args.images, str) if args.images else None)

    model = state.build_model()
    records = eval_bench.cq_sweep(model, dataset, T_list, scales)
    out = Path(args.out)
    eval_bench.write_sweep_csv(out, records)
    _write_sidecar(out, command="sweep", checkpoint=str(args.checkpoint), checkpoint_sha256=ckpt.digest(args.checkpoint),
                   data=str(args.data), images=dataset.names(), T_list=T_list, scales=scales, manifest=state.manifest)
    print(f"csv={out} rows={len(records)}")

    if base_state is not None:
        bmodel = base_state.build_model()
        bT = [T for T in T_list if T <= bmodel.T_max]
        brec = eval_bench.baseline_truncation_eval(bmodel, dataset, bT, scales)
        bout = Path(args.baseline_out) if args.baseline_out else out.with_name(out.stem + "_baseline.csv")
        eval_bench.write_sweep_csv(bout, brec)
        _write_sidecar(bout, command="sweep --baseline", checkpoint=str(args.baseline), checkpoint_sha256=ckpt.digest(args.baseline),
                       data=str(args.data), images=dataset.names(), T_list=bT, scales=scales, manifest=base_state.manifest)
        print(f"baseline_csv={bout} rows={len(brec)}")
    return 0


def cmd_infer(args) -> int:
    state = _load_checkpoint(args.checkpoint)
    model = state.build_model()
    T = args.T if args.T is not None else model.T_max
    if not 1 <= T <= model.T_max:
        raise UsageError(f"T={T} outside [1, T_max={model.T_max}]")
    lr = read_png(args.input)
    if args.scale is not None:
        out_h, out_w = round(lr.shape[0] * args.scale), round(lr.shape[1] * args.scale)
    else:
        out_h, out_w = args.out_h, args.out_w
    if out_h is None or out_w is None:
        raise UsageError("give --out-h and --out-w, or --scale")
    if out_h < lr.shape[0] or out_w < lr.shape[1]:
        raise UsageError(f"output {out_h}x{out_w} smaller than input {lr.shape[0]}x{lr.shape[1]}")
    before = model.step_count
    t0 = time.perf_counter()
    sr = model.super_resolve(lr, out_h, out_w, T=T)
    wall = (time.perf_counter() - t0) * 1e3
    write_png(args.output, sr)
    print(f"output={args.output} size={out_h}x{out_w} T={T} K={model.K} steps={model.step_count - before} wall_ms={wall:.2f}")
    return 0


def cmd_profile(args) -> int:
    if args.repeats < 10:
        raise UsageError(f"--repeats must be >= 10, got {args.repeats}")
    states = [_load_checkpoint(p) for p in args.checkpoints]
    models = [s.build_model() for s in states]
    widths = {m.config.width for m in models}
    if len(widths) > 1:
        log.warning("checkpoints have different cell widths %s; K comparison is not matched", sorted(widths))
    T = args.T if args.T is not None else min(m.T_max for m in models)
    for m, p in zip(models, args.checkpoints):
        if not 1 <= T <= m.T_max:
            raise UsageError(f"T={T} outside [1, T_max={m.T_max}] of {p}")
    records = eval_bench.runtime_profile(models, T, repeats=args.repeats)
    out = Path(args.out)
    eval_bench.write_profile_csv(out, records)
    _write_sidecar(out, command="profile", checkpoints=[str(p) for p in args.checkpoints],
                   checkpoint_sha256=[ckpt.digest(p) for p in args.checkpoints], T=T, repeats=args.repeats)
    for r in records:
        flag = "" if r.reliable else " (timer too coarse: unreliable)"
        print(f"K={r.K} T={r.T} steps={r.steps} median_ms={r.median_ms:.3f} iqr_ms={r.iqr_ms:.3f}{flag}")

    if args.plot:
        dataset = load_image_dir(args.data)
        scales = _parse_scales(args.scales)[:1]
        curves = {}
        for m in models:
            T_list = eval_bench.default_t_list(m.T_max)
            curves[m.K] = eval_bench.cq_sweep(m, dataset, T_list, scales)
        eval_bench.plot_psnr_runtime(curves, args.plot, title=f"x{scales[0][0]:g}")
        print(f"plot={args.plot}")
    return 0


def cmd_spectrum(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    img = read_png(args.input)
    luma = eval_bench.rgb_to_y(img)
    panels = [("image", img, luma)]
    if args.rect:
        y, x, h, w = _parse_list(args.rect)
        H, W = luma.shape
        if y < 0 or x < 0 or h < 2 or w < 2 or y + h > H or x + w > W:
            raise UsageError(f"rect {args.rect} out of bounds for {H}x{W} image")
        panels.append(("patch", img[y : y + h, x : x + w], luma[y : y + h, x : x + w]))

    fig, axes = plt.subplots(len(panels), 2, figsize=(6, 3 * len(panels)), squeeze=False)
    report = {}
    for row, (name, rgb, y_chan) in enumerate(panels):
        spec = amplitude_spectrum(y_chan)
        aniso = spectrum_anisotropy(y_chan)
        report[name] = {"shape": list(y_chan.shape), "anisotropy": aniso if aniso is None else round(aniso, 4)}
        axes[row, 0].imshow(np.clip(rgb, 0, 1))
        axes[row, 0].set_title(name)
        axes[row, 1].imshow(spec, cmap="gray")
        axes[row, 1].set_title("log amplitude spectrum")
        for ax in axes[row]:
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    plt.close(fig)
    print(json.dumps({"output": str(args.output), **report}, sort_keys=True))
    return 0


class _Parser(argparse.ArgumentParser):
    # keep argument errors on one line like every other failure
    def error(self, message):
        self.exit(2, f"error: usage: {self.prog}: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cqsr", description="Arbitrary-scale super-resolution with a run-time component budget.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", help="key=value config with [data]/[model]/[train]/[output] sections")
    t.add_argument("--seed", type=int)
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--out", help="output directory (overrides [output] dir)")
    t.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint instead of resuming")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="PSNR/time over component budgets and scales")
    s.add_argument("checkpoint")
    s.add_argument("--data", default=str(load_run_config(env={}).data_dir))
    s.add_argument("--images", help="comma-separated subset of file names")
    s.add_argument("--T-list", dest="T_list", help="comma-separated budgets (default: scaled 60/48/36/24/12)")
    s.add_argument("--scales", default="2,4", help="e.g. 2,4 or 2x3")
    s.add_argument("--out", default="sweep.csv")
    s.add_argument("--baseline", help="fixed-T checkpoint evaluated with top-T truncation")
    s.add_argument("--baseline-out")
    s.add_argument("--seed", type=int, help="accepted for symmetry; the sweep uses no randomness")
    s.add_argument("--deterministic", action="store_true")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("infer", help="super-resolve one PNG")
    i.add_argument("checkpoint")
    i.add_argument("input")
    i.add_argument("-o", "--output", default="sr.png")
    i.add_argument("--out-h", type=int)
    i.add_argument("--out-w", type=int)
    i.add_argument("--scale", type=float)
    i.add_argument("--T", type=int)
    i.add_argument("--deterministic", action="store_true")
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("profile", help="predictor runtime per K at fixed T")
    r.add_argument("checkpoints", nargs="+", help="one checkpoint per K")
    r.add_argument("--T", type=int)
    r.add_argument("--repeats", type=int, default=100)
    r.add_argument("--out", default="profile.csv")
    r.add_argument("--plot", help="write a PSNR-vs-runtime PNG here")
    r.add_argument("--data", default=str(load_run_config(env={}).data_dir))
    r.add_argument("--scales", default="2")
    r.set_defaults(func=cmd_profile)

    sp = sub.add_parser("spectrum", help="image / amplitude-spectrum panel")
    sp.add_argument("input")
    sp.add_argument("--rect", help="patch as y,x,h,w")
    sp.add_argument("-o", "--output", default="spectrum.png")
    sp.set_defaults(func=cmd_spectrum)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "deterministic", False) and args.command != "train":
        set_deterministic(True)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
