"""Command-line front end: generate, estimate, refine, eval, analyze, bench.

Exit codes: 0 success, 1 usage error, 2 data error. Results go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import io as lio
from .estimators import estimate_jet, estimate_pca, inject_flips
from .metrics import DEFAULT_KAPPA, angular_errors, summarize, vmf_kde
from .refine import RefineConfig, refine_normals
from .simulator import (SPLITS, load_scene, load_sensor, sensor_from_dict,
                        simulate_sequence, trajectory_from_dict)

THREADS_ENV = "LIDAR_NORMALS_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
RUNTIME_FILE = "runtime.yaml"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def resolve_threads(value) -> int:
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return os.cpu_count() or 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def _positive(name, value):
    if value is not None and value < 1:
        raise UsageError(f"--{name} must be >= 1")


def _write_runtime(out: Path, seconds: dict) -> None:
    with open(out / RUNTIME_FILE, "w") as fh:
        yaml.safe_dump({"seconds_per_frame": seconds}, fh)


def _read_runtime(pred_dir: Path) -> float:
    path = pred_dir / RUNTIME_FILE
    if not path.is_file():
        return 0.0
    with open(path) as fh:
        seconds = (yaml.safe_load(fh) or {}).get("seconds_per_frame") or {}
    return float(np.mean(list(seconds.values()))) if seconds else 0.0


def _copy_manifest(manifest: Path, out: Path) -> None:
    # Prediction directories reuse the ground-truth file names.
    (out / "manifest.yaml").write_text(manifest.read_text())


# --- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    _positive("frames", args.frames)
    scene, traj_spec = load_scene(args.scene)
    sensor = load_sensor(args.sensor) if args.sensor else sensor_from_dict(None)
    overrides = {k: v for k, v in (("noise_std_m", args.noise_std),
                                   ("drop_ratio", args.drop_ratio)) if v is not None}
    if overrides:
        try:
            sensor = sensor_from_dict({**sensor.to_dict(), **overrides})
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    traj = trajectory_from_dict(traj_spec, args.frames, sensor.rotation_hz)
    frames = simulate_sequence(scene, sensor, traj, args.seed)
    path = lio.write_sequence(frames, args.out, scene.name, args.split, sensor)
    for fr in frames:
        print(f"frame {fr.frame_id}: {len(fr)} points")
    print(f"manifest: {path}")
    return EXIT_OK


def _estimate(frame, args, workers):
    if args.method == "pca":
        return estimate_pca(frame, args.k, workers=workers)
    return estimate_jet(frame, args.k, args.degree, workers=workers)


def cmd_estimate(args) -> int:
    _positive("k", args.k)
    if not 0.0 <= args.flip_fraction <= 1.0:
        raise UsageError("--flip-fraction must be in [0, 1]")
    manifest = Path(args.inp)
    frames = lio.read_sequence(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seconds = {}
    for fr in frames:
        t0 = time.perf_counter()
        field = _estimate(fr, args, args.threads)
        seconds[fr.frame_id] = time.perf_counter() - t0
        if args.flip_fraction > 0:
            field = inject_flips(field, args.flip_fraction, args.seed + fr.frame_id)
        lio.write_field(fr, field, out / lio.frame_filename(fr.frame_id))
        print(f"frame {fr.frame_id}: {len(fr)} normals, {len(field.flagged)} flagged")
    _copy_manifest(manifest, out)
    _write_runtime(out, seconds)
    return EXIT_OK


def _refine_config(args) -> RefineConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = yaml.safe_load(fh) or {}
    flags = {"gamma": args.gamma, "k": args.k, "sigma": args.sigma,
             "max_iters": args.iters, "step_size": args.step_size}
    base.update({k: v for k, v in flags.items() if v is not None})
    try:
        return RefineConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad refine configuration: {exc}") from None


def cmd_refine(args) -> int:
    config = _refine_config(args)
    manifest = Path(args.inp)
    frames = lio.read_sequence(manifest)
    init = lio.read_predictions(args.init, manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def trace(it, value):
        print(f"iter {it} objective {value!r}")

    t0 = time.perf_counter()
    refined = refine_normals(frames, init, config, workers=args.threads, callback=trace)
    per_frame = (time.perf_counter() - t0) / max(len(frames), 1)
    for fr, field in zip(frames, refined):
        lio.write_field(fr, field, out / lio.frame_filename(fr.frame_id))
    _copy_manifest(manifest, out)
    _write_runtime(out, {fr.frame_id: per_frame for fr in frames})
    return EXIT_OK


def cmd_eval(args) -> int:
    frames = lio.read_sequence(args.gt)
    preds = lio.read_predictions(args.pred, args.gt)
    errors = []
    for fr, field in zip(frames, preds):
        if not fr.has_normals:
            raise ValueError(f"frame {fr.frame_id} has no ground-truth normals")
        errors.append(angular_errors(field, fr.gt_normals))
    report = summarize(np.concatenate(errors), runtime_s=_read_runtime(Path(args.pred)))
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.kappa > 0:
        raise UsageError("--kappa must be positive")
    _positive("grid-res", args.grid_res)
    if args.pred:
        normals = [f.normals for f in lio.read_predictions(args.pred, args.inp)]
    else:
        frames = lio.read_sequence(args.inp)
        if not all(fr.has_normals for fr in frames):
            raise ValueError("frames carry no normals; pass --pred")
        normals = [fr.gt_normals for fr in frames]
    density = vmf_kde(np.vstack(normals), args.kappa, args.grid_res)
    density.to_csv(args.out)
    print(f"cells {len(density.density)} integral {density.integral():.6f} -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    _positive("k", args.k)
    frames = lio.read_sequence(args.inp)
    config = RefineConfig(max_iters=args.iters, convergence_tol=0.0)
    est_t, ref_t = [], []
    for fr in frames:
        t0 = time.perf_counter()
        field = _estimate(fr, args, args.threads)
        t1 = time.perf_counter()
        refine_normals([fr], [field], config, workers=args.threads)
        t2 = time.perf_counter()
        est_t.append(t1 - t0)
        ref_t.append(t2 - t1)
        print(f"frame {fr.frame_id}: {len(fr)} points estimate {t1 - t0:.3f} s "
              f"refine {t2 - t1:.3f} s")
    print(f"mean estimate {np.mean(est_t):.3f} s refine {np.mean(ref_t):.3f} s "
          f"total {np.mean(est_t) + np.mean(ref_t):.3f} s")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lidar-normals", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or all cores)")
        sp.set_defaults(func=fn)
        return sp

    g = add("generate", cmd_generate, "simulate a sequence of LiDAR frames")
    g.add_argument("--scene", required=True, help="scene YAML file")
    g.add_argument("--sensor", help="sensor YAML file (defaults if omitted)")
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--split", choices=SPLITS, default="train")
    g.add_argument("--noise-std", type=float, help="override noise_std_m")
    g.add_argument("--drop-ratio", type=float, help="override drop_ratio")

    e = add("estimate", cmd_estimate, "classical normal estimation")
    e.add_argument("--in", dest="inp", required=True, help="sequence manifest")
    e.add_argument("--method", choices=("pca", "jet"), default="pca")
    e.add_argument("--k", type=int, default=32)
    e.add_argument("--degree", type=int, default=2, help="jet degree")
    e.add_argument("--flip-fraction", type=float, default=0.0,
                   help="negate this fraction of normals (seeded)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)

    r = add("refine", cmd_refine, "refine normal fields on the regularised objective")
    r.add_argument("--in", dest="inp", required=True, help="sequence manifest")
    r.add_argument("--init", required=True, help="directory of initial fields")
    r.add_argument("--config", help="refine YAML config; flags override it")
    r.add_argument("--gamma", type=float)
    r.add_argument("--k", type=int)
    r.add_argument("--sigma", type=float)
    r.add_argument("--iters", type=int)
    r.add_argument("--step-size", type=float)
    r.add_argument("--out", required=True)

    v = add("eval", cmd_eval, "angular-error report")
    v.add_argument("--pred", required=True, help="directory of predicted fields")
    v.add_argument("--gt", required=True, help="ground-truth sequence manifest")
    v.add_argument("--out", help="report file")

    a = add("analyze", cmd_analyze, "spherical vMF density of normals as CSV")
    a.add_argument("--in", dest="inp", required=True, help="sequence manifest")
    a.add_argument("--pred", help="use predicted fields instead of ground truth")
    a.add_argument("--kappa", type=float, default=DEFAULT_KAPPA)
    a.add_argument("--grid-res", type=int, default=16384, help="number of sphere grid points")
    a.add_argument("--out", required=True)

    b = add("bench", cmd_bench, "time estimation and refinement per frame")
    b.add_argument("--in", dest="inp", required=True, help="sequence manifest")
    b.add_argument("--method", choices=("pca", "jet"), default="pca")
    b.add_argument("--k", type=int, default=32)
    b.add_argument("--degree", type=int, default=2)
    b.add_argument("--iters", type=int, default=100)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
