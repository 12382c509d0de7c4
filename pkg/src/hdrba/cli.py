"""Command line: ``hdrba {synth,train,infer,eval,gradcheck}``.

Exit codes: 0 ok, 1 usage or bad config, 2 I/O or file format, 3 numerical
failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import platform
import shlex
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .dataset import SceneError, load_scene, quantize_scene, sample_seed, save_scene, synth_dynamic_scene
from .imageio import ImageFormatError, read_pfm, write_pfm, write_preview
from .metrics import evaluate
from .networks import HDRNet
from .radiometry import GAMMA, MU
from .trainer import ConfigError, NonFiniteError, TrainConfig, infer, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hdrba")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_manifest(out_dir: Path, argv: Sequence[str], seed: int | None, config: str, started: float) -> None:
    """Record what produced the files in ``out_dir``."""
    lines = [
        f"command = {shlex.join(['hdrba', *argv])}",
        f"version = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"seed = {seed if seed is not None else ''}",
        f"finished = {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
        f"wall_clock_s = {time.perf_counter() - started:.3f}",
        "",
        "[config]",
        config.rstrip("\n"),
    ]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _scene_dirs(root: Path) -> list[Path]:
    if (root / "exposures.txt").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "exposures.txt").is_file())
    if not dirs:
        raise SceneError(f"{root}: no scene directories found")
    return dirs


def cmd_synth(args, argv, started) -> int:
    if args.scenes < 1 or args.size < 1 or args.motion < 0:
        raise UsageError("--scenes and --size must be positive and --motion non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.scenes):
        scene = synth_dynamic_scene(sample_seed(args.seed, i), args.size, motion_px=args.motion)
        save_scene(quantize_scene(scene), out / f"scene_{i:03d}")
    config = f"scenes = {args.scenes}\nsize = {args.size}\nmotion = {args.motion}\n"
    write_manifest(out, argv, args.seed, config, started)
    print(f"wrote {args.scenes} scene(s) to {out}")
    return EXIT_OK


def cmd_train(args, argv, started) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.iterations is not None:
        config.iterations = args.iterations
    scenes = [load_scene(d, args.exposure_mode) for d in _scene_dirs(Path(args.data))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(it, row):
        if it % max(1, config.iterations // 20) == 0:
            print(f"iter {it:6d}  loss {row['loss_total']:.6f}", flush=True)

    try:
        train(config, scenes, out, callback=progress)
    finally:
        write_manifest(out, argv, config.seed, config.to_text(), started)
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_infer(args, argv, started) -> int:
    net = HDRNet.load(args.ckpt)
    scene = load_scene(args.scene, args.exposure_mode)
    result = infer(net, scene, args.gamma)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(result["hdr"].astype(np.float32), out / "hdr.pfm")
    write_pfm(result["coarse"].astype(np.float32), out / "coarse.pfm")
    write_pfm(result["mask"].astype(np.float32), out / "mask.pfm")
    write_preview(result["hdr"], out / "preview.ppm", args.mu)
    config = "\n".join(f"{k} = {v}" for k, v in net.cfg.to_meta().items())
    write_manifest(out, argv, net.cfg.seed, config, started)
    print(f"wrote hdr.pfm, coarse.pfm, mask.pfm, preview.ppm to {out}")
    return EXIT_OK


def _format_metric(v: float) -> str:
    return repr(round(v, 6)) if np.isfinite(v) else "inf"


def cmd_eval(args, argv, started) -> int:
    pred, gt = read_pfm(args.pred), read_pfm(args.gt)
    if pred.shape != gt.shape:
        raise UsageError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    m = evaluate(pred, gt, args.mu)
    print(" ".join(_format_metric(m[k]) for k in ("PSNR_T", "SSIM_T", "PSNR_L", "SSIM_L")))
    return EXIT_OK


def cmd_gradcheck(args, argv, started) -> int:
    from .gradcheck import CASES, run_case

    names = [args.op] if args.op else list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown op {unknown[0]!r}; choose from {', '.join(CASES)}")
    failed = 0
    print(f"{'op':36s} {'status':6s} {'max_rel_err':>12s} {'checked':>8s}")
    for name in names:
        reports = run_case(name, instances=args.instances, seed=args.seed)
        ok = all(r.passed for r in reports)
        failed += not ok
        err = max(r.max_rel_error for r in reports)
        print(f"{name:36s} {'PASS' if ok else 'FAIL':6s} {err:12.3e} {sum(r.checked for r in reports):8d}", flush=True)
    print(f"{len(names) - failed}/{len(names)} passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdrba", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write synthetic training scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, default=4)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--motion", type=int, default=4, help="sprite displacement in pixels")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train from scene directories")
    t.add_argument("--data", required=True, help="a scene directory or a directory of them")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--iterations", type=int, help="overrides the config iteration count")
    t.add_argument("--exposure-mode", choices=("time", "bias"), default="time")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="fuse one scene with a trained checkpoint")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--scene", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--exposure-mode", choices=("time", "bias"), default="time")
    i.add_argument("--gamma", type=float, default=GAMMA)
    i.add_argument("--mu", type=float, default=MU)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="print PSNR_T SSIM_T PSNR_L SSIM_L")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mu", type=float, default=MU)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--op", help="check a single op")
    g.add_argument("--instances", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    started = time.perf_counter()
    try:
        return args.func(args, argv, started)
    except (UsageError, ConfigError) as exc:
        print(f"hdrba {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        where = f" (last checkpoint: {exc.checkpoint})" if exc.checkpoint else ""
        print(f"hdrba {args.command}: {exc}{where}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ImageFormatError, SceneError, CheckpointError) as exc:
        print(f"hdrba {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
