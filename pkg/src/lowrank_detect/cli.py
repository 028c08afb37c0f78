"""Command-line entry point.

Exit codes: 0 ok, 2 configuration / argument error, 3 I/O error,
4 numerical divergence.
"""

import argparse
import logging
import os
import sys
from dataclasses import fields, is_dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import io, linref
from .config import MODE_ALIASES, ConfigError, RunConfig, load_config
from .detector import detect, gate
from .errors import DivergenceError, InvalidArgument
from .metrics import evaluate, roc_auc
from .rpca import with_defaults
from .scene import render

log = logging.getLogger("lowrank_detect")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4


def _defaults_text(obj, prefix=""):
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(v):
            lines += _defaults_text(v, key + ".")
        else:
            lines.append(f"  {key} = {v!r}")
    return lines


def _epilog():
    body = "\n".join(_defaults_text(RunConfig()))
    return (
        "configuration keys and defaults (TOML tables follow the dotted names;\n"
        "scene.background selects [scene.gradient] or [scene.starfield]):\n" + body +
        "\n\nexit codes: 0 ok, 2 config/argument error, 3 I/O error, 4 solver divergence"
    )


def _fmt(x):
    return f"{x:.9g}"


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _settings(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    threads = args.threads if args.threads is not None else cfg.threads
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    det = replace(cfg.detect, threads=threads)
    if getattr(args, "mode", None):
        det = replace(det, mode=MODE_ALIASES[args.mode])
    if getattr(args, "tau", None) is not None:
        det = replace(det, tau=args.tau)
    det.validate()
    metrics = cfg.metrics
    if getattr(args, "match_radius", None) is not None:
        if args.match_radius < 0:
            raise ConfigError("--match-radius must be >= 0")
        metrics = replace(metrics, match_radius=args.match_radius)
    out = args.out if args.out is not None else cfg.out
    return replace(cfg, detect=det, metrics=metrics, out=out)


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_simulate(args):
    cfg = _settings(args)
    spec = replace(cfg.scene, seed=cfg.seed)
    video, gt = render(spec)
    out = _outdir(cfg.out)
    io.write_vseq(os.path.join(out, "video.vseq"), video, cfg.dtype)
    io.write_mask(os.path.join(out, "gt.vseq"), gt.masks)
    rows = ["frame,target,row,col,snr"]
    for t in range(video.shape[2]):
        for j, (cents, snrs) in enumerate(zip(gt.centroids, gt.snr)):
            c, s = cents[t], snrs[t]
            if c is not None:
                rows.append(f"{t},{j},{_fmt(c[0])},{_fmt(c[1])},{_fmt(s)}")
    _write_text(os.path.join(out, "gt.txt"), "\n".join(rows) + "\n")
    print(f"wrote {video.shape[0]}x{video.shape[1]}x{video.shape[2]} scene to {out}")
    return EXIT_OK


def cmd_detect(args):
    cfg = _settings(args)
    video = io.load_video(args.input)
    res = detect(video, cfg.detect)
    out = _outdir(cfg.out)
    io.write_mask(os.path.join(out, "mask.vseq"), res.mask)
    io.write_vseq(os.path.join(out, "confidence.vseq"), res.confidence, "f32")
    rows = ["frame,row,col,pixels"]
    for c in res.components:
        rows.append(f"{c.frame},{_fmt(c.centroid[0])},{_fmt(c.centroid[1])},{len(c.pixels)}")
    _write_text(os.path.join(out, "components.txt"), "\n".join(rows) + "\n")
    print(f"{len(res.components)} components in {video.shape[2]} frames; outputs in {out}")
    return EXIT_OK


def _binary(v):
    return np.asarray(v) >= 0.5


def cmd_eval(args):
    cfg = _settings(args)
    mask, gt = _binary(io.read_vseq(args.mask)), _binary(io.read_vseq(args.gt))
    conf = io.read_vseq(args.confidence) if args.confidence else None
    rep = evaluate(mask, gt, conf, cfg.metrics.match_radius, cfg.metrics.n_thresholds)
    text = rep.to_text()
    if args.out is not None:
        _write_text(os.path.join(_outdir(cfg.out), "metrics.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_roc(args):
    cfg = _settings(args)
    conf, gt = io.read_vseq(args.confidence), _binary(io.read_vseq(args.gt))
    samples, auc = roc_auc(conf, gt, cfg.metrics.n_thresholds, cfg.metrics.match_radius)
    rows = ["threshold,fa,pd"] + [f"{_fmt(t)},{_fmt(f)},{_fmt(p)}" for t, f, p in samples]
    csv = "\n".join(rows) + "\n"
    if args.out is not None:
        out = _outdir(cfg.out)
        _write_text(os.path.join(out, "roc.csv"), csv)
        _write_text(os.path.join(out, "auc.txt"), f"auc={auc:.6f}\n")
    sys.stdout.write(f"auc={auc:.6f}\n")
    return EXIT_OK


def cmd_net_check(args):
    cfg = _settings(args)
    net = cfg.net
    channels = args.channels if args.channels is not None else net.channels
    if channels < 1:
        raise ConfigError(f"channels must be >= 1, got {channels}")
    if args.weights:
        w = linref.load_weights(args.weights)
    else:
        w = linref.init_weights(cfg.seed, channels)
    rng = np.random.default_rng([cfg.seed, 1])
    t, h, wd = net.size
    lines = [f"channels={w.channels}", f"parameters={w.parameter_count()}"]
    shape = (1, w.in_channels, t, h, wd)
    lines.append(f"input_shape={shape}")
    lines.append(f"output_shape={linref.pipeline(np.zeros(shape), w).shape}")
    worst = 0.0
    for _ in range(net.pairs):
        x, y = rng.normal(size=shape), rng.normal(size=shape)
        a, b = rng.normal(size=2)
        worst = max(worst, linref.linearity_residual(lambda z: linref.pipeline(z, w), x, y, a, b))
    lines.append(f"linearity_residual={worst:.3e}")
    z = linref.pipeline(rng.normal(size=shape), w)
    counts = [int(np.count_nonzero(linref.gate(z, tau))) for tau in np.linspace(0.05, 0.95, 19)]
    monotone = all(a >= b for a, b in zip(counts, counts[1:]))
    lines.append(f"gate_counts={','.join(map(str, counts))}")
    lines.append(f"gate_monotone={'yes' if monotone else 'no'}")
    lines.append(f"linear={'yes' if worst <= 1e-5 else 'no'}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        out = _outdir(cfg.out)
        _write_text(os.path.join(out, "net_check.txt"), text)
        if args.save_weights:
            linref.save_weights(os.path.join(out, "weights.lnw"), w)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _settings(args)
    if args.video:
        video = io.load_video(args.video)
        if not args.gt:
            raise ConfigError("sweep needs --gt together with --video")
        gt = _binary(io.read_vseq(args.gt))
    else:
        video, gt_obj = render(replace(cfg.scene, seed=cfg.seed))
        gt = gt_obj.masks
    det = cfg.detect
    rows = ["lam,tau,pd,fa,auc,rt,fat,f1t,iou"]
    for lam in cfg.sweep.lams:
        d = replace(det, rpca3=with_defaults(det.rpca3, lam=lam), rpca4=with_defaults(det.rpca4, lam=lam))
        res = detect(video, d)
        for tau in cfg.sweep.taus:
            if not 0 < tau < 1:
                raise ConfigError(f"sweep tau must lie in (0, 1), got {tau}")
            mask = gate(res.confidence, tau)
            r = evaluate(mask, gt, res.confidence, cfg.metrics.match_radius, cfg.metrics.n_thresholds)
            lam_s = "default" if lam is None else _fmt(lam)
            rows.append(",".join([lam_s, _fmt(tau)] + [_fmt(x) for x in (r.pd, r.fa, r.auc, r.rt, r.fat, r.f1t, r.iou)]))
    csv = "\n".join(rows) + "\n"
    if args.out is not None:
        _write_text(os.path.join(_outdir(cfg.out), "sweep.csv"), csv)
    sys.stdout.write(csv)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (default: config 'out')")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    det = argparse.ArgumentParser(add_help=False)
    det.add_argument("--mode", choices=sorted(MODE_ALIASES), help="tensor construction (default: config)")
    det.add_argument("--tau", type=float, help="gate threshold in (0, 1)")

    met = argparse.ArgumentParser(add_help=False)
    met.add_argument("--match-radius", type=float, help="centroid match radius in pixels")

    p = argparse.ArgumentParser(
        prog="lowrank-detect",
        description="Small-target detection in image sequences by tensor robust PCA.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, **kw):
        return sub.add_parser(name, epilog=p.epilog, formatter_class=argparse.RawDescriptionHelpFormatter, **kw)

    s = command("simulate", parents=[common], help="render a synthetic scene with ground truth")
    s.set_defaults(func=cmd_simulate)

    s = command("detect", parents=[common, det], help="detect targets in a VSEQ file or PGM directory")
    s.add_argument("input")
    s.set_defaults(func=cmd_detect)

    s = command("eval", parents=[common, met], help="score a mask against ground truth")
    s.add_argument("mask")
    s.add_argument("gt")
    s.add_argument("--confidence", help="confidence VSEQ used for the AUC")
    s.set_defaults(func=cmd_eval)

    s = command("roc", parents=[common, met], help="ROC samples and AUC of a confidence map")
    s.add_argument("confidence")
    s.add_argument("gt")
    s.set_defaults(func=cmd_roc)

    s = command("net-check", parents=[common], help="shape, linearity and gate checks of the linear reference network")
    s.add_argument("--channels", type=int, help="feature channels (default: config net.channels)")
    s.add_argument("--weights", help="load an LNW1 weight file instead of seeded weights")
    s.add_argument("--save-weights", action="store_true", help="also write weights.lnw to --out")
    s.set_defaults(func=cmd_net_check)

    s = command("sweep", parents=[common, det, met], help="metrics over a grid of tau and lambda")
    s.add_argument("--video", help="input sequence (default: simulate from the config)")
    s.add_argument("--gt", help="ground-truth mask VSEQ for --video")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # BLAS stays single-threaded so results never depend on --threads.
        with threadpool_limits(limits=1):
            return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidArgument) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
