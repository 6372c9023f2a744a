"""``dkprompt`` command line.

Exit status: 0 when every check passes, 1 on a tolerance or check failure,
2 on usage errors (bad flags, unreadable config or inputs).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .boxes import BBox
from .dk_analysis import GRADCHECK_TAUS, gradcheck_suite
from .io import (
    AnnotationError,
    ConfigError,
    ImageFormatError,
    load_image,
    load_run_config,
    parse_annotation_file,
    write_annotation_file,
)
from .kgp import NORM_MODES, channel_descriptor, prompt_from_sim
from .metrics import center_errors, run_benchmark
from .pipeline import Tracker
from .report import emit_report, write_csv
from .synthetic import moving_square

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GRAD_TOL = 1e-6

log = logging.getLogger("dkprompt")


class UsageError(Exception):
    pass


def _f6(v):
    return f"{v:.6f}"


def _int(v):
    return str(int(v))


def _out_dir(args, run):
    out = args.out or run.out
    if out is None:
        raise UsageError("an output directory is required (--out or 'out' in the config)")
    return Path(out)


# -- subcommands ------------------------------------------------------

def cmd_demo(args, run):
    cfg = run.model
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    n = args.frames or run.frames
    out = _out_dir(args, run)
    frames, gt = moving_square(n, seed=cfg.seed)
    tracker = Tracker(cfg)
    state = tracker.init(frames[0], gt[0])
    boxes, finite = [gt[0]], True
    for frame in frames[1:]:
        state, step = tracker.track(state, frame)
        boxes.append(step.box)
        finite &= all(np.isfinite(m).all() for m in step.score_maps.values())
    cle, _ = center_errors(boxes, gt)
    h, w = frames[0].shape[1:]
    inside = all(b.inside(w, h) and b.w >= 2 and b.h >= 2 for b in boxes)

    out.mkdir(parents=True, exist_ok=True)
    rows = [(i + 1, *b.as_tuple(), *g.as_tuple(), e) for i, (b, g, e) in enumerate(zip(boxes, gt, cle))]
    write_csv(out / "demo.csv",
              ("frame", "x", "y", "w", "h", "gt_x", "gt_y", "gt_w", "gt_h", "cle"),
              rows, (_int,) + (_f6,) * 9)
    write_annotation_file(out / "gt.txt", gt)
    write_annotation_file(out / "pred.txt", boxes)
    print(f"demo: {n} frames  mean CLE {cle[1:].mean():.3f} px  max CLE {cle[1:].max():.3f} px")
    print(f"boxes in bounds: {'yes' if inside else 'NO'}  finite score maps: {'yes' if finite else 'NO'}")
    print(f"wrote {out / 'demo.csv'}")
    return EXIT_OK if inside and finite else EXIT_FAIL


def cmd_eval(args, run):
    gt = args.gt or run.gt
    pred = args.pred or run.pred
    if gt is None or pred is None:
        raise UsageError("eval needs --gt and --pred (or 'gt'/'pred' in the config)")
    if not Path(gt).is_dir():
        raise UsageError(f"ground-truth directory {gt} does not exist")
    out = _out_dir(args, run)
    report = run_benchmark(gt, pred)
    emit_report(report, out, figures=not args.no_figures)
    print(f"{'sequence':<24}{'frames':>8}{'AUC':>9}{'Prec':>9}{'NPrec':>9}")
    rows = list(report.summaries) + ([report.aggregate] if report.aggregate else [])
    for s in rows:
        print(f"{s.name:<24}{s.frames:>8d}{100 * s.auc:>9.2f}{100 * s.prec20:>9.2f}{100 * s.nprec02:>9.2f}")
    for m in report.missing:
        print(f"missing pair: {m}")
    for e in report.errors:
        print(f"skipped: {e}")
    if not report.complete:
        print("partial run" if report.sequences else "no sequences evaluated")
        return EXIT_FAIL
    return EXIT_OK


def cmd_gradcheck(args, run):
    taus = GRADCHECK_TAUS if args.tau is None else (args.tau,)
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    if any(t <= 0 for t in taus):
        raise UsageError("--tau must be positive")
    rows = gradcheck_suite(args.trials, taus, seed=run.model.seed)
    if args.verbose:
        print(f"{'#':>5}{'d':>5}{'K':>4}{'tau':>8}{'rel.err':>12}")
        for r in rows:
            print(f"{r.index:>5d}{r.d:>5d}{r.k:>4d}{r.tau:>8.3f}{r.error:>12.3e}")
    worst = max(rows, key=lambda r: r.error)
    ok = worst.error < GRAD_TOL
    print(f"trials {len(rows)}  max relative gradient error {worst.error:.3e} "
          f"(d={worst.d}, K={worst.k}, tau={worst.tau:g})  tolerance {GRAD_TOL:.0e}  "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _probe_descriptor(cfg, frame, box):
    """Template kernel and the search-stream descriptor at the first injection point."""
    tracker = Tracker(cfg)
    state = tracker.init(frame, box)
    tokens = tracker.embed_one(tracker.search_crop(frame, box))
    first = cfg.injection_points[0] if cfg.injection_points else cfg.backbone_blocks - 1
    for block in tracker.blocks[:first + 1]:
        tokens = block(tokens)
    refined = tracker.encoder.refine(tokens) if cfg.use_dke else tokens
    dk = state.dk if state.dk is not None else tracker.encoder.kernel(state.template_tokens)
    return state, dk, channel_descriptor(dk, refined)


def cmd_ablate_norm(args, run):
    cfg = run.model.replace(seed=args.seed) if args.seed is not None else run.model
    out = _out_dir(args, run)
    frames, gt = moving_square(2, seed=cfg.seed)
    _, _, sim = _probe_descriptor(cfg, frames[0], gt[0])
    top = int(np.argmax(sim))
    rows, agree = [], True
    for mode in NORM_MODES:
        p = prompt_from_sim(sim, mode, cfg.norm_eps)
        peak = p.values.max()
        # Saturating modes can tie several channels at the peak in float64;
        # agreement means the top-Sim channel attains the peak.
        agree &= bool(p.values[top] == peak)
        rows.append((mode, int(np.argmax(p.values)), int((p.values == peak).sum()),
                     p.entropy(), float(p.values.sum())))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ablate_norm.csv", ("mode", "argmax", "ties", "entropy", "checksum"), rows,
              (str, _int, _int, lambda v: f"{v:.9f}", lambda v: f"{v:.9f}"))
    print(f"{'mode':<10}{'argmax':>8}{'ties':>6}{'entropy':>12}{'checksum':>14}")
    for mode, am, ties, ent, chk in rows:
        print(f"{mode:<10}{am:>8d}{ties:>6d}{ent:>12.6f}{chk:>14.6f}")
    same = agree
    print(f"top-Sim channel {top} attains the peak in every mode: {'PASS' if same else 'FAIL'}")
    return EXIT_OK if same else EXIT_FAIL


def _parse_box(text):
    try:
        x, y, w, h = (float(v) for v in text.split(","))
        return BBox(x, y, w, h)
    except ValueError as exc:
        raise UsageError(f"--box must be x,y,w,h with positive size: {exc}") from None


def cmd_inspect(args, run):
    cfg = run.model
    frame_path = args.frame or run.frame
    if frame_path is None:
        raise UsageError("inspect needs --frame (or 'frame' in the config)")
    out = _out_dir(args, run)
    frame = load_image(frame_path)
    _, h, w = frame.shape
    if args.box:
        box = _parse_box(args.box)
    elif run.gt and Path(run.gt).is_file():
        box = parse_annotation_file(run.gt)[0]
    else:
        side = max(2.0, min(h, w) / 4.0)
        box = BBox((w - side) / 2.0, (h - side) / 2.0, side, side)
    if not box.inside(w, h):
        raise UsageError(f"box {box.as_tuple()} is outside the {w}x{h} frame")
    _, dk, sim = _probe_descriptor(cfg, frame, box)
    prompt = prompt_from_sim(sim, cfg.norm_mode, cfg.norm_eps)
    mask = dk.mask
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "dk_channels.csv", ("channel", "mean", "kept"),
              [(c, m, b) for c, (m, b) in enumerate(zip(mask.means, mask.bits))],
              (_int, lambda v: f"{v:.9f}", _int))
    write_csv(out / "prompt.csv", ("channel", "sim", "prompt"),
              [(c, s, p) for c, (s, p) in enumerate(zip(sim, prompt.values))],
              (_int, lambda v: f"{v:.9e}", lambda v: f"{v:.9f}"))
    finite = bool(np.isfinite(dk.values).all() and np.isfinite(prompt.values).all())
    print(f"frame {w}x{h}  box {','.join(f'{v:g}' for v in box.as_tuple())}")
    print(f"DK channels kept {mask.kept}/{mask.bits.size}  mu {mask.mu:.6f}  sigma {mask.sigma:.6f}")
    print(f"prompt mode {cfg.norm_mode}  argmax {int(np.argmax(prompt.values))}  "
          f"entropy {prompt.entropy():.6f}")
    return EXIT_OK if finite and mask.kept >= 1 else EXIT_FAIL


# -- parser -----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value run configuration")
    common.add_argument("-v", "--verbose", action="store_true", help="more output")

    parser = argparse.ArgumentParser(prog="dkprompt", description="Directional-kernel prompt tracker tools.",
                                     epilog="exit status: 0 pass, 1 check failed, 2 usage error")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("demo", parents=[common], help="track a synthetic moving square")
    p.add_argument("--out", metavar="DIR", default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_demo, default_out="demo_out")

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--gt", metavar="DIR")
    p.add_argument("--pred", metavar="DIR")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--no-figures", action="store_true", help="skip SVG/PNG curves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs numerical score gradient")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate-norm", parents=[common], help="compare prompt normalisations")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_ablate_norm)

    p = sub.add_parser("inspect", parents=[common], help="dump kernel statistics and prompt for a frame")
    p.add_argument("--frame", metavar="PATH")
    p.add_argument("--box", metavar="X,Y,W,H")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_inspect)
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = load_run_config(args.config)
        if getattr(args, "out", None) is None and run.out is None and hasattr(args, "default_out"):
            run = dataclasses.replace(run, out=args.default_out)
        return args.func(args, run)
    except (UsageError, ConfigError, AnnotationError, ImageFormatError, FileNotFoundError) as exc:
        print(f"dkprompt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
