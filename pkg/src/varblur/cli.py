"""Command-line entry point: ``varblur <command> [flags]``.

Commands: gen-kernels, synth, blur, deblur, metrics, detect, report.

Any flag can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment, keys are flag names without the leading dashes,
booleans are true/false).  Flags given on the command line win.

Exit codes: 0 ok, 1 usage error, 2 I/O or file-format error, 3 invariant
violation.  The seed falls back to ``$VARBLUR_SEED`` and then to 0.
"""

from __future__ import annotations

import argparse
import csv
import html
import io as _io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as vio
from .admm import AdmmSchedule, deconvolve
from .blur import BlurOperator, SaturationParams, degrade
from .blurmap import average_precision_details, blur_map, blur_scores
from .core import Image, KernelBasis, MixingField
from .errors import DimensionError, FormatError, InvariantError
from .metrics import REPORT_COLUMNS, MetricReport, evaluate
from .prox import PRIORS, make_prior
from .sbdd import VBS_MAGIC, read_sample, synthesize, write_sample
from .shake import ShakeParams, derive_seed, generate_shake_kernel

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3
SEED_ENV = "VARBLUR_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def resolve_seed(seed):
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _map(fn, items, jobs):
    """Ordered map, in-process for ``jobs <= 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def load_kernels(path, height=None, width=None):
    """``(basis, field)`` from a VBK1 or VBS1 file.

    A single kernel without a stored field becomes a uniform blur over
    ``height x width``.
    """
    with open(path, "rb") as f:
        head = f.read(4)
    if head == VBS_MAGIC:
        s = read_sample(path)
        basis, field = s.basis, s.field
    else:
        basis, field = vio.read_vbk1(path)
    if field is None:
        if basis.B != 1:
            raise UsageError(f"{path}: {basis.B} kernels but no mixing field")
        if height is None:
            raise UsageError(f"{path}: no mixing field and no image size to build one")
        field = MixingField.uniform(1, height, width)
    return basis, field


def _write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _json_safe(rec):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rec.items()}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _kernel_job(args):
    K, amp, seed = args
    return generate_shake_kernel(ShakeParams(K=K, amplitude_scale=amp, seed=seed))


def cmd_gen_kernels(a):
    if a.count < 1:
        raise UsageError("--count must be >= 1")
    seed = resolve_seed(a.seed)
    jobs = [(a.k, a.amplitude, derive_seed(seed, i)) for i in range(a.count)]
    kernels = np.stack(_map(_kernel_job, jobs, a.jobs))
    vio.write_vbk1(a.out, KernelBasis(kernels))
    print(f"wrote {a.count} kernels of size {a.k} to {a.out}")


def _synth_job(args):
    i, sharp_path, label_path, out_dir, K, seed, streaks = args
    sharp = vio.read_png(sharp_path)
    labels = vio.read_label_png(label_path) if label_path is not None else None
    s = synthesize(sharp, labels, K=K, seed=seed, light_streaks=streaks)
    stem = Path(out_dir) / f"{i:05d}"
    write_sample(f"{stem}.vbs1", s)
    vio.write_vbk1(f"{stem}.vbk1", s.basis, s.field)
    vio.write_png(f"{stem}_sharp.png", s.sharp)
    vio.write_png(f"{stem}_blurry.png", s.blurry)
    return str(stem)


def cmd_synth(a):
    sharp_dir = Path(a.sharp_dir)
    files = sorted(p for p in sharp_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG images in {sharp_dir}")
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = resolve_seed(a.seed)
    jobs = []
    for i in range(a.count):
        src = files[i % len(files)]
        lab = None
        if a.labels_dir is not None:
            cand = Path(a.labels_dir) / src.name
            lab = cand if cand.exists() else None
        jobs.append((i, str(src), None if lab is None else str(lab), str(out), a.k,
                     derive_seed(seed, i), a.light_streaks))
    _map(_synth_job, jobs, a.jobs)
    print(f"wrote {a.count} samples to {out}")


def _params(a):
    return SaturationParams(a=a.a, gamma=a.gamma)


def cmd_blur(a):
    u = vio.read_png(a.input)
    basis, field = load_kernels(a.kernels, u.height, u.width)
    op = BlurOperator(basis, field, a.downsample)
    if (u.height, u.width) != op.input_shape:
        raise DimensionError(f"image {u.height}x{u.width} vs mixing field {op.input_shape}")
    if a.sigma < 0:
        raise UsageError("--sigma must be >= 0")
    v = degrade(op, u, _params(a), a.sigma, resolve_seed(a.seed))
    vio.write_png(a.out, v, a.bitdepth)


def cmd_deblur(a):
    y = vio.read_png(a.input)
    ds = a.downsample
    basis, field = load_kernels(a.kernels, y.height * ds, y.width * ds)
    op = BlurOperator(basis, field, ds)
    if (y.height, y.width) != op.output_shape:
        raise DimensionError(f"image {y.height}x{y.width} vs operator output {op.output_shape}")
    p = _params(a)
    if a.iters < 1 or a.sigma <= 0:
        raise UsageError("--iters must be >= 1 and --sigma > 0")
    sched = AdmmSchedule.geometric(a.sigma, n_iter=a.iters, beta_start=a.beta_start,
                                   beta_end=a.beta_end, gamma=a.step)
    lin = np.power(np.clip(y.data, 0.0, None), p.gamma)
    res = deconvolve(lin, op, sched, make_prior(a.prior), saturated=a.saturated, params=p)
    x = np.power(res.x, 1.0 / p.gamma)
    vio.write_png(a.out, Image(x, "gamma"), a.bitdepth)
    if a.diag:
        rows = [[0, repr(res.residuals[0]), ""]]
        rows += [[k + 1, repr(r), repr(b)] for k, (r, b) in enumerate(zip(res.residuals[1:], res.strengths))]
        _write_csv(a.diag, ["iteration", "residual", "prior_strength"], rows)


def cmd_metrics(a):
    if (a.restored is None) == (a.no_ref is None):
        raise UsageError("give exactly one of --restored (with --gt) or --no-ref")
    if a.restored is not None and a.gt is None:
        raise UsageError("--restored needs --gt")
    path = a.restored if a.restored is not None else a.no_ref
    img = vio.read_png(path)
    gt = vio.read_png(a.gt) if a.gt is not None else None
    if a.si_realizations < 2:
        raise UsageError("--si-realizations must be >= 2")
    rep = evaluate(img, gt, max_shift=a.shift, realizations=a.si_realizations,
                   seed=resolve_seed(a.seed), name=Path(path).name)
    rec = rep.to_record()
    line = ",".join(_fmt(rec[k]) for k in REPORT_COLUMNS)
    print(line)
    if a.csv:
        _write_csv(a.csv, REPORT_COLUMNS, [[_fmt(rec[k]) for k in REPORT_COLUMNS]])
    if a.json:
        Path(a.json).write_text(json.dumps(_json_safe(rec), indent=2) + "\n")


def cmd_detect(a):
    basis, field = load_kernels(a.kernels)
    sharp = blur_map(basis, field)
    vio.write_png(a.out, sharp[None], 16)
    if a.gt is not None:
        mask = vio.read_label_png(a.gt) != 0
        if mask.shape != sharp.shape:
            raise DimensionError(f"mask {mask.shape} vs map {sharp.shape}")
        r = average_precision_details(blur_scores(sharp), mask)
        print(f"average_precision,{_fmt(r.value)}")
        if not r.defined:
            print("warning: mask has no blurred pixels, AP undefined", file=sys.stderr)


def cmd_report(a):
    d = Path(a.dir)
    files = sorted(d.glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no metric JSON files in {d}")
    reports = []
    for f in files:
        try:
            rec = json.loads(f.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{f}: {e}") from None
        if not isinstance(rec, dict):
            raise FormatError(f"{f}: expected a JSON object")
        r = MetricReport.from_record(rec)
        if not r.name:
            r.name = f.stem
        reports.append(r.to_record())
    rows = [[_fmt(r[k]) for k in REPORT_COLUMNS] for r in reports]
    out = a.out if a.out else d / "report.csv"
    _write_csv(out, REPORT_COLUMNS, rows)
    if a.html:
        head = "".join(f"<th>{html.escape(c)}</th>" for c in REPORT_COLUMNS)
        body = "".join("<tr>" + "".join(f"<td>{html.escape(v)}</td>" for v in row) + "</tr>\n"
                       for row in rows)
        Path(a.html).write_text("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
                                "<title>varblur report</title></head><body>\n"
                                f"<table>\n<tr>{head}</tr>\n{body}</table>\n</body></html>\n")
    print(f"wrote {len(rows)} rows to {out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, jobs=False):
    p.add_argument("--config", help="key = value file preloading flags")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker processes; output does not depend on it")


def _add_camera(p):
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--a", type=float, default=50.0, help="saturation knee sharpness")
    p.add_argument("--downsample", type=int, default=1)
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=8)


def build_parser():
    parser = _Parser(prog="varblur", description="Spatially varying blur toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-kernels", help="generate camera-shake kernels")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--k", type=int, default=33)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_gen_kernels)

    p = sub.add_parser("synth", help="build segmentation-based blurry/sharp pairs")
    p.add_argument("--sharp-dir", required=True)
    p.add_argument("--labels-dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--k", type=int, default=33)
    p.add_argument("--light-streaks", action="store_true")
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("blur", help="apply the camera model with a kernel field")
    p.add_argument("--input", required=True)
    p.add_argument("--kernels", required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="noise std")
    p.add_argument("--out", required=True)
    _add_camera(p)
    _add_common(p)
    p.set_defaults(func=cmd_blur)

    p = sub.add_parser("deblur", help="non-blind deconvolution")
    p.add_argument("--input", required=True)
    p.add_argument("--kernels", required=True)
    p.add_argument("--iters", type=int, default=8)
    p.add_argument("--prior", choices=sorted(PRIORS), default="tv")
    p.add_argument("--saturated", action="store_true")
    p.add_argument("--sigma", type=float, default=0.01, help="assumed noise std")
    p.add_argument("--beta-start", type=float, default=0.08)
    p.add_argument("--beta-end", type=float, default=0.01)
    p.add_argument("--step", type=float, default=1.0, help="gradient step gamma")
    p.add_argument("--out", required=True)
    p.add_argument("--diag", help="per-iteration diagnostics CSV")
    _add_camera(p)
    _add_common(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("metrics", help="sharpness and distortion metrics")
    p.add_argument("--restored")
    p.add_argument("--gt")
    p.add_argument("--no-ref")
    p.add_argument("--shift", type=int, default=10)
    p.add_argument("--si-realizations", type=int, default=32)
    p.add_argument("--json")
    p.add_argument("--csv")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("detect", help="blur map from a kernel field")
    p.add_argument("--kernels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="binary mask PNG, non-zero = blurred")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="collect metric JSON files into CSV/HTML")
    p.add_argument("--dir", required=True)
    p.add_argument("--out")
    p.add_argument("--html")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config(path):
    """Parse ``key = value`` lines into a dict keyed by flag name."""
    out = {}
    with open(path) as f:
        for n, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key.lstrip("-").replace("-", "_")] = (n, value)
    return out


def _apply_config(sub, cfg, path):
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for key, (n, value) in cfg.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"{path}:{n}: unknown key {key!r} for {sub.prog}")
        if isinstance(act, argparse._StoreTrueAction):
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise UsageError(f"{path}:{n}: {key} expects true/false")
            defaults[key] = low in _TRUE
        else:
            try:
                defaults[key] = act.type(value) if act.type else value
            except ValueError:
                raise UsageError(f"{path}:{n}: bad value {value!r} for {key}") from None
            if act.choices is not None and defaults[key] not in act.choices:
                raise UsageError(f"{path}:{n}: {key} must be one of {list(act.choices)}")
        act.required = False
    sub.set_defaults(**defaults)


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        subs = parser._subparsers._group_actions[0].choices
        command = next((t for t in argv if t in subs), None)
        if command is None:
            raise UsageError("--config given without a command")
        _apply_config(subs[command], read_config(known.config), known.config)
    return parser.parse_args(argv)


def main(argv=None):
    try:
        args = parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args)
        return EXIT_OK
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except UsageError as e:
        _report("usage", e)
        return EXIT_USAGE
    except (OSError, FormatError) as e:
        _report("io", e)
        return EXIT_IO
    except (InvariantError, DimensionError) as e:
        _report("invariant", e)
        return EXIT_INVARIANT
    except ValueError as e:
        _report("usage", e)
        return EXIT_USAGE


def _report(kind, err):
    print(f"varblur: {kind} error: {err}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
