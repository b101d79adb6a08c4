"""Command line interface: ``posbias {detect,simulate,rank,paths,equivalence}``.

Exit codes: 0 success, 1 input/flag error, 2 dimension requirement
``|E| >= 2|U| + |V|`` violated, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings

import numpy as np

from ._io import atomic_write_text, fmt
from .data import build_operators, read_dataset
from .detection import DetectionConfig, detect
from .errors import DatasetError, DimensionError, NumericalError
from .knockoff import construct_knockoffs, equivalence_check, extended_operators, run_path
from .paths import PathConfig
from .simulation import SimulationConfig, run_grid

EXIT_OK, EXIT_INPUT, EXIT_DIMENSION, EXIT_NUMERICAL = 0, 1, 2, 3

TABLE_P1 = "0.1,0.2,0.3,0.4"
TABLE_P2 = "0.4,0.5,0.6,0.7"


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# flag name -> converter, per command; also the keys accepted in --config files
_PATH_KEYS = {"kappa": float, "dt": float, "t_max": float, "record_stride": int}
_DETECT_KEYS = {"q": float, "plus": _bool, "engine": str, "s_mode": str, "normalize": _bool,
                "seed": int, **_PATH_KEYS}
_KEYS = {
    "detect": _DETECT_KEYS,
    "rank": _DETECT_KEYS,
    "simulate": {"p1": str, "p2": str, "reps": int, "q": float, "plus": _bool, "engine": str,
                 "s_mode": str, "normalize": _bool, "seed": int, "n_items": int, "n_good": int,
                 "n_biased": int, "bias_side": str, "jobs": int, **_PATH_KEYS},
    "paths": {"engine": str, "knockoffs": _bool, "seed": int, "s_mode": str, "normalize": _bool,
              **_PATH_KEYS},
    "equivalence": {"engine": str, "s_mode": str, "normalize": _bool, "seed": int, "tol": float},
}
_DEFAULTS = {
    "q": 0.1, "plus": False, "engine": None, "s_mode": "equicorrelated", "normalize": True,
    "seed": 0, "kappa": 256.0, "dt": None, "t_max": None, "record_stride": 1000,
    "p1": TABLE_P1, "p2": TABLE_P2, "reps": 100, "n_items": 16, "n_good": 100, "n_biased": 50,
    "bias_side": "left", "jobs": 1, "knockoffs": False, "tol": 1e-6,
}


def read_config_file(path, command):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    allowed = _KEYS[command]
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in allowed:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r} for {command}")
            out[key] = allowed[key](value)
    return out


def _settings(args):
    """Merge defaults, config file and explicit flags (flags win)."""
    keys = _KEYS[args.command]
    merged = {k: _DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config, args.command))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def _path_config(s):
    return PathConfig(kappa=s["kappa"], dt=s["dt"], t_max=s["t_max"], record_stride=s["record_stride"])


def _detection_config(s):
    try:
        return DetectionConfig(q=s["q"], plus=s["plus"], engine=s["engine"], s_mode=s["s_mode"],
                               normalize=s["normalize"], path=_path_config(s), seed=s["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(text, output):
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_text(output, text)


def cmd_detect(args):
    s = _settings(args)
    cfg = _detection_config(s)
    ds = read_dataset(args.input)
    report = detect(ds, cfg)
    _emit(report.to_text(), args.output)
    print(report.summary(), file=sys.stderr if args.output in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_rank(args):
    s = _settings(args)
    cfg = _detection_config(s)
    ds = read_dataset(args.input)
    report = detect(ds, cfg)
    _emit(report.items_csv(), args.output)
    return EXIT_OK


def cmd_simulate(args):
    s = _settings(args)
    p1, p2 = _floats(s["p1"]), _floats(s["p2"])
    if not p1 or not p2:
        raise UsageError("p1 and p2 need at least one value each")
    for v in p1 + p2:
        if not 0.0 <= v <= 1.0:
            raise UsageError(f"probabilities must lie in [0, 1], got {v}")
    try:
        base = SimulationConfig(
            n_items=s["n_items"], n_good=s["n_good"], n_biased=s["n_biased"], q=s["q"],
            plus=s["plus"], reps=s["reps"], engine=s["engine"] or "iss_exact",
            s_mode=s["s_mode"], normalize=s["normalize"], path=_path_config(s),
            bias_side=s["bias_side"], seed=s["seed"], p1=p1[0], p2=p2[0],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    grid = run_grid(p1, p2, base, n_jobs=s["jobs"])
    _emit(grid.to_csv(), args.output)
    return EXIT_OK


def cmd_paths(args):
    s = _settings(args)
    ds = read_dataset(args.input)
    ops = build_operators(ds)
    names = list(ds.annotators)
    if s["knockoffs"]:
        kf = construct_knockoffs(ops, s["s_mode"], normalize=s["normalize"],
                                 rng=np.random.default_rng(s["seed"]))
        ops = extended_operators(ops, kf)
        names = names + [f"~{n}" for n in names]
    path = run_path(ops, ds.response, engine=s["engine"] or "iss_exact", config=_path_config(s))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("param", "coord", "value"))
    for param, gamma in zip(path.params, path.gammas):
        for name, value in zip(names, gamma):
            w.writerow((fmt(param), name, fmt(value)))
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_equivalence(args):
    s = _settings(args)
    ds = read_dataset(args.input)
    ops = build_operators(ds)
    engine = s["engine"] or "iss_exact"
    if engine not in ("iss_exact", "lasso"):
        raise UsageError("equivalence supports engines iss_exact and lasso")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = equivalence_check(ops, ds.response, s["s_mode"], engine, normalize=s["normalize"],
                                rng=np.random.default_rng(s["seed"]), tol=s["tol"])
    for wmsg in caught:
        print(f"warning: {wmsg.message}", file=sys.stderr)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


def build_parser():
    parser = argparse.ArgumentParser(
        prog="posbias",
        description="Detect position-biased annotators in pairwise comparison data "
                    "with knockoff false discovery rate control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_input=True):
        if need_input:
            p.add_argument("--input", "-i", required=True,
                           help="CSV with header annotator,left,right,response")
        p.add_argument("--output", "-o", default=None, help="output file (default: stdout)")
        p.add_argument("--config", default=None, help="flat 'key = value' file; flags override it")

    def path_flags(p):
        p.add_argument("--kappa", type=float, help="LBI damping kappa (default 256)")
        p.add_argument("--dt", type=float, help="LBI step (default 1/(2 kappa ||K||))")
        p.add_argument("--t-max", dest="t_max", type=float, help="end time of ISS/LBI paths")
        p.add_argument("--record-stride", dest="record_stride", type=int,
                       help="LBI knot recording stride (default 1000)")

    def ko_flags(p):
        p.add_argument("--s-mode", dest="s_mode", choices=("equicorrelated", "sdp"),
                       help="knockoff gap vector (default equicorrelated)")
        p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False,
                       help="choose s on raw instead of unit-norm residual columns")
        p.add_argument("--seed", type=int, help="random seed (default 0)")

    def detect_flags(p):
        p.add_argument("--q", type=float, help="target FDR (default 0.1)")
        p.add_argument("--plus", action="store_const", const=True, help="use the knockoff+ threshold")
        p.add_argument("--engine", choices=("lbi", "iss_exact", "iss", "lasso"),
                       help="path engine (default iss_exact up to 500 annotators, else lbi)")
        ko_flags(p)
        path_flags(p)

    p = sub.add_parser("detect", help="select biased annotators and write a report")
    common(p)
    detect_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("rank", help="original vs corrected item scores and ranks")
    common(p)
    detect_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("simulate", help="Monte-Carlo FDR / power grid")
    common(p, need_input=False)
    p.add_argument("--p1", help=f"good-annotator error rates (default {TABLE_P1})")
    p.add_argument("--p2", help=f"bias activation rates (default {TABLE_P2})")
    p.add_argument("--reps", type=int, help="trials per cell (default 100)")
    p.add_argument("--n-items", dest="n_items", type=int, help="items (default 16)")
    p.add_argument("--n-good", dest="n_good", type=int, help="good annotators (default 100)")
    p.add_argument("--n-biased", dest="n_biased", type=int, help="biased annotators (default 50)")
    p.add_argument("--bias-side", dest="bias_side", choices=("left", "random"),
                   help="side clicked by biased annotators (default left)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    detect_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("paths", help="dump a regularization path as param,coord,value CSV")
    common(p)
    p.add_argument("--engine", choices=("lbi", "iss_exact", "iss", "lasso"), help="default iss_exact")
    p.add_argument("--knockoffs", action="store_const", const=True,
                   help="include knockoff columns (coords prefixed '~')")
    ko_flags(p)
    path_flags(p)
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("equivalence", help="full vs reduced model knockoff statistics")
    common(p)
    p.add_argument("--engine", choices=("iss_exact", "iss", "lasso"), help="default iss_exact")
    p.add_argument("--tol", type=float, help="pass tolerance (default 1e-6)")
    ko_flags(p)
    p.set_defaults(func=cmd_equivalence)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "engine", None) == "iss":
        args.engine = "iss_exact"
    try:
        return args.func(args)
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (DatasetError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
