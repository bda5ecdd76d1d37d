"""Command line: ``gffloops run`` and ``gffloops selftest``.

Options come from flags or from a JSON/TOML config file with the same keys
(flags win).  A manifest.json from an earlier run is also accepted as a
config file, which replays that run.  The worker count is read from
``GFFLOOPS_WORKERS`` only.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time

import numpy as np
import scipy

from . import __version__, experiments, walk
from .errors import FixtureError, GffLoopsError
from .experiments import COLUMNS, EXPERIMENTS, PROFILES, ExperimentConfig

log = logging.getLogger("gffloops")

CONFIG_KEYS = ("experiment", "mesh", "samples", "seed", "a", "b", "v", "inner_radius", "profile", "out", "R",
               "ref_samples", "exact_samples")


def fmt(x):
    """17-significant-digit decimal (or empty for missing values)."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    if isinstance(x, (set, frozenset, list, tuple)):
        return ";".join(sorted(str(v) for v in x))
    return str(x)


def csv_text(rows):
    """CSV with the standard columns first, then extra keys in sorted order."""
    extra = sorted({k for r in rows for k in r} - set(COLUMNS))
    header = COLUMNS + extra
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r.get(k)) for k in header])
    return buf.getvalue()


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def versions():
    return {"gffloops": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def summary_doc(cfg, outcome):
    """summary.json contents: deterministic given (config, seed)."""
    return {
        "config": cfg.to_dict(),
        "versions": versions(),
        "reports": {k: v.to_dict() for k, v in outcome.reports.items()},
        "gates": {k: bool(v) for k, v in outcome.gates.items()},
        "info": experiments.ComparisonReport(extra=outcome.info).to_dict()["extra"],
        "passed": all(outcome.gates.values()),
    }


def load_config_file(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError as exc:  # Python < 3.11
            raise GffLoopsError("TOML config files need Python 3.11; use JSON") from exc
        d = tomllib.loads(raw.decode("utf-8"))
    else:
        d = json.loads(raw)
    if isinstance(d.get("config"), dict) and "master_seed" in d:
        d = dict(d["config"])  # a run manifest
    d = {k.replace("-", "_"): v for k, v in d.items()}
    unknown = set(d) - set(CONFIG_KEYS)
    if unknown:
        raise GffLoopsError(f"unknown config keys: {sorted(unknown)}")
    return d


def build_parser():
    p = argparse.ArgumentParser(prog="gffloops", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--config", help="JSON or TOML file with the same keys as the flags, or a run manifest")
    r.add_argument("--mesh", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--a", type=float)
    r.add_argument("--b", type=float)
    r.add_argument("--v", type=float)
    r.add_argument("--inner-radius", "--r", dest="inner_radius", type=float)
    r.add_argument("--out")
    r.add_argument("--profile", choices=tuple(PROFILES))
    s = sub.add_parser("selftest", help="run the reduced invariant suite")
    s.add_argument("--fixtures", help="alternative fixtures file")
    s.add_argument("--only", nargs="*", help="run only the named checks")
    return p


def resolve(args):
    """Merge config file and flags into (ExperimentConfig, output dir)."""
    opts = load_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    if "experiment" not in opts:
        raise GffLoopsError("no experiment given")
    out = opts.pop("out", None) or os.path.join("runs", opts["experiment"])
    return ExperimentConfig.from_dict(opts), out


def cmd_run(args):
    try:
        cfg, out = resolve(args)
        cfg.validate()
    except (GffLoopsError, OSError, ValueError) as exc:
        log.error("invalid configuration: %s", exc)
        return 2
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    outcome = experiments.run(cfg)
    atomic_write(os.path.join(out, "samples.csv"), csv_text(outcome.rows))
    doc = summary_doc(cfg, outcome)
    atomic_write(os.path.join(out, "summary.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    manifest = {"config": cfg.to_dict(), "master_seed": cfg.seed, "argv": sys.argv, "backend": walk.BACKEND,
                "workers": experiments.workers(), "versions": versions(),
                "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)),
                "elapsed_seconds": round(time.time() - t0, 3)}
    atomic_write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name, ok in sorted(doc["gates"].items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if doc["passed"] else 1


def cmd_selftest(args):
    from .selftest import run_selftest

    try:
        failed = run_selftest(args.fixtures, args.only)
    except FixtureError as exc:
        print(f"FixtureError: {exc}", file=sys.stderr)
        return 3
    if failed:
        print("failed invariants: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_selftest(args)


if __name__ == "__main__":
    sys.exit(main())
