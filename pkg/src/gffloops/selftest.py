"""Reduced-size invariant suite behind ``gffloops selftest``.

Each check is a named function returning (passed, detail).  A corrupted
or missing fixture file raises :class:`FixtureError` naming the fixture.
"""

import hashlib
import json
import math
import time
from importlib import resources

import numpy as np

from . import closed_form_laws as cfl
from .brownian_reference import (OracleConfig, sample_bridge_triple, sample_cluster_quadruple, sample_fps_pair,
                                 sample_tvs_triple, sample_walk_oracle)
from .closed_form_laws import GAP
from .conformal_geometry import conformal_radius, distortion_report, extremal_distance, measure_loop
from .errors import FixtureError
from .interface_extraction import (fps_component, iterated_loops, loop_from_region, non_contractible_chain,
                                   sign_clusters_outermost)
from .lattice_gff import INNER, OUTER, build_domain, sample_dgff
from .selfcheck import closed_form_checks
from .stat_harness import ks_compare

FIXTURE_FORMAT = 1


def load_fixtures(path=None):
    """Parse and verify the fixtures file; returns its ``data`` mapping."""
    try:
        if path is None:
            text = resources.files("gffloops").joinpath("fixtures.json").read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
    except OSError as exc:
        raise FixtureError(f"fixtures file unreadable: {exc}") from exc
    try:
        doc = json.loads(text)
        data = doc["data"]
        digest = doc["sha256"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FixtureError(f"fixtures file malformed: {exc}") from exc
    if doc.get("format") != FIXTURE_FORMAT:
        raise FixtureError(f"fixtures format {doc.get('format')!r} unsupported")
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    if hashlib.sha256(blob).hexdigest() != digest:
        bad = [k for k, v in data.items() if not isinstance(v, dict) or "provenance" not in v]
        raise FixtureError("fixture checksum mismatch" + (f" in {bad}" if bad else ""))
    return data


def _fixture(data, name, *keys):
    try:
        entry = data[name]
        return [entry[k] for k in keys]
    except (KeyError, TypeError) as exc:
        raise FixtureError(f"fixture {name!r} missing field {exc}") from exc


def _region_loop(domain, predicate):
    w = domain.kind.shape[0]
    ij = np.indices((2 * w - 1, 2 * w - 1)) / 2.0
    x = (ij[0] - domain.center[0]) * domain.h
    y = (ij[1] - domain.center[1]) * domain.h
    return loop_from_region(domain, predicate(x, y))


# ---------------------------------------------------------------------------
# checks


def check_closed_forms(fixtures):
    bad = [c["name"] for c in closed_form_checks() if not c["passed"]]
    return not bad, {"failed": bad}


def check_exact_samplers(fixtures):
    n = 4000
    s1 = sample_fps_pair(GAP, 1, n)
    s2 = sample_tvs_triple(GAP, 3 * GAP, 2, n)
    s3 = sample_bridge_triple(GAP, GAP, GAP, 0.5, 3, n)
    s4 = sample_cluster_quadruple(4, n)
    for s in (s1, s2, s3, s4):
        s.validate()
    again = sample_tvs_triple(GAP, 3 * GAP, 2, n)
    same = np.array_equal(again.T, s2.T) and np.array_equal(again.tau, s2.tau)
    low = int(np.sum(np.isclose(s2.X, -GAP)))
    p = 0.75
    side_ok = abs(low / n - p) <= 4 * math.sqrt(p * (1 - p) / n)
    return same and side_ok, {"deterministic": same, "lower_side_fraction": low / n}


def check_oracle(fixtures):
    n = 2000
    cfg = OracleConfig(dt=1e-3)
    walk = sample_walk_oracle(cfl.LawParams(1.0, 1.0), cfg, 5, n)
    exact = sample_tvs_triple(1.0, 1.0, 6, 20000)
    rep = ks_compare(walk.T[~walk.censored], exact.T, threshold=0.06)
    return rep.ok, {"ks": rep.ks_stat}


def check_domain_and_field(fixtures):
    r, ed_ref, tol, mesh = _fixture(fixtures, "annulus_modulus", "inner_radius", "ed", "lattice_tol", "lattice_mesh")
    dom = build_domain("annulus", mesh, r=r)
    ed = extremal_distance(dom, dom.kind == OUTER, dom.kind == INNER)
    disk = build_domain("disk", 32)
    f1 = sample_dgff(disk, 0.0, 11)
    f2 = sample_dgff(disk, 0.0, 11)
    same = np.array_equal(f1.values, f2.values)
    ok = abs(ed - ed_ref) <= tol and same and np.all(np.isfinite(f1.values))
    return ok, {"annulus_ed": ed, "expected": ed_ref, "deterministic": same}


def check_conformal_fixtures(fixtures):
    (a, b), cr_e, tol_e, mesh_e = _fixture(fixtures, "ellipse_cr", "semi_axes", "neg_log_cr", "lattice_tol",
                                           "lattice_mesh")
    rad, cr_c, tol_c, mesh_c = _fixture(fixtures, "circle_cr", "radius", "neg_log_cr", "lattice_tol",
                                        "lattice_mesh")
    dom = build_domain("disk", mesh_e)
    ell = _region_loop(dom, lambda x, y: (x / a) ** 2 + (y / b) ** 2 < 1)
    val_e, _ = conformal_radius(dom, ell)
    dom_c = build_domain("disk", mesh_c)
    circ = _region_loop(dom_c, lambda x, y: np.hypot(x, y) < rad)
    val_c, _ = conformal_radius(dom_c, circ)
    geo = measure_loop(dom_c, circ)
    dist = all(distortion_report(geo).values())
    ok = abs(val_e - cr_e) <= tol_e and abs(val_c - cr_c) <= tol_c and dist
    return ok, {"ellipse": val_e, "circle": val_c, "distortion": dist}


def check_interfaces(fixtures):
    dom = build_domain("disk", 64)
    closed = True
    labels_ok = True
    nested = True
    for seed in range(6):
        f = sample_dgff(dom, 0.0, seed)
        res = sign_clusters_outermost(f)
        if res is not None:
            closed &= res.outer.is_closed()
        _, l1 = fps_component(f, GAP)
        _, l2 = fps_component(f, 2 * GAP)
        if l1 is not None and l2 is not None:
            nested &= bool(np.all(l1.inside <= l2.inside))
        seq = iterated_loops(f, (GAP, GAP), seed)
        labels_ok &= seq.check()
    ann = build_domain("annulus", 64, r=0.3)
    f = sample_dgff(ann, 0.0, 3)
    out = non_contractible_chain(f, "outer_to_inner")
    back = non_contractible_chain(f, "inner_to_outer")
    rev = len(out) == len(back)
    return closed and labels_ok and nested and rev, {"closed": closed, "labels": labels_ok, "fps_nested": nested,
                                                     "chain_lengths_match": rev}


CHECKS = {
    "closed_form_identities": check_closed_forms,
    "exact_samplers": check_exact_samplers,
    "walk_oracle": check_oracle,
    "domain_and_field": check_domain_and_field,
    "conformal_fixtures": check_conformal_fixtures,
    "interfaces": check_interfaces,
}


def run_selftest(fixture_path=None, only=None, log=print):
    """Run the suite; returns the list of failing check names.

    Raises :class:`FixtureError` when the fixtures cannot be trusted.
    """
    fixtures = load_fixtures(fixture_path)
    failed = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        ok, detail = fn(fixtures)
        log(f"{'PASS' if ok else 'FAIL'} {name} ({time.perf_counter() - t0:.1f}s) {detail}")
        if not ok:
            failed.append(name)
    return failed
