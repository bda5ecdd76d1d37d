import csv
import hashlib
import io
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gffloops import cli, experiments
from gffloops.experiments import COLUMNS, ExperimentConfig, WORKERS_ENV


def run(argv):
    return cli.main(argv)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def thm_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("thm") / "a"
    code = run(["run", "--experiment", "thm-main", "--mesh", "32", "--samples", "4", "--seed", "7",
                "--profile", "quick", "--out", str(out)])
    return out, code


# ---------------------------------------------------------------------------
# formatting


def test_fmt():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.fmt(np.float64(1 / 3)) == "0.33333333333333331"
    assert cli.fmt(None) == "" and cli.fmt(float("nan")) == "nan"
    assert cli.fmt(True) == "1" and cli.fmt(np.bool_(False)) == "0"
    assert cli.fmt(np.int64(12)) == "12"
    assert cli.fmt({"b", "a"}) == "a;b"


def test_csv_text_layout():
    text = cli.csv_text([{"replica": 0, "flags": set(), "T": 1.5, "zeta": 2}, {"replica": 1, "flags": {"x"}}])
    lines = text.split("\n")
    assert "\r" not in text and text.endswith("\n")
    assert lines[0].split(",") == COLUMNS + ["zeta"]
    assert lines[2].split(",")[COLUMNS.index("flags")] == "x"


def test_output_files(thm_run):
    out, code = thm_run
    assert code in (0, 1)
    raw = read(out / "samples.csv")
    assert b"\r" not in raw
    rows = list(csv.DictReader(io.StringIO(raw.decode("utf-8"))))
    assert rows and list(rows[0])[: len(COLUMNS)] == COLUMNS
    for r in rows:
        for key in ("r_minus", "r_plus", "label", "ed_outer", "neg_log_cr"):
            if r[key] not in ("", "nan"):
                assert format(float(r[key]), ".17g") == r[key]
    summary = json.loads(read(out / "summary.json"))
    assert summary["passed"] == (code == 0)
    assert summary["config"]["seed"] == 7 and summary["info"]["rows"] == len(rows)
    assert summary["info"]["domains"]
    manifest = json.loads(read(out / "manifest.json"))
    assert manifest["master_seed"] == 7 and manifest["config"] == summary["config"]


def test_degenerate_rows_are_kept(thm_run):
    out, _ = thm_run
    rows = list(csv.DictReader(io.StringIO(read(out / "samples.csv").decode())))
    summary = json.loads(read(out / "summary.json"))
    # every attempted replica is a row, flagged when unusable
    assert len(rows) == summary["info"]["rows"]
    for mesh in ("32", "16"):
        idx = [int(r["replica"]) for r in rows if r["mesh"] == mesh]
        assert idx == list(range(len(idx))) and idx
    for r in rows:
        if r["ed_outer"] == "" and r["mesh"] == "32":
            assert r["flags"]


# ---------------------------------------------------------------------------
# reproducibility


def test_rerun_is_byte_identical(thm_run, tmp_path, monkeypatch):
    out, _ = thm_run
    run(["run", "--experiment", "thm-main", "--mesh", "32", "--samples", "4", "--seed", "7", "--profile", "quick",
         "--out", str(tmp_path / "b")])
    assert read(out / "samples.csv") == read(tmp_path / "b" / "samples.csv")
    assert read(out / "summary.json") == read(tmp_path / "b" / "summary.json")
    # the worker count must not change the output
    monkeypatch.setenv(WORKERS_ENV, "2")
    run(["run", "--experiment", "thm-main", "--mesh", "32", "--samples", "4", "--seed", "7", "--profile", "quick",
         "--out", str(tmp_path / "c")])
    assert read(out / "samples.csv") == read(tmp_path / "c" / "samples.csv")


def test_other_seed_differs(thm_run, tmp_path):
    out, _ = thm_run
    run(["run", "--experiment", "thm-main", "--mesh", "32", "--samples", "4", "--seed", "8", "--profile", "quick",
         "--out", str(tmp_path / "d")])
    assert read(out / "samples.csv") != read(tmp_path / "d" / "samples.csv")


def test_manifest_replay(thm_run, tmp_path):
    out, _ = thm_run
    run(["run", "--config", str(out / "manifest.json"), "--out", str(tmp_path / "replay")])
    assert read(out / "summary.json") == read(tmp_path / "replay" / "summary.json")
    assert read(out / "samples.csv") == read(tmp_path / "replay" / "samples.csv")


def test_replica_reproducible_in_isolation():
    cfg = ExperimentConfig("thm-main", mesh=32, samples=4, seed=7, profile="quick")
    full = experiments.run_replicas(experiments.replica_cle4, cfg, range(6))
    alone = experiments.run_replicas(experiments.replica_cle4, cfg, [4])
    assert cli.csv_text([full[4]]) == cli.csv_text(alone)


# ---------------------------------------------------------------------------
# configuration


def test_config_file_and_flag_override(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"experiment": "exponents", "seed": 3, "profile": "quick", "exact-samples": 20000}))
    assert run(["run", "--config", str(conf), "--out", str(tmp_path / "e")]) == 0
    summary = json.loads(read(tmp_path / "e" / "summary.json"))
    assert summary["config"]["seed"] == 3 and summary["config"]["exact_samples"] == 20000
    run(["run", "--config", str(conf), "--seed", "4", "--out", str(tmp_path / "f")])
    assert json.loads(read(tmp_path / "f" / "summary.json"))["config"]["seed"] == 4
    rows = list(csv.DictReader(io.StringIO(read(tmp_path / "e" / "samples.csv").decode())))
    assert len(rows) == 20000
    assert all(format(float(r["T"]), ".17g") == r["T"] for r in rows[:200])


def test_profiles_fill_defaults():
    cfg = ExperimentConfig("thm-main")
    assert (cfg.mesh, cfg.samples, cfg.ref_samples) == (256, 500, 10**5)
    quick = ExperimentConfig("thm-main", profile="quick", mesh=48)
    assert quick.mesh == 48 and quick.samples == experiments.PROFILES["quick"]["samples"]


@pytest.mark.parametrize("argv", [
    ["--experiment", "tvs-general", "--a", "1.0", "--b", "1.0"],
    ["--experiment", "thm-main", "--mesh", "4"],
    ["--experiment", "annulus-marginal", "--r", "1.5"],
    ["--experiment", "fps", "--a", "-1"],
    ["--mesh", "32"],
])
def test_invalid_config_exits_2(tmp_path, argv):
    out = tmp_path / "bad"
    assert run(["run"] + argv + ["--out", str(out)]) == 2
    assert not out.exists()


def test_unknown_config_key(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"experiment": "exponents", "mesh_size": 3}))
    assert run(["run", "--config", str(conf), "--out", str(tmp_path / "x")]) == 2


def test_annulus_marginal_with_short_flag(tmp_path):
    code = run(["run", "--experiment", "annulus-marginal", "--r", "0.25", "--v", "0", "--a", "1.2533", "--b",
                "1.2533", "--mesh", "32", "--samples", "4", "--profile", "quick", "--out", str(tmp_path / "ann")])
    assert code in (0, 1)
    summary = json.loads(read(tmp_path / "ann" / "summary.json"))
    assert summary["config"]["inner_radius"] == 0.25
    assert any(k.startswith("ks_") for k in summary["reports"])


def test_densities_selftest_experiment(tmp_path):
    assert run(["run", "--experiment", "densities-selftest", "--out", str(tmp_path / "dens")]) == 0
    summary = json.loads(read(tmp_path / "dens" / "summary.json"))
    checks = summary["reports"]["identities"]["extra"]["checks"]
    assert checks and all(c["passed"] for c in checks)


def test_failure_budget(monkeypatch):
    from gffloops.errors import SolverError

    def flaky(cfg, index):
        if index % 10 == 0:
            raise SolverError("injected")
        return experiments._row(cfg, index)

    cfg = ExperimentConfig("thm-main", mesh=32, samples=4, profile="quick")
    rows = experiments.run_replicas(flaky, cfg, range(50))
    assert experiments.failures(rows) == 5
    assert "error:SolverError" in rows[0]["flags"] and rows[0]["mesh"] == 32
    monkeypatch.setitem(experiments.RUNNERS, "thm-main",
                        lambda c: experiments.Outcome(rows, {}, {}, {}))
    out = experiments.run(cfg)
    assert out.gates["failure_budget"] is False and out.info["failed_replicas"] == 5


# ---------------------------------------------------------------------------
# selftest command


def _fixture_doc():
    from importlib import resources

    return json.loads(resources.files("gffloops").joinpath("fixtures.json").read_text())


def _write_fixture(path, doc, reseal=True):
    if reseal:
        blob = json.dumps(doc["data"], sort_keys=True, separators=(",", ":")).encode()
        doc["sha256"] = hashlib.sha256(blob).hexdigest()
    path.write_text(json.dumps(doc))


def test_selftest_subset_passes():
    assert run(["selftest", "--only", "closed_form_identities", "exact_samplers"]) == 0


def test_corrupted_fixture_value(tmp_path, capsys):
    doc = _fixture_doc()
    doc["data"]["ellipse_cr"]["neg_log_cr"] = 1.3
    _write_fixture(tmp_path / "f.json", doc, reseal=False)
    assert run(["selftest", "--fixtures", str(tmp_path / "f.json")]) == 3
    assert "checksum" in capsys.readouterr().err


def test_fixture_missing_field_is_named(tmp_path, capsys):
    doc = _fixture_doc()
    del doc["data"]["circle_cr"]["radius"]
    _write_fixture(tmp_path / "f.json", doc)
    assert run(["selftest", "--fixtures", str(tmp_path / "f.json"), "--only", "conformal_fixtures"]) == 3
    err = capsys.readouterr().err
    assert "circle_cr" in err and "radius" in err


def test_unreadable_fixture(tmp_path, capsys):
    (tmp_path / "f.json").write_text("{not json")
    assert run(["selftest", "--fixtures", str(tmp_path / "f.json")]) == 3
    assert run(["selftest", "--fixtures", str(tmp_path / "missing.json")]) == 3


def test_wrong_fixture_value_fails_invariant(tmp_path, capsys):
    doc = _fixture_doc()
    doc["data"]["circle_cr"]["neg_log_cr"] = 0.5
    _write_fixture(tmp_path / "f.json", doc)
    assert run(["selftest", "--fixtures", str(tmp_path / "f.json"), "--only", "conformal_fixtures"]) == 1
    assert "conformal_fixtures" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gffloops", "run", "--experiment", "densities-selftest", "--out",
                          str(tmp_path / "m")], capture_output=True, text=True, cwd=tmp_path,
                         env={**os.environ, WORKERS_ENV: "1"})
    assert res.returncode == 0, res.stderr
    assert "PASS all_identities" in res.stdout
