import csv
import io
import json

import numpy as np
import pytest

from causalmask import cli, admissions
from causalmask.sim import generate_batch
from causalmask.world import failed_report, save_world


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def world_file(tmp_path):
    path = tmp_path / "admissions.json"
    save_world(admissions.world(), path)
    return str(path)


def test_solve_mask(capsys, world_file):
    code, out, _ = run(capsys, "solve", world_file, "--family", "mask", "--eps", "0")
    data = json.loads(out)
    assert code == 0
    assert data["report"]["objective"] == pytest.approx(1 / 12, abs=1e-9)
    assert data["report"]["status"] == "optimal"
    assert len(data["policy"]) == 2


def test_solve_fair_ate(capsys, world_file):
    code, out, _ = run(capsys, "solve", world_file, "--family", "fair")
    assert code == 0
    assert json.loads(out)["report"]["ate"] == pytest.approx(0.0, abs=1e-9)


def test_solve_csv(capsys):
    code, out, _ = run(capsys, "--format", "csv", "solve", "admissions", "--family", "exploit")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 1
    assert float(rows[0]["objective"]) == pytest.approx(1 / 12)
    assert float(rows[0]["alpha_1_1"]) == 1.0


def test_global_flags_after_subcommand(capsys):
    code, out, _ = run(capsys, "solve", "admissions", "--format", "csv")
    assert code == 0 and out.startswith("family,")


def test_solve_malformed_json(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    code, _, err = run(capsys, "solve", str(bad))
    assert code == 1 and "error" in err


def test_solve_missing_file(capsys, tmp_path):
    code, _, _ = run(capsys, "solve", str(tmp_path / "nope.json"))
    assert code == 1


def test_solve_invalid_world(capsys, tmp_path):
    path = tmp_path / "w.json"
    path.write_text(json.dumps({"k": 1, "pi": [[0.5, 0.2]], "gamma": [[0, 0]], "rho": 0.1}), encoding="utf-8")
    code, _, err = run(capsys, "solve", str(path))
    assert code == 1 and "sums to" in err


def test_solve_not_optimal_exit_code(capsys, monkeypatch):
    monkeypatch.setattr(cli, "solve_family", lambda m, f, e: (None, failed_report(m.k, "infeasible", f, e)))
    code, out, _ = run(capsys, "solve", "admissions")
    assert code == 2
    assert json.loads(out)["report"]["status"] == "infeasible"


def test_sample_world_reproducible(capsys):
    _, a, _ = run(capsys, "--seed", "5", "sample-world", "--k", "3")
    _, b, _ = run(capsys, "sample-world", "--k", "3", "--seed", "5")
    assert a == b and json.loads(a)["k"] == 3


def sweep_rows(capsys, *extra):
    code, out, err = run(capsys, "sweep", *extra)
    assert code == 0 and "skipped" in err
    return list(csv.DictReader(io.StringIO(out)))


def test_sweep_header_and_anchors(capsys):
    rows = sweep_rows(capsys, "--k", "3", "--n-worlds", "20", "--eps", "0,5")
    assert list(rows[0]) == ["world_id", "eps", "family", "norm_perf"]
    fair0 = [float(r["norm_perf"]) for r in rows if r["family"] == "fair" and float(r["eps"]) == 0]
    assert fair0 and max(abs(v) for v in fair0) < 1e-9
    for family in ("fair", "mask"):
        big = [float(r["norm_perf"]) for r in rows if r["family"] == family and float(r["eps"]) == 5]
        assert min(big) == pytest.approx(1.0, abs=1e-9)


def test_sweep_mask_gain_grows_with_k(capsys):
    means = {}
    for k in (2, 10):
        rows = sweep_rows(capsys, "--k", str(k), "--n-worlds", "200", "--eps", "0.05", "--families", "mask")
        means[k] = np.mean([float(r["norm_perf"]) for r in rows])
    assert means[10] > means[2]


def test_sweep_reproducible(tmp_path, capsys):
    args = ["--seed", "3", "sweep", "--k", "2", "--n-worlds", "15", "--eps", "0,0.1"]
    run(capsys, *args, "--output", str(tmp_path / "a.csv"))
    run(capsys, *args, "--output", str(tmp_path / "b.csv"), "--jobs", "2")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_genericity_csv(capsys):
    code, out, _ = run(capsys, "genericity", "--k", "2", "--n-worlds", "30", "--mode", "independent_homogeneous")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and float(rows[0]["gap_positive"]) == 0.0


def test_volume_json(capsys):
    code, out, _ = run(capsys, "--format", "json", "volume", "--world", "admissions", "--samples", "200000")
    data = json.loads(out)
    assert code == 0 and data["slope"] == pytest.approx(2.0, abs=0.3)
    assert [p["eps"] for p in data["points"]] == [0.02, 0.04, 0.08, 0.16]


def test_longevity_csv(capsys, tmp_path):
    policy_file = tmp_path / "mask.json"
    policy_file.write_text(json.dumps(admissions.D_MASK.to_dict()), encoding="utf-8")
    code, out, _ = run(
        capsys, "longevity", "admissions", "--policy", f"dmask={policy_file}", "--policy", "fair",
        "--replications", "2", "--cap", "5000",
    )
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert list(rows[0]) == ["policy", "world_id", "rep", "n_reject_ate", "n_reject_cate", "n_caught", "total_unfairness"]
    assert {r["policy"] for r in rows} == {"dmask", "fair"}


def test_longevity_unknown_policy(capsys):
    code, _, _ = run(capsys, "longevity", "admissions", "--policy", "greedy")
    assert code == 1


def write_log(path, policy, n, seed, outcome=True):
    batch = generate_batch(admissions.world(), policy, n, seed)
    frame = batch.to_frame()
    frame["group"] = np.where(frame["p"] == 1, "A", "B")
    if outcome:
        frame["y"] = frame["y"].clip(lower=0)
    frame.to_csv(path, index=False)


def audit(capsys, path, *extra):
    code, out, err = run(
        capsys, "audit", str(path), "--covariates", "x", "--bins", "2",
        "--protected", "group=B:0,A:1", "--decision", "d", *extra,
    )
    assert code == 0, err
    return json.loads(out)


def verdict_rate(capsys, tmp_path, policy, n, verdict):
    hits = 0
    for seed in range(20):
        path = tmp_path / f"log{seed}.csv"
        write_log(path, policy, n, 1000 + seed)
        hits += audit(capsys, path)["verdict"] == verdict
    return hits / 20


def test_audit_masked_policy(capsys, tmp_path):
    assert verdict_rate(capsys, tmp_path, admissions.D_MASK, 100_000, "MASKED-SUSPECT") >= 0.8


def test_audit_fair_policy(capsys, tmp_path):
    assert verdict_rate(capsys, tmp_path, admissions.D_FAIR, 100_000, "FAIR-CONSISTENT") >= 0.9


def test_audit_exploit_policy(capsys, tmp_path):
    assert verdict_rate(capsys, tmp_path, admissions.EXPLOIT_ONLY_11, 10_000, "UNFAIR") >= 0.99


def test_audit_outputs(capsys, tmp_path):
    log = tmp_path / "log.csv"
    write_log(log, admissions.D_MASK, 3000, 0)
    world_out, strata_out = tmp_path / "w.json", tmp_path / "s.json"
    data = audit(capsys, log, "--outcome", "y", "--minimize", "--world-out", str(world_out), "--strata-out", str(strata_out))
    assert data["k"] == 2 and data["objective_sense"] == "minimize"
    assert set(data) >= {"ate", "cate", "verdict", "rows", "dropped_missing"}
    assert json.loads(world_out.read_text())["k"] == 2
    assert len(json.loads(strata_out.read_text())["strata"]) == 2


def test_audit_csv_verdict_line(capsys, tmp_path):
    log = tmp_path / "log.csv"
    write_log(log, admissions.D_FAIR, 2000, 0)
    code, out, _ = run(
        capsys, "--format", "csv", "audit", str(log), "--covariates", "x", "--bins", "2",
        "--protected", "p", "--decision", "d",
    )
    lines = out.strip().splitlines()
    assert code == 0 and lines[0].startswith("test,") and lines[-1].startswith("verdict,")


def test_audit_missing_column(capsys, tmp_path):
    log = tmp_path / "log.csv"
    write_log(log, admissions.D_FAIR, 100, 0)
    code, _, err = run(capsys, "audit", str(log), "--covariates", "age", "--protected", "p", "--decision", "d")
    assert code == 1 and "age" in err


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "causalmask", "solve", "admissions", "--family", "fair"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["report"]["objective"] == pytest.approx(0.05)
