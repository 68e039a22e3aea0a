import io
import json

import pytest

from reusematch import cli
from reusematch.coupling import CouplingInvariantError
from reusematch.fileio import dump
from reusematch.instance import Geometric, make_instance, tight_example


def run(*argv):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out=out)
    return code, out.getvalue()


@pytest.fixture
def tight_file(tmp_path):
    path = tmp_path / "tight.json"
    dump(tight_example(0.5, 0.1), path)
    return path


def test_validate(tight_file, tmp_path, capsys):
    assert run("validate", tight_file)[0] == 0
    bad = json.loads(tight_file.read_text())
    bad["resources"][0]["dist"] = {"type": "finite", "pmf": [[1, 0.5], [2, 0.4]]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    code, out = run("validate", path)
    assert code == 1 and "resources[0]" in out and "0.9" in out
    path.write_text(tight_file.read_text()[:50])
    assert run("validate", path)[0] == 2
    assert "line" in capsys.readouterr().err


def test_solve_json(tight_file):
    code, out = run("solve", tight_file)
    assert code == 0
    doc = json.loads(out)
    row = doc["rows"][0]
    assert row["opt"] == pytest.approx(2.1) and row["policy_value"] == pytest.approx(1.65)
    assert row["ratio"] == pytest.approx(0.7857142857)
    thm2 = next(b for b in doc["bounds"] if b["bound"] == "theorem2")
    assert thm2["value"] == 0.75 and thm2["pass"]
    assert doc["header"]["instance_hash"] == tight_example(0.5, 0.1).digest()
    assert doc["header"]["resource_map"][1] == {"resource": 2, "file_index": 1, "reward": 1.1}


def test_solve_csv_and_unit_return(tmp_path):
    path = tmp_path / "one.json"
    dump(make_instance([0.2, 0.9], [Geometric(1.0)] * 2, [{0, 1}, {0}]), path)
    code, out = run("solve", path, "--format", "csv")
    assert code == 0
    lines = [l for l in out.splitlines() if not l.startswith("#")]
    assert lines[0] == "opt,policy_value,ratio,p_min,measured_alpha"
    assert float(lines[1].split(",")[2]) == 1.0


def test_guard_exit_and_override(tmp_path, capsys):
    path = tmp_path / "big.json"
    dump(make_instance([1.0] * 20, [Geometric(0.5)] * 20, [{0}]), path)
    code, _ = run("solve", path)
    err = capsys.readouterr().err
    assert code == 3 and str(2**20) in err
    assert run("solve", path, "--max-states", 2**21)[0] == 1
    code, out = run("solve", path, "--max-states", 2**21, "--force")
    assert code == 0 and "MiB" in capsys.readouterr().err


def test_couple(tight_file, tmp_path):
    assert run("couple", tight_file, "--runs", 0)[0] == 1
    trace = tmp_path / "trace.ndjson"
    code, out = run("couple", tight_file, "--runs", 20000, "--seed", 3, "--trace", trace)
    assert code == 0
    doc = json.loads(out)
    assert doc["header"]["config"]["seed"] == 3
    lost = next(r for r in doc["rows"] if r["metric"] == "lost")
    assert abs(lost["mean"] - 0.55) <= 3 * lost["std_err"]
    records = [json.loads(l) for l in trace.read_text().splitlines()]
    assert "header" in records[0] and [r["t"] for r in records[1:]] == [1, 2]


def test_couple_is_deterministic_and_reads_the_seed_variable(tight_file, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "9")
    a, b = run("couple", tight_file, "--runs", 500), run("couple", tight_file, "--runs", 500)
    assert a == b and json.loads(a[1])["header"]["config"]["seed"] == 9


def test_couple_invariant_failure_dumps_trace(tight_file, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise CouplingInvariantError("claim 1: forced", trace=None)

    monkeypatch.setattr(cli, "monte_carlo", broken)
    assert run("couple", tight_file, "--runs", 10)[0] == 4
    assert "claim 1" in capsys.readouterr().err


def test_oracle_csv(tight_file):
    code, out = run("oracle", tight_file, "--format", "csv")
    assert code == 0
    rows = [l for l in out.splitlines() if not l.startswith("#")]
    assert rows[0].startswith("resource,t,pr_lost,pr_coincide")
    assert any(r.startswith("2,2,0.5,0.5") for r in rows)


def test_generate_and_verify(tmp_path):
    corpus = tmp_path / "corpus"
    assert run("generate", corpus, "--kind", "geometric", "--count", 12, "--seed", 1)[0] == 0
    code, out = run("verify", corpus, "--bound", "theorem2", "--summary-only")
    assert code == 0 and out.strip() == "12/12 pass theorem2"


def test_verify_reports_failures(tmp_path):
    corpus = tmp_path / "c"
    corpus.mkdir()
    dump(tight_example(0.0, 0.1), corpus / "nr.json")
    code, out = run("verify", corpus, "--bound", "theorem2", "--format", "csv")
    assert code == 4 and out.strip().endswith("0/1 pass theorem2")


def test_sweep_and_search():
    code, out = run("sweep", "--p", "0.5", "--delta", "0.1")
    assert code == 0
    row = json.loads(out)["rows"][0]
    assert row["ratio"] == pytest.approx(1.65 / 2.1) and row["difference"] <= 1e-12
    code, out = run("search", "--budget", 50, "--keep", 2, "--seed", 0)
    assert code == 0 and len(json.loads(out)["rows"]) == 2
    assert run("search", "--p-min", "0", "--budget", 1)[0] == 1


def test_bad_policy(tight_file):
    assert run("solve", tight_file, "--policy", "random")[0] == 1
    assert run("solve", tight_file, "--policy", "alpha:0.5")[0] == 0
