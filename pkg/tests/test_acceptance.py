"""End-to-end acceptance checks, one test per criterion.

Each test prints a one-line verdict in the terminal summary (see conftest).
"""
import time

import pytest

from reusematch import cli
from reusematch.benchmark import evaluate_policy, evaluate_policy_detailed, solve_and_policy, solve_opt
from reusematch.coupling import CouplingInvariantError, Scheme, _Claims, coupled_run, monte_carlo
from reusematch.experiments import bound_value, make_corpus, verify_bounds
from reusematch.fileio import dump
from reusematch.instance import tight_example
from reusematch.oracle import enumerate_bernoulli, lemma1_check, proposition_checks
from reusematch.policies import greedy

EXACT = 1e-12
BOUND = 1e-9
P_GRID = (0.1, 0.3, 0.5, 0.9)
DELTAS = (0.1, 0.01, 0.001)
ALPHAS = (0.25, 0.5, 0.75)


@pytest.fixture(scope="module")
def geometric_corpus():
    return make_corpus("geometric", 1000, 0)


@pytest.fixture(scope="module")
def mixed_corpus():
    return make_corpus("mixed", 1000, 0)


class Timed(list):
    seconds = 0.0


@pytest.fixture(scope="module")
def enumeration_tables():
    start = time.perf_counter()
    out = Timed()
    for inst in make_corpus("enumeration", 200, 0):
        table, opt = solve_and_policy(inst)
        out.append((inst, table, opt, enumerate_bernoulli(inst, greedy(), opt)))
    out.seconds = time.perf_counter() - start
    return out


@pytest.mark.criterion(1, "tight example: OPT = 2+delta, Greedy = (1+p)(1+delta)")
def test_tight_example_reproduction():
    start = time.perf_counter()
    for p in P_GRID:
        for delta in DELTAS:
            inst = tight_example(p, delta)
            opt = solve_opt(inst).opt_value
            g = evaluate_policy(inst, greedy())
            assert abs(opt - (2 + delta)) <= EXACT
            assert abs(g - (1 + p) * (1 + delta)) <= EXACT
            assert g / opt - (1 + p) / 2 <= delta
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(2, "Greedy/OPT >= (1+p)/2 on 1000 geometric instances")
def test_theorem2_corpus(geometric_corpus):
    start = time.perf_counter()
    reports = verify_bounds(make_corpus("geometric", 1000, 0), "greedy", "theorem2")
    elapsed = time.perf_counter() - start
    failures = [r for r in reports if not r.passed]
    assert not failures, failures[:3]
    assert all(r.ratio >= (1 + r.p_min) / 2 - BOUND for r in reports)
    assert elapsed < 60


@pytest.mark.criterion(3, "Greedy/OPT >= 1/(2-p) on 1000 mixed instances")
def test_theorem1_corpus(mixed_corpus):
    start = time.perf_counter()
    reports = verify_bounds(make_corpus("mixed", 1000, 0), "greedy", "theorem1")
    elapsed = time.perf_counter() - start
    assert any(i.all_finite for i in mixed_corpus) and any(i.all_geometric for i in mixed_corpus)
    assert any(not (i.all_finite or i.all_geometric) for i in mixed_corpus)
    failures = [r for r in reports if not r.passed]
    assert not failures, failures[:3]
    assert all(r.ratio >= 1 / (2 - r.p_min) - BOUND for r in reports)
    assert elapsed < 120


@pytest.mark.criterion(4, "coincidence probability vs scaled lost probability, exact")
def test_lemma1_exact(enumeration_tables):
    start = time.perf_counter()
    for inst, _, _, table in enumeration_tables:
        report = lemma1_check(table, inst)
        assert report.ok, (inst.digest()[:12], report.violations[:3])
        assert all(row.margin >= -EXACT for row in report.rows)
    for p in P_GRID:
        inst = tight_example(p, 0.1)
        _, opt = solve_and_policy(inst)
        row = lemma1_check(enumerate_bernoulli(inst, greedy(), opt), inst).row(1, 2)
        assert abs(row.margin) <= EXACT
    # enumeration happens in the fixture, so its time counts here
    assert time.perf_counter() - start + enumeration_tables.seconds < 120


@pytest.mark.criterion(5, "LOST bounds exact on the enumeration corpus; equality on the tight example")
def test_lost_bounds_exact(enumeration_tables):
    for inst, _, _, table in enumeration_tables:
        p, g = inst.p_min(), table.primary_reward
        assert table.lost <= (1 - p) * g + EXACT
        assert table.lost <= (1 - p) / (1 + p) * g + EXACT
        assert table.lost <= (1 - p) * (g - table.coincidence) + EXACT
        checks = proposition_checks(table, inst)
        assert checks["prop1"].passed and checks["prop2"].passed and checks["prop3"].passed
    for p in P_GRID:
        for delta in DELTAS:
            inst = tight_example(p, delta)
            _, opt = solve_and_policy(inst)
            table = enumerate_bernoulli(inst, greedy(), opt)
            assert abs(table.lost - (1 - p) * (1 + delta)) <= EXACT
            assert abs(table.lost - (1 - p) / (1 + p) * table.primary_reward) <= EXACT


@pytest.mark.criterion(6, "oracle = DP = forward evaluation; Monte Carlo within 3 sigma")
def test_oracle_dp_simulation_triangle(enumeration_tables):
    misses = []
    for k, (inst, table, opt, exact) in enumerate(enumeration_tables):
        assert abs(exact.benchmark_reward - table.opt_value) <= EXACT
        assert abs(exact.primary_reward - evaluate_policy(inst, greedy())) <= EXACT
        assert abs(exact.benchmark_reward - evaluate_policy(inst, opt)) <= EXACT
        assert abs(exact.total_mass - 1.0) <= EXACT
        rep = monte_carlo(inst, greedy(), opt, Scheme.BERNOULLI, 100_000, 0)
        for name, value in [
            ("primary_reward", exact.primary_reward),
            ("benchmark_reward", exact.benchmark_reward),
            ("lost", exact.lost),
            ("coincidence", exact.coincidence),
        ]:
            if not rep[name].within(value, sigmas=3.0):
                misses.append((k, name, rep[name].mean, value, rep[name].std_err))
    assert not misses, misses


@pytest.mark.criterion(7, "alpha-threshold policies meet the measured-alpha bounds")
def test_theorem3(geometric_corpus, mixed_corpus):
    for alpha in ALPHAS:
        for corpus, bound in ((geometric_corpus, "theorem3-geometric"), (mixed_corpus, "theorem3")):
            reports = verify_bounds(corpus, alpha, bound)
            failures = [r for r in reports if not r.passed]
            assert not failures, (alpha, bound, failures[:3])
            for r in reports:
                assert r.ratio >= bound_value(bound, r.p_min, r.alpha) - BOUND


@pytest.mark.criterion(8, "unit returns give ratio 1; non-reusable example tends to 1/2")
def test_endpoints():
    for inst in make_corpus("unit-return", 200, 0):
        opt = solve_opt(inst).opt_value
        g = evaluate_policy(inst, greedy())
        assert abs(g - opt) <= EXACT * max(1.0, opt)
    gaps = []
    for delta in (0.1, 0.01, 0.001, 1e-6):
        inst = tight_example(0.0, delta)
        ratio = evaluate_policy(inst, greedy()) / solve_opt(inst).opt_value
        assert abs(ratio - (1 + delta) / (2 + delta)) <= EXACT
        gaps.append(ratio - 0.5)
    assert all(g > 0 for g in gaps) and gaps == sorted(gaps, reverse=True)
    assert gaps[-1] < 1e-6


@pytest.mark.criterion(9, "10^4 coupled runs without claim violations; violations exit 4 with a trace")
def test_pathwise_claims(tmp_path, monkeypatch, capsys):
    runs = 0
    for scheme, kind in ((Scheme.BERNOULLI, "enumeration"), (Scheme.STACK, "finite")):
        for k, inst in enumerate(make_corpus(kind, 200, 0)):
            _, opt = solve_and_policy(inst)
            for stream in range(25):
                coupled_run(inst, greedy(), opt, scheme, 0, stream=stream)  # raises on a violation
                runs += 1
    assert runs == 10_000

    # the exit-code contract, exercised by forcing a claim failure on a path with a lost match
    inst = tight_example(0.5, 0.1)
    _, opt = solve_and_policy(inst)
    stream = next(k for k in range(100) if coupled_run(inst, greedy(), opt, "bernoulli", 0, stream=k).lost > 0)
    path = tmp_path / "tight.json"
    dump(inst, path)

    def forced(self, t, i, f_prev, fstar_prev):
        raise CouplingInvariantError(f"claim 1: forced at t={t}")

    monkeypatch.setattr(_Claims, "check_lost", forced)
    argv = ["couple", str(path), "--runs", "200", "--seed", "0", "--trace", str(tmp_path / "t.ndjson"), "--stream", str(stream)]
    code = cli.main(argv)
    err = capsys.readouterr().err
    assert code == 4
    assert "claim 1: forced at t=2" in err and '"t": 1' in err
