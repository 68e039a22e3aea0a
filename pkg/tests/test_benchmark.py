from dataclasses import replace

import numpy as np
import pytest

from brute import brute_greedy, brute_opt
from reusematch.benchmark import (
    StateSpaceError,
    UnreachableStateError,
    check_guard,
    evaluate_policy,
    evaluate_policy_detailed,
    expected_next,
    opt_policy,
    solve_and_policy,
    solve_opt,
    state_space_size,
)
from reusematch.experiments import make_corpus
from reusematch.instance import FiniteSupport, Geometric, InvalidInstanceError, make_instance, tight_example
from reusematch.policies import NO_MATCH, greedy, no_match, random_table


def test_tight_example_values():
    inst = tight_example(0.5, 0.1)
    assert solve_opt(inst).opt_value == pytest.approx(2.1, abs=1e-12)
    assert evaluate_policy(inst, greedy()) == pytest.approx(1.65, abs=1e-12)
    assert evaluate_policy(tight_example(0.0, 0.1), greedy()) == pytest.approx(1.1, abs=1e-12)


def test_opt_actions_on_the_tight_example():
    table = solve_opt(tight_example(0.5, 0.1))
    assert table.best_action(1, (0, 0)) == 0
    assert table.best_action(2, (1, 0)) == 1
    assert table.best_action(2, (1, 1)) == NO_MATCH
    pol = opt_policy(table)
    assert pol(1, frozenset({0, 1}), (0, 0), table.instance) == 0


def test_unit_return_opt_is_sum_of_incident_best():
    inst = make_instance([0.1, 0.4, 0.7], [Geometric(1.0)] * 3, [{0, 1}, {2}, set(), {0}])
    assert solve_opt(inst).opt_value == pytest.approx(0.4 + 0.7 + 0.0 + 0.1)


def test_single_forced_match():
    inst = make_instance([1.0, 2.0], [Geometric(0.5)] * 2, [{0}])
    assert solve_opt(inst).opt_value == 1.0


def test_no_match_is_worth_nothing():
    for inst in make_corpus("mixed", 20, 1):
        assert evaluate_policy(inst, no_match()) == 0.0


@pytest.mark.parametrize("kind", ["geometric", "mixed", "finite"])
def test_dp_matches_brute_force(kind):
    for inst in make_corpus(kind, 40, 5):
        assert solve_opt(inst).opt_value == pytest.approx(brute_opt(inst), abs=1e-12)
        assert evaluate_policy(inst, greedy()) == pytest.approx(brute_greedy(inst), abs=1e-12)


def test_forward_evaluation_of_opt_policy_matches_backward_value():
    for inst in make_corpus("mixed", 40, 2):
        table, pol = solve_and_policy(inst)
        assert evaluate_policy(inst, pol) == pytest.approx(table.opt_value, abs=1e-12)


def test_opt_beats_arbitrary_policies():
    for inst in make_corpus("mixed", 30, 3):
        opt = solve_opt(inst).opt_value
        for seed in range(3):
            assert evaluate_policy(inst, random_table(seed)) <= opt + 1e-12


def test_terminal_and_immediate_reward_invariants():
    inst = make_corpus("mixed", 1, 9)[0]
    table = solve_opt(inst)
    assert np.all(table.values[inst.horizon + 1] == 0)
    r = inst.rewards
    for t in range(1, inst.horizon + 1):
        for i in inst.arrivals[t - 1]:
            free = table.values[t][tuple(0 if k == i else slice(None) for k in range(inst.n_resources))]
            assert np.all(free >= r[i] - 1e-12)


def test_finite_support_ages():
    d = FiniteSupport(((1, 0.3), (3, 0.7)))
    inst = make_instance([1.0], [d], [{0}] * 4)
    table = solve_opt(inst)
    # age 2 returns surely next step; age 1 never does
    assert table.value(2, (2,)) > table.value(2, (1,))
    with pytest.raises(UnreachableStateError):
        table.value(2, (3,))


def test_geometric_ages_collapse():
    table = solve_opt(tight_example(0.3, 0.1))
    assert table.value(2, (7, 0)) == table.value(2, (1, 0))


def test_expected_next_is_a_conditional_expectation():
    inst = make_instance([1.0, 2.0], [Geometric(0.25), FiniteSupport(((1, 0.5), (2, 0.5)))], [{0}])
    table = solve_opt(inst)
    values = np.arange(4.0).reshape(2, 2)
    out = expected_next(values, table.axes)
    # geometric just-matched/busy row returns with 0.25; finite just-matched returns with 0.5
    assert out[1, 2] == pytest.approx(0.25 * 0.5 * values[0, 0] + 0.25 * 0.5 * values[0, 1]
                                      + 0.75 * 0.5 * values[1, 0] + 0.75 * 0.5 * values[1, 1])


def test_guards():
    big = make_instance([1.0] * 20, [Geometric(0.5)] * 20, [{0}])
    with pytest.raises(StateSpaceError) as err:
        solve_opt(big)
    assert err.value.n_states == 2**20
    assert check_guard(big, max_states=2**21) == 2**20
    with pytest.raises(StateSpaceError):
        check_guard(big, max_states=100)
    wide = make_instance([1.0] * 4, [FiniteSupport.point(60)] * 4, [{0}])
    assert state_space_size(wide) == 60**4
    with pytest.raises(StateSpaceError):
        solve_opt(wide)


def test_rejects_non_canonical_and_randomised():
    with pytest.raises(InvalidInstanceError):
        solve_opt(make_instance([2.0, 1.0], [Geometric(0.5)] * 2, [{0}]))
    pol = greedy()
    with pytest.raises(ValueError):
        evaluate_policy(tight_example(0.5, 0.1), replace(pol, deterministic=False))


def test_match_probabilities():
    ev = evaluate_policy_detailed(tight_example(0.5, 0.1), greedy())
    assert ev.match_prob[0].tolist() == [0.0, 1.0]
    assert ev.match_prob[1].tolist() == [0.0, 0.5]
