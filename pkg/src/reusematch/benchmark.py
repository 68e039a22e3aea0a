"""Exact values for the clairvoyant optimum and for fixed policies.

The clairvoyant knows every arrival set in advance but not the usage
durations, so its value is that of the optimal adaptive policy of a finite
horizon MDP. The state of resource i is its age: 0 when available, e >= 1
when busy e steps after the match. A resource busy at age e returns at the
start of the next step with probability Pr(D = e + 1 | D > e); a resource
matched at step t has age 1 at t + 1 if it has not returned. Geometric
resources are memoryless, so their busy ages all collapse to 1.

``solve_opt`` runs backward induction on a dense array over all states,
one axis per resource. ``evaluate_policy`` pushes a probability
distribution forward over reachable states only, so the two passes share
nothing but the transition rule.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .instance import Instance, InvalidInstanceError, require_valid
from .policies import NO_MATCH, Policy, State, check_action

MAX_GEOMETRIC_RESOURCES = 14
MAX_STATES = 10**7


class StateSpaceError(RuntimeError):
    """The instance is too large for exact dynamic programming."""

    def __init__(self, message: str, n_states: int) -> None:
        super().__init__(message)
        self.n_states = n_states


class UnreachableStateError(KeyError):
    pass


@dataclass(frozen=True)
class Axis:
    """Layout of one resource's states.

    Pre-decision index 0 is available and index e is busy at age e.
    ``transition`` maps post-decision states (the pre-decision ones plus
    ``matched``, a fresh match at age 0) to next-step pre-decision states.
    """

    size: int
    matched: int
    transition: np.ndarray


def _axis(dist) -> Axis:
    m = dist.max_duration
    if m is None:
        p = dist.p
        # just-matched and busy behave alike, so they share index 1
        return Axis(2, 1, np.array([[1.0, 0.0], [p, 1.0 - p]]))
    size = m
    M = np.zeros((m + 1, m))
    M[0, 0] = 1.0
    for e in range(1, m):
        h = dist.hazard(e)
        M[e, 0] = h
        if e + 1 < m:
            M[e, e + 1] = 1.0 - h
    h0 = dist.hazard(0)
    M[m, 0] = h0
    if m > 1:
        M[m, 1] = 1.0 - h0
    return Axis(size, m, M)


def state_space_size(instance: Instance) -> int:
    return math.prod(2 if d.max_duration is None else d.max_duration for d in instance.dists)


def check_guard(instance: Instance, max_states: int | None = None) -> int:
    """Return the number of states, raising :class:`StateSpaceError` past the guard."""
    n_states = state_space_size(instance)
    if max_states is not None:
        if n_states > max_states:
            raise StateSpaceError(f"{n_states} states exceeds the override limit {max_states}", n_states)
        return n_states
    if instance.all_geometric and instance.n_resources > MAX_GEOMETRIC_RESOURCES:
        raise StateSpaceError(
            f"geometric instance with N={instance.n_resources} > {MAX_GEOMETRIC_RESOURCES} "
            f"({n_states} states)",
            n_states,
        )
    if n_states > MAX_STATES:
        raise StateSpaceError(f"{n_states} age-augmented states exceeds {MAX_STATES}", n_states)
    return n_states


def estimated_bytes(instance: Instance) -> int:
    # one float64 value array and one int16 action array per step
    return state_space_size(instance) * (8 + 2) * (instance.horizon + 1)


def normalize_state(instance: Instance, state: State) -> State:
    """Collapse geometric ages to 1 and reject ages a resource can never reach."""
    out = []
    for i, (dist, age) in enumerate(zip(instance.dists, state)):
        m = dist.max_duration
        if m is None:
            out.append(min(age, 1))
        elif age >= m or age < 0:
            raise UnreachableStateError(f"resource {i} cannot be busy at age {age}")
        else:
            out.append(age)
    return tuple(out)


def _prepare(instance: Instance, max_states: int | None) -> list[Axis]:
    require_valid(instance, canonical=False)
    if not instance.is_canonical:
        raise InvalidInstanceError("instance must be canonical (rewards ascending)")
    check_guard(instance, max_states)
    return [_axis(d) for d in instance.dists]


def expected_next(values: np.ndarray, axes: list[Axis]) -> np.ndarray:
    """E[V(next state) | post-decision state], one resource axis at a time."""
    out = values
    for k, axis in enumerate(axes):
        out = np.moveaxis(np.tensordot(axis.transition, out, axes=([1], [k])), 0, k)
    return out


@dataclass
class ValueTable:
    """V_t and the optimal action for t = 1..T (index 0 unused); V_{T+1} = 0."""

    instance: Instance
    axes: list[Axis]
    values: list[np.ndarray]
    actions: list[np.ndarray]

    @property
    def opt_value(self) -> float:
        return float(self.values[1][(0,) * self.instance.n_resources])

    def value(self, t: int, state: State) -> float:
        return float(self.values[t][normalize_state(self.instance, state)])

    def best_action(self, t: int, state: State) -> int:
        if not 1 <= t <= self.instance.horizon:
            raise UnreachableStateError(f"step {t} outside 1..{self.instance.horizon}")
        return int(self.actions[t][normalize_state(self.instance, state)])


def solve_opt(instance: Instance, *, max_states: int | None = None) -> ValueTable:
    """Backward induction for the clairvoyant optimum.

    Ties between actions go to the largest resource index, with no-match
    chosen only when it is strictly better.
    """
    axes = _prepare(instance, max_states)
    n = instance.n_resources
    shape = tuple(a.size for a in axes)
    pre_block = tuple(slice(0, a.size) for a in axes)
    horizon = instance.horizon
    values: list[np.ndarray] = [np.empty(0)] * (horizon + 2)
    actions: list[np.ndarray] = [np.empty(0)] * (horizon + 1)
    values[horizon + 1] = np.zeros(shape)
    for t in range(horizon, 0, -1):
        cont = expected_next(values[t + 1], axes)
        best_val = np.full(shape, -np.inf)
        best_act = np.full(shape, NO_MATCH, dtype=np.int16)
        for a in sorted(instance.arrivals[t - 1], reverse=True):
            take = list(pre_block)
            take[a] = slice(axes[a].matched, axes[a].matched + 1)
            q = np.full(shape, -np.inf)
            free = [slice(None)] * n
            free[a] = slice(0, 1)
            q[tuple(free)] = instance.rewards[a] + cont[tuple(take)]
            better = q > best_val
            best_val[better] = q[better]
            best_act[better] = a
        idle = cont[pre_block]
        better = idle > best_val
        best_val[better] = idle[better]
        best_act[better] = NO_MATCH
        values[t] = best_val
        actions[t] = best_act
    return ValueTable(instance, axes, values, actions)


def opt_policy(table: ValueTable) -> Policy:
    """The optimal action table as a runnable policy."""
    instance = table.instance

    def decide(t: int, incident: frozenset, state: State, inst: Instance) -> int:
        return table.best_action(t, state)

    shape = tuple(a.size for a in table.axes)
    flat = [a.ravel() if a.size else a for a in table.actions]
    memoryless = np.array([d.max_duration is None for d in instance.dists])

    def decide_batch(t: int, incident_mask: np.ndarray, ages: np.ndarray, inst: Instance) -> np.ndarray:
        ages = np.where(memoryless[None, :], np.minimum(ages, 1), ages)
        if (ages >= np.array(shape)[None, :]).any():
            raise UnreachableStateError("batched lookup hit an age outside the table")
        return flat[t][np.ravel_multi_index(ages.T, shape)].astype(np.int64)

    return Policy("opt", decide, True, decide_batch)


def solve_and_policy(instance: Instance, **kwargs) -> tuple[ValueTable, Policy]:
    table = solve_opt(instance, **kwargs)
    return table, opt_policy(table)


def _successors(instance: Instance, state: State, matched: int):
    """Yield (next_state, prob) given the post-decision state."""
    options = []
    for i, (dist, age) in enumerate(zip(instance.dists, state)):
        if i == matched:
            age = 0
        elif age == 0:
            options.append(((0, 1.0),))
            continue
        h = dist.hazard(age)
        stay = 1 if dist.max_duration is None else age + 1
        outcomes = []
        if h > 0.0:
            outcomes.append((0, h))
        if h < 1.0:
            outcomes.append((stay, 1.0 - h))
        options.append(tuple(outcomes))
    for combo in itertools.product(*options):
        prob = 1.0
        for _, q in combo:
            prob *= q
        yield tuple(s for s, _ in combo), prob


@dataclass
class PolicyEvaluation:
    """Exact expectations for one policy.

    ``match_prob[t - 1, i]`` is Pr(A_t = i). ``best_available`` is
    E[sum_t r*(I_t)], the reward of the best available resource whether or
    not it is incident.
    """

    reward: float
    best_available: float
    match_prob: np.ndarray

    @property
    def alpha(self) -> float:
        return 1.0 if self.best_available == 0 else self.reward / self.best_available


def evaluate_policy_detailed(
    instance: Instance, policy: Policy, *, max_states: int | None = None
) -> PolicyEvaluation:
    if not policy.deterministic:
        raise ValueError(f"policy {policy.name!r} is not deterministic")
    _prepare(instance, max_states)
    n, horizon = instance.n_resources, instance.horizon
    r = instance.rewards
    dist: dict[State, float] = {(0,) * n: 1.0}
    reward_terms: list[float] = []
    best_terms: list[float] = []
    match_prob = np.zeros((horizon, n))
    for t in range(1, horizon + 1):
        incident = instance.arrivals[t - 1]
        nxt: dict[State, float] = defaultdict(float)
        for state, pr in dist.items():
            free = [i for i in range(n) if state[i] == 0]
            if free:
                best_terms.append(pr * r[free[-1]])
            a = policy.decide(t, incident, state, instance)
            check_action(a, incident, state)
            if a != NO_MATCH:
                reward_terms.append(pr * r[a])
                match_prob[t - 1, a] += pr
            for succ, q in _successors(instance, state, a):
                nxt[succ] += pr * q
        dist = nxt
    return PolicyEvaluation(math.fsum(reward_terms), math.fsum(best_terms), match_prob)


def evaluate_policy(instance: Instance, policy: Policy, *, max_states: int | None = None) -> float:
    """Exact expected total reward of a deterministic policy."""
    return evaluate_policy_detailed(instance, policy, max_states=max_states).reward
