"""Matching policies.

A policy maps (t, incident set, state, instance) to a resource index or
``NO_MATCH``. States are tuples of per-resource ages: 0 means available,
``e >= 1`` means busy for ``e`` steps since the match. Steps t are 1-based.

Policies may also carry a ``decide_batch`` that takes the incident set as a
boolean mask and a (runs, N) integer array of ages, returning one action per
run; the batched Monte Carlo path uses it when present.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .instance import Instance
from .rng import KIND_TABLE, uniform

NO_MATCH = -1

State = tuple[int, ...]
DecideFn = Callable[[int, frozenset, State, Instance], int]
BatchFn = Callable[[int, np.ndarray, np.ndarray, Instance], np.ndarray]


@dataclass(frozen=True)
class Policy:
    name: str
    decide: DecideFn
    deterministic: bool = True
    decide_batch: Optional[BatchFn] = None

    def __call__(self, t: int, incident: frozenset, state: State, instance: Instance) -> int:
        return self.decide(t, incident, state, instance)


class InfeasibleActionError(RuntimeError):
    pass


def check_action(action: int, incident: frozenset, state: State) -> None:
    if action != NO_MATCH and (action not in incident or state[action] != 0):
        raise InfeasibleActionError(f"resource {action} is not both incident and available")


def greedy_decide(t: int, incident: frozenset, state: State, instance: Instance) -> int:
    """Largest available incident index, i.e. the highest reward (ties go to the larger index)."""
    return max((i for i in incident if state[i] == 0), default=NO_MATCH)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def alpha_threshold_decide(alpha: float, t: int, incident: frozenset, state: State, instance: Instance) -> int:
    """Cheapest available incident resource worth at least alpha times Greedy's pick.

    Among equal rewards the larger index wins, so alpha = 1 reproduces Greedy.
    """
    _check_alpha(alpha)
    best = greedy_decide(t, incident, state, instance)
    if best == NO_MATCH:
        return NO_MATCH
    r = instance.rewards
    cutoff = alpha * r[best]
    qualifying = [i for i in incident if state[i] == 0 and r[i] >= cutoff]
    return min(qualifying, key=lambda i: (r[i], -i))


def _candidates(incident_mask: np.ndarray, ages: np.ndarray) -> np.ndarray:
    return (ages == 0) & incident_mask[None, :]


def _last_true(mask: np.ndarray) -> np.ndarray:
    n = mask.shape[1]
    idx = n - 1 - np.argmax(mask[:, ::-1], axis=1)
    return np.where(mask.any(axis=1), idx, NO_MATCH)


def greedy_batch(t: int, incident_mask: np.ndarray, ages: np.ndarray, instance: Instance) -> np.ndarray:
    return _last_true(_candidates(incident_mask, ages))


def _alpha_batch(alpha: float) -> BatchFn:
    def decide(t: int, incident_mask: np.ndarray, ages: np.ndarray, instance: Instance) -> np.ndarray:
        r = np.asarray(instance.rewards)
        cand = _candidates(incident_mask, ages)
        best = _last_true(cand)
        cutoff = alpha * r[np.maximum(best, 0)]
        qualifying = cand & (r[None, :] >= cutoff[:, None])
        cheapest = np.where(qualifying, r[None, :], np.inf).min(axis=1)
        pick = qualifying & (r[None, :] == cheapest[:, None])
        return np.where(best == NO_MATCH, NO_MATCH, _last_true(pick))

    return decide


def greedy() -> Policy:
    return Policy("greedy", greedy_decide, True, greedy_batch)


def alpha_threshold(alpha: float) -> Policy:
    _check_alpha(alpha)

    def decide(t: int, incident: frozenset, state: State, instance: Instance) -> int:
        return alpha_threshold_decide(alpha, t, incident, state, instance)

    return Policy(f"alpha-threshold({alpha:g})", decide, True, _alpha_batch(alpha))


def _never(t: int, incident: frozenset, state: State, instance: Instance) -> int:
    return NO_MATCH


def _never_batch(t: int, incident_mask: np.ndarray, ages: np.ndarray, instance: Instance) -> np.ndarray:
    return np.full(ages.shape[0], NO_MATCH)


def no_match() -> Policy:
    return Policy("no-match", _never, True, _never_batch)


def random_table(seed: int) -> Policy:
    """A fixed but arbitrary deterministic policy: hashes (t, state) to a feasible action."""

    def decide(t: int, incident: frozenset, state: State, instance: Instance) -> int:
        options = sorted(i for i in incident if state[i] == 0) + [NO_MATCH]
        u = uniform(seed, KIND_TABLE, t, *(min(a, 1) if _memoryless(instance, i) else a for i, a in enumerate(state)))
        return options[int(u * len(options))]

    return Policy(f"random-table({seed})", decide)


def _memoryless(instance: Instance, i: int) -> bool:
    return instance.dists[i].max_duration is None


def measured_alpha(source) -> float:
    """Ratio E[sum r_{A_t}] / E[sum r*(I_t)] for a policy.

    ``source`` is either an exact evaluation (anything with ``reward`` and
    ``best_available``) or an iterable of coupled traces, in which case the
    primary policy's totals are averaged over the runs.
    """
    if hasattr(source, "best_available") and hasattr(source, "reward"):
        earned, best = source.reward, source.best_available
    else:
        runs = list(source)
        earned = sum(tr.primary_reward for tr in runs)
        best = sum(tr.best_available for tr in runs)
    return 1.0 if best == 0 else earned / best
