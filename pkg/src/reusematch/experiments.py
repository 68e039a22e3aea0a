"""Batch checks of the competitive-ratio bounds and worst-case search."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .benchmark import StateSpaceError, evaluate_policy_detailed, solve_and_policy, solve_opt
from .instance import (
    GeneratorParams,
    Geometric,
    Instance,
    canonicalize,
    make_instance,
    nonreusable,
    random_instance,
    tight_example,
)
from .oracle import enumerate_bernoulli
from .policies import Policy, alpha_threshold, greedy

BOUND_TOL = 1e-9

BOUNDS = ("theorem1", "theorem2", "theorem3", "theorem3-geometric")


def bound_value(name: str, p: float, alpha: float = 1.0) -> float:
    if name == "theorem1":
        return 1.0 / (2.0 - p)
    if name == "theorem2":
        return (1.0 + p) / 2.0
    if alpha <= 0.0:
        return 0.0
    if name == "theorem3":
        return 1.0 / (1.0 - p + 1.0 / alpha)
    if name == "theorem3-geometric":
        return 1.0 / ((1.0 - p) / (1.0 + p) + 1.0 / alpha)
    raise ValueError(f"unknown bound {name!r}")


@dataclass
class BoundReport:
    instance_id: str
    p_min: float
    policy: str
    policy_value: float
    opt_value: float
    ratio: float
    bound_name: str
    bound: float
    alpha: float | None = None
    error: str | None = None

    @property
    def margin(self) -> float:
        return self.ratio - self.bound

    @property
    def passed(self) -> bool:
        return self.error is None and self.margin >= -BOUND_TOL

    def to_json(self) -> dict:
        return {
            "instance": self.instance_id,
            "p_min": self.p_min,
            "policy": self.policy,
            "policy_value": self.policy_value,
            "opt_value": self.opt_value,
            "ratio": self.ratio,
            "bound_name": self.bound_name,
            "bound": self.bound,
            "margin": self.margin,
            "alpha": self.alpha,
            "passed": self.passed,
            "error": self.error,
        }


def _policy_for(choice: str | float | Policy) -> Policy:
    if isinstance(choice, Policy):
        return choice
    if choice == "greedy":
        return greedy()
    return alpha_threshold(float(choice))


def bound_report(instance: Instance, policy: str | float | Policy = "greedy", bound: str = "theorem2") -> BoundReport:
    pol = _policy_for(policy)
    ident = instance.digest()[:12]
    p = instance.p_min()
    if bound in ("theorem2", "theorem3-geometric") and not instance.all_geometric:
        return BoundReport(ident, p, pol.name, math.nan, math.nan, math.nan, bound, math.nan,
                           error=f"{bound} needs geometric durations")
    try:
        opt = solve_opt(instance).opt_value
        ev = evaluate_policy_detailed(instance, pol)
    except StateSpaceError as exc:
        return BoundReport(ident, p, pol.name, math.nan, math.nan, math.nan, bound, math.nan, error=str(exc))
    ratio = 1.0 if opt == 0 else ev.reward / opt
    alpha = ev.alpha if bound.startswith("theorem3") else None
    return BoundReport(ident, p, pol.name, ev.reward, opt, ratio, bound, bound_value(bound, p, alpha or 1.0), alpha)


def verify_bounds(
    corpus: Iterable[Instance], policy: str | float | Policy = "greedy", bound: str = "theorem2"
) -> list[BoundReport]:
    """One report per instance; guard violations are reported, not raised."""
    return [bound_report(inst, policy, bound) for inst in corpus]


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------

CORPUS_KINDS = ("geometric", "mixed", "enumeration", "unit-return", "finite")


def make_corpus(kind: str, count: int, seed: int = 0) -> list[Instance]:
    """Seeded random corpora used by the acceptance checks.

    geometric:   N <= 4, T <= 6, p_i in [0.05, 1]
    mixed:       N <= 3, T <= 5, finite supports up to 3 steps and geometric
    enumeration: geometric, N <= 4, N*T <= 16
    unit-return: geometric with every p_i = 1
    finite:      finite supports only, small enough for the stack oracle
    """
    if kind not in CORPUS_KINDS:
        raise ValueError(f"unknown corpus kind {kind!r}")
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k, CORPUS_KINDS.index(kind)])
        sub_seed = int(rng.integers(2**63))
        density = float(rng.uniform(0.3, 1.0))
        if kind == "geometric":
            n, horizon = int(rng.integers(1, 5)), int(rng.integers(1, 7))
            params = GeneratorParams(n, horizon, "geometric", 0.05, 1.0, density)
        elif kind == "mixed":
            n, horizon = int(rng.integers(1, 4)), int(rng.integers(1, 6))
            params = GeneratorParams(n, horizon, "mixed", 0.05, 1.0, density, max_duration=3)
        elif kind == "enumeration":
            n = int(rng.integers(1, 5))
            horizon = int(rng.integers(1, min(16 // n, 8) + 1))
            params = GeneratorParams(n, horizon, "geometric", 0.05, 1.0, density)
        elif kind == "unit-return":
            n, horizon = int(rng.integers(1, 5)), int(rng.integers(1, 7))
            params = GeneratorParams(n, horizon, "geometric", 1.0, 1.0, density)
        else:
            n, horizon = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            params = GeneratorParams(n, horizon, "finite", density=density, max_duration=3)
        out.append(random_instance(params, sub_seed))
    return out


# ---------------------------------------------------------------------------
# tight example sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    p: float
    delta: float
    ratio: float
    closed_form: float
    greedy_value: float
    opt_value: float

    @property
    def difference(self) -> float:
        return abs(self.ratio - self.closed_form)

    @property
    def gap(self) -> float:
        return self.ratio - (1.0 + self.p) / 2.0


def tight_closed_form(p: float, delta: float) -> float:
    """Greedy/OPT on the two-step example.

    OPT either takes resource 1 then 2 (worth 2 + delta) or resource 2 twice
    (worth (1 + p)(1 + delta)); the second wins only when p(1 + delta) > 1.
    """
    greedy_value = (1 + p) * (1 + delta)
    return greedy_value / max(2 + delta, greedy_value)


def sweep_tight_example(p_grid: Sequence[float], delta_grid: Sequence[float]) -> list[SweepRow]:
    rows = []
    for p in p_grid:
        for delta in delta_grid:
            inst = tight_example(p, delta)
            opt = solve_opt(inst).opt_value
            g = evaluate_policy_detailed(inst, greedy()).reward
            rows.append(SweepRow(p, delta, g / opt, tight_closed_form(p, delta), g, opt))
    return rows


# ---------------------------------------------------------------------------
# worst-case search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchParams:
    """Hill-climbing setup. family is "geometric" or "nonreusable"."""

    n_resources: int = 2
    horizon: int = 2
    p_min: float = 0.5
    family: str = "geometric"
    density: float = 0.6
    chains: int = 8
    keep: int = 5


@dataclass
class SearchResult:
    instance: Instance
    report: BoundReport


def _ratio(instance: Instance) -> float:
    opt = solve_opt(instance).opt_value
    if opt == 0:
        return 1.0
    return evaluate_policy_detailed(instance, greedy()).reward / opt


def _seed_instance(params: SearchParams, rng: np.random.Generator) -> Instance:
    n, horizon = params.n_resources, params.horizon
    rewards = rng.uniform(0.1, 1.0, n)
    if params.family == "geometric":
        ps = rng.uniform(params.p_min, 1.0, n)
        ps[rng.integers(n)] = params.p_min
        dists = [Geometric(float(x)) for x in ps]
    else:
        dists = [nonreusable(horizon)] * n
    edges = rng.random((horizon, n)) < params.density
    arrivals = [np.flatnonzero(row).tolist() for row in edges]
    return canonicalize(make_instance(rewards.tolist(), dists, arrivals))


def _neighbor(inst: Instance, params: SearchParams, rng: np.random.Generator) -> Instance:
    n, horizon = inst.n_resources, inst.horizon
    rewards, dists = list(inst.rewards), list(inst.dists)
    arrivals = [set(a) for a in inst.arrivals]
    moves = ["edge", "reward"] + (["p"] if params.family == "geometric" and n > 1 else [])
    move = moves[rng.integers(len(moves))]
    if move == "edge":
        t, i = int(rng.integers(horizon)), int(rng.integers(n))
        arrivals[t] ^= {i}
    elif move == "reward":
        i = int(rng.integers(n))
        rewards[i] *= float(rng.uniform(0.9, 1.1))
    else:
        i = int(rng.integers(n))
        ps = [d.p for d in dists]
        others = [x for k, x in enumerate(ps) if k != i]
        new_p = min(1.0, max(params.p_min, ps[i] * float(rng.uniform(0.9, 1.1))))
        if min(others) > params.p_min:
            # i carries the minimum; keep it there
            new_p = params.p_min
        dists[i] = Geometric(new_p)
    return canonicalize(make_instance(rewards, dists, arrivals))


def ratio_search(params: SearchParams, seed: int, budget: int) -> list[SearchResult]:
    """Randomised hill climbing on Greedy/OPT at fixed p_min; returns the worst instances seen.

    Chains take turns; a move is kept only if it strictly lowers the ratio.
    """
    if params.family not in ("geometric", "nonreusable"):
        raise ValueError(f"unknown search family {params.family!r}")
    if params.family == "geometric" and not 0.0 < params.p_min <= 1.0:
        raise ValueError("geometric search needs 0 < p_min <= 1; use the nonreusable family for p = 0")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(seed)
    bound = "theorem2" if params.family == "geometric" else "theorem1"
    current = [_seed_instance(params, rng) for _ in range(params.chains)]
    scores = [_ratio(x) for x in current]
    seen: dict[str, tuple[float, Instance]] = {}
    for inst, score in zip(current, scores):
        seen[inst.digest()] = (score, inst)
    for step in range(budget):
        c = step % params.chains
        cand = _neighbor(current[c], params, rng)
        score = _ratio(cand)
        seen.setdefault(cand.digest(), (score, cand))
        if score < scores[c]:
            current[c], scores[c] = cand, score
    worst = heapq.nsmallest(params.keep, seen.values(), key=lambda x: x[0])
    return [SearchResult(inst, bound_report(inst, "greedy", bound)) for _, inst in worst]


# ---------------------------------------------------------------------------
# decomposition probe
# ---------------------------------------------------------------------------


@dataclass
class DecompositionRow:
    instance_id: str
    first_term: float
    greedy_value: float
    witnesses: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.first_term <= self.greedy_value + 1e-12


def eq1_monitor(corpus: Iterable[Instance]) -> list[DecompositionRow]:
    """Compare E[sum r_i 1(A*_t = i, not O_it)] with Greedy's value, exactly.

    Pathwise witnesses (atom, t, i) mark steps where the benchmark took i
    without O_it while Greedy earned less; they may exist even when the
    inequality holds in expectation.
    """
    rows = []
    for inst in corpus:
        _, opt = solve_and_policy(inst)
        table = enumerate_bernoulli(inst, greedy(), opt)
        rows.append(DecompositionRow(inst.digest()[:12], table.first_term, table.primary_reward, table.witnesses))
    return rows
