"""Instances of online matching with reusable resources.

Resources are indexed from 0 in code; human-readable reports number them
from 1. A canonical instance keeps rewards in ascending order so that the
largest available index is also the highest-reward resource.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

PMF_TOL = 1e-12
MAX_GEN_RESOURCES = 14
MAX_GEN_HORIZON = 20


class InvalidInstanceError(ValueError):
    """Raised when an operation needs a valid (or canonical) instance."""


@dataclass(frozen=True)
class Geometric:
    """Usage duration D with Pr(D = d) = p (1 - p)^(d - 1), d >= 1."""

    p: float

    def prob_one(self) -> float:
        return float(self.p)

    @property
    def max_duration(self) -> int | None:
        return None

    def hazard(self, age: int) -> float:
        return float(self.p)

    def sample(self, u: float) -> int:
        if self.p >= 1.0:
            return 1
        # inverse CDF; Pr(D = 1) = Pr(u < p)
        return 1 + int(math.floor(math.log1p(-u) / math.log1p(-self.p)))

    def to_json(self) -> dict:
        return {"type": "geometric", "p": self.p}


@dataclass(frozen=True)
class FiniteSupport:
    """Usage duration with a finite pmf given as ((duration, prob), ...)."""

    pmf: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pmf", tuple((int(d), float(q)) for d, q in self.pmf))

    @classmethod
    def point(cls, duration: int) -> "FiniteSupport":
        return cls(((duration, 1.0),))

    def prob_one(self) -> float:
        return sum(q for d, q in self.pmf if d == 1)

    @property
    def max_duration(self) -> int:
        return max(d for d, _ in self.pmf)

    def survival(self, age: int) -> float:
        """Pr(D > age), summed from the tail."""
        return math.fsum(q for d, q in self.pmf if d > age)

    @cached_property
    def _hazards(self) -> tuple[float, ...]:
        out = []
        for age in range(self.max_duration):
            tail = self.survival(age)
            here = sum(q for d, q in self.pmf if d == age + 1)
            out.append(1.0 if tail <= 0.0 else min(1.0, here / tail))
        return tuple(out)

    def hazard(self, age: int) -> float:
        """Pr(D = age + 1 | D > age)."""
        if age >= self.max_duration:
            return 1.0
        return self._hazards[age]

    def sample(self, u: float) -> int:
        acc = 0.0
        for d, q in self.pmf:
            acc += q
            if u < acc:
                return d
        return self.pmf[-1][0]

    def to_json(self) -> dict:
        return {"type": "finite", "pmf": [[d, q] for d, q in self.pmf]}


Distribution = Union[Geometric, FiniteSupport]


def nonreusable(horizon: int) -> FiniteSupport:
    """A duration that never returns within ``horizon`` steps."""
    return FiniteSupport.point(horizon + 1)


@dataclass(frozen=True)
class Instance:
    """Rewards, duration distributions and arrival neighborhoods N_1..N_T.

    ``origin[k]`` is the index resource ``k`` had before canonical sorting.
    """

    rewards: tuple[float, ...]
    dists: tuple[Distribution, ...]
    arrivals: tuple[frozenset[int], ...]
    origin: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        object.__setattr__(self, "dists", tuple(self.dists))
        object.__setattr__(self, "arrivals", tuple(frozenset(int(i) for i in a) for a in self.arrivals))
        if not self.origin:
            object.__setattr__(self, "origin", tuple(range(len(self.rewards))))

    @property
    def n_resources(self) -> int:
        return len(self.rewards)

    @property
    def horizon(self) -> int:
        return len(self.arrivals)

    @property
    def is_canonical(self) -> bool:
        return all(a <= b for a, b in zip(self.rewards, self.rewards[1:]))

    @property
    def all_geometric(self) -> bool:
        return all(isinstance(d, Geometric) for d in self.dists)

    @property
    def all_finite(self) -> bool:
        return all(isinstance(d, FiniteSupport) for d in self.dists)

    def p_min(self) -> float:
        return p_min(self)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "T": self.horizon,
            "resources": [{"reward": r, "dist": d.to_json()} for r, d in zip(self.rewards, self.dists)],
            "arrivals": [sorted(a) for a in self.arrivals],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ValidationReport:
    violations: list[str]
    permutation: tuple[int, ...] | None = None

    @property
    def ok(self) -> bool:
        return not self.violations


def _dist_violations(k: int, dist: Distribution) -> list[str]:
    where = f"resources[{k}]"
    if isinstance(dist, Geometric):
        if not (0.0 < dist.p <= 1.0):
            return [f"{where}: geometric p={dist.p} outside (0, 1]"]
        return []
    out = []
    if not dist.pmf:
        return [f"{where}: empty pmf"]
    durations = [d for d, _ in dist.pmf]
    if any(d < 1 for d in durations):
        out.append(f"{where}: durations must be >= 1")
    if any(b <= a for a, b in zip(durations, durations[1:])):
        out.append(f"{where}: durations must be strictly increasing")
    if any(not (0.0 <= q <= 1.0) for _, q in dist.pmf):
        out.append(f"{where}: probabilities must lie in [0, 1]")
    total = math.fsum(q for _, q in dist.pmf)
    if abs(total - 1.0) > PMF_TOL:
        out.append(f"{where}: pmf sums to {total:.12g}")
    return out


def validate(instance: Instance) -> ValidationReport:
    """Collect every problem with ``instance`` instead of raising."""
    violations: list[str] = []
    n = instance.n_resources
    if n < 1:
        violations.append("instance needs at least one resource")
    if instance.horizon < 1:
        violations.append("horizon T must be >= 1")
    if len(instance.dists) != n:
        violations.append(f"{len(instance.dists)} distributions for {n} rewards")
    for k, r in enumerate(instance.rewards):
        if not (r >= 0.0 and math.isfinite(r)):
            violations.append(f"resources[{k}]: reward {r} must be finite and >= 0")
    for k, dist in enumerate(instance.dists):
        violations.extend(_dist_violations(k, dist))
    for t, arrival in enumerate(instance.arrivals):
        for i in sorted(arrival):
            if not 0 <= i < n:
                violations.append(f"arrivals[{t}]: index {i} out of range [0, {n})")
    permutation = None
    if not instance.is_canonical:
        permutation = _sort_order(instance.rewards)
        violations.append(f"rewards not ascending; canonical order is {list(permutation)}")
    return ValidationReport(violations, permutation)


def require_valid(instance: Instance, *, canonical: bool = True) -> None:
    report = validate(instance)
    problems = report.violations
    if not canonical and report.permutation is not None:
        problems = problems[:-1]
    if problems:
        raise InvalidInstanceError("; ".join(problems))


def _sort_order(rewards: Sequence[float]) -> tuple[int, ...]:
    # stable, so tied rewards keep their relative order
    return tuple(sorted(range(len(rewards)), key=lambda k: rewards[k]))


def canonicalize(instance: Instance) -> Instance:
    """Sort resources by ascending reward and relabel the arrival sets."""
    order = _sort_order(instance.rewards)
    if order == tuple(range(instance.n_resources)):
        return instance
    position = {old: new for new, old in enumerate(order)}
    return Instance(
        rewards=tuple(instance.rewards[k] for k in order),
        dists=tuple(instance.dists[k] for k in order),
        arrivals=tuple(frozenset(position[i] for i in a if i in position) for a in instance.arrivals),
        origin=tuple(instance.origin[k] for k in order),
    )


def p_min(instance: Instance) -> float:
    """Smallest probability, over resources, of returning after one step."""
    return min(d.prob_one() for d in instance.dists)


def tight_example(p: float, delta: float) -> Instance:
    """Two resources, two steps: Greedy earns (1+p)(1+delta) against OPT = 2+delta."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    horizon = 2
    dist: Distribution = Geometric(p) if p > 0 else nonreusable(horizon)
    return Instance(
        rewards=(1.0, 1.0 + delta),
        dists=(dist, dist),
        arrivals=(frozenset({0, 1}), frozenset({1})),
    )


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs for :func:`random_instance`.

    family is one of "geometric", "finite", "mixed" or "nonreusable".
    """

    n_resources: int
    horizon: int
    family: str = "geometric"
    p_low: float = 0.2
    p_high: float = 0.8
    density: float = 0.7
    max_duration: int = 3
    reward_low: float = 0.0
    reward_high: float = 1.0

    def check(self) -> None:
        if not 1 <= self.n_resources <= MAX_GEN_RESOURCES:
            raise ValueError(f"n_resources must be in [1, {MAX_GEN_RESOURCES}]")
        if not 1 <= self.horizon <= MAX_GEN_HORIZON:
            raise ValueError(f"horizon must be in [1, {MAX_GEN_HORIZON}]")
        if self.family not in ("geometric", "finite", "mixed", "nonreusable"):
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 < self.p_low <= self.p_high <= 1.0:
            raise ValueError("need 0 < p_low <= p_high <= 1")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")
        if self.max_duration < 1:
            raise ValueError("max_duration must be >= 1")
        if not 0.0 <= self.reward_low <= self.reward_high:
            raise ValueError("need 0 <= reward_low <= reward_high")


def _random_pmf(rng: np.random.Generator, max_duration: int) -> FiniteSupport:
    weights = rng.dirichlet(np.ones(max_duration))
    if max_duration > 1 and rng.random() < 0.4:
        # drop some support points so Pr(D = 1) = 0 and gaps both show up
        keep = rng.random(max_duration) < 0.5
        if not keep.any():
            keep[rng.integers(max_duration)] = True
        weights = np.where(keep, weights, 0.0)
    weights = weights / weights.sum()
    return FiniteSupport(tuple((d + 1, float(q)) for d, q in enumerate(weights) if q > 0))


def _random_dist(rng: np.random.Generator, params: GeneratorParams) -> Distribution:
    family = params.family
    if family == "mixed":
        family = "geometric" if rng.random() < 0.5 else "finite"
    if family == "geometric":
        return Geometric(float(rng.uniform(params.p_low, params.p_high)))
    if family == "finite":
        return _random_pmf(rng, params.max_duration)
    return nonreusable(params.horizon)


def random_instance(params: GeneratorParams, seed: int) -> Instance:
    """A canonical random instance; a pure function of ``(params, seed)``."""
    params.check()
    rng = np.random.default_rng(seed)
    n, horizon = params.n_resources, params.horizon
    rewards = rng.uniform(params.reward_low, params.reward_high, size=n)
    dists = [_random_dist(rng, params) for _ in range(n)]
    edges = rng.random((horizon, n)) < params.density
    arrivals = [frozenset(int(i) for i in np.flatnonzero(row)) for row in edges]
    sorted_inst = canonicalize(Instance(tuple(float(r) for r in rewards), tuple(dists), tuple(arrivals)))
    # a generated instance has no prior labelling to remember
    return Instance(sorted_inst.rewards, sorted_inst.dists, sorted_inst.arrivals)


def make_instance(
    rewards: Iterable[float], dists: Iterable[Distribution], arrivals: Iterable[Iterable[int]]
) -> Instance:
    return Instance(tuple(rewards), tuple(dists), tuple(frozenset(a) for a in arrivals))
