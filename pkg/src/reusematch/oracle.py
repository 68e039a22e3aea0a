"""Exact coupled-event probabilities by exhaustive enumeration.

Both engines replay the primary policy and the benchmark on every
realisation of the randomness and weight the outcome by its probability.
Nothing here shares code with the simulator or the dynamic program, so the
three can certify each other.

``enumerate_bernoulli`` walks the return indicators P_it. In the default
lazy mode it only branches on P_it for resources busy in at least one
system at step t; every other indicator cannot change the replay, so summing
it out is exact. ``exhaustive=True`` branches on the full {0,1}^(N x T)
matrix instead and exists to cross-check the lazy walk.

``enumerate_stack`` branches on every fresh duration draw of the stack
coupling, weighting each branch by its pmf value.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .instance import Geometric, Instance
from .policies import NO_MATCH, Policy, check_action

MAX_BERNOULLI_CELLS = 20
MAX_STACK_BRANCHES = 10**6
TOL = 1e-12


class OracleSizeError(RuntimeError):
    pass


@dataclass
class ExactEventTable:
    """Exact expectations under one coupling; arrays are indexed [i, t - 1].

    ``lost_prob`` is Pr(A*_t = i, O_it), ``coincide_prob`` is
    Pr(A*_t = A_t = i) and ``f_gap_prob`` is Pr(F_{i,t-1}, not F*_{i,t-1}),
    with ``f_gap_bench_prob`` the same event intersected with A*_t = i.
    ``witnesses`` lists (atom, t, i) where the benchmark took i without O_it
    while the primary earned less than r_i at that step.
    """

    scheme: str
    primary_reward: float
    benchmark_reward: float
    lost: float
    first_term: float
    best_available: float
    coincidence: float
    lost_prob: np.ndarray
    coincide_prob: np.ndarray
    primary_match_prob: np.ndarray
    bench_match_prob: np.ndarray
    f_gap_prob: np.ndarray
    f_gap_bench_prob: np.ndarray
    total_mass: float
    atoms: int
    claim_violations: list[str] = field(default_factory=list)
    witnesses: list[tuple] = field(default_factory=list)


class _Sums:
    """Order-independent accumulation (math.fsum per key)."""

    def __init__(self) -> None:
        self.terms: dict = defaultdict(list)

    def add(self, key, value: float) -> None:
        if value:
            self.terms[key].append(value)

    def get(self, key) -> float:
        return math.fsum(self.terms.get(key, ()))

    def grid(self, name: str, n: int, horizon: int) -> np.ndarray:
        out = np.zeros((n, horizon))
        for i in range(n):
            for t in range(1, horizon + 1):
                out[i, t - 1] = self.get((name, i, t))
        return out


@dataclass
class _Path:
    """Replay state shared by both engines; copied on every branch."""

    busy: tuple[bool, ...]
    busy_star: tuple[bool, ...]
    last_match: tuple[int, ...]
    coincident_last: tuple[bool, ...]
    used_taus: tuple[frozenset, ...]
    f_prev: tuple[bool, ...]
    fstar_prev: tuple[bool, ...]
    atom: tuple


class _Replay:
    def __init__(self, instance: Instance, primary: Policy, benchmark: Policy, scheme: str) -> None:
        for pol in (primary, benchmark):
            if not pol.deterministic:
                raise ValueError(f"policy {pol.name!r} is not deterministic")
        self.inst = instance
        self.primary = primary
        self.benchmark = benchmark
        self.scheme = scheme
        self.sums = _Sums()
        self.violations: list[str] = []
        self.witnesses: list[tuple] = []
        self.atoms = 0

    def step(self, t: int, w: float, path: _Path, ages, ages_star) -> tuple[int, int, _Path]:
        """Decide and record step t; returns the actions and the path after matching."""
        inst, s = self.inst, self.sums
        n, r = inst.n_resources, inst.rewards
        incident = inst.arrivals[t - 1]
        a = self.primary.decide(t, incident, ages, inst)
        b = self.benchmark.decide(t, incident, ages_star, inst)
        check_action(a, incident, ages)
        check_action(b, incident, ages_star)
        free = [i for i in range(n) if not path.busy[i]]
        if free:
            s.add("best", w * r[max(free)])
        if t > 1:
            for i in range(n):
                if path.f_prev[i] and not path.fstar_prev[i]:
                    s.add(("fgap", i, t), w)
                    if b == i:
                        s.add(("fgap_b", i, t), w)
        if a != NO_MATCH:
            s.add("primary", w * r[a])
            s.add(("pmatch", a, t), w)
        used = list(path.used_taus)
        if b != NO_MATCH:
            s.add("bench", w * r[b])
            s.add(("bmatch", b, t), w)
            blocked = all(path.busy[j] for j in range(b, n))
            if blocked:
                s.add("lost", w * r[b])
                s.add(("lost", b, t), w)
                tau = path.last_match[b]
                if tau == 0:
                    self.violations.append(f"{path.atom}: lost match on {b + 1} at t={t} with tau=0")
                if tau in used[b]:
                    self.violations.append(f"claim 1 {path.atom}: resource {b + 1}, t={t}, tau={tau}")
                if path.coincident_last[b]:
                    self.violations.append(f"claim 2 {path.atom}: resource {b + 1}, t={t}, tau={tau}")
                if self.scheme == "bernoulli" and not (path.f_prev[b] and not path.fstar_prev[b]):
                    self.violations.append(f"F-history {path.atom}: resource {b + 1}, t={t}")
                used[b] = used[b] | {tau}
            else:
                s.add("first", w * r[b])
                earned = r[a] if a != NO_MATCH else 0.0
                if r[b] > earned and len(self.witnesses) < 20:
                    self.witnesses.append((path.atom, t, b))
        coincident = a != NO_MATCH and a == b
        if coincident:
            s.add("coincide", w * r[a])
            s.add(("coincide", a, t), w)
        busy, busy_star = list(path.busy), list(path.busy_star)
        last, coinc = list(path.last_match), list(path.coincident_last)
        if a != NO_MATCH:
            busy[a] = True
            last[a] = t
            coinc[a] = coincident
        if b != NO_MATCH:
            busy_star[b] = True
        after = _Path(
            tuple(busy), tuple(busy_star), tuple(last), tuple(coinc), tuple(used),
            tuple(busy), tuple(busy_star), path.atom,
        )
        return a, b, after

    def leaf(self, w: float) -> None:
        self.atoms += 1
        self.sums.add("mass", w)

    def table(self) -> ExactEventTable:
        s, n, horizon = self.sums, self.inst.n_resources, self.inst.horizon
        return ExactEventTable(
            scheme=self.scheme,
            primary_reward=s.get("primary"),
            benchmark_reward=s.get("bench"),
            lost=s.get("lost"),
            first_term=s.get("first"),
            best_available=s.get("best"),
            coincidence=s.get("coincide"),
            lost_prob=s.grid("lost", n, horizon),
            coincide_prob=s.grid("coincide", n, horizon),
            primary_match_prob=s.grid("pmatch", n, horizon),
            bench_match_prob=s.grid("bmatch", n, horizon),
            f_gap_prob=s.grid("fgap", n, horizon),
            f_gap_bench_prob=s.grid("fgap_b", n, horizon),
            total_mass=s.get("mass"),
            atoms=self.atoms,
            claim_violations=self.violations,
            witnesses=self.witnesses,
        )


def _start(n: int) -> _Path:
    no = (False,) * n
    return _Path(no, no, (0,) * n, no, (frozenset(),) * n, no, no, ())


def enumerate_bernoulli(
    instance: Instance, primary: Policy, benchmark: Policy, *, exhaustive: bool = False
) -> ExactEventTable:
    """Exact event table under the shared-Bernoulli coupling."""
    if not instance.all_geometric:
        raise ValueError("enumerate_bernoulli needs every resource to be geometric")
    n, horizon = instance.n_resources, instance.horizon
    if n * horizon > MAX_BERNOULLI_CELLS:
        raise OracleSizeError(f"N*T = {n * horizon} exceeds {MAX_BERNOULLI_CELLS}")
    p = [d.p for d in instance.dists]
    replay = _Replay(instance, primary, benchmark, "bernoulli")

    def walk(t: int, w: float, path: _Path) -> None:
        if t > horizon:
            replay.leaf(w)
            return
        if exhaustive:
            branch_on = list(range(n))
        else:
            branch_on = [i for i in range(n) if path.busy[i] or path.busy_star[i]]
        for bits in itertools.product((0, 1), repeat=len(branch_on)):
            weight = w
            busy, busy_star = list(path.busy), list(path.busy_star)
            for i, bit in zip(branch_on, bits):
                weight *= p[i] if bit else 1.0 - p[i]
                if bit:
                    busy[i] = busy_star[i] = False
            if weight == 0.0:
                continue
            here = _Path(
                tuple(busy), tuple(busy_star), path.last_match, path.coincident_last,
                path.used_taus, path.f_prev, path.fstar_prev,
                path.atom + tuple((i + 1, t, bit) for i, bit in zip(branch_on, bits)),
            )
            ages = tuple(int(x) for x in here.busy)
            ages_star = tuple(int(x) for x in here.busy_star)
            _, _, after = replay.step(t, weight, here, ages, ages_star)
            walk(t + 1, weight, after)

    walk(1, 1.0, _start(n))
    return replay.table()


def enumerate_stack(instance: Instance, primary: Policy, benchmark: Policy) -> ExactEventTable:
    """Exact event table under the LIFO stack coupling (finite supports only)."""
    if any(isinstance(d, Geometric) for d in instance.dists):
        raise ValueError("enumerate_stack needs finite-support distributions; use enumerate_bernoulli")
    n, horizon = instance.n_resources, instance.horizon
    pmfs = [[(d, q) for d, q in dist.pmf if q > 0] for dist in instance.dists]
    replay = _Replay(instance, primary, benchmark, "stack")

    def walk(t: int, w: float, path: _Path, due, due_star, since, since_star, stacks) -> None:
        if t > horizon:
            replay.leaf(w)
            if replay.atoms > MAX_STACK_BRANCHES:
                raise OracleSizeError(f"more than {MAX_STACK_BRANCHES} branches")
            return
        busy = tuple(path.busy[i] and due[i] > t for i in range(n))
        busy_star = tuple(path.busy_star[i] and due_star[i] > t for i in range(n))
        ages = tuple(t - since[i] if busy[i] else 0 for i in range(n))
        ages_star = tuple(t - since_star[i] if busy_star[i] else 0 for i in range(n))
        here = _Path(busy, busy_star, path.last_match, path.coincident_last, path.used_taus,
                     path.f_prev, path.fstar_prev, path.atom)
        a, b, after = replay.step(t, w, here, ages, ages_star)
        since, since_star = list(since), list(since_star)
        if a != NO_MATCH:
            since[a] = t
        if b != NO_MATCH:
            since_star[b] = t

        # branches: (prob, primary duration or None, benchmark duration or None, pushed?, popped?)
        if a != NO_MATCH and a == b:
            branches = [(q, d, d, False, False) for d, q in pmfs[a]]
        else:
            prim = [(1.0, None)] if a == NO_MATCH else [(q, d) for d, q in pmfs[a]]
            if b == NO_MATCH:
                bench = [(1.0, None, False)]
            elif stacks[b]:
                bench = [(1.0, stacks[b][-1], True)]
            else:
                bench = [(q, d, False) for d, q in pmfs[b]]
            branches = [
                (qa * qb, da, db, da is not None, popped)
                for (qa, da), (qb, db, popped) in itertools.product(prim, bench)
            ]
        for q, da, db, pushed, popped in branches:
            nd, nd_star = list(due), list(due_star)
            nstacks = [list(st) for st in stacks]
            if da is not None:
                nd[a] = t + da
            if pushed:
                nstacks[a].append(da)
            if db is not None:
                nd_star[b] = t + db
            if popped:
                nstacks[b].pop()
            atom = after.atom + ((t, da, db),)
            nxt = _Path(after.busy, after.busy_star, after.last_match, after.coincident_last,
                        after.used_taus, after.f_prev, after.fstar_prev, atom)
            walk(t + 1, w * q, nxt, nd, nd_star, since, since_star, nstacks)

    walk(1, 1.0, _start(n), [0] * n, [0] * n, [0] * n, [0] * n, [[] for _ in range(n)])
    return replay.table()


@dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float
    tol: float = TOL

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.tol


@dataclass
class CoincidenceRow:
    i: int  # 0-based
    t: int
    coincide: float  # Pr(A*_t = A_t = i)
    scaled_lost: float  # p/(1-p) Pr(A*_t = i, O_it), or Pr(A*_t = i, O_it) itself when p = 1

    @property
    def margin(self) -> float:
        return self.coincide - self.scaled_lost

    @property
    def passed(self) -> bool:
        return self.margin >= -TOL


@dataclass
class CheckReport:
    rows: list[CoincidenceRow]

    @property
    def ok(self) -> bool:
        return all(row.passed for row in self.rows)

    @property
    def violations(self) -> list[CoincidenceRow]:
        return [row for row in self.rows if not row.passed]

    def row(self, i: int, t: int) -> CoincidenceRow:
        return next(x for x in self.rows if x.i == i and x.t == t)


def lemma1_check(table: ExactEventTable, instance: Instance) -> CheckReport:
    """Pr(A*_t = A_t = i) >= p/(1-p) Pr(A*_t = i, O_it) for every (i, t).

    At p = 1 the right side is read as "Pr(A*_t = i, O_it) must vanish",
    which avoids dividing by 1 - p.
    """
    p = instance.p_min()
    rows = []
    for i in range(instance.n_resources):
        for t in range(1, instance.horizon + 1):
            lost = float(table.lost_prob[i, t - 1])
            if p >= 1.0:
                rows.append(CoincidenceRow(i, t, 0.0, lost))
            else:
                rows.append(CoincidenceRow(i, t, float(table.coincide_prob[i, t - 1]), p / (1.0 - p) * lost))
    return CheckReport(rows)


def proposition_checks(table: ExactEventTable, instance: Instance) -> dict[str, Check]:
    """The LOST bounds and the OPT <= primary + LOST decomposition, as lhs <= rhs checks."""
    p = instance.p_min()
    g = table.primary_reward
    out = {
        "decomposition": Check("decomposition", table.benchmark_reward, g + table.lost),
        "prop1": Check("prop1", table.lost, (1.0 - p) * g),
    }
    if instance.all_geometric:
        out["prop2"] = Check("prop2", table.lost, (1.0 - p) / (1.0 + p) * g)
        out["prop3"] = Check("prop3", table.lost, (1.0 - p) * (g - table.coincidence))
    return out
