"""Run a primary policy and a benchmark side by side on shared randomness.

Two couplings are supported:

* ``Scheme.STACK`` synchronises duration draws through one LIFO stack per
  resource: a draw made when only the primary matches ``i`` is pushed onto
  the stack, and a later benchmark match of ``i`` pops it.
* ``Scheme.BERNOULLI`` (geometric resources only) shares a return indicator
  P_it between the systems: a busy resource returns at the start of step t
  iff P_it = 1.

Within a step the order is fixed: returns, decisions, duration assignment,
recording. A lost match is a benchmark match of ``i`` at a step where every
resource ``j >= i`` is unavailable to the primary policy.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance
from .policies import NO_MATCH, Policy, State, check_action
from .rng import KIND_RETURN, RandomSource, uniform_array

CHUNK = 1 << 15


class Scheme(str, enum.Enum):
    STACK = "stack"
    BERNOULLI = "bernoulli"


class CouplingInvariantError(RuntimeError):
    """A pathwise property of the coupling failed; ``trace`` holds the run so far."""

    def __init__(self, message: str, trace: "CoupledTrace | None" = None) -> None:
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class StepRecord:
    t: int
    available: frozenset[int]
    available_benchmark: frozenset[int]
    returned: frozenset[int]
    returned_benchmark: frozenset[int]
    action: int
    action_benchmark: int
    blocked: tuple[bool, ...]  # O_it: every j >= i unavailable to the primary
    lost: bool
    tau: int | None  # last primary match of the lost resource before t (0 if none)
    coincidence: bool
    durations: tuple[tuple[str, int, int], ...] = ()  # (who, resource, duration), stack only

    def to_json(self) -> dict:
        """1-based resources, 0 for no match, as in the human-readable reports."""

        def ids(s):
            return [i + 1 for i in sorted(s)]

        return {
            "t": self.t,
            "I": ids(self.available),
            "I_star": ids(self.available_benchmark),
            "returned": ids(self.returned),
            "returned_star": ids(self.returned_benchmark),
            "A": self.action + 1,
            "A_star": self.action_benchmark + 1,
            "O": [i + 1 for i, b in enumerate(self.blocked) if b],
            "lost": self.lost,
            "tau": self.tau,
            "coincidence": self.coincidence,
            "durations": [[who, i + 1, d] for who, i, d in self.durations],
        }


@dataclass
class CoupledTrace:
    scheme: Scheme
    seed: int
    stream: int
    steps: list[StepRecord] = field(default_factory=list)
    primary_reward: float = 0.0
    benchmark_reward: float = 0.0
    lost: float = 0.0
    best_available: float = 0.0
    coincidence: float = 0.0
    first_term: float = 0.0  # benchmark reward earned on steps without O_it

    def lost_matches(self) -> list[tuple[int, int, int]]:
        """(t, i, tau) for each lost match."""
        return [(s.t, s.action_benchmark, s.tau) for s in self.steps if s.lost]


class _Claims:
    """Pathwise checks on the attribution of lost matches to earlier primary matches."""

    def __init__(self, n: int, scheme: Scheme) -> None:
        self.scheme = scheme
        self.last_match = [0] * n
        self.coincident_at_last = [False] * n
        self.freed_since_last = [False] * n
        self.used_taus: list[set[int]] = [set() for _ in range(n)]

    def observe_available(self, available) -> None:
        for i in available:
            self.freed_since_last[i] = True

    def check_lost(self, t: int, i: int, f_prev: bool, fstar_prev: bool) -> int:
        tau = self.last_match[i]
        if tau in self.used_taus[i]:
            raise CouplingInvariantError(f"claim 1: lost matches on resource {i + 1} share tau={tau} (t={t})")
        self.used_taus[i].add(tau)
        if tau == 0 or self.freed_since_last[i]:
            raise CouplingInvariantError(
                f"lost match on resource {i + 1} at t={t} without an outstanding primary match (tau={tau})"
            )
        if self.coincident_at_last[i]:
            raise CouplingInvariantError(
                f"claim 2: lost match on resource {i + 1} at t={t} charged to coincident step {tau}"
            )
        if self.scheme is Scheme.BERNOULLI:
            if not (f_prev and not fstar_prev):
                raise CouplingInvariantError(
                    f"lost match on resource {i + 1} at t={t} without F_(i,t-1) and not F*_(i,t-1)"
                )
        return tau

    def record_match(self, t: int, i: int, coincident: bool) -> None:
        self.last_match[i] = t
        self.coincident_at_last[i] = coincident
        self.freed_since_last[i] = False


def _require(instance: Instance, primary: Policy, benchmark: Policy, scheme: Scheme) -> Scheme:
    scheme = Scheme(scheme)
    if scheme is Scheme.BERNOULLI and not instance.all_geometric:
        raise ValueError("the Bernoulli coupling needs every resource to be geometric")
    for pol in (primary, benchmark):
        if not pol.deterministic:
            raise ValueError(f"policy {pol.name!r} is not deterministic")
    return scheme


def _ages(t: int, busy_since: list[int], instance: Instance) -> State:
    out = []
    for i, since in enumerate(busy_since):
        if since == 0:
            out.append(0)
        elif instance.dists[i].max_duration is None:
            out.append(1)
        else:
            out.append(t - since)
    return tuple(out)


def coupled_run(
    instance: Instance,
    primary: Policy,
    benchmark: Policy,
    scheme: Scheme | str,
    seed: int,
    *,
    stream: int = 0,
    check_claims: bool = True,
) -> CoupledTrace:
    """One coupled sample path; a pure function of its arguments."""
    scheme = _require(instance, primary, benchmark, scheme)
    rand = RandomSource(seed, stream)
    n, horizon, r = instance.n_resources, instance.horizon, instance.rewards
    trace = CoupledTrace(scheme, seed, stream)
    claims = _Claims(n, scheme)
    # busy_since[i] = step of the match (0 = available); due[i] = return step (stack only)
    since_p, since_b = [0] * n, [0] * n
    due_p, due_b = [0] * n, [0] * n
    stacks: list[list[int]] = [[] for _ in range(n)]
    f_prev, fstar_prev = [False] * n, [False] * n
    try:
        for t in range(1, horizon + 1):
            back_p, back_b = set(), set()
            for i in range(n):
                if scheme is Scheme.BERNOULLI:
                    comes_back = rand.returns(i, t) < instance.dists[i].p
                    if since_p[i] and comes_back:
                        back_p.add(i)
                    if since_b[i] and comes_back:
                        back_b.add(i)
                else:
                    if since_p[i] and due_p[i] <= t:
                        back_p.add(i)
                    if since_b[i] and due_b[i] <= t:
                        back_b.add(i)
            for i in back_p:
                since_p[i] = 0
            for i in back_b:
                since_b[i] = 0
            state_p, state_b = _ages(t, since_p, instance), _ages(t, since_b, instance)
            avail_p = frozenset(i for i in range(n) if state_p[i] == 0)
            avail_b = frozenset(i for i in range(n) if state_b[i] == 0)
            claims.observe_available(avail_p)

            incident = instance.arrivals[t - 1]
            a = primary.decide(t, incident, state_p, instance)
            b = benchmark.decide(t, incident, state_b, instance)
            check_action(a, incident, state_p)
            check_action(b, incident, state_b)

            draws: list[tuple[str, int, int]] = []
            coincident = a != NO_MATCH and a == b
            if scheme is Scheme.STACK:
                if coincident:
                    d = instance.dists[a].sample(rand.duration(a, t, 0))
                    due_p[a] = due_b[a] = t + d
                    draws.append(("both", a, d))
                else:
                    if a != NO_MATCH:
                        d = instance.dists[a].sample(rand.duration(a, t, 0))
                        stacks[a].append(d)
                        due_p[a] = t + d
                        draws.append(("primary", a, d))
                    if b != NO_MATCH:
                        if stacks[b]:
                            d = stacks[b].pop()
                            draws.append(("benchmark-pop", b, d))
                        else:
                            d = instance.dists[b].sample(rand.duration(b, t, 1))
                            draws.append(("benchmark", b, d))
                        due_b[b] = t + d

            blocked = [False] * n
            all_gone = True
            for j in range(n - 1, -1, -1):
                all_gone = all_gone and j not in avail_p
                blocked[j] = all_gone
            lost = b != NO_MATCH and blocked[b]
            tau = None
            if lost and check_claims:
                tau = claims.check_lost(t, b, f_prev[b], fstar_prev[b])
            elif lost:
                tau = claims.last_match[b]
            if a != NO_MATCH:
                claims.record_match(t, a, coincident)
                since_p[a] = t
            if b != NO_MATCH:
                since_b[b] = t

            trace.steps.append(
                StepRecord(
                    t, avail_p, avail_b, frozenset(back_p), frozenset(back_b), a, b,
                    tuple(blocked), lost, tau, coincident, tuple(draws),
                )
            )
            if a != NO_MATCH:
                trace.primary_reward += r[a]
            if b != NO_MATCH:
                trace.benchmark_reward += r[b]
                if lost:
                    trace.lost += r[b]
                else:
                    trace.first_term += r[b]
            if coincident:
                trace.coincidence += r[a]
            if avail_p:
                trace.best_available += r[max(avail_p)]
            f_prev = [since_p[i] != 0 for i in range(n)]
            fstar_prev = [since_b[i] != 0 for i in range(n)]
    except CouplingInvariantError as exc:
        exc.trace = trace
        raise
    return trace


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

METRICS = ("primary_reward", "benchmark_reward", "lost", "best_available", "coincidence", "first_term")


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_err: float

    @property
    def ci95(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.std_err, self.mean + 1.96 * self.std_err

    def within(self, value: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - value) <= sigmas * self.std_err + 1e-12


@dataclass
class EstimateReport:
    n_runs: int
    seed: int
    scheme: Scheme
    estimates: dict[str, Estimate]
    samples: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def __getitem__(self, name: str) -> Estimate:
        return self.estimates[name]

    def to_json(self) -> dict:
        return {
            name: {"mean": e.mean, "std_err": e.std_err, "ci95": list(e.ci95)}
            for name, e in self.estimates.items()
        }


def _summarize(samples: dict[str, np.ndarray]) -> dict[str, Estimate]:
    out = {}
    for name, x in samples.items():
        se = float(np.std(x, ddof=1) / math.sqrt(len(x)))
        out[name] = Estimate(float(np.mean(x)), se)
    return out


def _bernoulli_batch(
    instance: Instance, primary: Policy, benchmark: Policy, seed: int, streams: np.ndarray
) -> tuple[dict[str, np.ndarray], int | None]:
    """Vectorised Bernoulli-coupled runs; also returns the first stream breaking a claim."""
    n, horizon = instance.n_resources, instance.horizon
    runs = len(streams)
    r = np.asarray(instance.rewards)
    p = np.array([d.p for d in instance.dists])
    rows = np.arange(runs)
    busy_p = np.zeros((runs, n), dtype=bool)
    busy_b = np.zeros((runs, n), dtype=bool)
    last_match = np.zeros((runs, n), dtype=np.int64)
    coincident_last = np.zeros((runs, n), dtype=bool)
    last_lost_tau = np.full((runs, n), -1, dtype=np.int64)
    f_prev = np.zeros((runs, n), dtype=bool)
    fstar_prev = np.zeros((runs, n), dtype=bool)
    bad = np.zeros(runs, dtype=bool)
    totals = {m: np.zeros(runs) for m in METRICS}
    idx = np.arange(n)
    for t in range(1, horizon + 1):
        if t > 1:
            comes_back = uniform_array(seed, streams[:, None], KIND_RETURN, idx[None, :], t) < p[None, :]
            busy_p &= ~comes_back
            busy_b &= ~comes_back
        incident = np.zeros(n, dtype=bool)
        incident[list(instance.arrivals[t - 1])] = True
        a = np.asarray(primary.decide_batch(t, incident, busy_p.astype(np.int64), instance))
        b = np.asarray(benchmark.decide_batch(t, incident, busy_b.astype(np.int64), instance))
        has_a, has_b = a != NO_MATCH, b != NO_MATCH
        a0, b0 = np.maximum(a, 0), np.maximum(b, 0)
        blocked = np.flip(np.logical_and.accumulate(np.flip(busy_p, 1), axis=1), 1)
        lost = has_b & blocked[rows, b0]
        coincident = has_a & (a == b)

        tau = last_match[rows, b0]
        bad |= lost & (tau == last_lost_tau[rows, b0])
        bad |= lost & (tau == 0)
        bad |= lost & coincident_last[rows, b0]
        bad |= lost & ~(f_prev[rows, b0] & ~fstar_prev[rows, b0])
        last_lost_tau[rows[lost], b0[lost]] = tau[lost]

        ra, rb = np.where(has_a, r[a0], 0.0), np.where(has_b, r[b0], 0.0)
        totals["primary_reward"] += ra
        totals["benchmark_reward"] += rb
        totals["lost"] += np.where(lost, rb, 0.0)
        totals["first_term"] += np.where(lost, 0.0, rb)
        totals["coincidence"] += np.where(coincident, ra, 0.0)
        free = ~busy_p
        top = n - 1 - np.argmax(free[:, ::-1], axis=1)
        totals["best_available"] += np.where(free.any(axis=1), r[top], 0.0)

        last_match[rows[has_a], a0[has_a]] = t
        coincident_last[rows[has_a], a0[has_a]] = coincident[has_a]
        busy_p[rows[has_a], a0[has_a]] = True
        busy_b[rows[has_b], b0[has_b]] = True
        f_prev, fstar_prev = busy_p.copy(), busy_b.copy()
    first_bad = int(streams[np.argmax(bad)]) if bad.any() else None
    return totals, first_bad


def monte_carlo(
    instance: Instance,
    primary: Policy,
    benchmark: Policy,
    scheme: Scheme | str,
    n_runs: int,
    seed: int,
    *,
    vectorize: bool = True,
) -> EstimateReport:
    """Sample means and standard errors over ``n_runs`` coupled runs.

    Run k uses stream k, so the batched and per-run paths produce identical
    samples. A claim violation re-runs the offending stream one path at a
    time and raises :class:`CouplingInvariantError` with its trace.
    """
    if n_runs < 2:
        raise ValueError("monte_carlo needs at least 2 runs")
    scheme = _require(instance, primary, benchmark, scheme)
    batched = (
        vectorize
        and scheme is Scheme.BERNOULLI
        and primary.decide_batch is not None
        and benchmark.decide_batch is not None
    )
    if batched:
        parts = []
        for start in range(0, n_runs, CHUNK):
            streams = np.arange(start, min(n_runs, start + CHUNK))
            totals, first_bad = _bernoulli_batch(instance, primary, benchmark, seed, streams)
            if first_bad is not None:
                coupled_run(instance, primary, benchmark, scheme, seed, stream=first_bad)
                raise CouplingInvariantError(f"batched run {first_bad} broke a claim the path replay did not")
            parts.append(totals)
        samples = {m: np.concatenate([part[m] for part in parts]) for m in METRICS}
    else:
        traces = [coupled_run(instance, primary, benchmark, scheme, seed, stream=k) for k in range(n_runs)]
        samples = {m: np.array([getattr(tr, m) for tr in traces]) for m in METRICS}
    return EstimateReport(n_runs, seed, scheme, _summarize(samples), samples)
