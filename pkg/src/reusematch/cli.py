"""Command-line interface: ``reusematch <command> ...``.

Exit codes: 0 success, 1 invalid instance or configuration, 2 unparsable
input, 3 state-space guard, 4 a pathwise invariant or bound failed.

Instance files use 0-based resource indices. Reports number resources
from 1 in canonical (ascending-reward) order, and every report header maps
report numbers back to file indices.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .benchmark import (
    StateSpaceError,
    estimated_bytes,
    evaluate_policy_detailed,
    solve_opt,
    solve_and_policy,
    state_space_size,
)
from .coupling import CouplingInvariantError, Scheme, coupled_run, monte_carlo
from .experiments import (
    BOUNDS,
    CORPUS_KINDS,
    SearchParams,
    bound_report,
    bound_value,
    make_corpus,
    ratio_search,
    sweep_tight_example,
)
from .fileio import InstanceParseError, InstanceValidationError, check_text, dump, load
from .instance import Instance
from .oracle import OracleSizeError, enumerate_bernoulli, enumerate_stack, lemma1_check, proposition_checks
from .policies import Policy, alpha_threshold, greedy

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_GUARD, EXIT_INVARIANT = 0, 1, 2, 3, 4
SEED_ENV = "REUSEMATCH_SEED"
CSV_VERSION = 1


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer", EXIT_INVALID) from None


def _load(path: str) -> Instance:
    try:
        return load(path)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}", EXIT_PARSE) from exc
    except InstanceParseError as exc:
        raise CliError(f"{path}: {exc}", EXIT_PARSE) from exc
    except InstanceValidationError as exc:
        raise CliError("\n".join(f"{path}: {v}" for v in exc.violations), EXIT_INVALID) from exc


def _policy(spec: str) -> Policy:
    if spec == "greedy":
        return greedy()
    if spec.startswith("alpha:"):
        try:
            return alpha_threshold(float(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise CliError(str(exc), EXIT_INVALID) from exc
    raise CliError(f"unknown policy {spec!r}; use 'greedy' or 'alpha:<value>'", EXIT_INVALID)


def _guard(instance: Instance, args) -> int | None:
    """The max-states override in effect, or None for the default guards."""
    if getattr(args, "max_states", None) is None:
        return None
    if not args.force:
        raise CliError("--max-states overrides the state-space guard and needs --force", EXIT_INVALID)
    n_states = state_space_size(instance)
    print(
        f"warning: guard overridden; {n_states} states, about {estimated_bytes(instance) / 2**20:.1f} MiB",
        file=sys.stderr,
    )
    return args.max_states


def _resource_map(instance: Instance) -> list[dict]:
    return [
        {"resource": k + 1, "file_index": instance.origin[k], "reward": r}
        for k, r in enumerate(instance.rewards)
    ]


def _header(command: str, config: dict, instance: Instance | None = None) -> dict:
    head = {"tool": "reusematch", "version": __version__, "command": command, "config": config}
    if instance is not None:
        head["instance_hash"] = instance.digest()
        head["resource_map"] = _resource_map(instance)
    return head


def _clean(x):
    """JSON-safe copy: NaN becomes null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _emit(out, fmt: str, header: dict, rows: list[dict], extra: dict | None = None) -> None:
    """Write ``rows`` as JSON (header + rows + extra) or as CSV under '#' header lines."""
    if fmt == "json":
        doc = {"header": header, "rows": rows}
        if extra:
            doc.update(extra)
        out.write(json.dumps(_clean(doc), indent=2, sort_keys=False) + "\n")
        return
    out.write(f"# csv-format {CSV_VERSION}\n")
    for key, value in header.items():
        out.write(f"# {key}: {json.dumps(_clean(value), sort_keys=True)}\n")
    for key, value in (extra or {}).items():
        out.write(f"# {key}: {json.dumps(_clean(value), sort_keys=True)}\n")
    if rows:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        out.write(buf.getvalue())


def _bounds_for(instance: Instance, ratio: float, alpha: float) -> list[dict]:
    p = instance.p_min()
    names = ["theorem1", "theorem3"]
    if instance.all_geometric:
        names = ["theorem1", "theorem2", "theorem3", "theorem3-geometric"]
    rows = []
    for name in names:
        b = bound_value(name, p, alpha)
        rows.append({"bound": name, "value": b, "margin": ratio - b, "pass": ratio - b >= -1e-9})
    return rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args, out) -> int:
    try:
        text = Path(args.path).read_text()
        violations = check_text(text)
    except OSError as exc:
        raise CliError(f"{args.path}: {exc.strerror}", EXIT_PARSE) from exc
    except InstanceParseError as exc:
        raise CliError(f"{args.path}: {exc}", EXIT_PARSE) from exc
    for v in violations:
        out.write(v + "\n")
    if violations:
        return EXIT_INVALID
    out.write(f"{args.path}: valid\n")
    return EXIT_OK


def cmd_solve(args, out) -> int:
    instance = _load(args.path)
    max_states = _guard(instance, args)
    pol = _policy(args.policy)
    try:
        opt = solve_opt(instance, max_states=max_states).opt_value
        ev = evaluate_policy_detailed(instance, pol, max_states=max_states)
    except StateSpaceError as exc:
        raise CliError(f"state-space guard: {exc} (state space size {exc.n_states})", EXIT_GUARD) from exc
    ratio = 1.0 if opt == 0 else ev.reward / opt
    config = {"policy": pol.name, "max_states": max_states}
    row = {
        "opt": opt,
        "policy_value": ev.reward,
        "ratio": ratio,
        "p_min": instance.p_min(),
        "measured_alpha": ev.alpha,
    }
    _emit(out, args.format, _header("solve", config, instance), [row], {"bounds": _bounds_for(instance, ratio, ev.alpha)})
    return EXIT_OK


def _dump_trace(exc: CouplingInvariantError, err) -> None:
    err.write(f"invariant failure: {exc}\n")
    if exc.trace is not None:
        for step in exc.trace.steps:
            err.write(json.dumps(step.to_json()) + "\n")


def cmd_couple(args, out) -> int:
    if args.runs < 1:
        raise CliError(f"--runs must be positive, got {args.runs}", EXIT_INVALID)
    instance = _load(args.path)
    seed = _default_seed() if args.seed is None else args.seed
    pol = _policy(args.policy)
    try:
        _, bench = solve_and_policy(instance)
    except StateSpaceError as exc:
        raise CliError(f"state-space guard: {exc} (state space size {exc.n_states})", EXIT_GUARD) from exc
    config = {"policy": pol.name, "benchmark": "opt", "scheme": args.scheme, "runs": args.runs, "seed": seed}
    header = _header("couple", config, instance)
    try:
        if args.trace:
            trace = coupled_run(instance, pol, bench, args.scheme, seed, stream=args.stream)
            with open(args.trace, "w") as fh:
                fh.write(json.dumps({"header": {**header, "stream": args.stream}}) + "\n")
                for step in trace.steps:
                    fh.write(json.dumps(step.to_json()) + "\n")
        if args.runs == 1:
            trace = coupled_run(instance, pol, bench, args.scheme, seed, stream=0)
            rows = [{"metric": m, "mean": getattr(trace, m), "std_err": None} for m in
                    ("primary_reward", "benchmark_reward", "lost", "best_available", "coincidence", "first_term")]
        else:
            report = monte_carlo(instance, pol, bench, args.scheme, args.runs, seed)
            rows = [{"metric": m, "mean": e.mean, "std_err": e.std_err} for m, e in report.estimates.items()]
    except CouplingInvariantError as exc:
        _dump_trace(exc, sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    _emit(out, args.format, header, rows)
    return EXIT_OK


def cmd_oracle(args, out) -> int:
    instance = _load(args.path)
    pol = _policy(args.policy)
    try:
        _, bench = solve_and_policy(instance)
        if args.scheme == "bernoulli":
            table = enumerate_bernoulli(instance, pol, bench)
        else:
            table = enumerate_stack(instance, pol, bench)
    except (StateSpaceError, OracleSizeError) as exc:
        raise CliError(f"size guard: {exc}", EXIT_GUARD) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    rows = []
    for i in range(instance.n_resources):
        for t in range(1, instance.horizon + 1):
            rows.append({
                "resource": i + 1,
                "t": t,
                "pr_lost": float(table.lost_prob[i, t - 1]),
                "pr_coincide": float(table.coincide_prob[i, t - 1]),
                "pr_primary_match": float(table.primary_match_prob[i, t - 1]),
                "pr_benchmark_match": float(table.bench_match_prob[i, t - 1]),
            })
    checks = {name: {"lhs": c.lhs, "rhs": c.rhs, "pass": c.passed} for name, c in proposition_checks(table, instance).items()}
    extra = {
        "totals": {
            "primary_reward": table.primary_reward,
            "benchmark_reward": table.benchmark_reward,
            "lost": table.lost,
            "coincidence": table.coincidence,
            "best_available": table.best_available,
            "first_term": table.first_term,
            "atoms": table.atoms,
        },
        "checks": checks,
    }
    if args.scheme == "bernoulli":
        extra["lemma1_pass"] = lemma1_check(table, instance).ok
    config = {"policy": pol.name, "benchmark": "opt", "scheme": args.scheme}
    _emit(out, args.format, _header("oracle", config, instance), rows, extra)
    if table.claim_violations:
        for v in table.claim_violations:
            sys.stderr.write(f"invariant failure: {v}\n")
        return EXIT_INVARIANT
    return EXIT_OK


def _corpus_files(path: str) -> list[Path]:
    root = Path(path)
    if root.is_file():
        return [root]
    files = sorted(root.glob("*.json"))
    if not files:
        raise CliError(f"{path}: no instance files (*.json)", EXIT_INVALID)
    return files


def cmd_verify(args, out) -> int:
    files = _corpus_files(args.corpus)
    policy = "greedy" if args.policy == "greedy" else _policy(args.policy)
    rows = []
    for f in files:
        rep = bound_report(_load(str(f)), policy, args.bound)
        row = {"file": f.name, **rep.to_json()}
        rows.append(row)
    n_pass = sum(r["passed"] for r in rows)
    config = {"policy": args.policy, "bound": args.bound, "corpus": str(args.corpus)}
    if not args.summary_only:
        _emit(out, args.format, _header("verify", config), rows)
    out.write(f"{n_pass}/{len(rows)} pass {args.bound}\n")
    return EXIT_OK if n_pass == len(rows) else EXIT_INVARIANT


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"bad number list {text!r}", EXIT_INVALID) from exc


def cmd_sweep(args, out) -> int:
    ps, deltas = _floats(args.p), _floats(args.delta)
    if any(not 0.0 <= p <= 1.0 for p in ps) or any(d <= 0 for d in deltas):
        raise CliError("need p in [0, 1] and delta > 0", EXIT_INVALID)
    rows = [
        {
            "p": row.p,
            "delta": row.delta,
            "ratio": row.ratio,
            "closed_form": row.closed_form,
            "difference": row.difference,
            "gap_to_limit": row.gap,
        }
        for row in sweep_tight_example(ps, deltas)
    ]
    _emit(out, args.format, _header("sweep", {"p": ps, "delta": deltas}), rows)
    return EXIT_OK if all(r["difference"] <= 1e-12 for r in rows) else EXIT_INVARIANT


def cmd_search(args, out) -> int:
    seed = _default_seed() if args.seed is None else args.seed
    params = SearchParams(args.resources, args.horizon, args.p_min, args.family, args.density, args.chains, args.keep)
    try:
        results = ratio_search(params, seed, args.budget)
    except (ValueError, StateSpaceError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    rows = []
    for k, res in enumerate(results):
        rep = res.report
        rows.append({"rank": k + 1, "ratio": rep.ratio, "bound": rep.bound, "margin": rep.margin,
                     "instance_hash": res.instance.digest(), "instance": json.dumps(res.instance.to_json())})
    config = {**vars(params), "budget": args.budget, "seed": seed}
    _emit(out, args.format, _header("search", config), rows)
    if args.save:
        Path(args.save).mkdir(parents=True, exist_ok=True)
        for k, res in enumerate(results):
            dump(res.instance, Path(args.save) / f"worst_{k + 1:02d}.json")
    # a ratio under the proven bound would be a counterexample
    return EXIT_OK if all(r.report.passed for r in results) else EXIT_INVARIANT


def cmd_generate(args, out) -> int:
    seed = _default_seed() if args.seed is None else args.seed
    if args.count < 1:
        raise CliError("--count must be positive", EXIT_INVALID)
    target = Path(args.out)
    target.mkdir(parents=True, exist_ok=True)
    width = len(str(args.count - 1))
    for k, inst in enumerate(make_corpus(args.kind, args.count, seed)):
        dump(inst, target / f"{args.kind}_{k:0{width}d}.json")
    out.write(f"wrote {args.count} {args.kind} instances to {target}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_format(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("json", "csv"), default="json", help="output format (default json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reusematch", description="Greedy vs the clairvoyant optimum with reusable resources.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="exact OPT, policy value, ratio and bounds")
    p.add_argument("path")
    p.add_argument("--policy", default="greedy", help="'greedy' or 'alpha:<value>'")
    p.add_argument("--max-states", type=int, help="override the state-space guard (needs --force)")
    p.add_argument("--force", action="store_true")
    _add_format(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("couple", help="coupled simulation against OPT")
    p.add_argument("path")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="bernoulli")
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--seed", type=int, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--policy", default="greedy")
    p.add_argument("--trace", help="write one run as NDJSON, one step per line")
    p.add_argument("--stream", type=int, default=0, help="stream of the exported trace")
    _add_format(p)
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("oracle", help="exact coupled-event probabilities by enumeration")
    p.add_argument("path")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="bernoulli")
    p.add_argument("--policy", default="greedy")
    _add_format(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="check a bound on every instance in a directory")
    p.add_argument("corpus")
    p.add_argument("--bound", choices=BOUNDS, default="theorem2")
    p.add_argument("--policy", default="greedy")
    p.add_argument("--summary-only", action="store_true")
    _add_format(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="tight two-step example over a (p, delta) grid")
    p.add_argument("--p", default="0.1,0.3,0.5,0.9")
    p.add_argument("--delta", default="0.1,0.01,0.001")
    _add_format(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", help="hill-climb for low Greedy/OPT ratios")
    p.add_argument("--resources", type=int, default=2)
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--p-min", type=float, default=0.5)
    p.add_argument("--family", choices=("geometric", "nonreusable"), default="geometric")
    p.add_argument("--density", type=float, default=0.6)
    p.add_argument("--chains", type=int, default=8)
    p.add_argument("--keep", type=int, default=5)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--save", help="directory for the worst instances")
    _add_format(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("generate", help="write a seeded random corpus")
    p.add_argument("out")
    p.add_argument("--kind", choices=CORPUS_KINDS, default="geometric")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
