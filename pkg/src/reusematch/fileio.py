"""Reading and writing instance files (JSON, schema version 1).

    {"version": 1, "T": int,
     "resources": [{"reward": r, "dist": {"type": "geometric", "p": p}
                                       | {"type": "finite", "pmf": [[d, q], ...]}}],
     "arrivals": [[0-based resource indices], ...]}   # length T

Unknown fields are rejected. Loading checks the instance and returns it in
canonical (ascending-reward) order.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

from .instance import FiniteSupport, Geometric, Instance, canonicalize, validate

SCHEMA_VERSION = 1


class InstanceParseError(ValueError):
    """The document is not well-formed JSON or does not follow the schema."""


class InstanceValidationError(ValueError):
    """The document follows the schema but describes an invalid instance."""

    def __init__(self, violations: list[str]) -> None:
        super().__init__("; ".join(violations))
        self.violations = violations


def _keys(obj: dict, where: str, required: set[str]) -> None:
    missing = required - obj.keys()
    extra = obj.keys() - required
    if missing:
        raise InstanceParseError(f"{where}: missing field(s) {sorted(missing)}")
    if extra:
        raise InstanceParseError(f"{where}: unknown field(s) {sorted(extra)}")


def _number(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise InstanceParseError(f"{where}: expected a number, got {x!r}")
    return float(x)


def _integer(x, where: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise InstanceParseError(f"{where}: expected an integer, got {x!r}")
    return x


def _list(x, where: str) -> list:
    if not isinstance(x, list):
        raise InstanceParseError(f"{where}: expected a list")
    return x


def _dist(obj, where: str):
    if not isinstance(obj, dict) or "type" not in obj:
        raise InstanceParseError(f"{where}: expected an object with a 'type'")
    kind = obj["type"]
    if kind == "geometric":
        _keys(obj, where, {"type", "p"})
        return Geometric(_number(obj["p"], f"{where}.p"))
    if kind == "finite":
        _keys(obj, where, {"type", "pmf"})
        pmf = []
        for k, pair in enumerate(_list(obj["pmf"], f"{where}.pmf")):
            if not isinstance(pair, list) or len(pair) != 2:
                raise InstanceParseError(f"{where}.pmf[{k}]: expected [duration, prob]")
            pmf.append((_integer(pair[0], f"{where}.pmf[{k}][0]"), _number(pair[1], f"{where}.pmf[{k}][1]")))
        return FiniteSupport(tuple(pmf))
    raise InstanceParseError(f"{where}.type: unknown distribution type {kind!r}")


def instance_from_dict(doc) -> Instance:
    """Build an Instance (in file order) from a parsed document."""
    if not isinstance(doc, dict):
        raise InstanceParseError("top level: expected an object")
    _keys(doc, "top level", {"version", "T", "resources", "arrivals"})
    if doc["version"] != SCHEMA_VERSION:
        raise InstanceParseError(f"version: expected {SCHEMA_VERSION}, got {doc['version']!r}")
    horizon = _integer(doc["T"], "T")
    rewards, dists = [], []
    for k, res in enumerate(_list(doc["resources"], "resources")):
        where = f"resources[{k}]"
        if not isinstance(res, dict):
            raise InstanceParseError(f"{where}: expected an object")
        _keys(res, where, {"reward", "dist"})
        rewards.append(_number(res["reward"], f"{where}.reward"))
        dists.append(_dist(res["dist"], f"{where}.dist"))
    arrivals = []
    for t, row in enumerate(_list(doc["arrivals"], "arrivals")):
        idx = [_integer(i, f"arrivals[{t}][{j}]") for j, i in enumerate(_list(row, f"arrivals[{t}]"))]
        arrivals.append(frozenset(idx))
    if len(arrivals) != horizon:
        raise InstanceParseError(f"T: {horizon} does not match {len(arrivals)} arrival rows")
    return Instance(tuple(rewards), tuple(dists), tuple(arrivals))


def _decode(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def check_text(text: str) -> list[str]:
    """Violations of the instance in ``text``, ignoring reward order (loading sorts it)."""
    report = validate(instance_from_dict(_decode(text)))
    if report.permutation is not None:
        return report.violations[:-1]
    return report.violations


def loads(text: str) -> Instance:
    violations = check_text(text)
    if violations:
        raise InstanceValidationError(violations)
    return canonicalize(instance_from_dict(_decode(text)))


def load(path: str | os.PathLike) -> Instance:
    return loads(Path(path).read_text())


def dumps(instance: Instance) -> str:
    return json.dumps(instance.to_json(), indent=2) + "\n"


def dump(instance: Instance, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps(instance))
