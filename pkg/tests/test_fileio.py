import json

import pytest

from reusematch.experiments import make_corpus
from reusematch.fileio import (
    InstanceParseError,
    InstanceValidationError,
    check_text,
    dump,
    dumps,
    load,
    loads,
)
from reusematch.instance import FiniteSupport, tight_example


def test_round_trip_is_hash_equal(tmp_path):
    for kind in ("geometric", "mixed", "finite"):
        for inst in make_corpus(kind, 10, 0):
            path = tmp_path / "x.json"
            dump(inst, path)
            again = load(path)
            assert again == inst and again.digest() == inst.digest()


def test_loading_canonicalizes():
    doc = {
        "version": 1,
        "T": 1,
        "resources": [
            {"reward": 2.0, "dist": {"type": "geometric", "p": 0.5}},
            {"reward": 1.0, "dist": {"type": "finite", "pmf": [[1, 0.5], [2, 0.5]]}},
        ],
        "arrivals": [[0]],
    }
    inst = loads(json.dumps(doc))
    assert inst.rewards == (1.0, 2.0)
    assert inst.arrivals == (frozenset({1}),)
    assert inst.origin == (1, 0)
    assert isinstance(inst.dists[0], FiniteSupport)


def _doc():
    return json.loads(dumps(tight_example(0.5, 0.1)))


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d.update(extra=1), "unknown field"),
        (lambda d: d.update(version=2), "version"),
        (lambda d: d.pop("T"), "missing"),
        (lambda d: d.update(T=3), "does not match"),
        (lambda d: d["resources"][0].update(colour="red"), "unknown field"),
        (lambda d: d["resources"][0]["dist"].update(type="poisson"), "unknown distribution"),
        (lambda d: d["resources"][0].update(reward="1"), "expected a number"),
        (lambda d: d["arrivals"][0].append(1.5), "expected an integer"),
    ],
)
def test_schema_errors(mutate, message):
    doc = _doc()
    mutate(doc)
    with pytest.raises(InstanceParseError, match=message):
        loads(json.dumps(doc))


def test_truncated_json_reports_location():
    text = dumps(tight_example(0.5, 0.1))[:40]
    with pytest.raises(InstanceParseError, match="line .* column"):
        loads(text)


def test_validation_errors_name_the_resource():
    doc = _doc()
    doc["resources"][1]["dist"] = {"type": "finite", "pmf": [[1, 0.5], [2, 0.4]]}
    with pytest.raises(InstanceValidationError) as err:
        loads(json.dumps(doc))
    assert any("resources[1]" in v and "0.9" in v for v in err.value.violations)
    assert check_text(json.dumps(doc)) == err.value.violations
