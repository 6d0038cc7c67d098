import json

import numpy as np
import pytest

from upmdp.errors import NormalizationError, ParseError, SchemaError, UnknownParameter
from upmdp.mdp import validate_mdp
from upmdp.model import (
    Box,
    BoxMixture,
    ScenarioSet,
    Triangular,
    build_template,
    distribution_from_json,
    fingerprint,
    instantiate,
    load_model,
    sample_scenarios,
    save_model,
    template_from_json,
)
from upmdp import rng as rngmod


def test_toy_template_shape(toy):
    assert toy.n_states == 4 and toy.n_actions == 2
    assert toy.n_params == 4 and toy.n_transitions == 10
    assert toy.terminal.tolist() == [False, False, True, True]


def test_instantiation_gives_valid_mdps(toy):
    sc = sample_scenarios(toy, 50, 3)
    for trans in toy.instantiate_batch(sc.samples):
        assert validate_mdp(toy.mdp(trans)) == []
    m = instantiate(toy, [0.2, 0.4, 0.6, 0.8])
    assert m.trans[0, 0, 1] == pytest.approx(0.2) and m.trans[0, 0, 3] == pytest.approx(0.8)


def test_json_round_trip(tmp_path, toy):
    path = tmp_path / "toy.json"
    save_model(toy, path)
    back = load_model(path)
    assert back.states == toy.states and back.params == toy.params
    v = np.array([[0.1, 0.2, 0.3, 0.4]])
    np.testing.assert_array_equal(back.instantiate_batch(v), toy.instantiate_batch(v))
    assert fingerprint(back.distribution) == fingerprint(toy.distribution)


def _toy_json(toy):
    return json.loads(json.dumps(toy.to_json()))


def test_schema_errors_name_the_field(toy):
    obj = _toy_json(toy)
    del obj["gamma"]
    with pytest.raises(SchemaError, match="gamma"):
        template_from_json(obj)
    obj = _toy_json(toy)
    obj["labels"]["goal"] = ["nowhere"]
    with pytest.raises(SchemaError, match="labels.goal"):
        template_from_json(obj)
    obj = _toy_json(toy)
    obj["distribution"] = {"type": "uniform", "low": [0, 0], "high": [1, 1]}
    with pytest.raises(SchemaError, match="2 coordinates"):
        template_from_json(obj)


def test_unknown_parameter_and_parse_error(toy):
    obj = _toy_json(toy)
    obj["transitions"][0]["to"]["critical"] = "1 - zz"
    with pytest.raises(UnknownParameter) as exc:
        template_from_json(obj)
    assert exc.value.name == "zz"
    obj["transitions"][0]["to"]["critical"] = "1 - "
    with pytest.raises(ParseError):
        template_from_json(obj)


def test_misnormalised_row_reports_sample(toy):
    obj = _toy_json(toy)
    obj["transitions"][0]["to"]["critical"] = "1 - p00 + 0.1"
    t = template_from_json(obj)
    with pytest.raises(NormalizationError) as exc:
        t.instantiate_batch(np.full((3, 4), 0.5), offset=7)
    assert (exc.value.state, exc.value.action, exc.value.sample_index) == ("s0", "a0", 7)


def test_terminal_rows_become_self_loops():
    t = build_template(["s", "g", "x"], ["a"], {("s", "a"): {"g": "p", "x": "1 - p"}, ("g", "a"): {"s": "1"}},
                       {"s": 1}, 0.9, ["g"], ["s", "g"], ["p"], Box([0], [1]))
    trans = t.instantiate_batch(np.array([[0.3]]))[0]
    assert trans[1, 0, 1] == 1.0 and trans[2, 0, 2] == 1.0


def test_distributions_sample_in_support():
    gen = rngmod.stream(0, "test")
    box = Box([0.2, 0.0], [0.4, 1.0])
    x = box.sample(gen, 5000)
    assert np.all((x >= box.low) & (x <= box.high))
    tri = Triangular([0.0], [0.25], [1.0])
    y = tri.sample(gen, 20000)
    assert np.all((0 <= y) & (y <= 1))
    assert y.mean() == pytest.approx((0 + 0.25 + 1) / 3, abs=0.01)
    mix = BoxMixture([0.25, 0.75], (Box([0], [0.1]), Box([0.9], [1.0])))
    z = mix.sample(gen, 8000)
    assert np.mean(z < 0.5) == pytest.approx(0.25, abs=0.02)
    for d in (box, tri, mix):
        back = distribution_from_json(d.to_json(), d.dim)
        assert back.to_json() == d.to_json()


def test_scenarios_are_reproducible(tmp_path, toy):
    a = sample_scenarios(toy, 20, 11)
    b = sample_scenarios(toy, 20, 11)
    c = sample_scenarios(toy, 20, 12)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    a.save(tmp_path / "s.json")
    back = ScenarioSet.from_json(json.loads((tmp_path / "s.json").read_text()), 4)
    np.testing.assert_array_equal(back.samples, a.samples)
    with pytest.raises(SchemaError):
        ScenarioSet.from_json({"seed": 0, "n": 3, "samples": [[0.1] * 4]}, 4)


def test_streams_are_independent_by_purpose():
    a = rngmod.stream(5, rngmod.SCENARIOS).random(4)
    b = rngmod.stream(5, rngmod.VALIDATION).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, rngmod.stream(5, rngmod.SCENARIOS).random(4))
