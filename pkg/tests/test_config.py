import json

import pytest
from hypothesis import given, settings, strategies as st

from maglab.config import DEFAULTS, _key_lines, default_config, load_config, parse_config
from maglab.errors import ConfigurationError


@pytest.mark.parametrize("text", ["", "  \n\t", b"", "{}"])
def test_empty_input_gives_defaults(text):
    assert parse_config(text).data == default_config().data == DEFAULTS


def test_partial_override_keeps_siblings():
    cfg = parse_config('{"grid": {"N": 33}, "potential": {"delta": 0.05}}')
    assert cfg["grid"] == {"dim": 1, "N": 33, "L": 1.0}
    assert cfg["potential"]["delta"] == 0.05 and cfg["potential"]["M"] == 2.0


def test_negative_delta_rejected_with_path_and_line():
    text = '{\n  "potential": {\n    "delta": -1\n  }\n}'
    with pytest.raises(ConfigurationError, match=r"potential\.delta \(line 3\)"):
        parse_config(text)


def test_unknown_key_reports_line():
    text = '{\n  "grid": {"N": 33},\n  "time": {"dt": 0.1}\n}'
    with pytest.raises(ConfigurationError, match=r"time\.dt \(line 3\): unknown key"):
        parse_config(text)


def test_syntax_error_reports_position():
    with pytest.raises(ConfigurationError, match=r"line 2, column"):
        parse_config('{\n  "seed": ,\n}')


@pytest.mark.parametrize("doc,path", [
    ({"seed": -1}, "seed"),
    ({"seed": 2**64}, "seed"),
    ({"seed": True}, "seed"),
    ({"command": "invert"}, "command"),
    ({"grid": {"dim": 3}}, "grid.dim"),
    ({"grid": {"N": 7}}, "grid.N"),
    ({"grid": 5}, "grid"),
    ({"time": {"T": 0}}, "time.T"),
    ({"potential": {"collar": 0.01}}, "potential.collar"),
    ({"weights": {"x0": [0.5]}}, "weights.x0"),
    ({"weights": {"m": 1.0}}, "weights.m"),
    ({"weights": {"lam": []}}, "weights.lam"),
    ({"family": {"n": 2}}, "family.n"),
    ({"family": {"preset": "plane"}}, "family.preset"),
    ({"forward": {"initial": "gauss"}}, "forward.initial"),
    ({"sweep": {"n_seeds": -1}}, "sweep.n_seeds"),
    ({"noise": -0.1}, "noise"),
    ({"workers": 0}, "workers"),
    ({"reconstruct": {"alpha": -1}}, "reconstruct.alpha"),
])
def test_invalid_values_name_their_path(doc, path):
    with pytest.raises(ConfigurationError, match=path.replace(".", r"\.")):
        parse_config(json.dumps(doc))


def test_non_object_top_level_rejected():
    with pytest.raises(ConfigurationError, match="top level"):
        parse_config("[1, 2]")


def test_non_utf8_rejected():
    with pytest.raises(ConfigurationError, match="UTF-8"):
        parse_config(b"\xff\xfe{}")


def test_key_lines_nested_and_escaped():
    text = '{"a": 1,\n "b": {"c": [1, {"x": 2}],\n  "d\\"q": 3}}'
    lines = _key_lines(text)
    assert lines == {"a": 1, "b": 2, "b.c": 2, 'b.d"q': 3}


configs = st.fixed_dictionaries({}, optional={
    "seed": st.integers(0, 2**64 - 1),
    "noise": st.floats(0, 1),
    "grid": st.fixed_dictionaries({}, optional={"N": st.integers(16, 200),
                                                "L": st.floats(0.5, 4)}),
    "potential": st.fixed_dictionaries({}, optional={"delta": st.floats(0, 1),
                                                     "M": st.floats(1, 5)}),
    "sweep": st.fixed_dictionaries({}, optional={"n_seeds": st.integers(0, 50)}),
})


@settings(max_examples=60)
@given(doc=configs)
def test_round_trip_through_json(doc):
    cfg = parse_config(json.dumps(doc, indent=2))
    again = parse_config(cfg.to_json())
    assert again.data == cfg.data
    for key, val in doc.items():
        if isinstance(val, dict):
            for k, v in val.items():
                assert cfg[key][k] == v
        else:
            assert cfg[key] == val


def test_potential_seed_falls_back_to_global(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"seed": 9}')
    cfg = load_config(p)
    assert cfg.seed == 9 and cfg.potential_seed == 9
    assert cfg.replace(seed=4).potential_seed == 4
    assert parse_config('{"seed": 9, "potential": {"seed": 2}}').potential_seed == 2
