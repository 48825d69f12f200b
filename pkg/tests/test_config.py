import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringfloquet.config import RunConfig, config_to_dict, parse_config, serialize_config
from ringfloquet.errors import ParseError, ValidationError


def test_empty_file_gives_defaults():
    cfg = parse_config("")
    m = cfg.model
    assert (m.L, m.omega, m.g, m.w_cos, m.w_sin, m.N_bands, m.N_time) == (math.pi, 1.0, 0.05, (), (), 32, 256)
    assert cfg == RunConfig()
    mc = m.build()
    assert mc.mean_W == 0.0


def test_negative_coupling_rejected():
    with pytest.raises(ValidationError):
        parse_config("g = -0.1")


def test_grammar_features():
    text = """
    # model first, header optional
    omega = pi**2/3   # trailing comment
    w_cos = 0, 0.3
    [kam]
    gamma = none
    method = series
    [sieve]
    test_omega = sqrt(2)
    """
    cfg = parse_config(text)
    assert cfg.model.omega == math.pi**2 / 3
    assert cfg.model.w_cos == (0.0, 0.3)
    assert cfg.kam.gamma is None and cfg.kam.method == "series"
    assert cfg.sieve.test_omega == math.sqrt(2)


@pytest.mark.parametrize(
    "text, line",
    [("omega = 1\nbogus = 2", 2), ("[model]\n\n[nosuch]", 3), ("omega 1", 1), ("omega = 1\nomega = 2", 2),
     ("omega = __import__('os')", 1), ("[model\n", 1), ("N_bands = 4\nomega = 1 +", 2)],
)
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


@pytest.mark.parametrize(
    "text",
    ["N_bands = 2.5", "N_time = 48", "[kam]\nmethod = magic", "[sieve]\nomega_lo = 2\nomega_hi = 1",
     "[evolution]\nsteps_per_period = 8", "[zoo]\nn_levels = 3"],
)
def test_invariant_violations(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_overrides():
    cfg = parse_config("", overrides=["omega=2", "kam.max_steps=10", "zoo.seed=5"])
    assert cfg.model.omega == 2.0 and cfg.kam.max_steps == 10 and cfg.zoo.seed == 5
    with pytest.raises(ParseError):
        parse_config("", overrides=["gamma=0.1"])  # ambiguous: kam and sieve
    with pytest.raises(ParseError):
        parse_config("", overrides=["nokey=1"])
    with pytest.raises(ParseError):
        parse_config("", overrides=["omega"])
    with pytest.raises(ParseError):
        parse_config("", overrides=["g=0.1"])  # model and zoo both have g
    with pytest.raises(ValidationError):
        parse_config("", overrides=["model.g=-1"])


finite = st.floats(allow_nan=False, allow_infinity=False)


@given(
    omega=st.floats(1e-3, 50.0),
    g=st.floats(0.0, 1.0),
    w_cos=st.lists(st.floats(-1.0, 1.0), max_size=3).map(tuple),
    n_bands=st.integers(3, 64),
    n_time=st.sampled_from([8, 16, 64, 256]),
    gamma=st.one_of(st.none(), st.floats(1e-6, 1.0)),
    method=st.sampled_from(["expm", "series", "both"]),
    seed=st.integers(0, 2**31),
    omegas=st.lists(st.floats(0.1, 3.0), max_size=3).map(tuple),
)
def test_serialize_parse_round_trip(omega, g, w_cos, n_bands, n_time, gamma, method, seed, omegas):
    text = (f"omega = {omega!r}\ng = {g!r}\nN_bands = {n_bands}\nN_time = {n_time}\n"
            + (f"w_cos = {', '.join(map(repr, w_cos))}\n" if w_cos else "")
            + f"[kam]\ngamma = {gamma!r}\nmethod = {method}\n[zoo]\nseed = {seed}\n"
            + (f"omegas = {', '.join(map(repr, omegas))}\n" if omegas else ""))
    cfg = parse_config(text)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert serialize_config(again) == serialize_config(cfg)


def test_config_to_dict_is_plain():
    d = config_to_dict(parse_config("w_cos = 0, 0.3"))
    assert d["model"]["w_cos"] == [0.0, 0.3]
    assert set(d) == {"model", "kam", "sieve", "evolution", "zoo"}
