import itertools
import random

import pytest

from toolverify.calls import CanonicalCall, calls_equivalent, canonical_key, normalize_value, parse_call
from toolverify.errors import CallParseError

WEATHER_CALL = (
    "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?"
    "lat=-37.3&lon=1.9&appid={API_KEY}&units=none&mode=none&lang=none'"
)


def test_parse_curl_call() -> None:
    call = parse_call(WEATHER_CALL)
    assert call.method == "GET"
    assert call.base_url == "https://api.openweathermap.org/data/2.5/weather"
    assert call.param_map == {"lang": "none", "lat": "-37.3", "lon": "1.9", "mode": "none", "units": "none"}
    assert [k for k, _ in call.params] == sorted(call.param_map)
    assert call.auth_placeholder_stripped


def test_parse_other_shapes() -> None:
    assert parse_call("POST https://example.com/items?id=4").method == "POST"
    bare = parse_call("https://Example.COM?x=1")
    assert (bare.method, bare.base_url, bare.param_map) == ("GET", "https://example.com/", {"x": "1"})
    no_verb = parse_call('curl "https://example.com/a?b=2"')
    assert no_verb.method == "GET"
    assert no_verb.param_map == {"b": "2"}


def test_parse_action_form() -> None:
    call = parse_call("CALLTOOL[CarFinder(car_model=Audi Q7, radius=10)]")
    assert call == CanonicalCall("CALL", "tool:CarFinder", (("car_model", "Audi Q7"), ("radius", "10")))
    assert parse_call("CALLTOOL[CarFinder()]").params == ()
    # commas inside a value stay with that value
    assert parse_call("CALLTOOL[Direct Geocoding(q=Nairobi,KE, limit=none)]").param_map == {"q": "Nairobi,KE", "limit": "none"}


def test_param_order_does_not_matter() -> None:
    a = "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?lat=1&lon=2&units=metric'"
    b = "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?units=metric&lon=2&lat=1'"
    assert parse_call(a) == parse_call(b)
    assert calls_equivalent(a, b)


def test_percent_encoding_is_decoded() -> None:
    a = "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?lat=1&lon=2&lang=zh%5Fcn'"
    b = "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?lat=1&lon=2&lang=zh_cn'"
    assert calls_equivalent(a, b)


def test_numeric_values_compare_by_value() -> None:
    a = "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?lat=-37.30&lon=1.9'"
    assert calls_equivalent(a, WEATHER_CALL.replace("&units=none&mode=none&lang=none", ""))
    assert not calls_equivalent(a, a.replace("1.9", "1.8"))


def test_auth_placeholder_is_ignored() -> None:
    with_key = "curl 'https://api.thecatapi.com/v1/votes?api_key={API_KEY}&limit=5'"
    real_key = "curl 'https://api.thecatapi.com/v1/votes?api_key=abc123&limit=5'"
    without = "curl 'https://api.thecatapi.com/v1/votes?limit=5'"
    assert calls_equivalent(with_key, without)
    assert calls_equivalent(real_key, without)


def test_method_and_base_url_matter() -> None:
    assert not calls_equivalent("GET https://example.com/a?x=1", "POST https://example.com/a?x=1")
    assert not calls_equivalent("GET https://example.com/a?x=1", "GET https://example.com/b?x=1")


def test_base_url_is_normalized() -> None:
    call = parse_call("GET https://API.Example.com:443/v1/./votes?limit=5")
    assert call.base_url == "https://api.example.com/v1/votes"
    assert calls_equivalent(call, "curl 'https://api.example.com/v1/votes?limit=5'")


@pytest.mark.parametrize("raw,expected", [
    ("39.0", "39"), ("39", "39"), ("39.00", "39"), (" -37.30 ", "-37.3"), ("0.000", "0"), ("-0", "0"),
    ("", "none"), ("  ", "none"), ("None", "none"), ("NONE", "none"), (None, "none"),
    ("metric", "metric"), ("1e3", "1000"), ("Nairobi,KE", "Nairobi,KE"),
])
def test_normalize_value(raw, expected) -> None:
    assert normalize_value(raw) == expected


def test_extreme_exponents_do_not_raise() -> None:
    assert normalize_value("1e999999999") == "1e999999999"
    assert normalize_value("1e100") == "1E+100"
    assert normalize_value("10E99") == "1E+100"
    huge = "curl 'https://example.com/a?lat=1e999999999'"
    assert calls_equivalent(huge, huge)
    assert not calls_equivalent(huge, "curl 'https://example.com/a?lat=1'")


def test_none_policy() -> None:
    explicit = "curl 'https://example.com/a?x=1&units=none'"
    absent = "curl 'https://example.com/a?x=1'"
    assert not calls_equivalent(explicit, absent, policy="strict")
    assert calls_equivalent(explicit, absent, policy="lenient")
    with pytest.raises(ValueError):
        canonical_key(absent, policy="loose")


def brute_force_equal(a: CanonicalCall, b: CanonicalCall) -> bool:
    """Field-by-field comparison with numbers parsed to float."""

    def norm(value: str):
        v = value.strip()
        if v == "" or v.lower() == "none":
            return "none"
        try:
            return float(v)
        except ValueError:
            return v

    if a.method != b.method or a.base_url != b.base_url:
        return False
    ma = {k: norm(v) for k, v in a.params}
    mb = {k: norm(v) for k, v in b.params}
    return ma == mb


def random_call(rng: random.Random) -> CanonicalCall:
    values = ["1", "1.0", "1.00", "-2.5", "-2.50", "metric", "imperial", "none", "None", "", "10", "1e1"]
    keys = rng.sample(["lat", "lon", "units", "lang", "cnt"], rng.randint(0, 4))
    return CanonicalCall(
        rng.choice(["GET", "POST"]),
        rng.choice(["https://a.example.com/x", "https://a.example.com/y"]),
        tuple(sorted((k, rng.choice(values)) for k in keys)),
    )


def test_equivalence_is_an_equivalence_relation() -> None:
    rng = random.Random(42)
    calls = [random_call(rng) for _ in range(10_000)]

    # every call is equivalent to itself and the key partition agrees with a brute-force comparison
    for c in calls:
        assert calls_equivalent(c, c)
    for a, b in zip(calls, reversed(calls)):
        assert calls_equivalent(a, b) == calls_equivalent(b, a) == brute_force_equal(a, b)

    sample = calls[:40]
    for a, b, c in itertools.product(sample, repeat=3):
        if calls_equivalent(a, b) and calls_equivalent(b, c):
            assert calls_equivalent(a, c)


@pytest.mark.parametrize("text,position", [
    ("", 0),
    ("ftp://example.com/file", 0),
    ("curl -X GET", 4),
    ("  curl -X GET 'https://example.com/a?b=1", 14),
    ("GET https:///path", 4),
])
def test_parse_errors_carry_positions(text, position) -> None:
    with pytest.raises(CallParseError) as err:
        parse_call(text)
    assert err.value.position == position
    assert f"at position {position}" in str(err.value)


def test_action_argument_without_equals() -> None:
    with pytest.raises(CallParseError):
        parse_call("CALLTOOL[CarFinder(Audi)]")


def test_serialize_is_stable() -> None:
    call = parse_call(WEATHER_CALL)
    assert call.serialize() == (
        "GET https://api.openweathermap.org/data/2.5/weather?lang=none&lat=-37.3&lon=1.9&mode=none&units=none"
    )
    assert parse_call(call.serialize()) == call.__class__(call.method, call.base_url, call.params)
