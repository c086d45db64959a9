import random
import re

import pytest

from tests.conftest import CAR_INSTRUCTION
from toolverify.errors import ConstructionError, ParamGenerationError, VerificationParseError
from toolverify.paramgen import (
    Verdict,
    accept_primary,
    construct_call,
    generate_parameters,
    parse_param_reply,
    parse_verdict,
    second_opinion,
    verify_all,
    verify_parameter,
)
from toolverify.registry import ParamSpec, ToolSpec

WEATHER = "Current Weather Latitude Longitude"
MIN_PRICE = ParamSpec(name="min_price", description="The minimum price the user is willing to pay", kind="number")


def test_parse_demonstration_block(toolbench) -> None:
    tool = toolbench[WEATHER]
    values, missing = parse_param_reply("lat: -37.3\nlon: 1.9\nunits: none\nmode: none\nlang: none", tool)
    assert values == {"lat": "-37.3", "lon": "1.9", "units": "none", "mode": "none", "lang": "none"}
    assert missing == []


def test_parse_ignores_order_case_and_trailing_blocks(toolbench) -> None:
    tool = toolbench[WEATHER]
    reply = "Units = metric\nLAT: 4\nextra: 9\nlon: 5\n\nINS: A user says, \"next\"\nlang: fr"
    values, missing = parse_param_reply(reply, tool)
    assert values == {"lat": "4", "lon": "5", "units": "metric", "mode": "none", "lang": "none"}
    assert missing == ["mode", "lang"]


def test_parse_wholly_unparseable_reply(toolbench) -> None:
    with pytest.raises(ParamGenerationError):
        parse_param_reply("I cannot help with that.", toolbench[WEATHER])


def test_generate_and_second_opinion_use_their_own_stages(car_registry, scripted) -> None:
    backend = scripted([
        {"tag": "param-gen", "match": CAR_INSTRUCTION, "response": "car_model: Audi Q7\nradius: 10"},
        {"tag": "param-alt", "match": CAR_INSTRUCTION, "response": "car_model: Audi Q7"},
    ])
    tool = car_registry["CarFinder"]
    primary = generate_parameters(CAR_INSTRUCTION, tool, backend)
    secondary = second_opinion(CAR_INSTRUCTION, tool, backend)
    assert primary.values == {"car_model": "Audi Q7", "radius": "10"}
    assert secondary.values == {"car_model": "Audi Q7", "radius": "none"}
    assert secondary.missing == ["radius"]
    assert backend.tags() == ["param-gen", "param-alt"]
    assert backend.calls[1].prompt.startswith("[INST]")


def test_parameterless_tool_needs_no_backend(scripted) -> None:
    draft = generate_parameters("hi", ToolSpec(name="Ping"), scripted([]))
    assert draft.values == {}


def test_agreement_needs_no_verification(toolbench, scripted) -> None:
    backend = scripted([])
    tool = toolbench["Current Air Pollution"]
    verified = verify_all("air now", tool, {"lat": "41.0", "lon": "29"}, {"lat": "41", "lon": "29.00"}, backend)
    assert [p.verdict for p in verified.predictions] == [Verdict.AGREE, Verdict.AGREE]
    assert verified.values() == {"lat": "41.0", "lon": "29"}
    assert backend.count() == 0


def test_one_disagreement_costs_one_call(toolbench, scripted) -> None:
    backend = scripted([{"tag": "param-verify", "match": 'for "units".', "response": "[b]"}])
    tool = toolbench[WEATHER]
    primary = {"lat": "10.5", "lon": "-66.9", "units": "imperial", "mode": "none", "lang": "none"}
    secondary = dict(primary, units="metric")
    verified = verify_all("Use metric units.", tool, primary, secondary, backend)
    assert backend.count("param-verify") == 1
    assert verified.values()["units"] == "metric"
    assert len(verified.transcripts) == 1


@pytest.mark.parametrize("reply,verdict", [
    ("None", Verdict.NONE),
    ("There is no mention of a minimum price, so None.", Verdict.NONE),
    ("[b]", Verdict.B),
    ("[B]", Verdict.B),
    ("I think the answer is [a] because the user said 120000.", Verdict.A),
    ("[0]", Verdict.B),
    ("[120000.0]", Verdict.A),
    ("[None]", Verdict.NONE),
])
def test_min_price_verdicts(reply, verdict, scripted) -> None:
    backend = scripted([{"tag": "param-verify", "match": "min_price", "response": reply}])
    assert verify_parameter("Find a car dealer", MIN_PRICE, "120000", "0", backend) is verdict


def test_unparseable_verdict() -> None:
    with pytest.raises(VerificationParseError):
        parse_verdict("Both look fine to me.", "1", "2")


def test_empty_brackets_are_skipped() -> None:
    reply = "Respond in square brackets []. The user states a minimum: [b]"
    assert parse_verdict(reply, "none", "0") is Verdict.B
    assert parse_verdict("[ ] so None", "1", "2") is Verdict.NONE


def test_unparseable_verdict_keeps_primary(car_registry, scripted) -> None:
    backend = scripted([{"tag": "param-verify", "match": "", "response": "Hard to say."}])
    verified = verify_all("x", car_registry["CarLocator"], {"min_price": "1", "max_price": "9"}, {"min_price": "2", "max_price": "9"}, backend)
    pred = verified.predictions[0]
    assert pred.final_value == "1"
    assert pred.flags == ("verify-parse-failed",)
    assert verified.flags == ["min_price:verify-parse-failed"]


def test_none_verdict_empties_a_value(toolbench, scripted) -> None:
    backend = scripted([{"tag": "param-verify", "match": 'for "limit".', "response": "The answer is None."}])
    verified = verify_all("Find Nairobi", toolbench["Direct Geocoding"], {"q": "Nairobi,KE", "limit": "1"}, {"q": "Nairobi,KE", "limit": "none"}, backend)
    assert verified.values() == {"q": "Nairobi,KE", "limit": "none"}
    assert verified.predictions[1].verdict is Verdict.NONE


def test_required_param_ending_empty_is_flagged(car_registry, scripted) -> None:
    backend = scripted([{"tag": "param-verify", "match": "car_model", "response": "None"}])
    tool = car_registry["CarFinder"]
    verified = verify_all("a car", tool, {"car_model": "Audi", "radius": "10"}, {"car_model": "BMW", "radius": "10"}, backend)
    assert verified.predictions[0].final_value == "none"
    assert "required-missing" in verified.predictions[0].flags
    assert accept_primary(tool, {"radius": "3"}).predictions[0].flags == ("required-missing",)


def test_final_values_always_come_from_the_options(toolbench, scripted) -> None:
    rng = random.Random(3)
    tool = toolbench[WEATHER]
    pool = ["1", "1.0", "2", "metric", "imperial", "none", "fr"]
    for _ in range(1000):
        primary = {p: rng.choice(pool) for p in tool.param_names}
        secondary = {p: rng.choice(pool) for p in tool.param_names}
        reply = rng.choice(["[a]", "[b]", "None"])
        backend = scripted([{"tag": "param-verify", "match": "", "response": reply}])
        verified = verify_all("x", tool, primary, secondary, backend, randomize_options=rng.random() < 0.5, rng=rng)
        for pred in verified.predictions:
            assert pred.final_value in {pred.primary_value, pred.secondary_value, "none"}
            if pred.verdict is Verdict.AGREE:
                assert pred.final_value == pred.primary_value


def test_randomized_options_are_unswapped(toolbench, scripted) -> None:
    tool = toolbench[WEATHER]
    primary = {"lat": "1", "lon": "2", "units": "imperial", "mode": "xml", "lang": "fr"}
    secondary = {"lat": "3", "lon": "4", "units": "metric", "mode": "html", "lang": "de"}
    backend = scripted([{"tag": "param-verify", "match": "", "response": "[a]"}])
    verified = verify_all("x", tool, primary, secondary, backend, randomize_options=True, rng=random.Random(0))

    # the chosen value is whatever was shown as option a, whichever map it came from
    for pred, transcript in zip(verified.predictions, verified.transcripts):
        shown_a = re.search(r"\na\. ([^\n]*)\n", transcript.prompt).group(1)
        assert pred.final_value == shown_a
    assert {p.verdict for p in verified.predictions} <= {Verdict.A, Verdict.B}


def test_construct_call_from_template(toolbench) -> None:
    tool = toolbench[WEATHER]
    params = accept_primary(tool, {"lat": "-37.3", "lon": "1.9"})
    result = construct_call(tool, params)
    assert result.mode_used == "template"
    assert result.call == tool.demonstrations[0].rendered_call


def test_construct_call_by_model_is_checked(toolbench, scripted) -> None:
    tool = toolbench[WEATHER]
    params = accept_primary(tool, {"lat": "-37.3", "lon": "1.9"})
    template = tool.demonstrations[0].rendered_call
    faithful = "API: " + template.replace("lat=-37.3", "lat=-37.30")
    backend = scripted([{"tag": "call-construct", "match": "lat: -37.3\n", "response": faithful}])

    result = construct_call(tool, params, "model", backend, "weather please")
    assert result.mode_used == "model"
    assert result.call == faithful[len("API: "):]
    assert result.flags == ()


def test_model_call_altering_a_value_is_rejected(toolbench, scripted) -> None:
    tool = toolbench[WEATHER]
    params = accept_primary(tool, {"lat": "-37.3", "lon": "1.9"})
    template = tool.demonstrations[0].rendered_call
    backend = scripted([{"tag": "call-construct", "match": "", "response": template.replace("lon=1.9", "lon=2.9")}])

    result = construct_call(tool, params, "model", backend, "weather please")
    assert result.call == template
    assert result.mode_used == "template"
    assert result.flags == ("model-construction-rejected",)


def test_unparseable_model_call_is_rejected(toolbench, scripted) -> None:
    tool = toolbench[WEATHER]
    params = accept_primary(tool, {"lat": "-37.3", "lon": "1.9"})
    backend = scripted([{"tag": "call-construct", "match": "", "response": "Sorry, no call."}])
    assert construct_call(tool, params, "model", backend, "w").flags == ("model-construction-rejected",)


def test_construct_call_errors(toolbench, car_registry) -> None:
    tool = toolbench[WEATHER]
    params = accept_primary(tool, {"lat": "1", "lon": "2"})
    with pytest.raises(ConstructionError):
        construct_call(car_registry["CarFinder"], params)
    with pytest.raises(ConstructionError):
        construct_call(tool, params, mode="model")
    with pytest.raises(ValueError):
        construct_call(tool, params, mode="guess")
