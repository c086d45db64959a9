import random
import string

import pytest

from tests.conftest import CAR_ANSWER, CAR_INSTRUCTION, CAR_QUESTION, golden
from toolverify.errors import UnboundPlaceholderError, UnknownStageError
from toolverify.prompts import (
    CHAT_PREFIX,
    CHAT_SUFFIX,
    format_candidate_list,
    format_demonstrations,
    load_templates,
    parse_template,
    render,
    serialize_target,
    stage_tag,
    truncate_words,
    word_count,
)
from toolverify.paramgen import verify_parameter
from toolverify.selector import parse_tool_action

EXPECTED_TAGS = {
    "tool-gen": "tool-gen",
    "tool-describe": "tool-gen",
    "related-gen": "related-gen",
    "related-gen-next": "related-gen",
    "instruction-gen": "instruction-gen",
    "reasoning-gen": "reasoning-gen",
    "select-0shot": "select",
    "select-final": "select",
    "select-mcq": "select",
    "vq-gen": "vq-gen",
    "vq-gen-instruction": "vq-gen",
    "vq-answer": "vq-answer",
    "param-gen": "param-gen",
    "param-gen-chat": "param-alt",
    "param-verify": "param-verify",
    "call-construct": "call-construct",
}


def car_pair_bindings(car_registry) -> dict:
    a, b = car_registry["CarLocator"], car_registry["CarFinder"]
    return {"name1": a.name, "description1": a.description, "name2": b.name, "description2": b.description}


def test_every_stage_has_a_template_with_its_tag() -> None:
    templates = load_templates()
    assert set(templates) == set(EXPECTED_TAGS)
    for stage, tag in EXPECTED_TAGS.items():
        assert stage_tag(stage) == tag


def test_select_0shot_matches_golden(car_registry) -> None:
    prompt = render("select-0shot", {
        "candidate_list": format_candidate_list(car_registry),
        "instruction": CAR_INSTRUCTION,
    })
    assert prompt == golden("car_select_first.txt")
    assert prompt.endswith("Respond with just the name of the tool[/INST]")


def test_vq_gen_matches_golden(car_registry) -> None:
    prompt = render("vq-gen", car_pair_bindings(car_registry))
    assert prompt == golden("car_vq_gen.txt")
    assert "A contrastive question is a question that upon asking would resolve such confusion." in prompt
    assert "Generate a contrastive question that I can ask myself" in prompt


def test_vq_answer_matches_golden() -> None:
    prompt = render("vq-answer", {"instruction": CAR_INSTRUCTION, "question": CAR_QUESTION})
    assert prompt == golden("car_vq_answer.txt")


def test_select_final_matches_golden(car_registry) -> None:
    prompt = render("select-final", {
        "candidate_list": format_candidate_list([car_registry["CarLocator"], car_registry["CarFinder"]]),
        "instruction": CAR_INSTRUCTION,
        "answer": CAR_ANSWER,
    })
    assert prompt == golden("car_select_final.txt")


def test_param_gen_matches_golden(car_registry) -> None:
    tool = car_registry["CarFinder"]
    prompt = render("param-gen", {
        "demonstrations": format_demonstrations(tool, tool.demonstrations, with_call=False),
        "instruction": CAR_INSTRUCTION,
    })
    assert prompt == golden("car_param_gen.txt")


def test_chat_framing_only_where_declared(car_registry) -> None:
    tool = car_registry["CarFinder"]
    bindings = {"demonstrations": format_demonstrations(tool, tool.demonstrations, False), "instruction": "x"}
    plain = render("param-gen", bindings)
    chat = render("param-gen-chat", bindings)
    assert not plain.startswith("[INST]")
    assert chat == f"{CHAT_PREFIX}{plain}{CHAT_SUFFIX}"


def test_param_verify_prompt_shape() -> None:
    prompt = render("param-verify", {
        "instruction": "Find homes in Austin under 400000 dollars.",
        "parameter_definition": "The minimum price the user is willing to pay",
        "parameter_name": "min_price",
        "prediction_1": "400000",
        "prediction_2": "0",
    })
    assert 'I am confused about choosing one of these two for "min_price".\na. 400000\nb. 0' in prompt
    assert "respond with the chosen option only in square brackets []" in prompt


def test_param_verify_matches_golden(car_registry, scripted) -> None:
    backend = scripted([{"tag": "param-verify", "match": "min_price", "response": "None"}])
    spec = car_registry["CarLocator"].param("min_price")
    verify_parameter(CAR_INSTRUCTION, spec, "10000", "none", backend)
    assert backend.calls[0].prompt == golden("car_param_verify.txt")
    assert backend.calls[0].prompt.endswith("square brackets []. [/INST]")


def test_demonstrations_with_call_lines(toolbench) -> None:
    tool = toolbench["Current Weather Latitude Longitude"]
    text = format_demonstrations(tool, tool.demonstrations[:1], with_call=True)
    assert text == (
        'INS: A user says, "Please retrieve the temperature, humidity, wind, and visibility data at place '
        'with latitude = -37.3, longitute = 1.9."\n'
        "lat: -37.3\nlon: 1.9\nunits: none\nmode: none\nlang: none\n"
        "API: curl -X GET 'https://api.openweathermap.org/data/2.5/weather?lat=-37.3&lon=1.9&appid={API_KEY}"
        "&units=none&mode=none&lang=none'"
    )


def test_render_is_pure() -> None:
    bindings = {"instruction": "hi", "question": "why?"}
    assert render("vq-answer", bindings) == render("vq-answer", dict(bindings))


def test_missing_binding_names_placeholder() -> None:
    with pytest.raises(UnboundPlaceholderError) as err:
        render("vq-gen", {"name1": "A", "description1": "a", "name2": "B"})
    assert err.value.placeholder == "description2"
    assert "description2" in str(err.value)


def test_unknown_stage() -> None:
    with pytest.raises(UnknownStageError):
        render("summarize", {})


def test_literal_braces_survive_rendering(toolbench) -> None:
    tool = toolbench["Current Air Pollution"]
    text = render("call-construct", {
        "demonstrations": format_demonstrations(tool, tool.demonstrations[:1], with_call=True),
        "instruction": "air now",
        "param_str": "lat: 1\nlon: 2",
    })
    assert "appid={API_KEY}" in text
    assert text.endswith('INS: A user says, "air now"\nlat: 1\nlon: 2\nAPI:')


def test_parse_template_front_matter() -> None:
    tpl = parse_template("---\nstage: demo\nchat_wrapped: true\n---\nHello ${who}\n")
    assert (tpl.stage, tpl.tag, tpl.chat_wrapped, tpl.body) == ("demo", "demo", True, "Hello ${who}")
    assert tpl.slots == ["who"]
    with pytest.raises(ValueError):
        parse_template("stage: demo\nHello")
    with pytest.raises(ValueError):
        parse_template("---\ntag: x\n---\nbody")
    with pytest.raises(ValueError):
        parse_template("---\nstage: demo\n")


def test_serialize_target() -> None:
    assert serialize_target("t", "X") == "Thought: t\n\nAct: CALLTOOL[X()]"
    note = "Since I need to find the car within 10 miles, “Car Finder” tool seems to be the right choice here."
    assert "CALLTOOL[CarFinder()]" in serialize_target(note, "CarFinder")
    with pytest.raises(ValueError):
        serialize_target("t", "")


def test_target_round_trip_over_random_names() -> None:
    rng = random.Random(0)
    alphabet = string.ascii_letters + string.digits + " _-."
    for _ in range(100):
        name = rng.choice(string.ascii_letters) + "".join(rng.choices(alphabet, k=rng.randint(0, 24)))
        name = name.rstrip()
        thought = " ".join(rng.choices(["I", "need", "the", "tool", "to", "find", "a", "car"], k=8))
        assert parse_tool_action(serialize_target(thought, name)) == name


def test_truncate_words() -> None:
    text = "one two  three\nfour five"
    assert truncate_words(text, 1) == "one"
    assert truncate_words(text, 3) == "one two  three"
    assert truncate_words(text, 10) == text
    assert word_count(truncate_words(text, 4)) == 4
    with pytest.raises(ValueError):
        truncate_words(text, 0)
