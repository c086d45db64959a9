import pytest

from tests.conftest import CAR_INSTRUCTION
from toolverify.backend import ScriptRule
from toolverify.pipeline import PipelineConfig, run_pipeline, sweep_configs
from toolverify.registry import CandidateSet

WEATHER_NOW = "What's the weather like right now at latitude 10.5, longitude -66.9? Use metric units."
CAR_CANDIDATES = CandidateSet(("CarLocator", "BankAccount", "CarFinder", "CurrentWeatherCity"))


def car_params(full: bool = True) -> list[dict]:
    return [
        {"tag": "param-gen", "match": CAR_INSTRUCTION, "response": "car_model: Audi Q7\nradius: 10" if full else "car_model: Audi Q7"},
        {"tag": "param-alt", "match": CAR_INSTRUCTION, "response": "car_model: Audi Q7\nradius: 10"},
    ]


def test_labels() -> None:
    assert PipelineConfig().label == "both"
    assert PipelineConfig(param_verify=False).label == "tool-only"
    assert PipelineConfig(tool_verify=False).label == "param-only"
    assert PipelineConfig(tool_verify=False, param_verify=False).label == "none"
    assert PipelineConfig(upper_bound=True).label == "upper-bound"


def test_config_validation() -> None:
    with pytest.raises(ValueError):
        PipelineConfig(construct_mode="guess")
    with pytest.raises(ValueError):
        PipelineConfig(none_policy="loose")
    with pytest.raises(ValueError):
        PipelineConfig(n_shots=-1)


def test_sweep_keeps_base_settings() -> None:
    configs = sweep_configs(PipelineConfig(none_policy="lenient", n_shots=1))
    assert [c.label for c in configs] == ["none", "tool-only", "param-only", "both"]
    assert all(c.none_policy == "lenient" and c.n_shots == 1 for c in configs)


def test_car_pipeline(car_registry, scripted, car_rules) -> None:
    backend = scripted(car_rules + car_params())
    result = run_pipeline(CAR_INSTRUCTION, CAR_CANDIDATES, car_registry, backend)

    assert result.tool == "CarFinder"
    assert result.call == "CALLTOOL[CarFinder(car_model=Audi Q7, radius=10)]"
    assert result.flags == []
    assert backend.tags() == ["select", "select", "vq-gen", "vq-answer", "select", "param-gen", "param-alt"]
    assert [t.tag for t in result.params.transcripts] == ["param-gen", "param-alt"]
    assert result.to_dict()["selection"]["final"] == "CarFinder"


def test_missing_params_are_flagged_without_param_verification(car_registry, scripted, car_rules) -> None:
    backend = scripted(car_rules + car_params(full=False))
    result = run_pipeline(CAR_INSTRUCTION, CAR_CANDIDATES, car_registry, backend, config=PipelineConfig(param_verify=False))
    assert result.call == "CALLTOOL[CarFinder(car_model=Audi Q7, radius=none)]"
    assert result.flags == ["missing:radius"]
    assert backend.count("param-alt") == 0


def test_upper_bound_skips_selection(car_registry, scripted) -> None:
    backend = scripted(car_params())
    config = PipelineConfig(upper_bound=True)
    result = run_pipeline(CAR_INSTRUCTION, CAR_CANDIDATES, car_registry, backend, config=config, gold_tool="CarFinder")
    assert result.trace is None
    assert result.tool == "CarFinder"
    assert backend.count("select") == 0
    assert result.to_dict()["selection"] is None
    with pytest.raises(ValueError):
        run_pipeline(CAR_INSTRUCTION, CAR_CANDIDATES, car_registry, backend, config=config)


def test_demo_weather_pipeline(toolbench, demo_backend) -> None:
    result = run_pipeline(WEATHER_NOW, CandidateSet(tuple(toolbench.names)), toolbench, demo_backend())
    assert result.tool == "Current Weather Latitude Longitude"
    assert result.params.values()["units"] == "metric"
    assert result.call == (
        "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?"
        "lat=10.5&lon=-66.9&appid={API_KEY}&units=metric&mode=none&lang=none'"
    )


def test_model_construction_through_pipeline(toolbench, demo_backend) -> None:
    backend = demo_backend()
    backend.rules.append(ScriptRule(tag="call-construct", match="", response="API: GET https://example.com/nope"))
    result = run_pipeline(
        WEATHER_NOW, CandidateSet(tuple(toolbench.names)), toolbench, backend, config=PipelineConfig(construct_mode="model"),
    )
    assert "model-construction-rejected" in result.flags
    assert "units=metric" in result.call
