"""Shared fixtures: registries, scripted backends and the car-dealer episode."""

from pathlib import Path

import pytest

from toolverify.backend import ScriptedBackend, ScriptRule, load_script
from toolverify.registry import load_registry

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
TEST_FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

CAR_INSTRUCTION = (
    "While I was coming back home from the office, I saw a kid in Audi Q7. "
    "Where can I buy this car within 10 miles?"
)
CAR_QUESTION = (
    "What is the primary purpose of the class I need? Is it to find a car dealership based on a "
    "specific car model and location (CarFinder), or is it to list car dealerships within a given "
    "price range (CarLocator)?"
)
CAR_ANSWER = (
    "The user wants to buy a specific car model, the Audi Q7, within 10 miles, so the class needed "
    "finds a car dealership based on a specific car model and location (CarFinder)."
)


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8").rstrip("\n")


@pytest.fixture(scope="session")
def toolbench():
    return load_registry(FIXTURES / "toolbench_registry.json")


@pytest.fixture(scope="session")
def car_registry():
    return load_registry(TEST_FIXTURES / "car_registry.json")


@pytest.fixture
def scripted():
    """Factory fixture: ScriptedBackend from rule dicts (ScriptRule keywords) or ScriptRules."""

    def _factory(rules) -> ScriptedBackend:
        return ScriptedBackend([r if isinstance(r, ScriptRule) else ScriptRule(**r) for r in rules])

    return _factory


@pytest.fixture
def demo_backend():
    """Factory fixture: fresh backend over fixtures/demo_script.jsonl."""

    def _factory() -> ScriptedBackend:
        return ScriptedBackend(load_script(FIXTURES / "demo_script.jsonl"))

    return _factory


@pytest.fixture
def car_rules():
    """Replies for the car-dealer episode: CarLocator first, CarFinder second, CarFinder after the hint."""
    return [
        {"tag": "select", "match": "Hint:", "response": "CarFinder"},
        {"tag": "select", "match": CAR_INSTRUCTION, "response": "CarLocator", "once": True},
        {"tag": "select", "match": CAR_INSTRUCTION, "response": "CALLTOOL[CarFinder()]", "once": True},
        {"tag": "vq-gen", "match": "CarFinder", "response": CAR_QUESTION},
        {"tag": "vq-answer", "match": CAR_INSTRUCTION, "response": CAR_ANSWER},
    ]
