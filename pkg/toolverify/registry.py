"""
Tool Registry
Typed catalog of tools with persistence and candidate-set construction.

Input: registry JSON document {"tools": [ToolSpec records]}
Output: immutable Registry shared by every pipeline stage

Usage:
    from toolverify.registry import load_registry, build_candidate_set

    registry = load_registry("fixtures/toolbench_registry.json")
    cands = build_candidate_set("Current Air Pollution", registry, mode="random_k", k=7, rng_seed=0)
"""

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal
from urllib.parse import quote

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from toolverify.errors import CandidateSetError, RegistryError, RegistryLoadError

AUTH_PLACEHOLDER = "API_KEY"
PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ParamSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    description: str = ""
    kind: Literal["string", "number", "enum", "boolean"] = "string"
    required: bool = False
    none_token: str = "none"
    values: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _enum_has_values(self):
        if self.kind == "enum" and not self.values:
            raise ValueError(f"enum parameter '{self.name}' needs a non-empty value set")
        return self


class Demonstration(BaseModel):
    model_config = ConfigDict(frozen=True)

    instruction: str = Field(min_length=1)
    assignments: dict[str, str] = Field(default_factory=dict)
    rendered_call: str = Field(min_length=1)

    @field_validator("assignments", mode="before")
    @classmethod
    def _stringify(cls, value):
        # JSON numbers like -37.3 are kept as their text form
        if isinstance(value, dict):
            return {k: v if isinstance(v, str) else json.dumps(v) for k, v in value.items()}
        return value


class ToolSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    description: str = ""
    params: tuple[ParamSpec, ...] = ()
    demonstrations: tuple[Demonstration, ...] = ()
    call_template: str | None = None
    related: tuple[str, ...] = ()
    synthetic: bool = False

    @field_validator("name")
    @classmethod
    def _name_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("tool name must be non-empty")
        return value

    @model_validator(mode="after")
    def _check_template_and_demos(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"tool '{self.name}' declares a parameter twice")
        declared = set(names)

        if self.call_template is not None:
            unknown = [p for p in placeholders(self.call_template) if p not in declared and p != AUTH_PLACEHOLDER]
            if unknown:
                raise ValueError(f"tool '{self.name}' call_template uses undeclared params {unknown}")

        for i, demo in enumerate(self.demonstrations):
            extra = [k for k in demo.assignments if k not in declared]
            if extra:
                raise ValueError(f"tool '{self.name}' demonstration {i} assigns undeclared params {extra}")
            if self.call_template is not None:
                expected = render_call(self, demo.assignments)
                if expected != demo.rendered_call:
                    raise ValueError(
                        f"tool '{self.name}' demonstration {i} rendered_call does not match call_template: "
                        f"expected {expected!r}"
                    )
        return self

    def param(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]


class RegistryFile(BaseModel):
    tools: list[ToolSpec] = Field(default_factory=list)


def placeholders(template: str) -> list[str]:
    """Placeholder names in a call template, in order of appearance."""
    return PLACEHOLDER_RE.findall(template)


def render_call(tool: ToolSpec, values: dict[str, str]) -> str:
    """
    Instantiate a tool's call template.

    Absent params render as their none_token; the auth placeholder stays literal.
    Tools without a template render in the action form "CALLTOOL[Name(k=v, ...)]".
    """
    def value_of(name: str) -> str:
        text = values.get(name)
        if text is None or str(text).strip() == "":
            return tool.param(name).none_token
        return str(text).strip()

    if tool.call_template is None:
        args = ", ".join(f"{p.name}={value_of(p.name)}" for p in tool.params)
        return f"CALLTOOL[{tool.name}({args})]"

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key == AUTH_PLACEHOLDER:
            return m.group(0)
        return quote(value_of(key), safe=",:")

    return PLACEHOLDER_RE.sub(sub, tool.call_template)


class Registry:
    """Immutable, ordered collection of ToolSpec keyed by unique name."""

    def __init__(self, tools: list[ToolSpec] | tuple[ToolSpec, ...] = ()):
        by_name: dict[str, ToolSpec] = {}
        for tool in tools:
            if tool.name in by_name:
                raise RegistryError(f"Duplicate tool name '{tool.name}'")
            by_name[tool.name] = tool
        self._tools = tuple(tools)
        self._by_name = by_name

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self):
        return iter(self._tools)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> ToolSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise RegistryError(f"Unknown tool '{name}'") from None

    @property
    def names(self) -> list[str]:
        return [t.name for t in self._tools]

    def related_of(self, name: str) -> list[str]:
        """Related tools of name that exist in this registry."""
        return list(dict.fromkeys(r for r in self[name].related if r in self._by_name and r != name))

    def to_dict(self) -> dict:
        return {"tools": [t.model_dump(mode="json", exclude_defaults=True) for t in self._tools]}


def _location(error: dict, records: list) -> str:
    loc = error.get("loc", ())
    where = "tools"
    if len(loc) >= 2 and loc[0] == "tools" and isinstance(loc[1], int):
        idx = loc[1]
        name = records[idx].get("name") if idx < len(records) and isinstance(records[idx], dict) else None
        where = f"tools[{idx}]" + (f" ({name})" if name else "")
        rest = [str(p) for p in loc[2:]]
        if rest:
            where += "." + ".".join(rest)
    return where


def load_registry(path) -> Registry:
    """
    Load and validate a registry file. Fails atomically on the first violation.

    Args:
        path: Path to the registry JSON document

    Returns:
        Registry with every ToolSpec invariant checked

    Raises:
        FileNotFoundError: If the file doesn't exist
        RegistryLoadError: On parse errors (line/column) or invariant violations (tool path)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Registry file not found: {path}")

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise RegistryLoadError(e.msg, location=f"{path}:{e.lineno}:{e.colno}") from e

    if isinstance(data, list):
        data = {"tools": data}
    if not isinstance(data, dict):
        raise RegistryLoadError("registry document must be an object with a 'tools' list", location=str(path))

    records = data.get("tools", [])
    try:
        parsed = RegistryFile.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise RegistryLoadError(first.get("msg", str(e)), location=f"{path}:{_location(first, records)}") from e

    try:
        return Registry(parsed.tools)
    except RegistryError as e:
        raise RegistryLoadError(str(e), location=str(path)) from e


def save_registry(registry: Registry, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(registry.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# -- candidate sets ---------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateSet:
    tools: tuple[str, ...]
    ground_truth: str | None = None
    hard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tools", tuple(self.tools))
        if len(set(self.tools)) != len(self.tools):
            raise CandidateSetError(f"Candidate set has duplicates: {list(self.tools)}")
        if self.ground_truth is not None and self.ground_truth not in self.tools:
            raise CandidateSetError(f"Ground truth '{self.ground_truth}' is not a candidate")

    def __len__(self) -> int:
        return len(self.tools)

    def __contains__(self, name: str) -> bool:
        return name in self.tools

    def __iter__(self):
        return iter(self.tools)

    def without(self, name: str) -> "CandidateSet":
        """Same order with name removed (ground truth dropped if it was name)."""
        gt = None if self.ground_truth == name else self.ground_truth
        return CandidateSet(tuple(t for t in self.tools if t != name), gt, self.hard)

    def restricted_to(self, names) -> "CandidateSet":
        keep = set(names)
        tools = tuple(t for t in self.tools if t in keep)
        gt = self.ground_truth if self.ground_truth in keep else None
        return CandidateSet(tools, gt, self.hard)

    def to_dict(self) -> dict:
        return {"tools": list(self.tools), "ground_truth": self.ground_truth, "hard": self.hard}


def build_candidate_set(
    ground_truth: str,
    registry: Registry,
    mode: str = "random_k",
    k: int = 7,
    rng_seed: int | None = 0,
    shuffle: bool = True,
) -> CandidateSet:
    """
    Build the candidate list for one instruction.

    random_k draws k distinct other tools (all others when fewer exist) and adds
    the ground truth; related_only keeps the ground truth and its related tools.
    Order is shuffled by rng_seed; with shuffle=False the ground truth comes first.

    Raises:
        CandidateSetError: Unknown ground truth, unknown mode, or related_only
            for a tool without related tools
    """
    if ground_truth not in registry:
        raise CandidateSetError(f"Unknown ground-truth tool '{ground_truth}'")
    rng = random.Random(rng_seed)

    if mode == "random_k":
        if k < 0:
            raise CandidateSetError(f"k must be >= 0, got {k}")
        others = sorted(n for n in registry.names if n != ground_truth)
        picks = rng.sample(others, min(k, len(others)))
        hard = False
    elif mode == "related_only":
        picks = registry.related_of(ground_truth)
        if not picks:
            raise CandidateSetError(f"Tool '{ground_truth}' has no related tools")
        hard = True
    else:
        raise CandidateSetError(f"Unknown candidate mode '{mode}'")

    if shuffle:
        tools = picks + [ground_truth]
        rng.shuffle(tools)
    else:
        tools = [ground_truth] + picks
    return CandidateSet(tuple(tools), ground_truth, hard)
