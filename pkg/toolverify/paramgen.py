"""
Parameter Generator
Few-shot parameter prediction, dual-prediction verification and tool-call construction.

Input: instruction + selected ToolSpec (with demonstrations)
Output: VerifiedParamSet and the constructed call string

Flow:
    generate_parameters  (param-gen, few-shot completion)      -> primary values
    second_opinion       (param-alt, chat-framed same prompt)  -> secondary values
    verify_all           one multiple-choice question per disagreeing param
    construct_call       template rendering, or model construction checked against it

Usage:
    primary = generate_parameters(instruction, tool, backend)
    secondary = second_opinion(instruction, tool, backend)
    verified = verify_all(instruction, tool, primary.values, secondary.values, backend)
    result = construct_call(tool, verified)
"""

import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum

from toolverify.backend import Backend, SamplingParams, Transcript, ask
from toolverify.calls import calls_equivalent, normalize_value
from toolverify.errors import (
    CallParseError,
    ConstructionError,
    ParamGenerationError,
    VerificationParseError,
)
from toolverify.prompts import format_demonstrations, format_param_block
from toolverify.registry import ParamSpec, ToolSpec, render_call

logger = logging.getLogger(__name__)

DEFAULT_SHOTS = 3

PARAM_LINE_RE = re.compile(r"^([^:=]+?)\s*[:=]\s*(.*)$")
BRACKET_RE = re.compile(r"\[\s*([^\[\]]*?)\s*\]")
NONE_RE = re.compile(r"\bnone\b", re.IGNORECASE)


@dataclass
class ParamDraft:
    """One backend's parameter predictions for a tool."""

    values: dict[str, str]
    missing: list[str] = field(default_factory=list)
    transcript: Transcript | None = None


def parse_param_reply(text: str, tool: ToolSpec) -> tuple[dict[str, str], list[str]]:
    """
    Parse a "param: value" block (":" or "=") into a value per declared param.

    Keys match declared names case-insensitively; the block ends at the next
    INS:/API: line. Undeclared keys are ignored.

    Returns:
        (values, missing) where missing params were given their none_token

    Raises:
        ParamGenerationError: If no declared param appears in the reply
    """
    declared = {p.name.casefold(): p for p in tool.params}
    found: dict[str, str] = {}

    for line in (text or "").splitlines():
        s = line.strip()
        if s.startswith("INS:") or s.startswith("API:"):
            break
        kv = PARAM_LINE_RE.match(s)
        if not kv:
            continue
        spec = declared.get(kv.group(1).strip().casefold())
        if spec is None or spec.name in found:
            continue
        value = kv.group(2).strip()
        found[spec.name] = value if value else spec.none_token

    if tool.params and not found:
        snip = (text or "")[:120].replace("\n", "\\n")
        raise ParamGenerationError(f"No parameter of '{tool.name}' found in reply: {snip!r}")

    missing = [p.name for p in tool.params if p.name not in found]
    values = {p.name: found.get(p.name, p.none_token) for p in tool.params}
    return values, missing


def _draft(stage: str, instruction: str, tool: ToolSpec, backend: Backend, n_shots: int, sampling) -> ParamDraft:
    if not tool.params:
        return ParamDraft(values={})
    demos = tool.demonstrations[:max(n_shots, 0)]
    transcript = ask(backend, stage, {
        "demonstrations": format_demonstrations(tool, demos, with_call=False),
        "instruction": instruction,
    }, sampling)
    values, missing = parse_param_reply(transcript.response, tool)
    if missing:
        logger.info("Reply for '%s' omitted params %s; using none tokens", tool.name, missing)
    return ParamDraft(values=values, missing=missing, transcript=transcript)


def generate_parameters(
    instruction: str,
    tool: ToolSpec,
    backend: Backend,
    n_shots: int = DEFAULT_SHOTS,
    sampling: SamplingParams | None = None,
) -> ParamDraft:
    """
    Predict every declared parameter from the tool's first n_shots demonstrations.

    Args:
        instruction: User instruction
        tool: Selected tool
        backend: Backend serving the param-gen stage
        n_shots: Demonstrations to show (all when fewer exist)
        sampling: Sampling overrides

    Returns:
        ParamDraft with a value (possibly none_token) for every param

    Raises:
        ParamGenerationError: If the reply is wholly unparseable
    """
    return _draft("param-gen", instruction, tool, backend, n_shots, sampling)


def second_opinion(
    instruction: str,
    tool: ToolSpec,
    alt_backend: Backend,
    n_shots: int = DEFAULT_SHOTS,
    sampling: SamplingParams | None = None,
) -> ParamDraft:
    """Same prediction through the chat-framed prompt on the param-alt stage."""
    return _draft("param-gen-chat", instruction, tool, alt_backend, n_shots, sampling)


# -- verification -------------------------------------------------------------------

class Verdict(str, Enum):
    A = "A"
    B = "B"
    NONE = "NONE"
    AGREE = "AGREE"


def parse_verdict(text: str, a: str, b: str, none_token: str = "none") -> Verdict:
    """
    Read a verification reply: "[a]"/"[b]" (or a bracketed option value), else "None".

    Raises:
        VerificationParseError: If the reply picks none of the three
    """
    na, nb = normalize_value(a, none_token), normalize_value(b, none_token)
    for m in BRACKET_RE.finditer(text or ""):
        inner = m.group(1).strip()
        if not inner:
            continue
        if inner.casefold() == "a":
            return Verdict.A
        if inner.casefold() == "b":
            return Verdict.B
        if inner.casefold() == "none":
            return Verdict.NONE
        value = normalize_value(inner, none_token)
        if value == na:
            return Verdict.A
        if value == nb:
            return Verdict.B
    if NONE_RE.search(text or ""):
        return Verdict.NONE
    raise VerificationParseError(f"Verification reply chose no option: {(text or '')[:120]!r}")


def _verify(instruction: str, spec: ParamSpec, a: str, b: str, backend: Backend, sampling) -> tuple[Verdict, Transcript | None]:
    if normalize_value(a, spec.none_token) == normalize_value(b, spec.none_token):
        return Verdict.AGREE, None
    transcript = ask(backend, "param-verify", {
        "instruction": instruction,
        "parameter_definition": spec.description,
        "parameter_name": spec.name,
        "prediction_1": a,
        "prediction_2": b,
    }, sampling)
    return parse_verdict(transcript.response, a, b, spec.none_token), transcript


def verify_parameter(
    instruction: str,
    spec: ParamSpec,
    a: str,
    b: str,
    backend: Backend,
    sampling: SamplingParams | None = None,
) -> Verdict:
    """AGREE without traffic for equal values, otherwise ask which option the instruction supports."""
    verdict, _ = _verify(instruction, spec, a, b, backend, sampling)
    return verdict


@dataclass(frozen=True)
class ParamPrediction:
    param: str
    primary_value: str
    secondary_value: str | None
    verdict: Verdict
    final_value: str
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "param": self.param,
            "primary_value": self.primary_value,
            "secondary_value": self.secondary_value,
            "verdict": self.verdict.value,
            "final_value": self.final_value,
            "flags": list(self.flags),
        }


@dataclass
class VerifiedParamSet:
    tool: str
    predictions: list[ParamPrediction]
    transcripts: list[Transcript] = field(default_factory=list)

    def values(self) -> dict[str, str]:
        return {p.param: p.final_value for p in self.predictions}

    @property
    def flags(self) -> list[str]:
        return [f"{p.param}:{flag}" for p in self.predictions for flag in p.flags]

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "predictions": [p.to_dict() for p in self.predictions],
            "transcripts": [t.to_dict() for t in self.transcripts],
        }


def _final_value(verdict: Verdict, a: str, b: str, spec: ParamSpec) -> str:
    if verdict is Verdict.B:
        return b
    if verdict is Verdict.NONE:
        return spec.none_token
    return a


def verify_all(
    instruction: str,
    tool: ToolSpec,
    primary: dict[str, str],
    secondary: dict[str, str],
    backend: Backend,
    sampling: SamplingParams | None = None,
    randomize_options: bool = False,
    rng: random.Random | None = None,
) -> VerifiedParamSet:
    """
    Resolve every parameter of the tool from two prediction maps.

    Args:
        instruction: User instruction
        tool: Selected tool
        primary: Primary prediction map (option a unless randomized)
        secondary: Second-opinion map
        backend: Backend serving param-verify
        randomize_options: Present the two values in random order
        rng: Source for option order (seeded Random(0) by default)

    Returns:
        VerifiedParamSet with one prediction per declared param, in declaration order
    """
    rng = rng or random.Random(0)
    predictions = []
    transcripts = []

    for spec in tool.params:
        a = primary.get(spec.name) or spec.none_token
        b = secondary.get(spec.name) or spec.none_token
        flags = []

        swapped = randomize_options and rng.random() < 0.5
        first, second = (b, a) if swapped else (a, b)
        try:
            verdict, transcript = _verify(instruction, spec, first, second, backend, sampling)
        except VerificationParseError as e:
            logger.warning("Verification of '%s' unparseable, keeping primary: %s", spec.name, e)
            verdict, transcript = Verdict.A, None
            swapped = False
            flags.append("verify-parse-failed")
        if transcript is not None:
            transcripts.append(transcript)
        if swapped and verdict in (Verdict.A, Verdict.B):
            verdict = Verdict.B if verdict is Verdict.A else Verdict.A

        final = _final_value(verdict, a, b, spec)
        if spec.required and normalize_value(final, spec.none_token) == spec.none_token:
            flags.append("required-missing")
        predictions.append(ParamPrediction(spec.name, a, b, verdict, final, tuple(flags)))

    return VerifiedParamSet(tool=tool.name, predictions=predictions, transcripts=transcripts)


def accept_primary(tool: ToolSpec, primary: dict[str, str]) -> VerifiedParamSet:
    """Parameter verification off: every final value is the primary prediction."""
    predictions = []
    for spec in tool.params:
        value = primary.get(spec.name) or spec.none_token
        flags = ("required-missing",) if spec.required and normalize_value(value, spec.none_token) == spec.none_token else ()
        predictions.append(ParamPrediction(spec.name, value, None, Verdict.A, value, flags))
    return VerifiedParamSet(tool=tool.name, predictions=predictions)


# -- call construction ----------------------------------------------------------------

@dataclass(frozen=True)
class CallConstruction:
    call: str
    mode_used: str
    flags: tuple[str, ...] = ()
    transcript: Transcript | None = None


def _model_reply_call(text: str) -> str:
    for line in (text or "").splitlines():
        s = line.strip()
        if not s:
            continue
        return s[len("API:"):].strip() if s.startswith("API:") else s
    return ""


def construct_call(
    tool: ToolSpec,
    params: VerifiedParamSet,
    mode: str = "template",
    backend: Backend | None = None,
    instruction: str | None = None,
    n_shots: int = DEFAULT_SHOTS,
    sampling: SamplingParams | None = None,
) -> CallConstruction:
    """
    Build the call string from verified parameters.

    template mode renders call_template; model mode prompts with demonstrations and
    the param block, keeping the reply only when it is equivalent to the template
    rendering (otherwise the template call is used and the result flagged).

    Raises:
        ConstructionError: Params don't cover the tool, or model mode lacks backend/instruction
    """
    if mode not in ("template", "model"):
        raise ValueError(f"mode must be 'template' or 'model', got {mode!r}")
    if params.tool != tool.name:
        raise ConstructionError(f"Parameters belong to '{params.tool}', not '{tool.name}'")
    values = params.values()
    absent = [name for name in tool.param_names if name not in values]
    if absent:
        raise ConstructionError(f"Parameters {absent} of '{tool.name}' have no value")

    template_call = render_call(tool, values)
    if mode == "template":
        return CallConstruction(template_call, "template")

    if backend is None or not instruction:
        raise ConstructionError("Model construction needs a backend and the instruction")

    transcript = ask(backend, "call-construct", {
        "demonstrations": format_demonstrations(tool, tool.demonstrations[:n_shots], with_call=True),
        "instruction": instruction,
        "param_str": format_param_block(values, tool.param_names),
    }, sampling)
    candidate = _model_reply_call(transcript.response)
    try:
        ok = bool(candidate) and calls_equivalent(candidate, template_call)
    except CallParseError as e:
        logger.warning("Model-built call for '%s' unparseable: %s", tool.name, e)
        ok = False
    if not ok:
        logger.warning("Model-built call for '%s' rejected, using template", tool.name)
        return CallConstruction(template_call, "template", ("model-construction-rejected",), transcript)
    return CallConstruction(candidate, "model", (), transcript)
