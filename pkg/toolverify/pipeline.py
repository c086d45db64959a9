# toolverify/pipeline.py
# One instruction through the full path: verified selection, parameter
# generation and verification, call construction.
# Shared by the call command and batch evaluation.

import logging
from dataclasses import dataclass, field

from toolverify.backend import Backend, SamplingParams
from toolverify.paramgen import (
    DEFAULT_SHOTS,
    CallConstruction,
    VerifiedParamSet,
    accept_primary,
    construct_call,
    generate_parameters,
    second_opinion,
    verify_all,
)
from toolverify.registry import CandidateSet, Registry
from toolverify.selector import SelectionOptions, SelectionTrace, VQCache, verified_select

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Ablation switches for one run; each table row is one combination."""

    tool_verify: bool = True
    param_verify: bool = True
    condition_on_instruction: bool = False
    final_mode: str = "hint"
    n_shots: int = DEFAULT_SHOTS
    construct_mode: str = "template"
    none_policy: str = "strict"
    randomize_options: bool = False
    upper_bound: bool = False
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        if self.construct_mode not in ("template", "model"):
            raise ValueError(f"construct_mode must be 'template' or 'model', got {self.construct_mode!r}")
        if self.none_policy not in ("strict", "lenient"):
            raise ValueError(f"none_policy must be 'strict' or 'lenient', got {self.none_policy!r}")
        if self.n_shots < 0:
            raise ValueError(f"n_shots must be >= 0, got {self.n_shots}")

    @property
    def label(self) -> str:
        if self.upper_bound:
            return "upper-bound"
        if self.tool_verify and self.param_verify:
            return "both"
        if self.tool_verify:
            return "tool-only"
        if self.param_verify:
            return "param-only"
        return "none"

    def selection_options(self) -> SelectionOptions:
        return SelectionOptions(
            verify=self.tool_verify,
            condition_on_instruction=self.condition_on_instruction,
            final_mode=self.final_mode,
            sampling=self.sampling,
        )


SWEEP = (
    ("none", False, False),
    ("tool-only", True, False),
    ("param-only", False, True),
    ("both", True, True),
)


def sweep_configs(base: PipelineConfig) -> list[PipelineConfig]:
    """The four verification ablation rows on top of a base config."""
    fields = {k: getattr(base, k) for k in base.__dataclass_fields__}
    configs = []
    for _, tool_verify, param_verify in SWEEP:
        fields.update(tool_verify=tool_verify, param_verify=param_verify)
        configs.append(PipelineConfig(**fields))
    return configs


@dataclass
class PipelineResult:
    trace: SelectionTrace | None
    tool: str
    params: VerifiedParamSet
    construction: CallConstruction
    flags: list[str] = field(default_factory=list)

    @property
    def call(self) -> str:
        return self.construction.call

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "call": self.call,
            "construction_mode": self.construction.mode_used,
            "flags": list(self.flags),
            "selection": self.trace.to_dict() if self.trace else None,
            "params": self.params.to_dict(),
        }


def run_pipeline(
    instruction: str,
    candidates: CandidateSet,
    registry: Registry,
    backend: Backend,
    cache: VQCache | None = None,
    config: PipelineConfig | None = None,
    gold_tool: str | None = None,
) -> PipelineResult:
    """
    Select a tool, predict and verify its parameters, construct the call.

    Args:
        instruction: User instruction
        candidates: Candidate set (the full registry in evaluation)
        registry: Tool catalog
        backend: Backend or router serving every stage
        cache: Verification-question cache
        config: Ablation switches
        gold_tool: Tool given directly in upper-bound mode

    Returns:
        PipelineResult; trace is None in upper-bound mode
    """
    config = config or PipelineConfig()
    sampling = config.sampling

    if config.upper_bound:
        if gold_tool is None:
            raise ValueError("upper_bound runs need the gold tool")
        trace, tool_name = None, gold_tool
    else:
        trace = verified_select(instruction, candidates, backend, registry, cache, config.selection_options())
        tool_name = trace.final
    tool = registry[tool_name]

    primary = generate_parameters(instruction, tool, backend, config.n_shots, sampling)
    drafts = [primary]
    if config.param_verify:
        secondary = second_opinion(instruction, tool, backend, config.n_shots, sampling)
        drafts.append(secondary)
        params = verify_all(
            instruction, tool, primary.values, secondary.values, backend, sampling,
            randomize_options=config.randomize_options,
        )
    else:
        params = accept_primary(tool, primary.values)
    params.transcripts[:0] = [d.transcript for d in drafts if d.transcript is not None]

    construction = construct_call(
        tool, params, config.construct_mode, backend, instruction, config.n_shots, sampling,
    )

    flags = list(trace.flags) if trace else []
    flags += [f"missing:{name}" for name in primary.missing]
    flags += params.flags
    flags += list(construction.flags)
    logger.info("Pipeline for %r -> %s", instruction[:60], tool_name)
    return PipelineResult(trace, tool_name, params, construction, flags)
