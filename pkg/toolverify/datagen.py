"""
Dataset Generator
Builds the synthetic tool-selection corpus used to fine-tune the selection model.

Input: seed file (8 annotated tools with related tools and example instructions)
Output: registry of generated tools, JSON-lines training corpus, stats summary

Stages:
    1. Tool library   - repeated generation from a rotating seed pool, near-duplicates dropped
    2. Related tools  - two close variants per generated tool, described by re-prompting
    3. Instructions   - a few per tool, blank and duplicate generations resampled
    4. Samples        - candidate set (random or related-only), reasoning note, Thought/Act target

Usage:
    seed = load_seed_file("fixtures/seed_tools.json")
    library = generate_tool_library(seed.pool, backend, NgramEmbedder(), rounds=2, per_round=4)
    registry = build_synthetic_registry(seed, library, backend)
    samples, stats = assemble_dataset(registry, backend, NgramEmbedder(), DatagenConfig())
    export_finetune(samples, "out/dataset.jsonl", registry)
"""

import json
import logging
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd

from toolverify.backend import Backend, SamplingParams, ask
from toolverify.errors import (
    CandidateSetError,
    DatagenError,
    InstructionGenerationError,
    RelatedToolError,
    SelectionError,
)
from toolverify.prompts import (
    DEFAULT_NOTE_TOKENS,
    format_candidate_list,
    format_instruction_examples,
    format_tool_examples,
    render,
    serialize_target,
    truncate_words,
)
from toolverify.registry import CandidateSet, Registry, ToolSpec, build_candidate_set
from toolverify.selector import parse_tool_action
from toolverify.similarity import DEFAULT_DEDUP_THRESHOLD, is_near_duplicate, most_similar, tool_text

logger = logging.getLogger(__name__)

SEED_CAPACITY = 8
DEFAULT_HARD_RATIO = 75 / 555
MAX_RESAMPLES = 3

GEN_LINE_RE = re.compile(r"^(Name|Description)\s*:\s*(.*)$", re.IGNORECASE)
RELATED_PREFIX_RE = re.compile(r"^Name\d\s*:\s*", re.IGNORECASE)


def normalize_name(name: str) -> str:
    """Case-folded, whitespace-collapsed name used for distinctness checks."""
    return " ".join(name.casefold().split())


# -- seed pool ------------------------------------------------------------------------

@dataclass
class SeedPool:
    tools: list[tuple[str, str]]
    capacity: int = SEED_CAPACITY

    def __post_init__(self):
        self.tools = [(n, d) for n, d in self.tools]
        if self.capacity < 1:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if len(self.tools) > self.capacity:
            raise ValueError(f"Seed pool holds {len(self.tools)} tools, capacity is {self.capacity}")
        names = [normalize_name(n) for n, _ in self.tools]
        if len(set(names)) != len(names):
            raise ValueError("Seed pool tool names must be unique")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.tools]

    def copy(self) -> "SeedPool":
        return SeedPool(list(self.tools), self.capacity)

    def rotate(self, tool: tuple[str, str], embedder, name_only: bool = False) -> int | None:
        """
        Admit a newly accepted tool: append while below capacity, otherwise
        replace the most similar member.

        Returns:
            Index replaced, or None when appended
        """
        if len(self.tools) < self.capacity:
            self.tools.append(tool)
            return None
        texts = [tool_text(n, d, name_only) for n, d in self.tools]
        idx, score = most_similar(embedder, tool_text(*tool, name_only=name_only), texts)
        logger.debug("Pool rotation: '%s' replaces '%s' (cos=%.3f)", tool[0], self.tools[idx][0], score)
        self.tools[idx] = tool
        return idx


@dataclass
class SeedFile:
    """Parsed seed file: the pool, a registry of seeds plus annotated related tools, instruction examples."""

    pool: SeedPool
    registry: Registry
    instruction_examples: list[tuple[str, str, str]]


def load_seed_file(path, capacity: int = SEED_CAPACITY) -> SeedFile:
    """
    Load the annotated seed file.

    Format: {"tools": [{"name", "description", "related": [{"name", "description"}],
    "instructions": [..]}]}

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If a record is malformed or names collide
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Seed file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    records = data.get("tools", []) if isinstance(data, dict) else data

    pool_tools = []
    specs: list[ToolSpec] = []
    examples = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or not rec.get("name") or not rec.get("description"):
            raise ValueError(f"{path}: seed tool {i} needs 'name' and 'description'")
        name, description = rec["name"], rec["description"]
        related = [r for r in rec.get("related", []) if r.get("name")]
        family = [name] + [r["name"] for r in related]

        pool_tools.append((name, description))
        specs.append(ToolSpec(name=name, description=description, related=tuple(family[1:])))
        for r in related:
            links = tuple(n for n in family if n != r["name"])
            specs.append(ToolSpec(name=r["name"], description=r.get("description", ""), related=links))
        for instruction in rec.get("instructions", []):
            examples.append((name, description, instruction))

    try:
        registry = Registry(specs)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e
    return SeedFile(SeedPool(pool_tools, capacity), registry, examples)


# -- tool library ---------------------------------------------------------------------

def parse_tool_generation(text: str) -> list[tuple[str, str]]:
    """
    Extract consecutive Name/Description pairs from a generation.

    A Name line opens a pair, the following Description line closes it; an orphan
    Name (no description before the next Name or end of text) is dropped, as are
    lines outside the two fields.
    """
    pairs = []
    name = None
    for line in (text or "").splitlines():
        m = GEN_LINE_RE.match(line.strip())
        if not m:
            continue
        field_name, value = m.group(1).lower(), m.group(2).strip()
        if field_name == "name":
            name = value or None
        elif name and value:
            pairs.append((name, value))
            name = None
    return pairs


@dataclass
class ToolLibrary:
    tools: list[tuple[str, str]]
    pool: SeedPool
    n_generated: int = 0
    skipped: int = 0
    rejected: list[str] = field(default_factory=list)


def generate_tool_library(
    seed: SeedPool,
    backend: Backend,
    embedder,
    rounds: int = 2,
    per_round: int = 4,
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    base_seed: int = 0,
    name_only: bool = False,
    sampling: SamplingParams | None = None,
) -> ToolLibrary:
    """
    Grow a tool library from a seed pool.

    Each generation prompts with the current pool and a distinct sampling seed;
    its first Name/Description pair is kept unless it duplicates a library tool
    (same normalized name, or cosine above threshold). Every accepted tool
    rotates into the pool.

    Args:
        seed: Starting pool (not modified)
        backend: Backend serving tool-gen
        embedder: Provides embed() for pool rotation and dedup
        rounds: Generation rounds
        per_round: Generations per round
        threshold: Near-duplicate cosine threshold
        base_seed: First sampling seed
        name_only: Compare tools by name only

    Returns:
        ToolLibrary with seed tools first, then accepted tools in order

    Raises:
        ValueError: If rounds or per_round < 1, or the seed pool is empty
    """
    if rounds < 1 or per_round < 1:
        raise ValueError(f"rounds and per_round must be >= 1, got {rounds} and {per_round}")
    if not seed.tools:
        raise ValueError("Seed pool is empty")

    sampling = sampling or SamplingParams()
    pool = seed.copy()
    library = ToolLibrary(tools=list(seed.tools), pool=pool)

    for r in range(rounds):
        for i in range(per_round):
            call_seed = base_seed + r * per_round + i
            tr = ask(backend, "tool-gen", {"tool_list": format_tool_examples(pool.tools)}, sampling.with_seed(call_seed))
            reply = tr.response
            if not re.match(r"^\s*Name\s*:", reply, re.IGNORECASE):
                reply = "Name: " + reply
            pairs = parse_tool_generation(reply)
            if not pairs:
                library.skipped += 1
                logger.info("Tool generation with seed %d unparseable, skipped", call_seed)
                continue

            candidate = pairs[0]
            known = {normalize_name(n) for n, _ in library.tools}
            texts = [tool_text(n, d, name_only) for n, d in library.tools]
            if normalize_name(candidate[0]) in known or is_near_duplicate(
                embedder, tool_text(*candidate, name_only=name_only), texts, threshold
            ):
                library.rejected.append(candidate[0])
                logger.info("Rejected near-duplicate tool '%s'", candidate[0])
                continue

            library.tools.append(candidate)
            library.n_generated += 1
            pool.rotate(candidate, embedder, name_only)

    logger.info(
        "Tool library: %d tools (%d generated, %d rejected, %d skipped)",
        len(library.tools), library.n_generated, len(library.rejected), library.skipped,
    )
    return library


# -- related tools ----------------------------------------------------------------------

def _first_line(text: str) -> str:
    for line in (text or "").splitlines():
        if line.strip():
            return line.strip()
    return ""


def generate_related_tools(
    tool_name: str,
    backend: Backend,
    base_seed: int = 0,
    max_resamples: int = MAX_RESAMPLES,
    sampling: SamplingParams | None = None,
) -> tuple[str, str]:
    """
    Two related tool names, generated one after another with different seeds.

    Raises:
        RelatedToolError: If resampling never yields a name distinct from the
            tool and the earlier related name
    """
    sampling = sampling or SamplingParams()
    taken = {normalize_name(tool_name)}
    names = []
    call_seed = base_seed

    for stage in ("related-gen", "related-gen-next"):
        for _attempt in range(max_resamples + 1):
            bindings = {"name": tool_name}
            if names:
                bindings["name2"] = names[0]
            tr = ask(backend, stage, bindings, sampling.with_seed(call_seed))
            call_seed += 1
            name = RELATED_PREFIX_RE.sub("", _first_line(tr.response)).strip()
            if name and normalize_name(name) not in taken:
                names.append(name)
                taken.add(normalize_name(name))
                break
        else:
            raise RelatedToolError(f"No distinct related tool for '{tool_name}' after {max_resamples + 1} samples")
    return names[0], names[1]


def describe_tool(
    name: str,
    examples: list[tuple[str, str]],
    backend: Backend,
    seed: int | None = None,
    sampling: SamplingParams | None = None,
) -> str:
    """
    Description for a generated name via the tool-generation prompt.

    Raises:
        DatagenError: If the generation is empty
    """
    sampling = (sampling or SamplingParams()).with_seed(seed)
    tr = ask(backend, "tool-describe", {"tool_list": format_tool_examples(examples), "name": name}, sampling)
    description = _first_line(tr.response)
    if not description:
        raise DatagenError(f"Empty description generated for '{name}'")
    return description


def build_synthetic_registry(
    seed_file: SeedFile,
    library: ToolLibrary,
    backend: Backend,
    base_seed: int = 0,
    max_resamples: int = MAX_RESAMPLES,
    sampling: SamplingParams | None = None,
) -> Registry:
    """
    Registry of seed tools (with annotated related tools) and generated tools
    with two generated related tools each. Related links are symmetric within
    a family; a tool whose related generation fails is kept without links.
    """
    specs: dict[str, ToolSpec] = {t.name: t for t in seed_file.registry}
    examples = list(seed_file.pool.tools)
    failures = 0

    for i, (name, description) in enumerate(library.tools):
        if name in specs:
            continue
        family_seed = base_seed + 1000 * (i + 1)
        try:
            related = generate_related_tools(name, backend, family_seed, max_resamples, sampling)
        except RelatedToolError as e:
            logger.warning("%s; keeping tool without related links", e)
            failures += 1
            specs[name] = ToolSpec(name=name, description=description, synthetic=True)
            continue

        members = [(name, description)]
        for j, rel in enumerate(related):
            if rel in specs:
                members.append((rel, specs[rel].description))
                continue
            try:
                members.append((rel, describe_tool(rel, examples, backend, family_seed + 100 + j, sampling)))
            except DatagenError as e:
                logger.warning("%s; dropping related tool", e)

        family = [n for n, _ in members]
        for n, d in members:
            links = tuple(m for m in family if m != n)
            if n in specs:
                links = tuple(dict.fromkeys(specs[n].related + links))
                d = specs[n].description
            specs[n] = ToolSpec(name=n, description=d, related=links, synthetic=True)

    logger.info("Synthetic registry: %d tools (%d related-gen failures)", len(specs), failures)
    return Registry(list(specs.values()))


# -- instructions and notes ---------------------------------------------------------------

def _collect_instructions(
    tool: ToolSpec,
    backend: Backend,
    n: int,
    examples,
    base_seed: int,
    max_resamples: int,
    embedder,
    dedup_threshold: float,
    sampling: SamplingParams | None,
) -> tuple[list[str], int]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    sampling = sampling or SamplingParams()
    collected: list[str] = []
    duplicates = 0
    budget = n + max_resamples

    for attempt in range(budget):
        if len(collected) == n:
            break
        tr = ask(backend, "instruction-gen", {
            "examples": format_instruction_examples(examples),
            "name": tool.name,
            "description": tool.description,
        }, sampling.with_seed(base_seed + attempt))
        text = _first_line(tr.response).strip('"')
        if not text:
            continue
        seen = {c.casefold() for c in collected}
        if text.casefold() in seen or (
            embedder is not None and is_near_duplicate(embedder, text, collected, dedup_threshold)
        ):
            duplicates += 1
            continue
        collected.append(text)

    if len(collected) < n:
        raise InstructionGenerationError(
            f"Only {len(collected)}/{n} instructions for '{tool.name}' after {budget} samples",
            collected=collected,
        )
    return collected, duplicates


def generate_instructions(
    tool: ToolSpec,
    backend: Backend,
    n: int = 3,
    examples=(),
    base_seed: int = 0,
    max_resamples: int = 2 * MAX_RESAMPLES,
    embedder=None,
    dedup_threshold: float = 0.98,
    sampling: SamplingParams | None = None,
) -> list[str]:
    """
    n distinct, non-empty instructions for a tool.

    Raises:
        InstructionGenerationError: Resample bound exceeded (partial list attached)
    """
    instructions, _ = _collect_instructions(
        tool, backend, n, examples, base_seed, max_resamples, embedder, dedup_threshold, sampling
    )
    return instructions


def generate_reasoning_note(
    instruction: str,
    candidates: CandidateSet,
    ground_truth: str,
    backend: Backend,
    registry: Registry,
    max_tokens: int = DEFAULT_NOTE_TOKENS,
    sampling: SamplingParams | None = None,
) -> str:
    """
    Why the ground truth fits the instruction, cut to max_tokens words.

    Falls back to a one-line note naming the tool when the generation is empty.
    """
    if ground_truth not in candidates:
        raise CandidateSetError(f"Ground truth '{ground_truth}' is not a candidate")
    tr = ask(backend, "reasoning-gen", {
        "candidate_list": format_candidate_list([registry[n] for n in candidates]),
        "instruction": instruction,
        "name": ground_truth,
    }, sampling)
    note = tr.response.strip()
    if not note:
        note = f'Tool "{ground_truth}" is the most suitable tool for this instruction.'
    return truncate_words(note, max_tokens)


# -- dataset assembly -----------------------------------------------------------------

@dataclass(frozen=True)
class DatagenConfig:
    hard_ratio: float = DEFAULT_HARD_RATIO
    k: int = 7
    seed: int = 0
    max_note_tokens: int = DEFAULT_NOTE_TOKENS
    shuffle: bool = True
    instructions_per_tool: int = 3
    instruction_examples: tuple = ()
    instruction_dedup_threshold: float = 0.98
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        if not 0.0 <= self.hard_ratio <= 1.0:
            raise ValueError(f"hard_ratio must be in [0, 1], got {self.hard_ratio}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_note_tokens < 1:
            raise ValueError(f"max_note_tokens must be >= 1, got {self.max_note_tokens}")


@dataclass(frozen=True)
class TrainingSample:
    instruction: str
    candidates: CandidateSet
    ground_truth: str
    reasoning_note: str
    target: str
    hard: bool = False

    def __post_init__(self):
        if self.ground_truth not in self.candidates:
            raise CandidateSetError(f"Ground truth '{self.ground_truth}' is not a candidate")


@dataclass(frozen=True)
class DatasetStats:
    n_samples: int
    n_tools: int
    n_hard: int
    avg_candidates: float
    min_candidates: int
    max_candidates: int
    avg_note_chars: float
    n_hard_fallback: int = 0
    n_rejected: int = 0
    n_duplicate_instructions: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"Metric": k, "Value": v} for k, v in self.to_dict().items()])


def compute_stats(samples: list[TrainingSample], n_tools: int | None = None, **counters) -> DatasetStats:
    """Summary over samples; n_tools defaults to the distinct tools seen in candidate sets."""
    if n_tools is None:
        n_tools = len({name for s in samples for name in s.candidates})
    if not samples:
        return DatasetStats(0, n_tools, 0, 0.0, 0, 0, 0.0, **counters)

    df = pd.DataFrame([
        {"n_candidates": len(s.candidates), "hard": s.hard, "note_chars": len(s.reasoning_note)}
        for s in samples
    ])
    return DatasetStats(
        n_samples=len(df),
        n_tools=n_tools,
        n_hard=int(df["hard"].sum()),
        avg_candidates=round(float(df["n_candidates"].mean()), 2),
        min_candidates=int(df["n_candidates"].min()),
        max_candidates=int(df["n_candidates"].max()),
        avg_note_chars=round(float(df["note_chars"].mean()), 2),
        **counters,
    )


def assemble_dataset(
    registry: Registry,
    backend: Backend,
    embedder,
    config: DatagenConfig | None = None,
) -> tuple[list[TrainingSample], DatasetStats]:
    """
    Generate the training samples for every tool of the registry.

    Args:
        registry: Tools to cover (related links drive hard samples)
        backend: Backend serving instruction-gen and reasoning-gen
        embedder: Near-duplicate check for instructions within a tool
        config: Ratios, seeds and ablation switches

    Returns:
        (samples, stats); a hard_ratio share of samples uses related-only
        candidate sets, falling back to random sets (counted) when a tool has
        no related tools

    Raises:
        DatagenError: If the registry is empty
    """
    config = config or DatagenConfig()
    if len(registry) == 0:
        raise DatagenError("Registry is empty; nothing to generate")

    sampling = config.sampling
    examples = list(config.instruction_examples)
    slots: list[tuple[str, str]] = []
    n_duplicates = 0

    for i, tool in enumerate(registry):
        try:
            instructions, dup = _collect_instructions(
                tool, backend, config.instructions_per_tool, examples,
                base_seed=config.seed + 1000 * i, max_resamples=2 * MAX_RESAMPLES,
                embedder=embedder, dedup_threshold=config.instruction_dedup_threshold, sampling=sampling,
            )
        except InstructionGenerationError as e:
            logger.warning("%s; keeping %d", e, len(e.collected))
            instructions, dup = e.collected, 0
        n_duplicates += dup
        slots.extend((tool.name, text) for text in instructions)

    rng = random.Random(config.seed)
    n_hard = round(config.hard_ratio * len(slots))
    hard_idx = set(rng.sample(range(len(slots)), n_hard))

    samples = []
    n_fallback = 0
    n_rejected = 0
    for idx, (gt, instruction) in enumerate(slots):
        cand_seed = rng.randrange(2**32)
        hard = idx in hard_idx
        candidates = None
        if hard:
            try:
                candidates = build_candidate_set(gt, registry, "related_only", rng_seed=cand_seed, shuffle=config.shuffle)
            except CandidateSetError:
                n_fallback += 1
                hard = False
        if candidates is None:
            candidates = build_candidate_set(gt, registry, "random_k", config.k, cand_seed, config.shuffle)

        note = generate_reasoning_note(
            instruction, candidates, gt, backend, registry,
            config.max_note_tokens, sampling.with_seed(config.seed + idx),
        )
        target = serialize_target(note, gt)
        try:
            ok = parse_tool_action(target, candidates.tools) == gt
        except SelectionError:
            ok = False
        if not ok:
            n_rejected += 1
            logger.info("Rejected sample for '%s': target does not parse back", gt)
            continue
        samples.append(TrainingSample(instruction, candidates, gt, note, target, hard))

    stats = compute_stats(
        samples, n_tools=len(registry),
        n_hard_fallback=n_fallback, n_rejected=n_rejected, n_duplicate_instructions=n_duplicates,
    )
    logger.info("Assembled %d samples (%d hard)", stats.n_samples, stats.n_hard)
    return samples, stats


# -- export ----------------------------------------------------------------------------

def selection_prompt(sample: TrainingSample, registry: Registry) -> str:
    return render("select-0shot", {
        "candidate_list": format_candidate_list([registry[n] for n in sample.candidates]),
        "instruction": sample.instruction,
    })


def export_finetune(samples: list[TrainingSample], path, registry: Registry) -> int:
    """
    Write one JSON line per sample: {input, output, instruction, ground_truth,
    candidates, hard, reasoning_note}. Samples whose target does not parse back
    to their ground truth are skipped.

    Returns:
        Number of records written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            try:
                ok = parse_tool_action(sample.target, sample.candidates.tools) == sample.ground_truth
            except SelectionError:
                ok = False
            if not ok:
                logger.warning("Skipping sample with unparseable target: %r", sample.instruction[:60])
                continue
            record = {
                "input": selection_prompt(sample, registry),
                "output": sample.target,
                "instruction": sample.instruction,
                "ground_truth": sample.ground_truth,
                "candidates": list(sample.candidates.tools),
                "hard": sample.hard,
                "reasoning_note": sample.reasoning_note,
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            written += 1
    return written


def load_finetune(path) -> list[TrainingSample]:
    """Re-import an exported corpus."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                candidates = CandidateSet(tuple(rec["candidates"]), rec["ground_truth"], bool(rec["hard"]))
                samples.append(TrainingSample(
                    instruction=rec["instruction"],
                    candidates=candidates,
                    ground_truth=rec["ground_truth"],
                    reasoning_note=rec["reasoning_note"],
                    target=rec["output"],
                    hard=bool(rec["hard"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: invalid record: {e}") from e
    return samples


def write_stats(stats: DatasetStats, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")
