"""
Tool Selector
Inference-time tool selection with contrastive verification.

Flow for one instruction:
    1. select a tool from the full candidate list            (top1)
    2. remove it and select again                             (top2)
    3. ask a contrastive question about top1 vs top2          (cached per tool pair)
    4. answer it from the user's instruction
    5. select between top1 and top2 with the answer as a hint (final)

Any failure after step 1 keeps the best earlier decision and flags the trace.
"""

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from toolverify.backend import Backend, SamplingParams, Transcript, ask
from toolverify.errors import (
    BackendError,
    CacheError,
    OutOfSetSelectionError,
    SelectionError,
    UnparseableSelectionError,
)
from toolverify.prompts import format_candidate_list
from toolverify.registry import CandidateSet, Registry, ToolSpec

logger = logging.getLogger(__name__)

ACTION_RE = re.compile(r"CALLTOOL\[\s*([^\[\]()]*?)\s*\(")
OPTION_RE = re.compile(r"\[\s*([^\[\]]*?)\s*\]")
BARE_NAME_RE = re.compile(r"^[A-Z][\w\-]*(?: [A-Z0-9][\w\-]*)*$")


def parse_tool_action(text: str, candidates=None) -> str:
    """
    Extract the selected tool name from a model reply.

    Takes the identifier inside the first "CALLTOOL[...(" occurrence; without one,
    falls back to a candidate name appearing verbatim (earliest, then longest),
    then to a bare one-line reply that reads as a tool name ("BankAccount",
    "Search Homes"). The caller checks membership of that last form.

    Raises:
        UnparseableSelectionError: If neither an action nor a tool name is found
    """
    m = ACTION_RE.search(text or "")
    if m and m.group(1):
        return m.group(1)

    best = None
    for name in candidates or ():
        pos = text.find(name) if text else -1
        if pos < 0:
            continue
        if best is None or pos < best[0] or (pos == best[0] and len(name) > len(best[1])):
            best = (pos, name)
    if best:
        return best[1]

    bare = (text or "").strip().strip("\"'`.")
    if BARE_NAME_RE.match(bare):
        return bare

    snip = (text or "")[:120].replace("\n", "\\n")
    raise UnparseableSelectionError(f"No tool named in reply: {snip!r}")


def parse_option(text: str, options: dict[str, str]) -> str:
    """
    Map a bracketed multiple-choice reply ("[A]", "[b]", "[Tool Name]") to its option value.

    Raises:
        UnparseableSelectionError: If no bracket names an option
    """
    for m in OPTION_RE.finditer(text or ""):
        inner = m.group(1)
        for letter, value in options.items():
            if inner.casefold() == letter.casefold() or inner == value:
                return value
    raise UnparseableSelectionError(f"No option chosen in reply: {(text or '')[:120]!r}")


def _candidate_tools(candidates: CandidateSet, registry: Registry) -> list[ToolSpec]:
    return [registry[name] for name in candidates]


def _select(
    instruction: str,
    candidates: CandidateSet,
    backend: Backend,
    registry: Registry,
    stage: str = "select-0shot",
    sampling: SamplingParams | None = None,
    extra: dict | None = None,
) -> tuple[str, Transcript]:
    if len(candidates) < 1:
        raise SelectionError("Candidate set is empty")
    bindings = {
        "candidate_list": format_candidate_list(_candidate_tools(candidates, registry)),
        "instruction": instruction,
        **(extra or {}),
    }
    transcript = ask(backend, stage, bindings, sampling)
    name = parse_tool_action(transcript.response, candidates.tools)
    if name not in candidates:
        raise OutOfSetSelectionError(name, list(candidates.tools))
    return name, transcript


def select_once(
    instruction: str,
    candidates: CandidateSet,
    backend: Backend,
    registry: Registry,
    sampling: SamplingParams | None = None,
) -> tuple[str, Transcript]:
    """
    Zero-shot selection over the candidate list.

    Returns:
        (tool name, transcript); the name is always a candidate

    Raises:
        UnparseableSelectionError: Reply names no tool
        OutOfSetSelectionError: Reply names a tool outside the candidates
    """
    return _select(instruction, candidates, backend, registry, sampling=sampling)


def top_two(
    instruction: str,
    candidates: CandidateSet,
    backend: Backend,
    registry: Registry,
    sampling: SamplingParams | None = None,
) -> tuple[str, str]:
    """First pick on the full set, second pick on the set without the first."""
    if len(candidates) < 2:
        raise SelectionError("top_two needs at least two candidates")
    t1, _ = select_once(instruction, candidates, backend, registry, sampling)
    t2, _ = select_once(instruction, candidates.without(t1), backend, registry, sampling)
    return t1, t2


# -- verification-question cache --------------------------------------------------------

def tool_digest(tool: ToolSpec) -> str:
    return hashlib.sha256(f"{tool.name}\n{tool.description}".encode("utf-8")).hexdigest()


def cache_key(a: ToolSpec, b: ToolSpec) -> tuple[str, str]:
    """Unordered pair key: key(a, b) == key(b, a)."""
    da, db = tool_digest(a), tool_digest(b)
    return (da, db) if da <= db else (db, da)


class VQCache:
    """
    Contrastive questions keyed by unordered tool pair.

    Backed by an append-only JSON-lines file when a path is given; reads are
    lock-free, writes are serialized.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._entries: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path) -> "VQCache":
        """
        Load every record of a cache file (missing file -> empty cache bound to path).

        Raises:
            CacheError: Naming the first corrupt line
        """
        cache = cls(path)
        if cache.path is None or not cache.path.exists():
            return cache
        with open(cache.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (rec["digest_a"], rec["digest_b"])
                    question = rec["question"]
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise CacheError(f"corrupt cache record in {cache.path}: {e}", line=lineno) from e
                if not isinstance(question, str) or key[0] > key[1]:
                    raise CacheError(f"invalid cache record in {cache.path}", line=lineno)
                cache._entries[key] = rec
        logger.info("Loaded %d cached verification questions from %s", len(cache), cache.path)
        return cache

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, pair) -> bool:
        return cache_key(*pair) in self._entries

    def get(self, a: ToolSpec, b: ToolSpec) -> str | None:
        rec = self._entries.get(cache_key(a, b))
        return rec["question"] if rec else None

    def put(self, a: ToolSpec, b: ToolSpec, question: str) -> bool:
        """Store a question; returns False when the pair was already cached."""
        key = cache_key(a, b)
        first, second = (a, b) if tool_digest(a) == key[0] else (b, a)
        rec = {
            "digest_a": key[0],
            "digest_b": key[1],
            "name_a": first.name,
            "name_b": second.name,
            "question": question,
        }
        with self._lock:
            if key in self._entries:
                return False
            self._entries[key] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return True


def _question(
    t1: ToolSpec,
    t2: ToolSpec,
    backend: Backend,
    cache: VQCache | None,
    sampling: SamplingParams | None,
    instruction: str | None = None,
) -> tuple[str, Transcript | None]:
    if t1.name == t2.name:
        raise SelectionError("Contrastive question needs two different tools")
    bindings = {
        "name1": t1.name,
        "description1": t1.description,
        "name2": t2.name,
        "description2": t2.description,
    }
    if instruction is not None:
        # instruction-conditioned questions are never cached
        transcript = ask(backend, "vq-gen-instruction", {**bindings, "instruction": instruction}, sampling)
        return transcript.response, transcript

    if cache is not None:
        hit = cache.get(t1, t2)
        if hit is not None:
            return hit, None
    transcript = ask(backend, "vq-gen", bindings, sampling)
    if cache is not None and transcript.response:
        cache.put(t1, t2, transcript.response)
    return transcript.response, transcript


def contrastive_question(
    t1: ToolSpec,
    t2: ToolSpec,
    backend: Backend,
    cache: VQCache | None = None,
    sampling: SamplingParams | None = None,
) -> str:
    """Question contrasting two tools from names and descriptions only; cache hits skip the backend."""
    question, _ = _question(t1, t2, backend, cache, sampling)
    return question


def precompute_questions(
    registry: Registry,
    backend: Backend,
    cache: VQCache,
    sampling: SamplingParams | None = None,
) -> int:
    """
    Fill the cache for every unordered tool pair of the registry.

    Returns:
        Number of newly generated questions (0 on a warm rerun)
    """
    tools = list(registry)
    generated = 0
    for i, a in enumerate(tools):
        for b in tools[i + 1:]:
            if (a, b) in cache:
                continue
            _question(a, b, backend, cache, sampling)
            generated += 1
    logger.info("Precomputed %d new verification questions (%d total)", generated, len(cache))
    return generated


def _answer(question: str, instruction: str, backend: Backend, sampling: SamplingParams | None) -> tuple[str, Transcript]:
    if not question:
        raise SelectionError("Verification question is empty")
    transcript = ask(backend, "vq-answer", {"instruction": instruction, "question": question}, sampling)
    return transcript.response, transcript


def answer_question(question: str, instruction: str, backend: Backend, sampling: SamplingParams | None = None) -> str:
    """Answer a verification question from the instruction ("" when the model returns nothing)."""
    answer, _ = _answer(question, instruction, backend, sampling)
    return answer


# -- verified selection -------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionOptions:
    verify: bool = True
    condition_on_instruction: bool = False
    final_mode: str = "hint"  # "hint" (contrastive question) or "mcq" (plain two-way choice)
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        if self.final_mode not in ("hint", "mcq"):
            raise ValueError(f"final_mode must be 'hint' or 'mcq', got {self.final_mode!r}")


@dataclass
class SelectionTrace:
    instruction: str
    candidates: CandidateSet
    top1: str
    top2: str | None = None
    question: str = ""
    answer: str = ""
    final: str = ""
    transcripts: list[Transcript] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "candidates": self.candidates.to_dict(),
            "top1": self.top1,
            "top2": self.top2,
            "question": self.question,
            "answer": self.answer,
            "final": self.final,
            "flags": list(self.flags),
            "transcripts": [t.to_dict() for t in self.transcripts],
        }


def _downgrade(trace: SelectionTrace, flag: str, error: Exception | None = None) -> SelectionTrace:
    logger.warning("Selection for %r falls back to top1 (%s): %s", trace.instruction[:60], flag, error or "")
    trace.flags.append(flag)
    trace.final = trace.top1
    return trace


def verified_select(
    instruction: str,
    candidates: CandidateSet,
    backend: Backend,
    registry: Registry,
    cache: VQCache | None = None,
    opts: SelectionOptions | None = None,
) -> SelectionTrace:
    """
    Select a tool, then verify the choice against the runner-up.

    Args:
        instruction: User instruction
        candidates: Ordered candidate set
        backend: Backend (or router) serving select / vq-gen / vq-answer
        registry: Source of tool descriptions
        cache: Verification-question cache (ignored when conditioning on the instruction)
        opts: Verification toggles and sampling

    Returns:
        SelectionTrace; final is top1 when verification is off, the set has one
        tool, or a later stage failed (flagged)

    Raises:
        SelectionError / BackendError: Only when the first selection pass fails
    """
    opts = opts or SelectionOptions()
    sampling = opts.sampling

    top1, tr = _select(instruction, candidates, backend, registry, sampling=sampling)
    trace = SelectionTrace(instruction=instruction, candidates=candidates, top1=top1, final=top1)
    trace.transcripts.append(tr)

    if not opts.verify or len(candidates) < 2:
        return trace

    try:
        top2, tr = _select(instruction, candidates.without(top1), backend, registry, sampling=sampling)
    except (SelectionError, BackendError) as e:
        return _downgrade(trace, "second-pass-failed", e)
    trace.top2 = top2
    trace.transcripts.append(tr)

    finalists = candidates.restricted_to({top1, top2})
    t1, t2 = registry[top1], registry[top2]

    if opts.final_mode == "mcq":
        try:
            tr = ask(backend, "select-mcq", {
                "instruction": instruction,
                "name1": t1.name,
                "description1": t1.description,
                "name2": t2.name,
                "description2": t2.description,
            }, sampling)
            trace.transcripts.append(tr)
            trace.final = parse_option(tr.response, {"A": top1, "B": top2})
        except (SelectionError, BackendError) as e:
            return _downgrade(trace, "final-pass-failed", e)
        return trace

    try:
        condition = instruction if opts.condition_on_instruction else None
        question, tr = _question(t1, t2, backend, cache, sampling, instruction=condition)
    except BackendError as e:
        return _downgrade(trace, "question-failed", e)
    if tr is not None:
        trace.transcripts.append(tr)
    if not question:
        return _downgrade(trace, "empty-question")
    trace.question = question

    try:
        answer, tr = _answer(question, instruction, backend, sampling)
    except BackendError as e:
        trace.question = ""
        return _downgrade(trace, "answer-failed", e)
    trace.transcripts.append(tr)
    if not answer:
        trace.question = ""
        return _downgrade(trace, "empty-answer")
    trace.answer = answer

    try:
        final, tr = _select(
            instruction, finalists, backend, registry,
            stage="select-final", sampling=sampling, extra={"answer": answer},
        )
    except (SelectionError, BackendError) as e:
        return _downgrade(trace, "final-pass-failed", e)
    trace.transcripts.append(tr)
    trace.final = final
    return trace
