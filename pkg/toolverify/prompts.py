"""
Prompt Templates
Renders every pipeline prompt from text assets in toolverify/templates/.

Each asset starts with a front-matter block:

    ---
    stage: vq-gen
    tag: vq-gen
    chat_wrapped: true
    ---
    <body with ${placeholder} slots>

Chat-wrapped bodies are framed as "[INST] <<SYS>> ... <</SYS>> ... [/INST]".
Anything that is not a ${name} slot is literal text.
"""

import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from toolverify.errors import UnboundPlaceholderError, UnknownStageError

TEMPLATE_DIR = Path(__file__).parent / "templates"

CHAT_PREFIX = "[INST] <<SYS>>\nYou are a helpful assistant.\n<</SYS>>\n\n"
CHAT_SUFFIX = "[/INST]"

SLOT_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
WORD_RE = re.compile(r"\S+")

DEFAULT_NOTE_TOKENS = 480
SHORT_NOTE_TOKENS = 200


@dataclass(frozen=True)
class PromptTemplate:
    stage: str
    tag: str
    body: str
    chat_wrapped: bool

    @property
    def slots(self) -> list[str]:
        seen = []
        for name in SLOT_RE.findall(self.body):
            if name not in seen:
                seen.append(name)
        return seen


def parse_template(text: str, source: str = "<string>") -> PromptTemplate:
    """
    Parse a template asset: front-matter key/value lines between '---' markers, then the body.

    Raises:
        ValueError: If the front-matter is missing or lacks 'stage'
    """
    lines = text.split("\n")
    if not lines or lines[0].strip() != "---":
        raise ValueError(f"{source}: template must start with a '---' front-matter line")

    meta = {}
    i = 1
    while i < len(lines) and lines[i].strip() != "---":
        kv = re.match(r"^([^:]+)\s*:\s*(.+)$", lines[i].strip())
        if kv:
            meta[kv.group(1).strip().lower()] = kv.group(2).strip()
        i += 1
    if i >= len(lines):
        raise ValueError(f"{source}: unterminated front-matter")
    if "stage" not in meta:
        raise ValueError(f"{source}: front-matter lacks 'stage'")

    body = "\n".join(lines[i + 1:])
    if body.endswith("\n"):
        body = body[:-1]
    return PromptTemplate(
        stage=meta["stage"],
        tag=meta.get("tag", meta["stage"]),
        body=body,
        chat_wrapped=meta.get("chat_wrapped", "false").lower() == "true",
    )


@lru_cache(maxsize=None)
def load_templates() -> dict[str, PromptTemplate]:
    templates = {}
    for path in sorted(TEMPLATE_DIR.glob("*.txt")):
        tpl = parse_template(path.read_text(encoding="utf-8"), source=path.name)
        templates[tpl.stage] = tpl
    return templates


def get_template(stage: str) -> PromptTemplate:
    templates = load_templates()
    if stage not in templates:
        raise UnknownStageError(f"Unknown prompt stage '{stage}'. Known: {sorted(templates)}")
    return templates[stage]


def stage_tag(stage: str) -> str:
    """Backend stage tag a template's prompts are issued under."""
    return get_template(stage).tag


def render(stage: str, bindings: dict[str, str]) -> str:
    """
    Render a template with every slot bound.

    Args:
        stage: Template name (e.g. "vq-gen", "select-0shot")
        bindings: Slot name -> text

    Returns:
        Prompt text, chat-framed when the template asks for it

    Raises:
        UnknownStageError: If the stage has no template
        UnboundPlaceholderError: If a slot has no binding
    """
    tpl = get_template(stage)
    for name in tpl.slots:
        if name not in bindings or bindings[name] is None:
            raise UnboundPlaceholderError(stage, name)

    body = SLOT_RE.sub(lambda m: str(bindings[m.group(1)]), tpl.body)
    if tpl.chat_wrapped:
        return f"{CHAT_PREFIX}{body}{CHAT_SUFFIX}"
    return body


# -- binding formatters ---------------------------------------------------------------------

def format_candidate_list(tools) -> str:
    """Bulleted "Name: Description" lines in candidate order."""
    return "\n".join(f"- {t.name}: {t.description}" for t in tools)


def format_tool_examples(pairs) -> str:
    """Name/Description blocks for the tool-generation prompt."""
    return "\n\n".join(f"Name: {name}\nDescription: {description}" for name, description in pairs)


def format_instruction_examples(examples) -> str:
    """Name/Description/Instruction blocks; examples are (name, description, instruction)."""
    return "\n\n".join(
        f"Name: {name}\nDescription: {description}\nInstruction: {instruction}"
        for name, description, instruction in examples
    )


def format_param_block(values: dict[str, str], order: list[str]) -> str:
    return "\n".join(f"{name}: {values[name]}" for name in order)


def format_demonstrations(tool, demonstrations, with_call: bool) -> str:
    """Few-shot blocks: INS line, one "param: value" line per declared param, optional API line."""
    blocks = []
    for demo in demonstrations:
        values = {p.name: demo.assignments.get(p.name, p.none_token) for p in tool.params}
        lines = [f'INS: A user says, "{demo.instruction}"']
        if tool.params:
            lines.append(format_param_block(values, tool.param_names))
        if with_call:
            lines.append(f"API: {demo.rendered_call}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


# -- training target --------------------------------------------------------------------------

def serialize_target(thought: str, tool_name: str) -> str:
    """Training target: "Thought: ...\\n\\nAct: CALLTOOL[Name()]"."""
    if not tool_name:
        raise ValueError("tool_name must be non-empty")
    return f"Thought: {thought}\n\nAct: CALLTOOL[{tool_name}()]"


def truncate_words(text: str, max_tokens: int) -> str:
    """Cut text after its max_tokens-th whitespace-delimited word, keeping inner spacing."""
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be positive, got {max_tokens}")
    for i, m in enumerate(WORD_RE.finditer(text), start=1):
        if i == max_tokens:
            return text[:m.end()]
    return text


def word_count(text: str) -> int:
    return len(WORD_RE.findall(text))
