# toolverify/backend.py
# Text-generation backends: remote HTTP endpoint, scripted test double, per-stage router.
# Every pipeline stage calls generate(); nothing else talks to a model.
# Related: prompts.py (renders chat framing into the prompt text)

import json
import logging
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import requests

from toolverify.errors import (
    ProtocolError,
    RequestError,
    TransportError,
    UnmatchedScriptError,
)

logger = logging.getLogger(__name__)

STAGE_TAGS = (
    "tool-gen",
    "related-gen",
    "instruction-gen",
    "reasoning-gen",
    "select",
    "vq-gen",
    "vq-answer",
    "param-gen",
    "param-alt",
    "param-verify",
    "call-construct",
)

MAX_RETRIES = 3
BACKOFF_SECONDS = [1, 2, 4]
TRANSIENT_ERRORS = (requests.ConnectionError, requests.Timeout, requests.exceptions.ChunkedEncodingError)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.7
    top_p: float = 0.9
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise RequestError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise RequestError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise RequestError(f"max_tokens must be positive, got {self.max_tokens}")

    def with_seed(self, seed: int | None) -> "SamplingParams":
        return SamplingParams(self.temperature, self.top_p, self.max_tokens, seed)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    tag: str
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        if not self.prompt:
            raise RequestError("prompt must be non-empty")
        if self.tag not in STAGE_TAGS:
            raise RequestError(f"Unknown stage tag '{self.tag}'. Known: {list(STAGE_TAGS)}")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    backend_id: str
    truncated: bool = False

    def __post_init__(self):
        if not self.text and not self.truncated:
            raise ProtocolError(f"Backend '{self.backend_id}' returned empty text without truncation")


class Backend(ABC):
    """Uniform interface to a text-generation model."""

    backend_id: str = "backend"

    @abstractmethod
    def generate(self, request: GenerationRequest) -> GenerationResponse:
        ...

# -- remote endpoint -----------------------------------------------------------------

class HttpBackend(Backend):
    """
    Client for a generation endpoint speaking the plain JSON wire shape.

    POST {prompt, temperature, top_p, max_tokens, seed} -> {text[, truncated]}

    Transport failures (connection errors, timeouts, 429, 5xx) are retried with
    backoff; malformed bodies raise ProtocolError immediately.
    """

    def __init__(
        self,
        url: str,
        token: str | None = None,
        timeout: float = 60.0,
        retries: int = MAX_RETRIES,
        backoff: list[float] | None = None,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.token = token
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff if backoff is not None else BACKOFF_SECONDS
        self.session = session or requests.Session()
        self.backend_id = f"http:{url}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _post_once(self, payload: dict) -> GenerationResponse:
        try:
            r = self.session.post(self.url, headers=self._headers(), json=payload, timeout=self.timeout)
        except TRANSIENT_ERRORS as e:
            raise TransportError(f"Endpoint unreachable: {e}") from e
        except requests.RequestException as e:
            raise ProtocolError(f"Request to {self.url} failed: {e}") from e

        if r.status_code == 429 or r.status_code >= 500:
            raise TransportError(f"HTTP {r.status_code} from {self.url}", status_code=r.status_code)
        if r.status_code >= 400:
            snip = (r.text or "")[:300].replace("\n", "\\n")
            raise ProtocolError(f"HTTP {r.status_code} from {self.url}; body_snip={snip}")

        try:
            data = r.json()
        except ValueError as e:
            raise ProtocolError(f"Response is not JSON: {e}") from e
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            raise ProtocolError(f"Response lacks a 'text' string: {str(data)[:200]}")

        return GenerationResponse(
            text=data["text"],
            backend_id=self.backend_id,
            truncated=bool(data.get("truncated", False)),
        )

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        payload = {
            "prompt": request.prompt,
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_tokens,
            "seed": request.sampling.seed,
        }
        attempt = 0
        while True:
            try:
                return self._post_once(payload)
            except TransportError as e:
                if attempt >= self.retries:
                    raise
                delay = self.backoff[min(attempt, len(self.backoff) - 1)] if self.backoff else 0
                logger.warning(
                    "Transport error on stage %s (attempt %d/%d), retrying in %ss: %s",
                    request.tag, attempt + 1, self.retries, delay, e,
                )
                time.sleep(delay)
                attempt += 1

# -- scripted test double --------------------------------------------------------------

@dataclass(frozen=True)
class ScriptRule:
    """
    One scripted reply.

    match is a substring of the prompt (or a regex when regex=True); tag and seed,
    when set, must equal the request's. Regex rules expand named groups into the
    response and replace "{{seed}}" with the request seed.
    """

    match: str
    response: str
    once: bool = False
    regex: bool = False
    tag: str | None = None
    seed: int | None = None


@dataclass(frozen=True)
class RecordedCall:
    tag: str
    prompt: str
    seed: int | None
    response: str


class ScriptedBackend(Backend):
    """Deterministic backend replaying fixture responses. First matching rule wins."""

    def __init__(self, rules: list[ScriptRule], backend_id: str = "scripted"):
        self.rules = list(rules)
        self.backend_id = backend_id
        self.calls: list[RecordedCall] = []
        self._consumed: set[int] = set()
        self._lock = threading.Lock()

    def _reply(self, rule: ScriptRule, request: GenerationRequest) -> str | None:
        if rule.tag is not None and rule.tag != request.tag:
            return None
        if rule.seed is not None and rule.seed != request.sampling.seed:
            return None
        if rule.regex:
            m = re.search(rule.match, request.prompt, re.DOTALL)
            if not m:
                return None
            text = m.expand(rule.response)
            return text.replace("{{seed}}", str(request.sampling.seed))
        if rule.match in request.prompt:
            return rule.response
        return None

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            for i, rule in enumerate(self.rules):
                if i in self._consumed:
                    continue
                text = self._reply(rule, request)
                if text is None:
                    continue
                if rule.once:
                    self._consumed.add(i)
                self.calls.append(RecordedCall(request.tag, request.prompt, request.sampling.seed, text))
                return GenerationResponse(text=text, backend_id=self.backend_id, truncated=not text)
        raise UnmatchedScriptError(request.tag, request.prompt)

    def count(self, tag: str | None = None) -> int:
        """Number of served calls, optionally for a single stage tag."""
        return sum(1 for c in self.calls if tag is None or c.tag == tag)

    def tags(self) -> list[str]:
        return [c.tag for c in self.calls]

    def reset(self) -> None:
        with self._lock:
            self.calls = []
            self._consumed = set()


def load_script(path) -> list[ScriptRule]:
    """
    Load scripted rules from a JSON-lines file (one rule per line) or a JSON list.

    Args:
        path: Path to the fixture file

    Returns:
        Ordered list of ScriptRule

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If a record is malformed
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Script file not found: {path}")

    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        records = json.loads(stripped)
        numbered = list(enumerate(records, start=1))
    else:
        numbered = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                numbered.append((lineno, json.loads(line)))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {e}") from e

    rules = []
    for lineno, rec in numbered:
        if not isinstance(rec, dict) or "match" not in rec or "response" not in rec:
            raise ValueError(f"{path}:{lineno}: rule needs 'match' and 'response'")
        rules.append(ScriptRule(
            match=rec["match"],
            response=rec["response"],
            once=bool(rec.get("once", False)),
            regex=bool(rec.get("regex", False)),
            tag=rec.get("tag"),
            seed=rec.get("seed"),
        ))
    return rules

# -- routing ----------------------------------------------------------------------------

class BackendRouter(Backend):
    """Routes each request to the backend configured for its stage tag, else the default."""

    def __init__(self, default: Backend | None, per_tag: dict[str, Backend] | None = None):
        per_tag = dict(per_tag or {})
        unknown = [t for t in per_tag if t not in STAGE_TAGS]
        if unknown:
            raise RequestError(f"Unknown stage tags in routing table: {unknown}")
        if default is None and set(per_tag) != set(STAGE_TAGS):
            raise RequestError("A default backend is required unless every stage tag is routed")
        self.default = default
        self.per_tag = per_tag
        self.backend_id = "router"

    def backend_for(self, tag: str) -> Backend:
        return self.per_tag.get(tag, self.default)

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        return self.backend_for(request.tag).generate(request)


def generate_text(backend: Backend, prompt: str, tag: str, sampling: SamplingParams | None = None) -> str:
    """Issue one request and return the stripped continuation ("" on truncated-empty)."""
    request = GenerationRequest(prompt=prompt, tag=tag, sampling=sampling or SamplingParams())
    logger.debug("generate tag=%s seed=%s prompt_chars=%d", tag, request.sampling.seed, len(prompt))
    return backend.generate(request).text.strip()

# -- prompt exchange ----------------------------------------------------------------------

@dataclass(frozen=True)
class Transcript:
    """One (stage tag, prompt, response) exchange, kept for traces and golden tests."""

    tag: str
    prompt: str
    response: str

    def to_dict(self) -> dict:
        return {"tag": self.tag, "prompt": self.prompt, "response": self.response}


def ask(backend: Backend, stage: str, bindings: dict, sampling: SamplingParams | None = None) -> Transcript:
    """Render a prompt template and send it under the template's stage tag."""
    from toolverify.prompts import render, stage_tag

    prompt = render(stage, bindings)
    tag = stage_tag(stage)
    return Transcript(tag=tag, prompt=prompt, response=generate_text(backend, prompt, tag, sampling))
