# toolverify/calls.py
# Canonical form of REST-style tool calls and call equivalence.
# Accepted shapes: curl [-X VERB] 'URL', "VERB URL", a bare URL, or CALLTOOL[Name(k=v, ...)].

import re
from dataclasses import dataclass
from decimal import Decimal
from urllib.parse import parse_qsl, urlencode, urlsplit

from url_normalize import url_normalize

from toolverify.errors import CallParseError

AUTH_KEYS = {"appid", "api_key", "apikey"}
AUTH_VALUE = "{API_KEY}"
HTTP_VERBS = ("GET", "POST", "PUT", "PATCH", "DELETE", "HEAD")

VERB_RE = re.compile(r"-X\s*([A-Za-z]+)")
URL_RE = re.compile(r"(['\"]?)(https?://[^\s'\"]+)")
ACTION_RE = re.compile(r"^CALLTOOL\[\s*([^\[\]()]+?)\s*\((.*)\)\s*\]$", re.DOTALL)
ARG_SPLIT_RE = re.compile(r",\s*(?=[A-Za-z_][A-Za-z0-9_]*\s*=)")
NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
MAX_PLAIN_EXPONENT = 64


@dataclass(frozen=True)
class CanonicalCall:
    """Parsed call: verb, scheme+host+path, decoded params sorted by name."""

    method: str
    base_url: str
    params: tuple[tuple[str, str], ...]
    auth_placeholder_stripped: bool = False

    @property
    def param_map(self) -> dict[str, str]:
        return dict(self.params)

    def serialize(self) -> str:
        query = urlencode(self.params)
        return f"{self.method} {self.base_url}" + (f"?{query}" if query else "")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "base_url": self.base_url,
            "params": self.param_map,
            "auth_placeholder_stripped": self.auth_placeholder_stripped,
        }


def _from_url(method: str, url: str, offset: int) -> CanonicalCall:
    parts = urlsplit(url)
    if not parts.scheme or not parts.netloc:
        raise CallParseError(f"URL lacks scheme or host: {url!r}", position=offset)

    base_url = url_normalize(f"{parts.scheme}://{parts.netloc}{parts.path or '/'}")

    params = {}
    stripped = False
    for key, value in parse_qsl(parts.query, keep_blank_values=True):
        if value == AUTH_VALUE or key.lower() in AUTH_KEYS:
            stripped = True
            continue
        params[key] = value
    return CanonicalCall(method.upper(), base_url, tuple(sorted(params.items())), stripped)


def _from_action(m: re.Match) -> CanonicalCall:
    name, args = m.group(1), m.group(2).strip()
    params = {}
    if args:
        for part in ARG_SPLIT_RE.split(args):
            key, sep, value = part.partition("=")
            if not sep:
                raise CallParseError(f"Argument without '=': {part!r}", position=m.start(2))
            params[key.strip()] = value.strip()
    return CanonicalCall("CALL", f"tool:{name}", tuple(sorted(params.items())), False)


def parse_call(text: str) -> CanonicalCall:
    """
    Parse a tool call string into its canonical form.

    Args:
        text: Call as rendered by a template or returned by a model

    Returns:
        CanonicalCall with auth placeholders removed

    Raises:
        CallParseError: If the text is not a recognizable call (with the offending position)
    """
    if text is None:
        raise CallParseError("Call is empty", position=0)
    start = len(text) - len(text.lstrip())
    body = text.strip()
    if not body:
        raise CallParseError("Call is empty", position=0)

    action = ACTION_RE.match(body)
    if action:
        return _from_action(action)

    if body.startswith("curl"):
        verb = VERB_RE.search(body)
        m = URL_RE.search(body)
        if not m:
            raise CallParseError("curl command has no http(s) URL", position=start + len("curl"))
        quote = m.group(1)
        if quote and body[m.end():m.end() + 1] != quote:
            raise CallParseError("Unterminated quoted URL", position=start + m.start())
        method = verb.group(1) if verb else "GET"
        return _from_url(method, m.group(2), start + m.start(2))

    head, _, rest = body.partition(" ")
    if head.upper() in HTTP_VERBS and rest.strip():
        url = rest.strip().strip("'\"")
        return _from_url(head, url, start + len(head) + 1)

    if re.match(r"^https?://", body):
        return _from_url("GET", body.strip("'\""), start)

    raise CallParseError(f"Not a recognizable call: {body[:60]!r}", position=start)


def normalize_value(value, none_token: str = "none") -> str:
    """Trim, case-fold the none token, and reduce numbers to their plain decimal form ("-37.30" -> "-37.3")."""
    text = str(value).strip() if value is not None else ""
    if not text or text.casefold() == none_token.casefold():
        return none_token
    if NUMBER_RE.match(text):
        try:
            d = Decimal(text).normalize()
        except ArithmeticError:
            return text
        if d == 0:
            return "0"
        if abs(d.adjusted()) > MAX_PLAIN_EXPONENT:
            return str(d)
        return format(d, "f")
    return text


def canonical_key(call, policy: str = "strict", none_token: str = "none") -> tuple:
    """
    Hashable key such that two calls are equivalent iff their keys are equal.

    strict compares none-valued params literally; lenient treats an absent
    param and a none-valued one alike.
    """
    if policy not in ("strict", "lenient"):
        raise ValueError(f"policy must be 'strict' or 'lenient', got {policy!r}")
    if isinstance(call, str):
        call = parse_call(call)
    values = {k: normalize_value(v, none_token) for k, v in call.params}
    if policy == "lenient":
        values = {k: v for k, v in values.items() if v != none_token}
    return call.method, call.base_url, tuple(sorted(values.items()))


def calls_equivalent(a, b, policy: str = "strict", none_token: str = "none") -> bool:
    """Equal verb, base URL and normalized param maps. Accepts strings or CanonicalCall."""
    return canonical_key(a, policy, none_token) == canonical_key(b, policy, none_token)
