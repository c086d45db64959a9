"""
Evaluation Harness
Scores full tool calls and tool selection over task files.

Input: task file, one JSON object per line: {"instruction", "gold_call", "task"}
Output: TaskReport per (config, task), report table (.xlsx/.csv), per-sample log (.jsonl)

Protocol:
    - every sample is offered the whole registry as candidates
    - selection is correct when the final tool is the gold call's tool
    - a call succeeds when the tool is correct and the predicted call is
      equivalent to the gold call (or, in live mode, returns the same body)

Usage:
    samples = load_task("fixtures/tasks/weather_mini.jsonl")
    report = run_eval(samples, registry, PipelineConfig(), backend, cache)
    report_frame([report]).to_excel("report.xlsx", index=False, engine="openpyxl")
"""

import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
import requests

from toolverify.backend import Backend
from toolverify.calls import URL_RE, calls_equivalent, parse_call
from toolverify.errors import CallParseError, LiveExecutionError, ToolverifyError
from toolverify.pipeline import PipelineConfig, run_pipeline
from toolverify.registry import CandidateSet, Registry, render_call
from toolverify.selector import VQCache

logger = logging.getLogger(__name__)

COLUMN_ORDER = ["Config", "Task", "N", "Selection Accuracy", "Success Rate"]

API_KEY_ENV = "TOOLVERIFY_API_KEY"
LIVE_MIN_INTERVAL = 1.0


@dataclass(frozen=True)
class TaskSample:
    instruction: str
    gold_call: str
    task: str
    gold_tool: str


def identify_tool(call: str, registry: Registry) -> str:
    """
    Registry tool whose rendered call shape (verb, base URL, param names) matches the call.

    Raises:
        CallParseError: If the call doesn't parse
        ValueError: If no tool, or more than one, matches
    """
    target = parse_call(call)
    keys = set(target.param_map)
    matches = []
    for tool in registry:
        shape = parse_call(render_call(tool, {}))
        if (shape.method, shape.base_url) == (target.method, target.base_url) and set(shape.param_map) == keys:
            matches.append(tool.name)
    if len(matches) != 1:
        raise ValueError(f"Call matches {len(matches)} registry tools {matches}: {call[:80]!r}")
    return matches[0]


def load_task(path, registry: Registry) -> list[TaskSample]:
    """
    Load a task file, resolving each gold call to its registry tool.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: Malformed line, or a gold call that names no registry tool
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Task file not found: {path}")

    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                rec = json.loads(line)
                instruction, gold_call = rec["instruction"], rec["gold_call"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: invalid task record: {e}") from e
            try:
                parse_call(gold_call)
                gold_tool = rec.get("gold_tool") or identify_tool(gold_call, registry)
            except (CallParseError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
            if gold_tool not in registry:
                raise ValueError(f"{path}:{lineno}: unknown gold tool '{gold_tool}'")
            samples.append(TaskSample(instruction, gold_call, rec.get("task", path.stem), gold_tool))
    return samples


# -- live execution -----------------------------------------------------------------

class HostRateLimiter:
    """Minimum interval between requests to the same host."""

    def __init__(self, min_interval: float = LIVE_MIN_INTERVAL):
        self.min_interval = min_interval
        self._last: dict[str, float] = {}
        self._lock = threading.Lock()

    def wait(self, host: str) -> None:
        with self._lock:
            now = time.monotonic()
            ready = self._last.get(host, 0.0) + self.min_interval
            delay = max(0.0, ready - now)
            self._last[host] = now + delay
        if delay:
            time.sleep(delay)


_limiter = HostRateLimiter()


def execute_live(call: str, allowlist, api_key: str | None = None, timeout: float = 30.0, limiter=None) -> str:
    """
    Execute a call against its real service and return the response body.

    Args:
        call: Tool call string containing the {API_KEY} placeholder
        allowlist: Hosts that may be contacted
        api_key: Key substituted for {API_KEY} (default: TOOLVERIFY_API_KEY)

    Raises:
        LiveExecutionError: Host not allowed, no key, network or HTTP error
    """
    try:
        canonical = parse_call(call)
    except CallParseError as e:
        raise LiveExecutionError(f"Unparseable call: {e}") from e
    m = URL_RE.search(call)
    if not m:
        raise LiveExecutionError("Call has no URL to execute")

    host = canonical.base_url.split("/")[2]
    if host not in set(allowlist or ()):
        raise LiveExecutionError(f"Host '{host}' is not in the live allowlist")
    api_key = api_key or os.environ.get(API_KEY_ENV)
    if not api_key:
        raise LiveExecutionError(f"No API key; set {API_KEY_ENV}")

    (limiter or _limiter).wait(host)
    url = m.group(2).replace("{API_KEY}", api_key)
    try:
        r = requests.request(canonical.method, url, timeout=timeout)
    except requests.RequestException as e:
        raise LiveExecutionError(f"{host} unreachable: {e}") from e
    if r.status_code >= 400:
        raise LiveExecutionError(f"HTTP {r.status_code} from {host}", status=r.status_code)
    return r.text


# -- records and reports ----------------------------------------------------------------

@dataclass
class EvalRecord:
    instruction: str
    task: str
    gold_call: str
    gold_tool: str
    predicted_tool: str | None = None
    predicted_call: str | None = None
    selection_correct: bool = False
    call_success: bool = False
    failure: str | None = None
    scored: bool = True
    flags: list[str] = field(default_factory=list)
    trace: dict | None = None

    def __post_init__(self):
        if self.call_success and not self.selection_correct:
            raise ValueError("A call on the wrong tool cannot succeed")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "instruction": self.instruction,
            "gold_tool": self.gold_tool,
            "predicted_tool": self.predicted_tool,
            "gold_call": self.gold_call,
            "predicted_call": self.predicted_call,
            "selection_correct": self.selection_correct,
            "call_success": self.call_success,
            "failure": self.failure,
            "scored": self.scored,
            "flags": list(self.flags),
            "trace": self.trace,
        }


def _percent(part: int, whole: int) -> float:
    return round(100.0 * part / whole, 2) if whole else 0.0


@dataclass
class TaskReport:
    task: str
    config: str
    n: int
    selection_accuracy: float
    success_rate: float
    failures: Counter
    n_unscored: int = 0
    records: list[EvalRecord] = field(default_factory=list, repr=False)

    @classmethod
    def from_records(cls, task: str, config: str, records: list[EvalRecord]) -> "TaskReport":
        """Aggregate scored records; unscored live samples are counted separately."""
        scored = [r for r in records if r.scored]
        failures = Counter(r.failure for r in scored if r.failure)
        return cls(
            task=task,
            config=config,
            n=len(scored),
            selection_accuracy=_percent(sum(r.selection_correct for r in scored), len(scored)),
            success_rate=_percent(sum(r.call_success for r in scored), len(scored)),
            failures=failures,
            n_unscored=len(records) - len(scored),
            records=list(records),
        )

    def to_row(self) -> dict:
        return {
            "Config": self.config,
            "Task": self.task,
            "N": self.n,
            "Selection Accuracy": self.selection_accuracy,
            "Success Rate": self.success_rate,
        }


def evaluate_sample(
    sample: TaskSample,
    registry: Registry,
    config: PipelineConfig,
    backend: Backend,
    cache: VQCache | None = None,
    live: bool = False,
    allowlist=(),
) -> EvalRecord:
    """Run one sample through the pipeline and score it; failures become record fields."""
    record = EvalRecord(sample.instruction, sample.task, sample.gold_call, sample.gold_tool)
    candidates = CandidateSet(tuple(registry.names), sample.gold_tool)
    try:
        result = run_pipeline(
            sample.instruction, candidates, registry, backend, cache, config, gold_tool=sample.gold_tool,
        )
    except Exception as e:
        return _errored(record, e)

    record.predicted_tool = result.tool
    record.predicted_call = result.call
    record.flags = list(result.flags)
    record.trace = result.to_dict()
    record.selection_correct = result.tool == sample.gold_tool
    if not record.selection_correct:
        record.failure = "selection"
        return record

    try:
        parse_call(result.call)
    except CallParseError:
        record.failure = "construction"
        return record

    try:
        success = _live_success(sample, result.call, allowlist) if live else calls_equivalent(
            result.call, sample.gold_call, config.none_policy,
        )
    except LiveExecutionError as e:
        logger.warning("Live execution unscored for %r: %s", sample.instruction[:60], e)
        record.scored = False
        record.failure = "live"
        return record
    except Exception as e:
        return _errored(record, e)

    record.call_success = success
    if not success:
        record.failure = "params"
    return record


def _errored(record: EvalRecord, error: Exception) -> EvalRecord:
    if isinstance(error, ToolverifyError):
        logger.warning("Sample %r failed: %s", record.instruction[:60], error)
    else:
        logger.exception("Sample %r failed unexpectedly", record.instruction[:60])
    record.failure = f"error:{type(error).__name__}"
    record.flags.append(str(error))
    return record


def _live_success(sample: TaskSample, call: str, allowlist) -> bool:
    """
    Gold first: a gold call that cannot run leaves the sample unscored.
    A client error (4xx) on the predicted call is a failed call.
    """
    expected = execute_live(sample.gold_call, allowlist)
    try:
        return execute_live(call, allowlist) == expected
    except LiveExecutionError as e:
        if e.status is not None and 400 <= e.status < 500:
            logger.info("Predicted call rejected with HTTP %d", e.status)
            return False
        raise


def run_eval(
    task: list[TaskSample],
    registry: Registry,
    config: PipelineConfig,
    backend: Backend,
    cache: VQCache | None = None,
    workers: int = 1,
    live: bool = False,
    allowlist=(),
    task_name: str | None = None,
) -> TaskReport:
    """
    Evaluate a task under one pipeline config.

    Args:
        task: Samples (all offered the full registry as candidates)
        registry: Tool catalog
        config: Pipeline ablation switches
        backend: Backend or router serving every stage
        cache: Verification-question cache
        workers: Concurrent samples
        live: Compare live response bodies instead of canonical calls
        allowlist: Hosts live mode may contact
        task_name: Report name (default: the samples' task, or "all")

    Returns:
        TaskReport whose rates recompute from its records
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    def one(sample: TaskSample) -> EvalRecord:
        return evaluate_sample(sample, registry, config, backend, cache, live, allowlist)

    if workers == 1:
        records = [one(s) for s in task]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, task))

    if task_name is None:
        names = {s.task for s in task}
        task_name = names.pop() if len(names) == 1 else "all"
    report = TaskReport.from_records(task_name, config.label, records)
    logger.info(
        "%s/%s: n=%d selection=%.2f success=%.2f",
        report.config, report.task, report.n, report.selection_accuracy, report.success_rate,
    )
    return report


def group_by_task(samples: list[TaskSample]) -> dict[str, list[TaskSample]]:
    groups: dict[str, list[TaskSample]] = {}
    for sample in samples:
        groups.setdefault(sample.task, []).append(sample)
    return groups


def report_frame(reports: list[TaskReport]) -> pd.DataFrame:
    """Report table with an Average row per config (unweighted over tasks)."""
    rows = []
    configs = list(dict.fromkeys(r.config for r in reports))
    for config in configs:
        mine = [r for r in reports if r.config == config]
        rows.extend(r.to_row() for r in mine)
        if len(mine) > 1:
            rows.append({
                "Config": config,
                "Task": "Average",
                "N": sum(r.n for r in mine),
                "Selection Accuracy": round(sum(r.selection_accuracy for r in mine) / len(mine), 2),
                "Success Rate": round(sum(r.success_rate for r in mine) / len(mine), 2),
            })
    return pd.DataFrame(rows, columns=COLUMN_ORDER)


def export_report(frame: pd.DataFrame, path) -> Path:
    """Write the report table: .xlsx via openpyxl, .tsv tab-separated, anything else CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".xlsx":
        frame.to_excel(path, index=False, engine="openpyxl")
    elif path.suffix.lower() == ".tsv":
        frame.to_csv(path, sep="\t", index=False)
    else:
        frame.to_csv(path, index=False)
    return path


def write_log(reports: list[TaskReport], path) -> int:
    """Per-sample log, one JSON line per record. Returns the number of lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for report in reports:
            for record in report.records:
                f.write(json.dumps({"config": report.config, **record.to_dict()}, ensure_ascii=False) + "\n")
                count += 1
    return count
