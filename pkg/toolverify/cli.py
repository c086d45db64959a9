"""
toolverify command line
Wires dataset generation, verification-question precomputation, single
instruction selection/calling and batch evaluation.

Usage:
    python app.py datagen --seed-file fixtures/seed_tools.json --script fixtures/demo_script.jsonl --out out/
    python app.py precompute-vq --registry fixtures/toolbench_registry.json --cache out/vq.jsonl --endpoint URL
    python app.py select "What's the air quality right now in Paris?" --registry ... --script ...
    python app.py call "..." --registry ... --script ... --no-verify
    python app.py eval --task fixtures/tasks/weather_mini.jsonl --registry ... --script ... --sweep --report out/report.xlsx
    python app.py stats --dataset out/dataset.jsonl

Environment:
    TOOLVERIFY_ENDPOINT  default generation endpoint
    TOOLVERIFY_TOKEN     bearer token for the endpoint
    TOOLVERIFY_API_KEY   key for live execution (eval --live)
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from toolverify.backend import STAGE_TAGS, BackendRouter, HttpBackend, SamplingParams, ScriptedBackend, load_script
from toolverify.datagen import (
    DEFAULT_HARD_RATIO,
    DatagenConfig,
    assemble_dataset,
    build_synthetic_registry,
    compute_stats,
    export_finetune,
    generate_tool_library,
    load_finetune,
    load_seed_file,
    write_stats,
)
from toolverify.errors import ConfigError, ToolverifyError
from toolverify.evaluation import export_report, group_by_task, load_task, report_frame, run_eval, write_log
from toolverify.pipeline import PipelineConfig, run_pipeline, sweep_configs
from toolverify.prompts import DEFAULT_NOTE_TOKENS
from toolverify.registry import CandidateSet, Registry, load_registry, save_registry
from toolverify.selector import VQCache, precompute_questions, verified_select
from toolverify.similarity import NgramEmbedder

logger = logging.getLogger(__name__)

BANNER = "=" * 60
LIVE_HOSTS = ("api.openweathermap.org", "api.thecatapi.com")


def _pairs(values: list[str], flag: str) -> dict[str, str]:
    out = {}
    for item in values or []:
        tag, sep, target = item.partition("=")
        if not sep or not tag or not target:
            raise ConfigError(f"{flag} expects TAG=VALUE, got {item!r}")
        if tag not in STAGE_TAGS:
            raise ConfigError(f"{flag}: unknown stage tag '{tag}'. Known: {list(STAGE_TAGS)}")
        out[tag] = target
    return out


@dataclass
class RunConfig:
    """Everything a command needs, resolved from flags and environment."""

    command: str
    registry: Path | None = None
    cache: Path | None = None
    endpoint: str | None = None
    token: str | None = None
    script: Path | None = None
    stage_endpoints: dict[str, str] = field(default_factory=dict)
    stage_scripts: dict[str, Path] = field(default_factory=dict)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    tool_verify: bool = True
    param_verify: bool = True
    condition_on_instruction: bool = False
    final_mode: str = "hint"
    construct_mode: str = "template"
    none_policy: str = "strict"
    randomize_options: bool = False
    upper_bound: bool = False
    shuffle: bool = True
    hard_ratio: float = DEFAULT_HARD_RATIO
    k: int = 7
    seed: int = 0
    max_note_tokens: int = DEFAULT_NOTE_TOKENS
    workers: int = 1
    live: bool = False
    allow_hosts: tuple[str, ...] = LIVE_HOSTS

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        """
        Build and validate the config for a parsed command line.

        Raises:
            ConfigError: Bad stage routing or sampling values
            FileNotFoundError: A referenced input file is missing
        """
        def get(name, default=None):
            # subcommands only define their own flags
            return getattr(args, name, default)

        try:
            sampling = SamplingParams(
                temperature=get("temperature", 0.7),
                top_p=get("top_p", 0.9),
                max_tokens=get("max_tokens", 512),
                seed=get("seed"),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

        no_verify = bool(get("no_verify", False))
        config = cls(
            command=args.command,
            registry=Path(args.registry) if get("registry") else None,
            cache=Path(args.cache) if get("cache") else None,
            endpoint=get("endpoint") or os.environ.get("TOOLVERIFY_ENDPOINT"),
            token=get("token") or os.environ.get("TOOLVERIFY_TOKEN"),
            script=Path(args.script) if get("script") else None,
            stage_endpoints=_pairs(get("stage_endpoint"), "--stage-endpoint"),
            stage_scripts={t: Path(p) for t, p in _pairs(get("stage_script"), "--stage-script").items()},
            sampling=sampling,
            tool_verify=not (no_verify or get("no_tool_verify", False)),
            param_verify=not (no_verify or get("no_param_verify", False)),
            condition_on_instruction=bool(get("condition_on_instruction", False)),
            final_mode=get("final_mode", "hint"),
            construct_mode=get("construct_mode", "template"),
            none_policy=get("none_policy", "strict"),
            randomize_options=bool(get("randomize_options", False)),
            upper_bound=bool(get("upper_bound", False)),
            shuffle=not get("no_shuffle", False),
            hard_ratio=get("hard_ratio", DEFAULT_HARD_RATIO),
            k=get("k", 7),
            seed=get("seed") if get("seed") is not None else 0,
            max_note_tokens=get("max_note_tokens", DEFAULT_NOTE_TOKENS),
            workers=get("workers", 1),
            live=bool(get("live", False)),
            allow_hosts=tuple(get("allow_host") or LIVE_HOSTS),
        )
        config.validate()
        return config

    @property
    def needs_backend(self) -> bool:
        return self.command != "stats"

    def validate(self) -> None:
        for path in [self.registry, self.script, *self.stage_scripts.values()]:
            if path is not None and not path.exists():
                raise FileNotFoundError(f"File not found: {path}")
        if self.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {self.workers}")
        if not 0.0 <= self.hard_ratio <= 1.0:
            raise ConfigError(f"--hard-ratio must be in [0, 1], got {self.hard_ratio}")
        if self.needs_backend:
            routed = set(self.stage_endpoints) | set(self.stage_scripts)
            if not (self.script or self.endpoint) and routed != set(STAGE_TAGS):
                raise ConfigError("No backend configured: pass --endpoint, --script or set TOOLVERIFY_ENDPOINT")

    def build_backend(self):
        """Fresh backend (scripted rules start unconsumed); a router when any stage is overridden."""
        if self.script:
            default = ScriptedBackend(load_script(self.script), backend_id=f"script:{self.script.name}")
        elif self.endpoint:
            default = HttpBackend(self.endpoint, self.token)
        else:
            default = None

        per_tag = {tag: HttpBackend(url, self.token) for tag, url in self.stage_endpoints.items()}
        for tag, path in self.stage_scripts.items():
            per_tag[tag] = ScriptedBackend(load_script(path), backend_id=f"script:{path.name}")
        if not per_tag:
            return default
        return BackendRouter(default, per_tag)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            tool_verify=self.tool_verify,
            param_verify=self.param_verify,
            condition_on_instruction=self.condition_on_instruction,
            final_mode=self.final_mode,
            construct_mode=self.construct_mode,
            none_policy=self.none_policy,
            randomize_options=self.randomize_options,
            upper_bound=self.upper_bound,
            sampling=self.sampling,
        )

    def datagen_config(self, examples=(), instructions_per_tool: int = 3) -> DatagenConfig:
        return DatagenConfig(
            hard_ratio=self.hard_ratio,
            k=self.k,
            seed=self.seed,
            max_note_tokens=self.max_note_tokens,
            shuffle=self.shuffle,
            instructions_per_tool=instructions_per_tool,
            instruction_examples=tuple(examples),
            sampling=self.sampling,
        )

    def load_registry(self) -> Registry:
        if self.registry is None:
            raise ConfigError("--registry is required for this command")
        return load_registry(self.registry)

    def load_cache(self) -> VQCache:
        return VQCache.load(self.cache) if self.cache else VQCache()


# -- commands ------------------------------------------------------------------------

def cmd_datagen(config: RunConfig, args: argparse.Namespace) -> dict:
    """Generate (or reuse) a registry and write dataset.jsonl, stats.json into --out."""
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backend = config.build_backend()
    embedder = NgramEmbedder()
    examples = []

    if args.seed_file:
        print("Step 1: Generating tool library from seed pool...")
        seed_file = load_seed_file(args.seed_file)
        examples = seed_file.instruction_examples
        library = generate_tool_library(
            seed_file.pool, backend, embedder, rounds=args.rounds, per_round=args.per_round,
            base_seed=config.seed, sampling=config.sampling,
        )
        registry = build_synthetic_registry(seed_file, library, backend, config.seed, sampling=config.sampling)
        registry_path = out_dir / "registry.json"
        save_registry(registry, registry_path)
        print(f"[OK] {len(registry)} tools ({library.n_generated} generated, "
              f"{len(library.rejected)} rejected, {library.skipped} skipped): {registry_path}\n")
    else:
        registry = config.load_registry()
        print(f"Step 1: Using registry {config.registry} ({len(registry)} tools)")
        print("[OK] Registry loaded\n")

    print("Step 2: Assembling training samples...")
    samples, stats = assemble_dataset(
        registry, backend, embedder, config.datagen_config(examples, args.instructions_per_tool),
    )
    print(f"[OK] {stats.n_samples} samples ({stats.n_hard} hard)\n")

    print("Step 3: Exporting fine-tune corpus...")
    dataset_path = out_dir / "dataset.jsonl"
    stats_path = out_dir / "stats.json"
    written = export_finetune(samples, dataset_path, registry)
    write_stats(stats, stats_path)
    print(f"[OK] {written} records: {dataset_path}\n")
    print(stats.to_frame().to_string(index=False))
    return {"dataset": dataset_path, "stats": stats_path}


def cmd_precompute_vq(config: RunConfig, args: argparse.Namespace) -> int:
    if config.cache is None:
        raise ConfigError("--cache is required for precompute-vq")
    registry = config.load_registry()
    cache = config.load_cache()
    n_pairs = len(registry) * (len(registry) - 1) // 2
    print(f"Step 1: Precomputing verification questions for {n_pairs} tool pairs...")
    generated = precompute_questions(registry, config.build_backend(), cache, config.sampling)
    print(f"[OK] {generated} new, {len(cache)} cached: {config.cache}")
    return generated


def _candidates(args: argparse.Namespace, registry: Registry) -> CandidateSet:
    if getattr(args, "candidates", None):
        names = tuple(n.strip() for n in args.candidates.split(",") if n.strip())
        unknown = [n for n in names if n not in registry]
        if unknown:
            raise ConfigError(f"--candidates names unknown tools: {unknown}")
        return CandidateSet(names)
    return CandidateSet(tuple(registry.names))


def cmd_select(config: RunConfig, args: argparse.Namespace):
    registry = config.load_registry()
    trace = verified_select(
        args.instruction, _candidates(args, registry), config.build_backend(), registry,
        config.load_cache(), config.pipeline_config().selection_options(),
    )
    print(f"Top-1:    {trace.top1}")
    print(f"Top-2:    {trace.top2 or '-'}")
    if trace.question:
        print(f"Question: {trace.question}")
        print(f"Answer:   {trace.answer}")
    if trace.flags:
        print(f"Flags:    {', '.join(trace.flags)}")
    print(f"Act: CALLTOOL[{trace.final}()]")
    if args.trace_out:
        Path(args.trace_out).write_text(json.dumps(trace.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return trace


def cmd_call(config: RunConfig, args: argparse.Namespace):
    registry = config.load_registry()
    pipeline = config.pipeline_config()
    if pipeline.upper_bound and not args.tool:
        raise ConfigError("--upper-bound needs --tool")
    result = run_pipeline(
        args.instruction, _candidates(args, registry), registry, config.build_backend(),
        config.load_cache(), pipeline, gold_tool=args.tool,
    )
    if result.trace:
        trace = result.trace
        print(f"Top-1:    {trace.top1}")
        print(f"Top-2:    {trace.top2 or '-'}")
        if trace.question:
            print(f"Question: {trace.question}")
            print(f"Answer:   {trace.answer}")
    for p in result.params.predictions:
        print(f"  {p.param}: {p.final_value} [{p.verdict.value}]")
    if result.flags:
        print(f"Flags: {', '.join(result.flags)}")
    print(f"Act: CALLTOOL[{result.tool}()]")
    print(f"API: {result.call}")
    if args.trace_out:
        Path(args.trace_out).write_text(json.dumps(result.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return result


def cmd_eval(config: RunConfig, args: argparse.Namespace):
    registry = config.load_registry()
    samples = load_task(args.task, registry)
    if not samples:
        raise ValueError(f"Task file has no samples: {args.task}")
    cache = config.load_cache()
    base = config.pipeline_config()
    configs = sweep_configs(base) if args.sweep else [base]

    reports = []
    for step, pipeline in enumerate(configs, start=1):
        print(f"Step {step}: Evaluating config '{pipeline.label}' on {len(samples)} samples...")
        backend = config.build_backend()
        for task_name, group in group_by_task(samples).items():
            reports.append(run_eval(
                group, registry, pipeline, backend, cache,
                workers=config.workers, live=config.live, allowlist=config.allow_hosts, task_name=task_name,
            ))
        print(f"[OK] {pipeline.label} done\n")

    frame = report_frame(reports)
    print(frame.to_string(index=False))
    if args.report:
        print(f"\nReport: {export_report(frame, args.report)}")
    if args.log:
        print(f"Log: {args.log} ({write_log(reports, args.log)} records)")
    return reports


def cmd_stats(config: RunConfig, args: argparse.Namespace):
    samples = load_finetune(args.dataset)
    stats = compute_stats(samples)
    print(stats.to_frame().to_string(index=False))
    if args.out:
        write_stats(stats, args.out)
    return stats


COMMANDS = {
    "datagen": (cmd_datagen, "Tool-Selection Dataset Generation"),
    "precompute-vq": (cmd_precompute_vq, "Verification Question Precompute"),
    "select": (cmd_select, "Verified Tool Selection"),
    "call": (cmd_call, "Verified Tool Call"),
    "eval": (cmd_eval, "Tool-Call Evaluation"),
    "stats": (cmd_stats, "Dataset Statistics"),
}


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    backend_opts = argparse.ArgumentParser(add_help=False)
    g = backend_opts.add_argument_group("backend")
    g.add_argument("--endpoint", help="Generation endpoint URL (default: $TOOLVERIFY_ENDPOINT)")
    g.add_argument("--token", help="Bearer token (default: $TOOLVERIFY_TOKEN)")
    g.add_argument("--script", help="Scripted-backend rule file used as the default backend")
    g.add_argument("--stage-endpoint", action="append", metavar="TAG=URL", help="Route one stage tag to an endpoint")
    g.add_argument("--stage-script", action="append", metavar="TAG=PATH", help="Route one stage tag to a rule file")
    g.add_argument("--temperature", type=float, default=0.7)
    g.add_argument("--top-p", type=float, default=0.9)
    g.add_argument("--max-tokens", type=int, default=512)
    g.add_argument("--seed", type=int, default=None)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--registry", help="Registry JSON file")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    pipeline_opts = argparse.ArgumentParser(add_help=False)
    p = pipeline_opts.add_argument_group("verification")
    p.add_argument("--cache", help="Verification-question cache file (JSON lines)")
    p.add_argument("--no-tool-verify", action="store_true", help="Final tool = first selection")
    p.add_argument("--no-param-verify", action="store_true", help="Final params = primary predictions")
    p.add_argument("--no-verify", action="store_true", help="Both verification stages off")
    p.add_argument("--condition-on-instruction", action="store_true", help="Generate questions with the instruction in context")
    p.add_argument("--final-mode", choices=["hint", "mcq"], default="hint")
    p.add_argument("--construct-mode", choices=["template", "model"], default="template")
    p.add_argument("--none-policy", choices=["strict", "lenient"], default="strict")
    p.add_argument("--randomize-options", action="store_true", help="Random option order in parameter verification")
    p.add_argument("--upper-bound", action="store_true", help="Give the gold tool; score parameters only")
    p.add_argument("--candidates", help="Comma-separated candidate tools (default: whole registry)")

    parser = argparse.ArgumentParser(prog="toolverify", description="Verified tool calling for language models")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", parents=[common, backend_opts], help="Generate the tool-selection corpus")
    d.add_argument("--seed-file", help="Annotated seed tools; generates a registry first")
    d.add_argument("--rounds", type=int, default=2)
    d.add_argument("--per-round", type=int, default=4)
    d.add_argument("--instructions-per-tool", type=int, default=3)
    d.add_argument("--hard-ratio", type=float, default=DEFAULT_HARD_RATIO)
    d.add_argument("--k", type=int, default=7, help="Random candidates besides the ground truth")
    d.add_argument("--max-note-tokens", type=int, default=DEFAULT_NOTE_TOKENS)
    d.add_argument("--no-shuffle", action="store_true", help="Ground truth always first")
    d.add_argument("--out", required=True, help="Output directory")

    v = sub.add_parser("precompute-vq", parents=[common, backend_opts], help="Fill the verification-question cache")
    v.add_argument("--cache", required=True)

    s = sub.add_parser("select", parents=[common, backend_opts, pipeline_opts], help="Select a tool for one instruction")
    s.add_argument("instruction")
    s.add_argument("--trace-out", help="Write the selection trace as JSON")

    c = sub.add_parser("call", parents=[common, backend_opts, pipeline_opts], help="Full tool call for one instruction")
    c.add_argument("instruction")
    c.add_argument("--tool", help="Gold tool for --upper-bound")
    c.add_argument("--trace-out", help="Write the full trace as JSON")

    e = sub.add_parser("eval", parents=[common, backend_opts, pipeline_opts], help="Evaluate a task file")
    e.add_argument("--task", required=True, help="Task file (JSON lines)")
    e.add_argument("--sweep", action="store_true", help="Run the four verification ablation configs")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--live", action="store_true", help="Compare live API responses")
    e.add_argument("--allow-host", action="append", help="Host live mode may contact (repeatable)")
    e.add_argument("--report", help="Report table (.xlsx, .csv or .tsv)")
    e.add_argument("--log", help="Per-sample log (JSON lines)")

    t = sub.add_parser("stats", parents=[common], help="Recompute stats of an exported corpus")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", help="Write stats JSON")

    return parser


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run one command, return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler, title = COMMANDS[args.command]

    try:
        config = RunConfig.from_args(args)
        print(f"\n{BANNER}")
        print(title)
        print(f"{BANNER}\n")
        handler(config, args)
        print(f"\n{BANNER}")
        print("Completed successfully!")
        print(f"{BANNER}\n")
        return 0

    except FileNotFoundError as e:
        _error_banner("File not found", e)
    except ValueError as e:
        _error_banner("Validation error", e)
    except ToolverifyError as e:
        _error_banner(type(e).__name__, e)
    except Exception as e:
        _error_banner("Unexpected error", e)
        import traceback
        traceback.print_exc()
    return 1


def _error_banner(kind: str, error: Exception) -> None:
    print(f"\n{BANNER}", file=sys.stderr)
    print(f"ERROR: {kind}", file=sys.stderr)
    print(BANNER, file=sys.stderr)
    print(f"{error}", file=sys.stderr)
    print(f"{BANNER}\n", file=sys.stderr)
