"""Command-line surface: decompose, generate, evaluate, and consensus.

Exit codes: 0 success (including partial success with diagnostics),
1 input or configuration error, 2 nothing produced. Remote credentials come
only from environment variables; a ``--mock`` script file swaps every
backend for scripted ones so whole runs work offline.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .atoms import (
    DecomposerBackend,
    PromptedDecomposer,
    RuleBasedDecomposer,
    ScriptedDecomposer,
    decompose_article,
    decompose_timeline,
)
from .cache import KeyedFileStore
from .clients import AuditLog, ModelClient, RemoteModelClient, ScriptedModelClient
from .consensus import (
    Role,
    agreement_stats,
    consensus_merge,
    format_agreement_table,
    render_edit_file,
    role_select,
)
from .entail import (
    EntailmentBackend,
    ExactMatchBackend,
    RemoteEntailmentBackend,
    ScriptedEntailmentBackend,
)
from .errors import Diagnostic, TimelineKitError, UnreadableDatasetError
from .metrics import (
    EvalBackends,
    aggregate,
    evaluate_topic,
    format_aggregate_table,
)
from .model import (
    DatasetRecord,
    group_atoms_by_timestamp,
    load_dataset,
    parse_timeline_text,
    save_dataset,
    serialize_timeline,
)
from .pipelines import (
    GenerationJob,
    Method,
    NodeCount,
    OneShotExemplar,
    PromptInstruction,
    apply_gold_timestamps,
    generate,
)

ENV_PREFIX = "TIMELINEKIT"


@dataclass
class RunConfig:
    """Run-wide knobs; endpoints may be overridden from the environment and
    credentials only ever come from it."""

    cache_dir: str | None = None
    prompt_template_dir: str | None = None
    language: str = "en"
    concurrency: int = 4
    length_budget: int = 20000
    fan_in: int = 4
    factuality_k: int = 5
    fallback_to_rules: bool = True
    levels: tuple[str, ...] = ("GN", "G10", "G5")
    granu_denominator: str = "predicted"
    coherence_exemplar: str = ""
    consensus_example: str = ""
    decomposer_endpoint: str | None = None
    entailment_endpoint: str | None = None
    judge_endpoint: str | None = None
    generator_endpoint: str | None = None
    generator_model: str = ""
    premise_mode: str = "joined"
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self) -> None:
        if self.concurrency < 1 or self.fan_in < 2:
            raise ValueError("concurrency must be >= 1 and fan_in >= 2")
        if self.factuality_k < 1 or self.length_budget < 1:
            raise ValueError("factuality_k and length_budget must be >= 1")
        self.levels = tuple(self.levels)


def load_config(path: str | None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus env overrides."""
    values: dict = {}
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    config = RunConfig(**values)
    for name in ("decomposer", "entailment", "judge", "generator"):
        override = os.environ.get(f"{ENV_PREFIX}_{name.upper()}_ENDPOINT")
        if override:
            setattr(config, f"{name}_endpoint", override)
    return config


# --- backend wiring -------------------------------------------------------------


@dataclass
class MockScript:
    """Scripted backend material loaded from a ``--mock`` JSON file."""

    generate: list | None = None
    decompose: dict | None = None
    entail: list | None = None
    judge: list | None = None
    roles: dict | None = None


def load_mock_script(path: str) -> MockScript:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    known = {f.name for f in fields(MockScript)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown mock sections: {sorted(unknown)}")
    return MockScript(**raw)


def build_decomposer(
    config: RunConfig, mock: MockScript | None, audit: AuditLog | None = None
) -> DecomposerBackend:
    if mock is not None and mock.decompose is not None:
        return ScriptedDecomposer(mapping=dict(mock.decompose))
    if config.decomposer_endpoint:
        client = RemoteModelClient(
            endpoint=config.decomposer_endpoint,
            model="decomposer",
            api_key_env=f"{ENV_PREFIX}_DECOMPOSER_API_KEY",
            timeout=config.timeout,
            retries=config.retries,
            audit=audit,
        )
        return PromptedDecomposer(
            client=client,
            language=config.language,
            template_dir=config.prompt_template_dir,
        )
    return RuleBasedDecomposer()


def build_entailment(config: RunConfig, mock: MockScript | None) -> EntailmentBackend:
    if mock is not None and mock.entail is not None:
        table = {(str(e), str(c)): int(v) for e, c, v in mock.entail}
        return ScriptedEntailmentBackend(table=table)
    if config.entailment_endpoint:
        return RemoteEntailmentBackend(
            endpoint=config.entailment_endpoint,
            premise_mode=config.premise_mode,
            timeout=config.timeout,
            api_key_env=f"{ENV_PREFIX}_ENTAILMENT_API_KEY",
        )
    return ExactMatchBackend()


def build_judge(
    config: RunConfig, mock: MockScript | None, audit: AuditLog | None = None
) -> ModelClient | None:
    if mock is not None and mock.judge is not None:
        return ScriptedModelClient(responses=list(mock.judge), client_id="mock-judge")
    if config.judge_endpoint:
        return RemoteModelClient(
            endpoint=config.judge_endpoint,
            model="judge",
            api_key_env=f"{ENV_PREFIX}_JUDGE_API_KEY",
            timeout=config.timeout,
            retries=config.retries,
            audit=audit,
        )
    return None


def build_generator(
    config: RunConfig, mock: MockScript | None, audit: AuditLog | None = None
) -> ModelClient | None:
    if mock is not None and mock.generate is not None:
        return ScriptedModelClient(
            responses=list(mock.generate), client_id="mock-generator", audit=audit
        )
    if config.generator_endpoint:
        return RemoteModelClient(
            endpoint=config.generator_endpoint,
            model=config.generator_model or "generator",
            api_key_env=f"{ENV_PREFIX}_GENERATOR_API_KEY",
            timeout=config.timeout,
            retries=config.retries,
            audit=audit,
        )
    return None


def build_role_clients(
    config: RunConfig, mock: MockScript | None, audit: AuditLog | None = None
) -> dict[Role, ModelClient] | None:
    if mock is not None and mock.roles is not None:
        clients: dict[Role, ModelClient] = {}
        for role in Role:
            if role.value not in mock.roles:
                raise ValueError(f"mock roles section missing {role.value!r}")
            clients[role] = ScriptedModelClient(
                responses=list(mock.roles[role.value]), client_id=f"mock-{role.value}"
            )
        return clients
    if config.generator_endpoint:
        shared = RemoteModelClient(
            endpoint=config.generator_endpoint,
            model=config.generator_model or "annotator",
            api_key_env=f"{ENV_PREFIX}_GENERATOR_API_KEY",
            timeout=config.timeout,
            retries=config.retries,
            audit=audit,
        )
        return {role: shared for role in Role}
    return None


def build_eval_backends(
    config: RunConfig, mock: MockScript | None, audit: AuditLog | None = None
) -> EvalBackends:
    atom_cache = verdict_cache = None
    if config.cache_dir:
        atom_cache = KeyedFileStore(Path(config.cache_dir) / "atoms")
        verdict_cache = KeyedFileStore(Path(config.cache_dir) / "verdicts")
    return EvalBackends(
        decomposer=build_decomposer(config, mock, audit),
        entailment=build_entailment(config, mock),
        judge=build_judge(config, mock, audit),
        atom_cache=atom_cache,
        verdict_cache=verdict_cache,
    )


# --- shared helpers -------------------------------------------------------------


def parse_level(value: str) -> tuple[str, int | None]:
    """Map a --level flag to (level key, node count or None)."""
    if value == "GN":
        return "GN", None
    if value in ("G10", "G5"):
        return value, int(value[1:])
    if value.startswith("n:"):
        count = int(value[2:])
        if count < 1:
            raise ValueError("node count must be >= 1")
        return f"G{count}", count
    raise ValueError(f"unknown level {value!r} (expected GN, G10, G5, or n:<int>)")


def _write_diagnostics(path: Path, items: list[tuple[str, list[Diagnostic]]]) -> None:
    lines = [
        json.dumps({"topic_id": topic, "diagnostics": [d.to_json_dict() for d in diags]},
                   ensure_ascii=False)
        for topic, diags in items
        if diags
    ]
    if lines:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _log(message: str) -> None:
    print(message)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _load_records(args) -> tuple[list[DatasetRecord], list[Diagnostic]]:
    diagnostics: list[Diagnostic] = []
    records = load_dataset(args.dataset, diagnostics=diagnostics)
    records.sort(key=lambda r: r.topic.id)
    for diag in diagnostics:
        _log(f"warning: {diag.code}: {diag.message}")
    return records, diagnostics


# --- commands -------------------------------------------------------------------


def cmd_decompose(args, config: RunConfig) -> int:
    try:
        records, _ = _load_records(args)
    except UnreadableDatasetError as exc:
        return _fail(str(exc))
    mock = load_mock_script(args.mock) if args.mock else None
    backends = build_eval_backends(config, mock)
    levels = [parse_level(args.level)[0]] if args.level else None
    workers = 1 if mock is not None else config.concurrency
    decomposed_records: list[DatasetRecord] = []
    atom_total = 0
    failures = 0
    for record in records:
        diagnostics: list[Diagnostic] = []
        timelines = {}
        for level, timeline in record.reference_timelines.items():
            if levels is not None and level not in levels:
                timelines[level] = timeline
                continue
            try:
                ready = decompose_timeline(
                    timeline,
                    backends.decomposer,
                    cache=backends.atom_cache,
                    fallback_to_rules=config.fallback_to_rules,
                    diagnostics=diagnostics,
                    max_workers=workers,
                )
                timelines[level] = ready
                atom_total += sum(len(n.atoms) for n in ready.nodes)
            except TimelineKitError as exc:
                failures += 1
                timelines[level] = timeline
                _log(f"warning: {record.topic.id}/{level}: {exc}")
        for article in record.articles:
            try:
                atom_total += len(
                    decompose_article(
                        article,
                        backends.decomposer,
                        cache=backends.atom_cache,
                        fallback_to_rules=config.fallback_to_rules,
                        diagnostics=diagnostics,
                    )
                )
            except TimelineKitError as exc:
                failures += 1
                _log(f"warning: {record.topic.id}/article {article.id}: {exc}")
        decomposed_records.append(
            DatasetRecord(
                topic=record.topic,
                reference_timelines=timelines,
                articles=record.articles,
            )
        )
        for diag in diagnostics:
            _log(f"note: {record.topic.id}: {diag.code}: {diag.message}")
    calls = getattr(backends.decomposer, "call_count", 0)
    _log(f"decomposed {len(records)} topics, {atom_total} atoms, {calls} backend calls, "
         f"{failures} failures")
    if args.out:
        out_path = Path(args.out)
        if out_path.resolve() == Path(args.dataset).resolve():
            return _fail("refusing to overwrite the input dataset")
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(decomposed_records, out_path)
        _log(f"wrote decomposed dataset to {out_path}")
    return 0


def _granularity_for(record: DatasetRecord, args, level: str, count: int | None):
    if args.granularity_style == "count":
        if count is None:
            reference = record.reference_timelines.get(level)
            if reference is None:
                raise TimelineKitError(f"level {level} missing, node count unknown")
            count = len(reference)
        return NodeCount(count)
    if args.granularity_style == "prompt":
        if level == "GN":
            return PromptInstruction("fine")
        if level == "G5":
            return PromptInstruction("coarse")
        raise TimelineKitError(
            "prompt-style granularity is defined for GN (fine) and G5 (coarse) only"
        )
    reference = record.reference_timelines.get(level)
    if reference is None:
        raise TimelineKitError(f"level {level} missing, no one-shot exemplar")
    return OneShotExemplar(reference)


def cmd_generate(args, config: RunConfig) -> int:
    try:
        records, _ = _load_records(args)
    except UnreadableDatasetError as exc:
        return _fail(str(exc))
    try:
        level, count = parse_level(args.level)
    except ValueError as exc:
        return _fail(str(exc))
    mock = load_mock_script(args.mock) if args.mock else None
    out_dir = Path(args.out)
    predictions_dir = out_dir / "predictions"
    predictions_dir.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(out_dir / "audit")
    client = build_generator(config, mock, audit)
    if client is None:
        return _fail("no generator configured: set generator_endpoint or pass --mock")
    method = Method(args.method)
    produced = 0
    all_diagnostics: list[tuple[str, list[Diagnostic]]] = []
    for record in records:
        diagnostics: list[Diagnostic] = []
        try:
            granularity = _granularity_for(record, args, level, count)
            job = GenerationJob(
                method=method,
                topic=record.topic,
                granularity=granularity,
                articles=() if method is Method.TO else record.articles,
                length_budget=config.length_budget,
                language=config.language,
            )
            if args.gold_timestamps:
                job = apply_gold_timestamps(job, record.reference_timelines.get(level))
            timeline = generate(
                job,
                client,
                fan_in=config.fan_in,
                template_dir=config.prompt_template_dir,
                diagnostics=diagnostics,
            )
            path = predictions_dir / f"{record.topic.id}.txt"
            path.write_text(serialize_timeline(timeline) + "\n", encoding="utf-8")
            produced += 1
            _log(f"{record.topic.id}: {len(timeline)} nodes -> {path}")
        except TimelineKitError as exc:
            diagnostics.append(Diagnostic(code="generation_failed", message=str(exc)))
            _log(f"warning: {record.topic.id}: generation failed: {exc}")
        all_diagnostics.append((record.topic.id, diagnostics))
    _write_diagnostics(out_dir / "generate_diagnostics.jsonl", all_diagnostics)
    if produced == 0:
        _log("no topic produced a timeline")
        return 2
    return 0


def cmd_evaluate(args, config: RunConfig) -> int:
    try:
        records, _ = _load_records(args)
    except UnreadableDatasetError as exc:
        return _fail(str(exc))
    try:
        level, _ = parse_level(args.level)
    except ValueError as exc:
        return _fail(str(exc))
    mock = load_mock_script(args.mock) if args.mock else None
    predictions_dir = Path(args.predictions)
    if not predictions_dir.is_dir():
        return _fail(f"predictions directory not found: {predictions_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backends = build_eval_backends(config, mock)

    work: list[tuple[DatasetRecord, object, list[Diagnostic]]] = []
    for record in records:
        path = predictions_dir / f"{record.topic.id}.txt"
        if not path.is_file():
            _log(f"warning: {record.topic.id}: no prediction file, skipped")
            continue
        parse_diags: list[Diagnostic] = []
        try:
            pred = parse_timeline_text(
                path.read_text(encoding="utf-8"),
                topic_id=record.topic.id,
                diagnostics=parse_diags,
            )
        except TimelineKitError as exc:
            _log(f"warning: {record.topic.id}: unparseable prediction: {exc}")
            continue
        work.append((record, pred, parse_diags))

    def run_one(item):
        record, pred, parse_diags = item
        report = evaluate_topic(
            record,
            pred,
            level,
            backends,
            factuality_k=config.factuality_k,
            fallback_to_rules=config.fallback_to_rules,
            granu_denominator=config.granu_denominator,
            coherence_exemplar=config.coherence_exemplar,
            language=config.language,
            template_dir=config.prompt_template_dir,
            method=args.method_label,
            model=args.model_label,
        )
        if parse_diags:
            report = replace(report, diagnostics=report.diagnostics + tuple(parse_diags))
        return report

    # Scripted clients consume responses in call order, so mock runs stay
    # sequential to remain deterministic.
    workers = 1 if mock is not None else config.concurrency
    if workers > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_one, work))
    else:
        reports = [run_one(item) for item in work]
    if not reports:
        _log("no topic was evaluable")
        return 2
    reports.sort(key=lambda r: r.topic_id)
    report_lines = [json.dumps(r.to_json_dict(), ensure_ascii=False) for r in reports]
    (out_dir / "reports.jsonl").write_text("\n".join(report_lines) + "\n", encoding="utf-8")
    rollup = aggregate(reports)
    table = format_aggregate_table(rollup)
    (out_dir / "aggregate.json").write_text(
        json.dumps(rollup.to_json_dict(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    (out_dir / "aggregate.txt").write_text(table + "\n", encoding="utf-8")
    _log(table)
    return 0


def cmd_consensus(args, config: RunConfig) -> int:
    try:
        records, _ = _load_records(args)
    except UnreadableDatasetError as exc:
        return _fail(str(exc))
    mock = load_mock_script(args.mock) if args.mock else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(out_dir / "audit")
    role_clients = build_role_clients(config, mock, audit)
    if role_clients is None:
        return _fail("no annotator configured: set generator_endpoint or pass --mock")
    decomposer = build_decomposer(config, mock)
    atom_cache = KeyedFileStore(Path(config.cache_dir) / "atoms") if config.cache_dir else None
    produced = 0
    combined = {"full": 0, "p12": 0, "p13": 0, "p23": 0, "none": 0}
    for record in records:
        diagnostics: list[Diagnostic] = []
        try:
            source = record.reference_timelines.get("GN")
            if source is None:
                raise TimelineKitError("no GN reference timeline to condense")
            ready = decompose_timeline(
                source,
                decomposer,
                cache=atom_cache,
                fallback_to_rules=config.fallback_to_rules,
                diagnostics=diagnostics,
            )
            groups = group_atoms_by_timestamp(ready)

            def select_for(role: Role):
                local: list[Diagnostic] = []
                selection = role_select(
                    groups,
                    role,
                    args.n,
                    role_clients[role],
                    topic=record.topic.query,
                    example=config.consensus_example,
                    language=config.language,
                    template_dir=config.prompt_template_dir,
                    diagnostics=local,
                )
                return selection, local

            # Each role has its own client (or a thread-safe shared one), so
            # the three calls can run concurrently and stay deterministic.
            with ThreadPoolExecutor(max_workers=3) as pool:
                outcomes = list(pool.map(select_for, Role))
            selections = [selection for selection, _ in outcomes]
            for _, local in outcomes:
                diagnostics.extend(local)
            result = consensus_merge(selections, groups, args.n)
            stats = agreement_stats(selections)
            combined["full"] += stats.full
            combined["p12"] += stats.partial_12
            combined["p13"] += stats.partial_13
            combined["p23"] += stats.partial_23
            combined["none"] += stats.none
            payload = {
                "topic_id": record.topic.id,
                "final": list(result.final),
                "provenance": dict(result.provenance),
                "selections": {
                    s.role.value: list(s.selected) for s in selections
                },
                "agreement": stats.to_json_dict(),
                "diagnostics": [d.to_json_dict() for d in diagnostics],
            }
            (out_dir / f"{record.topic.id}.json").write_text(
                json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )
            edit_text = render_edit_file(record.topic.query, groups, result)
            (out_dir / f"{record.topic.id}_edit.txt").write_text(edit_text, encoding="utf-8")
            produced += 1
            _log(f"{record.topic.id}: consensus of {args.n} groups written")
        except TimelineKitError as exc:
            _log(f"warning: {record.topic.id}: consensus failed: {exc}")
    if produced == 0:
        _log("no topic produced a consensus")
        return 2
    from .consensus import AgreementStats

    totals = AgreementStats(
        full=combined["full"],
        partial_12=combined["p12"],
        partial_13=combined["p13"],
        partial_23=combined["p23"],
        none=combined["none"],
    )
    table = format_agreement_table(totals)
    (out_dir / "agreement.txt").write_text(table + "\n", encoding="utf-8")
    _log(table)
    return 0


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timelinekit",
        description="Evaluate and generate dynamic-granularity news timelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_out: bool = True) -> None:
        p.add_argument("--dataset", required=True, help="line-delimited dataset file")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--mock", default=None, help="scripted-backend JSON file")
        if with_out:
            p.add_argument("--out", required=True, help="run output directory")

    p_decompose = sub.add_parser("decompose", help="populate and cache event atoms")
    common(p_decompose, with_out=False)
    p_decompose.add_argument("--level", default=None, help="GN, G10, G5, or n:<int>")
    p_decompose.add_argument("--out", default=None, help="write the decomposed dataset here")

    p_generate = sub.add_parser("generate", help="construct predicted timelines")
    common(p_generate)
    p_generate.add_argument("--level", required=True, help="GN, G10, G5, or n:<int>")
    p_generate.add_argument("--method", required=True, choices=[m.value for m in Method])
    p_generate.add_argument("--gold-timestamps", action="store_true")
    p_generate.add_argument(
        "--granularity-style",
        default="count",
        choices=["count", "prompt", "oneshot"],
    )

    p_evaluate = sub.add_parser("evaluate", help="score predictions against references")
    common(p_evaluate)
    p_evaluate.add_argument("--level", required=True, help="GN, G10, G5, or n:<int>")
    p_evaluate.add_argument("--predictions", required=True, help="directory of <topic>.txt")
    p_evaluate.add_argument("--method-label", default="", help="method label for the report")
    p_evaluate.add_argument("--model-label", default="", help="model label for the report")

    p_consensus = sub.add_parser("consensus", help="consensus-select top-N atom groups")
    common(p_consensus)
    p_consensus.add_argument("--n", type=int, required=True, help="groups to select")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        return _fail(f"bad config: {exc}")
    try:
        if args.command == "decompose":
            return cmd_decompose(args, config)
        if args.command == "generate":
            return cmd_generate(args, config)
        if args.command == "evaluate":
            return cmd_evaluate(args, config)
        if args.command == "consensus":
            return cmd_consensus(args, config)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    return _fail(f"unknown command {args.command!r}")


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
