"""The four timeline quality metrics, per-topic evaluation, and aggregation.

Informativeness averages mounted info scores over the predicted node count;
granular consistency mounts predicted edges into the pooled reference edges
of every annotated level and counts hits on the requested level; factuality
averages per-node entailment precision against the timestamp-nearest support
articles; coherence runs a three-step review form through a judge model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .atoms import DecomposerBackend, decompose_article, decompose_timeline
from .cache import KeyedFileStore
from .clients import ModelClient
from .entail import EntailmentBackend, entailment_precision
from .errors import (
    Diagnostic,
    EmptyArticlePoolError,
    EmptyInputError,
    ModelError,
    TimelineKitError,
    UnparseableResponseError,
)
from .model import (
    Article,
    DatasetRecord,
    Timeline,
    select_support_articles,
    serialize_timeline,
    sort_levels,
)
from .mount import (
    build_edge_pool,
    build_edges,
    node_cost_matrix,
    solve_assignment,
    solve_edge_assignment,
)
from .templates import fill, load_template


@dataclass(frozen=True)
class Undefined:
    """A metric value that could not be computed, with the reason why."""

    reason: str


def informativeness(
    pred: Timeline,
    ref: Timeline,
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
) -> float:
    """Mean mounted info score over the predicted node count.

    Unmatched predicted nodes contribute zero, so verbosity dilutes the
    score instead of inflating it.
    """
    matrix = node_cost_matrix(pred, ref, backend, cache=cache)
    assignment = solve_assignment(matrix)
    return sum(score for _, _, score in assignment.pairs) / len(pred.nodes)


def granular_consistency(
    pred: Timeline,
    reference_timelines: Mapping[str, Timeline],
    target_level: str,
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
    denominator: str = "predicted",
) -> float | Undefined:
    """Fraction of predicted edges mounted onto the requested level's edges.

    The reference pool concatenates the edges of every annotated level.
    Zero-score matches do not count as hits. ``denominator`` selects the
    predicted edge count (default) or the target level's reference edge
    count for comparability studies.
    """
    if target_level not in reference_timelines:
        return Undefined(f"level missing: {target_level}")
    if len(pred.nodes) < 2:
        return Undefined("no edges")
    pool = build_edge_pool(reference_timelines)
    if not pool:
        return Undefined("no reference edges")
    pred_edges = build_edges(pred)
    assignment = solve_edge_assignment(pred_edges, pool, backend, cache=cache)
    hits = sum(
        1
        for _, j, score in assignment.pairs
        if score > 0.0 and pool[j].granularity_label == target_level
    )
    if denominator == "reference":
        base = len(build_edges(reference_timelines[target_level]))
        if base == 0:
            return Undefined("target level has no edges")
    elif denominator == "predicted":
        base = len(pred_edges)
    else:
        raise ValueError(f"unknown denominator mode {denominator!r}")
    return hits / base


def factuality(
    pred: Timeline,
    articles: Sequence[Article],
    k: int,
    decomposer: DecomposerBackend,
    backend: EntailmentBackend,
    atom_cache: KeyedFileStore | None = None,
    verdict_cache: KeyedFileStore | None = None,
    fallback_to_rules: bool = True,
    diagnostics: list[Diagnostic] | None = None,
) -> float:
    """Mean per-node entailment precision against the atoms of the k
    articles published closest to each node's timestamp."""
    support_atoms_by_id: dict[str, list] = {}
    total = 0.0
    for index, node in enumerate(pred.nodes):
        try:
            support = select_support_articles(articles, node.timestamp, k)
        except EmptyArticlePoolError:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        code="empty_article_pool",
                        message=f"node {index}: no support articles",
                        context={"node": index},
                    )
                )
            continue
        evidence = []
        for article in support:
            if article.id not in support_atoms_by_id:
                support_atoms_by_id[article.id] = decompose_article(
                    article,
                    decomposer,
                    cache=atom_cache,
                    fallback_to_rules=fallback_to_rules,
                    diagnostics=diagnostics,
                )
            evidence.extend(support_atoms_by_id[article.id])
        total += entailment_precision(
            node.atoms, evidence, backend, cache=verdict_cache, diagnostics=diagnostics
        )
    return total / len(pred.nodes)


@dataclass(frozen=True)
class CoherenceReport:
    """Parsed judge review: paraphrase, three 1-3 aspect ratings, one 1-5
    overall score, and its [0, 100] normalization."""

    paraphrase: str
    structural: int
    linguistic: int
    style: int
    overall: int
    normalized: float
    rationales: dict[str, str] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "paraphrase": self.paraphrase,
            "structural": self.structural,
            "linguistic": self.linguistic,
            "style": self.style,
            "overall": self.overall,
            "normalized": self.normalized,
            "rationales": dict(self.rationales),
        }


def normalize_overall(overall: int) -> float:
    """Affine map of the 1-5 overall score onto [0, 100]."""
    return (overall - 1) / 4 * 100.0


def _as_int(value) -> int:
    if isinstance(value, bool):
        raise UnparseableResponseError("boolean where integer score expected")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise UnparseableResponseError(f"not an integer score: {value!r}")


def _clamp(
    value: int,
    low: int,
    high: int,
    label: str,
    diagnostics: list[Diagnostic] | None,
) -> int:
    if low <= value <= high:
        return value
    clamped = min(max(value, low), high)
    if diagnostics is not None:
        diagnostics.append(
            Diagnostic(
                code="clamped_score",
                message=f"{label} score {value} clamped to {clamped}",
                context={"aspect": label, "raw": value},
            )
        )
    return clamped


def parse_coherence_response(
    text: str, diagnostics: list[Diagnostic] | None = None
) -> CoherenceReport:
    """Parse the judge's JSON review; out-of-range integers are clamped."""
    decoder = json.JSONDecoder()
    payload = None
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            candidate, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, dict):
            payload = candidate
            break
    if payload is None:
        raise UnparseableResponseError(f"no JSON object in judge response: {text[:120]!r}")
    try:
        aspects = {}
        rationales = {}
        for aspect in ("structural", "linguistic", "style"):
            raw = payload[aspect]
            if isinstance(raw, dict):
                aspects[aspect] = _as_int(raw["score"])
                rationales[aspect] = str(raw.get("rationale", ""))
            else:
                aspects[aspect] = _as_int(raw)
                rationales[aspect] = ""
        overall = _as_int(payload["overall"])
        paraphrase = str(payload.get("paraphrase", ""))
    except KeyError as exc:
        raise UnparseableResponseError(f"judge response missing {exc}") from exc
    aspects = {
        name: _clamp(value, 1, 3, name, diagnostics) for name, value in aspects.items()
    }
    overall = _clamp(overall, 1, 5, "overall", diagnostics)
    return CoherenceReport(
        paraphrase=paraphrase,
        structural=aspects["structural"],
        linguistic=aspects["linguistic"],
        style=aspects["style"],
        overall=overall,
        normalized=normalize_overall(overall),
        rationales=rationales,
    )


def coherence(
    pred: Timeline,
    judge: ModelClient,
    exemplar: str = "",
    language: str = "en",
    template_dir: str | None = None,
    max_attempts: int = 3,
    diagnostics: list[Diagnostic] | None = None,
) -> CoherenceReport | Undefined:
    """Run the three-step review form through the judge model.

    Unparseable responses are re-prompted up to twice; after that the metric
    is Undefined. Judge transport failures are Undefined immediately.
    """
    system = fill(load_template("judge_system", language, template_dir), example=exemplar)
    user = serialize_timeline(pred)
    for attempt in range(max_attempts):
        try:
            response = judge.complete(system, user, job_id=f"coherence:{pred.topic_id}")
        except ModelError as exc:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(code="judge_error", message=str(exc))
                )
            return Undefined("judge unavailable")
        try:
            return parse_coherence_response(response, diagnostics=diagnostics)
        except UnparseableResponseError as exc:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        code="judge_unparseable",
                        message=f"attempt {attempt + 1}: {exc}",
                        context={"attempt": attempt + 1},
                    )
                )
    return Undefined("judge response unparseable after re-prompts")


@dataclass
class EvalBackends:
    """Everything evaluate_topic needs to talk to the outside world."""

    decomposer: DecomposerBackend
    entailment: EntailmentBackend
    judge: ModelClient | None = None
    atom_cache: KeyedFileStore | None = None
    verdict_cache: KeyedFileStore | None = None


@dataclass(frozen=True)
class MetricReport:
    """Per-(topic, level) metric values plus diagnostics."""

    topic_id: str
    granularity_level: str
    info: float | Undefined
    granu: float | Undefined
    fact: float | Undefined
    coherence: CoherenceReport | Undefined
    diagnostics: tuple[Diagnostic, ...] = ()
    method: str = ""
    model: str = ""

    def to_json_dict(self) -> dict:
        def value_of(metric) -> dict | float:
            if isinstance(metric, Undefined):
                return {"undefined": metric.reason}
            if isinstance(metric, CoherenceReport):
                return metric.to_json_dict()
            return metric

        return {
            "topic_id": self.topic_id,
            "level": self.granularity_level,
            "method": self.method,
            "model": self.model,
            "info": value_of(self.info),
            "granu": value_of(self.granu),
            "fact": value_of(self.fact),
            "coherence": value_of(self.coherence),
            "diagnostics": [d.to_json_dict() for d in self.diagnostics],
        }


def evaluate_topic(
    record: DatasetRecord,
    pred: Timeline,
    target_level: str,
    backends: EvalBackends,
    factuality_k: int = 5,
    fallback_to_rules: bool = True,
    granu_denominator: str = "predicted",
    coherence_exemplar: str = "",
    language: str = "en",
    template_dir: str | None = None,
    method: str = "",
    model: str = "",
) -> MetricReport:
    """Run decomposition and all four metrics; failures in one metric do not
    abort the others."""
    diagnostics: list[Diagnostic] = []

    def decompose_safely(timeline: Timeline, label: str) -> Timeline | None:
        try:
            return decompose_timeline(
                timeline,
                backends.decomposer,
                cache=backends.atom_cache,
                fallback_to_rules=fallback_to_rules,
                diagnostics=diagnostics,
            )
        except TimelineKitError as exc:
            diagnostics.append(
                Diagnostic(
                    code="decomposition_failed",
                    message=f"{label}: {exc}",
                    context={"timeline": label},
                )
            )
            return None

    pred_ready = decompose_safely(pred, "prediction")
    references: dict[str, Timeline] = {}
    for level in sort_levels(record.reference_timelines):
        ready = decompose_safely(record.reference_timelines[level], f"reference {level}")
        if ready is not None:
            references[level] = ready

    info: float | Undefined
    granu: float | Undefined
    fact: float | Undefined
    if pred_ready is None:
        info = Undefined("prediction decomposition failed")
        granu = Undefined("prediction decomposition failed")
        fact = Undefined("prediction decomposition failed")
    else:
        if target_level not in references:
            info = Undefined(f"level missing: {target_level}")
        else:
            try:
                info = informativeness(
                    pred_ready,
                    references[target_level],
                    backends.entailment,
                    cache=backends.verdict_cache,
                )
            except TimelineKitError as exc:
                diagnostics.append(Diagnostic(code="info_failed", message=str(exc)))
                info = Undefined(str(exc))
        try:
            granu = granular_consistency(
                pred_ready,
                references,
                target_level,
                backends.entailment,
                cache=backends.verdict_cache,
                denominator=granu_denominator,
            )
        except TimelineKitError as exc:
            diagnostics.append(Diagnostic(code="granu_failed", message=str(exc)))
            granu = Undefined(str(exc))
        try:
            fact = factuality(
                pred_ready,
                record.articles,
                factuality_k,
                backends.decomposer,
                backends.entailment,
                atom_cache=backends.atom_cache,
                verdict_cache=backends.verdict_cache,
                fallback_to_rules=fallback_to_rules,
                diagnostics=diagnostics,
            )
        except TimelineKitError as exc:
            diagnostics.append(Diagnostic(code="fact_failed", message=str(exc)))
            fact = Undefined(str(exc))

    if backends.judge is None:
        coherence_value: CoherenceReport | Undefined = Undefined("no judge configured")
    else:
        coherence_value = coherence(
            pred,
            backends.judge,
            exemplar=coherence_exemplar,
            language=language,
            template_dir=template_dir,
            diagnostics=diagnostics,
        )

    return MetricReport(
        topic_id=record.topic.id,
        granularity_level=target_level,
        info=info,
        granu=granu,
        fact=fact,
        coherence=coherence_value,
        diagnostics=tuple(diagnostics),
        method=method,
        model=model,
    )


# --- aggregation --------------------------------------------------------------


@dataclass(frozen=True)
class AggregateRow:
    method: str
    model: str
    level: str
    info_mean: float | None
    granu_mean: float | None
    fact_mean: float | None
    coherence_mean: float | None
    topic_count: int
    undefined_counts: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "model": self.model,
            "level": self.level,
            "info": self.info_mean,
            "granu": self.granu_mean,
            "fact": self.fact_mean,
            "coherence": self.coherence_mean,
            "topics": self.topic_count,
            "undefined": dict(self.undefined_counts),
        }


@dataclass(frozen=True)
class AggregateReport:
    rows: tuple[AggregateRow, ...]

    def to_json_dict(self) -> dict:
        return {"rows": [row.to_json_dict() for row in self.rows]}


def aggregate(
    reports: Sequence[MetricReport],
    group_key: Callable[[MetricReport], tuple[str, str, str]] | None = None,
) -> AggregateReport:
    """Mean of each metric (x100 for the unit-interval ones) per
    (method, model, level) group; Undefined values are excluded from means
    and counted instead."""
    if not reports:
        raise EmptyInputError("no reports to aggregate")
    if group_key is None:
        group_key = lambda r: (r.method, r.model, r.granularity_level)
    groups: dict[tuple[str, str, str], list[MetricReport]] = {}
    for report in reports:
        groups.setdefault(group_key(report), []).append(report)

    def mean_of(values: list[float]) -> float | None:
        return sum(values) / len(values) if values else None

    rows = []
    for key in sorted(groups):
        method, model, level = key
        members = groups[key]
        defined: dict[str, list[float]] = {"info": [], "granu": [], "fact": [], "coherence": []}
        undefined = {"info": 0, "granu": 0, "fact": 0, "coherence": 0}
        for report in members:
            for name, value in (
                ("info", report.info),
                ("granu", report.granu),
                ("fact", report.fact),
            ):
                if isinstance(value, Undefined):
                    undefined[name] += 1
                else:
                    defined[name].append(value * 100.0)
            if isinstance(report.coherence, Undefined):
                undefined["coherence"] += 1
            else:
                defined["coherence"].append(report.coherence.normalized)
        rows.append(
            AggregateRow(
                method=method,
                model=model,
                level=level,
                info_mean=mean_of(defined["info"]),
                granu_mean=mean_of(defined["granu"]),
                fact_mean=mean_of(defined["fact"]),
                coherence_mean=mean_of(defined["coherence"]),
                topic_count=len(members),
                undefined_counts={k: v for k, v in undefined.items() if v},
            )
        )
    return AggregateReport(rows=tuple(rows))


def format_aggregate_table(report: AggregateReport) -> str:
    """Render the aggregate as a fixed-width text table, two decimals."""
    header = ("Method", "Model", "Level", "Info", "Granu", "Fact", "Coherence", "Topics", "Undefined")

    def cell(value: float | None) -> str:
        return "-" if value is None else f"{value:.2f}"

    body = []
    for row in report.rows:
        undefined = (
            ",".join(f"{k}:{v}" for k, v in sorted(row.undefined_counts.items()))
            if row.undefined_counts
            else "-"
        )
        body.append(
            (
                row.method or "-",
                row.model or "-",
                row.level,
                cell(row.info_mean),
                cell(row.granu_mean),
                cell(row.fact_mean),
                cell(row.coherence_mean),
                str(row.topic_count),
                undefined,
            )
        )
    widths = [
        max(len(header[i]), *(len(line[i]) for line in body)) if body else len(header[i])
        for i in range(len(header))
    ]
    lines = ["  ".join(header[i].ljust(widths[i]) for i in range(len(header))).rstrip()]
    for line in body:
        lines.append("  ".join(line[i].ljust(widths[i]) for i in range(len(header))).rstrip())
    return "\n".join(lines)
