"""Timeline generation: long-context prompting, hierarchical merging,
topic-only generation, gold-timestamp injection, granularity instructions,
and article truncation.

All model traffic goes through a ModelClient, so every pipeline is
deterministic end to end when driven by a scripted client.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import date
from enum import Enum
from typing import Callable, Sequence

from .clients import ModelClient
from .errors import (
    BudgetTooSmallError,
    Diagnostic,
    MissingReferenceError,
    ModelError,
    NoValidNodesError,
)
from .model import Article, Timeline, Topic, parse_timeline_text, serialize_timeline
from .templates import load_template

LengthFn = Callable[[str], int]


def char_length(text: str) -> int:
    """Default length function: character count."""
    return len(text)


class Method(Enum):
    LP = "lp"
    HM = "hm"
    TO = "to"


@dataclass(frozen=True)
class NodeCount:
    """Granularity by explicit node count."""

    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("node count must be >= 1")


@dataclass(frozen=True)
class PromptInstruction:
    """Granularity by natural-language instruction: fine or coarse."""

    fineness: str

    def __post_init__(self) -> None:
        if self.fineness not in ("fine", "coarse"):
            raise ValueError("fineness must be 'fine' or 'coarse'")


@dataclass(frozen=True)
class OneShotExemplar:
    """Granularity by example: generate a timeline shaped like this one."""

    exemplar: Timeline


GranularitySpec = NodeCount | PromptInstruction | OneShotExemplar


def render_granularity_instruction(spec: GranularitySpec, task_prompt: str) -> str:
    """Instantiate the task prompt for the requested granularity.

    A node count fills the prompt's ``{N}`` slot; instruction and one-shot
    styles prepend their phrasing and leave the count arbitrary.
    """
    if isinstance(spec, NodeCount):
        return task_prompt.replace("{N}", str(spec.count))
    if isinstance(spec, PromptInstruction):
        return (
            f"Please generate a {spec.fineness}-grained timeline.\n"
            + task_prompt.replace("{N}", "N")
        )
    if isinstance(spec, OneShotExemplar):
        return (
            "Please generate a timeline like:\n"
            + serialize_timeline(spec.exemplar)
            + "\n"
            + task_prompt.replace("{N}", "N")
        )
    raise TypeError(f"unknown granularity spec: {spec!r}")


@dataclass(frozen=True)
class GenerationJob:
    """One timeline-construction request."""

    method: Method
    topic: Topic
    granularity: GranularitySpec
    articles: tuple[Article, ...] = ()
    gold_timestamps: bool = False
    reference: Timeline | None = None
    length_budget: int = 20000
    language: str = "en"

    def __post_init__(self) -> None:
        object.__setattr__(self, "articles", tuple(self.articles))
        if self.method is Method.TO and self.articles:
            raise ValueError("topic-only jobs must not carry articles")
        if self.gold_timestamps and self.reference is None:
            raise MissingReferenceError("gold timestamps require a reference timeline")
        if self.length_budget < 1:
            raise ValueError("length budget must be positive")

    @property
    def job_id(self) -> str:
        return f"{self.method.value}:{self.topic.id}"


def apply_gold_timestamps(job: GenerationJob, reference: Timeline | None) -> GenerationJob:
    """Return a copy of the job that injects the reference's timestamps."""
    if reference is None:
        raise MissingReferenceError("gold timestamps require a reference timeline")
    return replace(job, gold_timestamps=True, reference=reference)


def _gold_block(reference: Timeline) -> str:
    dates = "\n".join(f"- {d.isoformat()}" for d in reference.timestamps())
    return (
        "## Required timestamps:\nThe timeline must use exactly these timestamps:\n"
        + dates
    )


def _check_gold_dates(
    timeline: Timeline, reference: Timeline, diagnostics: list[Diagnostic] | None
) -> None:
    if diagnostics is None:
        return
    allowed = set(reference.timestamps())
    for node in timeline.nodes:
        if node.timestamp not in allowed:
            diagnostics.append(
                Diagnostic(
                    code="gold_date_mismatch",
                    message=f"emitted {node.timestamp.isoformat()} not in the gold list",
                )
            )


# --- article truncation -------------------------------------------------------


def _article_length(article: Article, length_fn: LengthFn) -> int:
    return length_fn(article.title) + sum(length_fn(p) for p in article.paragraphs)


def truncate_articles(
    articles: Sequence[Article], budget: int, length_fn: LengthFn = char_length
) -> list[Article]:
    """Drop trailing paragraphs from the longest articles until the total
    length fits the budget.

    Titles are never removed; an article may end up title-only. Raises
    BudgetTooSmallError when the titles alone exceed the budget.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    titles_total = sum(length_fn(a.title) for a in articles)
    if titles_total > budget:
        raise BudgetTooSmallError(
            f"titles alone measure {titles_total}, over the budget {budget}"
        )
    paragraphs = [list(a.paragraphs) for a in articles]
    lengths = [_article_length(a, length_fn) for a in articles]
    total = sum(lengths)
    while total > budget:
        candidate = -1
        for index, parts in enumerate(paragraphs):
            if parts and (candidate < 0 or lengths[index] > lengths[candidate]):
                candidate = index
        # titles_total <= budget guarantees some paragraph remains to drop
        removed = paragraphs[candidate].pop()
        lengths[candidate] -= length_fn(removed)
        total -= length_fn(removed)
    return [
        replace(article, paragraphs=tuple(parts))
        for article, parts in zip(articles, paragraphs)
    ]


def format_articles_block(articles: Sequence[Article]) -> str:
    blocks = []
    for index, article in enumerate(articles):
        blocks.append(
            f"[Article {index}]\n"
            f"Title: {article.title}\n"
            f"Release-time: {article.publish_date.isoformat()}\n"
            f"Content: " + "\n".join(article.paragraphs)
        )
    return "\n".join(blocks)


def _topic_block(topic: Topic) -> str:
    return f"[Topic]\n{topic.query}"


# --- generation methods -------------------------------------------------------


def _single_call_generate(
    job: GenerationJob,
    client: ModelClient,
    template_name: str,
    with_articles: bool,
    length_fn: LengthFn,
    template_dir: str | None,
    diagnostics: list[Diagnostic] | None,
) -> Timeline:
    task = load_template(template_name, job.language, template_dir)
    system = render_granularity_instruction(job.granularity, task)
    if job.gold_timestamps and job.reference is not None:
        system = system + "\n" + _gold_block(job.reference)
    user = _topic_block(job.topic)
    if with_articles:
        trimmed = truncate_articles(job.articles, job.length_budget, length_fn)
        user = user + "\n" + format_articles_block(trimmed)
    response = client.complete(system, user, job_id=job.job_id)
    timeline = parse_timeline_text(
        response, topic_id=job.topic.id, diagnostics=diagnostics
    )
    if job.gold_timestamps and job.reference is not None:
        _check_gold_dates(timeline, job.reference, diagnostics)
    return timeline


def lp_generate(
    job: GenerationJob,
    client: ModelClient,
    length_fn: LengthFn = char_length,
    template_dir: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> Timeline:
    """Long-context prompting: one call with the full truncated article set."""
    if job.method is not Method.LP:
        raise ValueError("lp_generate requires an LP job")
    return _single_call_generate(
        job, client, "lp_system", True, length_fn, template_dir, diagnostics
    )


def to_generate(
    job: GenerationJob,
    client: ModelClient,
    template_dir: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> Timeline:
    """Topic-only generation: no article text reaches the model."""
    if job.method is not Method.TO:
        raise ValueError("to_generate requires a TO job")
    return _single_call_generate(
        job, client, "to_system", False, char_length, template_dir, diagnostics
    )


def _day_batches(
    articles: Sequence[Article],
    budget: int,
    length_fn: LengthFn,
    diagnostics: list[Diagnostic] | None,
) -> list[tuple[date, list[Article]]]:
    """All articles sharing a publish date form one batch; a batch whose
    titles alone exceed the budget is halved recursively."""
    by_date: dict[date, list[Article]] = {}
    for article in articles:
        by_date.setdefault(article.publish_date, []).append(article)

    batches: list[tuple[date, list[Article]]] = []

    def place(day: date, group: list[Article]) -> None:
        titles = sum(length_fn(a.title) for a in group)
        if titles <= budget:
            batches.append((day, group))
            return
        if len(group) == 1:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        code="batch_skipped",
                        message=f"article {group[0].id} title exceeds the budget",
                    )
                )
            return
        middle = len(group) // 2
        place(day, group[:middle])
        place(day, group[middle:])

    for day in sorted(by_date):
        place(day, by_date[day])
    return batches


def hm_day_summaries(
    job: GenerationJob,
    client: ModelClient,
    length_fn: LengthFn = char_length,
    template_dir: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> list[Timeline]:
    """One partial timeline per date batch; failed batches are skipped with
    diagnostics rather than aborting the topic."""
    if job.method is not Method.HM:
        raise ValueError("hm_day_summaries requires an HM job")
    task = load_template("hm_day_system", job.language, template_dir).replace("{N}", "N")
    partials: list[Timeline] = []
    for day, group in _day_batches(job.articles, job.length_budget, length_fn, diagnostics):
        try:
            trimmed = truncate_articles(group, job.length_budget, length_fn)
            user = _topic_block(job.topic) + "\n" + format_articles_block(trimmed)
            response = client.complete(
                system=task, user=user, job_id=f"{job.job_id}:day:{day.isoformat()}"
            )
            partials.append(
                parse_timeline_text(response, topic_id=job.topic.id, diagnostics=diagnostics)
            )
        except (ModelError, NoValidNodesError, BudgetTooSmallError) as exc:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        code="batch_failed",
                        message=f"day {day.isoformat()}: {exc}",
                        context={"day": day.isoformat()},
                    )
                )
    return partials


def merge_call_count(partials: int, fan_in: int) -> int:
    """Closed form for the number of model calls hm_merge will issue."""
    if partials <= fan_in:
        return 1
    return math.ceil(partials / fan_in) + 1


def hm_merge(
    partials: Sequence[Timeline],
    job: GenerationJob,
    client: ModelClient,
    fan_in: int = 4,
    template_dir: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> Timeline:
    """Merge partial timelines bottom-up.

    When the partial count exceeds the fan-in, one grouping pass merges
    fan-in-sized chunks (the trailing chunk may be smaller); the final merge
    then combines the stage results and applies the granularity instruction.
    """
    if fan_in < 2:
        raise ValueError("fan-in must be at least 2")
    if not partials:
        raise NoValidNodesError("no partial timelines to merge")
    template = load_template("hm_merge_system", job.language, template_dir)

    def merge_group(group: Sequence[Timeline], final: bool, stage_id: str) -> Timeline:
        if final:
            system = render_granularity_instruction(job.granularity, template)
            if job.gold_timestamps and job.reference is not None:
                system = system + "\n" + _gold_block(job.reference)
        else:
            system = template.replace("{N}", "N")
        user = _topic_block(job.topic) + "\n" + "\n".join(
            f"[Timeline {i}]\n{serialize_timeline(t)}" for i, t in enumerate(group)
        )
        response = client.complete(system, user, job_id=f"{job.job_id}:{stage_id}")
        return parse_timeline_text(response, topic_id=job.topic.id, diagnostics=diagnostics)

    work = list(partials)
    if len(work) > fan_in:
        staged = []
        for start in range(0, len(work), fan_in):
            group = work[start : start + fan_in]
            staged.append(merge_group(group, final=False, stage_id=f"merge:{start // fan_in}"))
        work = staged
    merged = merge_group(work, final=True, stage_id="merge:final")
    if job.gold_timestamps and job.reference is not None:
        _check_gold_dates(merged, job.reference, diagnostics)
    return merged


def generate(
    job: GenerationJob,
    client: ModelClient,
    fan_in: int = 4,
    length_fn: LengthFn = char_length,
    template_dir: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> Timeline:
    """Dispatch a job to its pipeline and return the normalized timeline."""
    if job.method is Method.LP:
        return lp_generate(job, client, length_fn, template_dir, diagnostics)
    if job.method is Method.TO:
        return to_generate(job, client, template_dir, diagnostics)
    partials = hm_day_summaries(job, client, length_fn, template_dir, diagnostics)
    if not partials:
        raise NoValidNodesError("every day batch failed")
    return hm_merge(partials, job, client, fan_in, template_dir, diagnostics)
