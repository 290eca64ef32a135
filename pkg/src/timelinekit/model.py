"""Domain types for news timelines plus text parsing, serialization, and dataset IO.

The timeline text format is line-oriented: ``<index>. <yyyy-mm-dd>: <summary>``,
one node per line, UTF-8. Dataset files hold one JSON record per line with the
fields ``topic``, ``timelines`` and ``articles`` (see ``record_to_json_dict``).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .errors import (
    Diagnostic,
    EmptyArticlePoolError,
    NoValidNodesError,
    UndecomposedNodeError,
    UnreadableDatasetError,
)

# Canonical ordering for the standard annotation levels; unknown levels sort
# after these, alphabetically.
STANDARD_LEVELS = ("GN", "G10", "G5")

_NODE_LINE = re.compile(r"^(\d+)\.\s+(\d{4}-\d{2}-\d{2}):\s*(.*)$")


class TopicCategory(Enum):
    POLITICS = "Politics"
    ECONOMY = "Economy"
    SOCIETY = "Society"
    SCIENCE = "Science"
    TECHNOLOGY = "Technology"
    SPORTS = "Sports"
    ENTERTAINMENT = "Entertainment"
    UNKNOWN = "Unknown"

    @classmethod
    def from_label(cls, label: str) -> "TopicCategory":
        for member in cls:
            if member.value.lower() == label.strip().lower():
                return member
        return cls.UNKNOWN


def _collapse_whitespace(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class Topic:
    """A news topic: the query string everything else hangs off."""

    id: str
    query: str
    category: TopicCategory = TopicCategory.UNKNOWN

    def __post_init__(self) -> None:
        if not self.query.strip():
            raise ValueError("topic query must be non-empty")


@dataclass(frozen=True)
class Article:
    """A source news article with an ordered list of paragraphs."""

    id: str
    title: str
    source: str
    publish_date: date
    paragraphs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.publish_date, date):
            raise ValueError(f"article {self.id}: publish_date must be a date")
        object.__setattr__(self, "paragraphs", tuple(self.paragraphs))
        if not self.paragraphs and not self.title.strip():
            raise ValueError(f"article {self.id}: needs a title or content")


@dataclass(frozen=True)
class EventAtom:
    """The smallest distinguishable event unit of a sentence.

    One subject-predicate-object clause; whitespace is collapsed at
    construction so equal atoms compare equal regardless of spacing.
    """

    text: str

    def __post_init__(self) -> None:
        normalized = _collapse_whitespace(self.text)
        if not normalized:
            raise ValueError("event atom text must be non-empty")
        object.__setattr__(self, "text", normalized)


@dataclass(frozen=True)
class TimelineNode:
    """A dated summary, optionally decomposed into event atoms."""

    timestamp: date
    summary: str
    atoms: tuple[EventAtom, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.timestamp, date):
            raise ValueError("node timestamp must be a date")
        normalized = _collapse_whitespace(self.summary)
        if not normalized:
            raise ValueError("node summary must be non-empty")
        object.__setattr__(self, "summary", normalized)
        object.__setattr__(self, "atoms", tuple(self.atoms))

    @property
    def decomposed(self) -> bool:
        return bool(self.atoms)


@dataclass(frozen=True)
class Timeline:
    """An ordered sequence of dated summaries.

    Construction normalizes the node list: nodes are stably sorted by
    timestamp and nodes sharing a date are merged by concatenating their
    summaries (single space) and atom lists in encounter order. An empty
    node list is rejected.
    """

    topic_id: str
    nodes: tuple[TimelineNode, ...]
    granularity_label: str | None = None

    def __post_init__(self) -> None:
        nodes = list(self.nodes)
        if not nodes:
            raise ValueError("a timeline requires at least one node")
        nodes.sort(key=lambda n: n.timestamp)
        merged: list[TimelineNode] = []
        for node in nodes:
            if merged and merged[-1].timestamp == node.timestamp:
                prev = merged[-1]
                merged[-1] = TimelineNode(
                    timestamp=prev.timestamp,
                    summary=prev.summary + " " + node.summary,
                    atoms=prev.atoms + node.atoms,
                )
            else:
                merged.append(node)
        object.__setattr__(self, "nodes", tuple(merged))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def decomposed(self) -> bool:
        return all(node.decomposed for node in self.nodes)

    def timestamps(self) -> tuple[date, ...]:
        return tuple(node.timestamp for node in self.nodes)


@dataclass(frozen=True)
class AtomGroup:
    """All atoms of a timeline that share one timestamp."""

    group_id: str
    timestamp: date
    atoms: tuple[EventAtom, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ValueError(f"atom group {self.group_id} must hold atoms")


@dataclass(frozen=True)
class DatasetRecord:
    """One topic with its reference timelines per level and its article pool.

    The timeline mapping is wrapped read-only at construction so records are
    safe to share across concurrent workers.
    """

    topic: Topic
    reference_timelines: Mapping[str, Timeline]
    articles: tuple[Article, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "articles", tuple(self.articles))
        object.__setattr__(
            self, "reference_timelines", MappingProxyType(dict(self.reference_timelines))
        )
        if not self.reference_timelines:
            raise ValueError(f"record {self.topic.id}: no reference timelines")
        for level, timeline in self.reference_timelines.items():
            if not level:
                raise ValueError(f"record {self.topic.id}: empty level key")
            if len(timeline) < 1:
                raise ValueError(f"record {self.topic.id}: empty timeline at {level}")
        if not self.articles:
            raise ValueError(f"record {self.topic.id}: article pool is empty")

    @property
    def node_counts(self) -> dict[str, int]:
        return {level: len(t) for level, t in self.reference_timelines.items()}

    def levels(self) -> list[str]:
        return sort_levels(self.reference_timelines)


def sort_levels(levels: Iterable[str]) -> list[str]:
    """Order granularity levels canonically: GN, G10, G5, then others sorted."""

    def key(level: str) -> tuple[int, str]:
        try:
            return (STANDARD_LEVELS.index(level), "")
        except ValueError:
            return (len(STANDARD_LEVELS), level)

    return sorted(levels, key=key)


def parse_timeline_text(
    text: str,
    topic_id: str = "",
    granularity_label: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> Timeline:
    """Parse line-oriented timeline text into a normalized Timeline.

    Lines that do not match ``<index>. <yyyy-mm-dd>: <summary>`` are skipped
    and reported via ``diagnostics``; an invalid calendar date skips just that
    line. Raises NoValidNodesError when nothing parses.
    """
    nodes: list[TimelineNode] = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        match = _NODE_LINE.match(line)
        if match is None or not match.group(3).strip():
            _report(diagnostics, "skipped_line", f"line {line_no} skipped: {line!r}")
            continue
        try:
            timestamp = date.fromisoformat(match.group(2))
        except ValueError:
            _report(
                diagnostics,
                "invalid_date",
                f"line {line_no} skipped, invalid date {match.group(2)!r}",
            )
            continue
        nodes.append(TimelineNode(timestamp=timestamp, summary=match.group(3)))
    if not nodes:
        raise NoValidNodesError("no line parsed into a timeline node")
    return Timeline(topic_id=topic_id, nodes=tuple(nodes), granularity_label=granularity_label)


def serialize_timeline(timeline: Timeline) -> str:
    """Emit the numbered ``k. yyyy-mm-dd: summary`` form, one node per line."""
    return "\n".join(
        f"{index}. {node.timestamp.isoformat()}: {node.summary}"
        for index, node in enumerate(timeline.nodes, start=1)
    )


def select_support_articles(
    articles: Sequence[Article], timestamp: date, k: int
) -> list[Article]:
    """Pick the k articles published closest to ``timestamp``.

    Distance is whole days; ties break toward the earlier publish date, then
    the article id. Returns fewer than k only when the pool is smaller.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not articles:
        raise EmptyArticlePoolError(f"no articles to support {timestamp.isoformat()}")
    ranked = sorted(
        articles,
        key=lambda a: (abs((a.publish_date - timestamp).days), a.publish_date, a.id),
    )
    return ranked[:k]


def group_atoms_by_timestamp(timeline: Timeline) -> list[AtomGroup]:
    """One AtomGroup per distinct timestamp, chronological, atoms in node order.

    Group ids are ``G000``, ``G001``, ... in chronological order so the id
    ordering matches the timestamp ordering.
    """
    for index, node in enumerate(timeline.nodes):
        if not node.decomposed:
            raise UndecomposedNodeError(f"node {index} has no atoms")
    # Normalization guarantees unique timestamps, so one node is one group.
    return [
        AtomGroup(group_id=f"G{index:03d}", timestamp=node.timestamp, atoms=node.atoms)
        for index, node in enumerate(timeline.nodes)
    ]


# --- dataset records on disk -------------------------------------------------


def record_to_json_dict(record: DatasetRecord) -> dict:
    return {
        "topic": {
            "id": record.topic.id,
            "query": record.topic.query,
            "category": record.topic.category.value,
        },
        "timelines": {
            level: [
                {
                    "date": node.timestamp.isoformat(),
                    "summary": node.summary,
                    **({"atoms": [a.text for a in node.atoms]} if node.atoms else {}),
                }
                for node in timeline.nodes
            ]
            for level, timeline in record.reference_timelines.items()
        },
        "articles": [
            {
                "id": article.id,
                "title": article.title,
                "source": article.source,
                "publish_date": article.publish_date.isoformat(),
                "paragraphs": list(article.paragraphs),
            }
            for article in record.articles
        ],
    }


def record_from_json_dict(payload: dict) -> DatasetRecord:
    topic_raw = payload["topic"]
    topic = Topic(
        id=str(topic_raw["id"]),
        query=topic_raw["query"],
        category=TopicCategory.from_label(topic_raw.get("category", "Unknown")),
    )
    timelines: dict[str, Timeline] = {}
    for level, node_rows in payload["timelines"].items():
        nodes = tuple(
            TimelineNode(
                timestamp=date.fromisoformat(row["date"]),
                summary=row["summary"],
                atoms=tuple(EventAtom(a) for a in row.get("atoms", [])),
            )
            for row in node_rows
        )
        timelines[level] = Timeline(
            topic_id=topic.id, nodes=nodes, granularity_label=level
        )
    articles = tuple(
        Article(
            id=str(row["id"]),
            title=row.get("title", ""),
            source=row.get("source", ""),
            publish_date=date.fromisoformat(row["publish_date"]),
            paragraphs=tuple(row.get("paragraphs", [])),
        )
        for row in payload["articles"]
    )
    return DatasetRecord(topic=topic, reference_timelines=timelines, articles=articles)


def load_dataset(
    path: str | Path, diagnostics: list[Diagnostic] | None = None
) -> list[DatasetRecord]:
    """Load line-delimited dataset records, skipping malformed lines.

    Raises UnreadableDatasetError when the file cannot be read at all;
    per-record failures become ``malformed_record`` diagnostics.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableDatasetError(f"cannot read dataset {path}: {exc}") from exc
    records: list[DatasetRecord] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_json_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            _report(
                diagnostics,
                "malformed_record",
                f"line {line_no}: {exc}",
                {"line": line_no},
            )
    return records


def save_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    lines = [json.dumps(record_to_json_dict(r), ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _report(
    diagnostics: list[Diagnostic] | None,
    code: str,
    message: str,
    context: dict | None = None,
) -> None:
    if diagnostics is not None:
        diagnostics.append(Diagnostic(code=code, message=message, context=context or {}))
