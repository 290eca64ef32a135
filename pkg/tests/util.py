"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
from datetime import date, timedelta
from pathlib import Path

from timelinekit.model import (
    Article,
    DatasetRecord,
    Timeline,
    TimelineNode,
    Topic,
)

WORDS = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")


def plain_timeline(topic_id: str, start: date, summaries: list[str], label=None, step=4):
    nodes = tuple(
        TimelineNode(timestamp=start + timedelta(days=i * step), summary=s)
        for i, s in enumerate(summaries)
    )
    return Timeline(topic_id=topic_id, nodes=nodes, granularity_label=label)


def synthetic_record(topic_id: str = "t1", g5_count: int = 3) -> DatasetRecord:
    """A record whose G5 summaries appear verbatim in same-date articles and
    whose other levels are date- and atom-disjoint from G5."""
    g5_summaries = [f"{WORDS[i]} event unfolded in {topic_id}" for i in range(g5_count)]
    g5 = plain_timeline(topic_id, date(2023, 11, 1), g5_summaries, label="G5")
    g10 = plain_timeline(
        topic_id,
        date(2024, 2, 1),
        [f"medium {WORDS[i]} development in {topic_id}" for i in range(g5_count)],
        label="G10",
    )
    gn = plain_timeline(
        topic_id,
        date(2024, 6, 1),
        [f"fine {WORDS[i]} detail in {topic_id}" for i in range(g5_count + 1)],
        label="GN",
    )
    articles = tuple(
        Article(
            id=f"{topic_id}-a{i}",
            title=f"coverage of {WORDS[i]} in {topic_id}",
            source="wire",
            publish_date=node.timestamp,
            paragraphs=(node.summary,),
        )
        for i, node in enumerate(g5.nodes)
    )
    return DatasetRecord(
        topic=Topic(id=topic_id, query=f"story {topic_id}"),
        reference_timelines={"GN": gn, "G10": g10, "G5": g5},
        articles=articles,
    )


def write_dataset(path: Path, records) -> Path:
    from timelinekit.model import save_dataset

    save_dataset(records, path)
    return path


def judge_response(overall: int = 5) -> str:
    return json.dumps(
        {
            "paraphrase": "a faithful restatement",
            "structural": {"score": 3, "rationale": "uniform"},
            "linguistic": {"score": 3, "rationale": "clear"},
            "style": {"score": 3, "rationale": "consistent"},
            "overall": overall,
        }
    )
