"""Tests for event-atom decomposition backends, response parsing, and caching."""

from __future__ import annotations

import random
import re
from datetime import date

import pytest

from timelinekit.atoms import (
    PromptedDecomposer,
    RuleBasedDecomposer,
    ScriptedDecomposer,
    decompose,
    decompose_article,
    decompose_timeline,
    parse_decomposition_response,
    rule_based_decompose,
)
from timelinekit.cache import KeyedFileStore
from timelinekit.clients import ScriptedModelClient
from timelinekit.errors import (
    BackendUnavailableError,
    Diagnostic,
    UnparseableResponseError,
)
from timelinekit.model import Article, EventAtom, Timeline, TimelineNode


class TestResponseParsing:
    def test_plain_array(self):
        atoms = parse_decomposition_response('["a", "b"]')
        assert [a.text for a in atoms] == ["a", "b"]

    def test_prose_stripped(self):
        atoms = parse_decomposition_response('Here you go: ["a"]')
        assert [a.text for a in atoms] == ["a"]

    def test_no_array(self):
        with pytest.raises(UnparseableResponseError):
            parse_decomposition_response("no array here")

    def test_empty_after_filtering(self):
        with pytest.raises(UnparseableResponseError):
            parse_decomposition_response('["", "  "]')

    def test_skips_non_string_arrays(self):
        atoms = parse_decomposition_response('[1, 2] then ["real atom"]')
        assert [a.text for a in atoms] == ["real atom"]


class TestRuleBased:
    def test_semicolon_split(self):
        atoms = rule_based_decompose("A happened; B happened")
        assert [a.text for a in atoms] == ["A happened", "B happened"]

    def test_identity_case(self):
        atoms = rule_based_decompose("A happened")
        assert [a.text for a in atoms] == ["A happened"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rule_based_decompose("")

    def test_and_between_clauses(self):
        atoms = rule_based_decompose("John arrived at the station and met his friend.")
        assert [a.text for a in atoms] == ["John arrived at the station", "met his friend."]

    def test_and_inside_noun_pair_kept(self):
        atoms = rule_based_decompose("bread and butter sold out")
        assert [a.text for a in atoms] == ["bread and butter sold out"]

    def test_cjk_delimiters(self):
        atoms = rule_based_decompose("甲发生了，乙回应；丙结束")
        assert [a.text for a in atoms] == ["甲发生了", "乙回应", "丙结束"]

    def test_partition_property(self):
        # Atoms must appear in input order, non-overlapping, with only
        # delimiter material (";", "；", "，", "and", whitespace) between them.
        rng = random.Random(21)
        words = ["alpha", "storm", "court", "vote", "deal", "probe"]
        for _ in range(200):
            pieces = []
            for _ in range(rng.randint(1, 5)):
                pieces.append(" ".join(rng.choice(words) for _ in range(rng.randint(1, 4))))
                pieces.append(rng.choice(["; ", " and ", "， ", " then ", "；"]))
            sentence = "".join(pieces[:-1]).strip()
            if not sentence.strip():
                continue
            atoms = rule_based_decompose(sentence)
            normalized_input = " ".join(sentence.split())
            cursor = 0
            for atom in atoms:
                found = normalized_input.find(atom.text, cursor)
                assert found >= 0, (sentence, atom.text)
                gap = normalized_input[cursor:found]
                assert re.fullmatch(r"[\s;；，]*(and)?[\s;；，]*", gap), (sentence, gap)
                cursor = found + len(atom.text)
            tail = normalized_input[cursor:]
            assert re.fullmatch(r"[\s;；，]*", tail), (sentence, tail)


class TestScriptedAndPrompted:
    def test_prompted_decomposer_parses_model_output(self):
        client = ScriptedModelClient(
            responses=[
                '["Myanmar military imposes state of emergency", '
                '"State of emergency lasts for one year"]'
            ]
        )
        backend = PromptedDecomposer(client=client)
        atoms = backend.decompose_sentence(
            "Myanmar military: one-year state of emergency imposed"
        )
        assert [a.text for a in atoms] == [
            "Myanmar military imposes state of emergency",
            "State of emergency lasts for one year",
        ]
        system, user = client.requests[0]
        assert "atomic propositions" in system
        assert user == "Myanmar military: one-year state of emergency imposed"

    def test_single_clause_sentence(self):
        backend = ScriptedDecomposer(mapping={"X resigned.": ["X resigned."]})
        assert [a.text for a in backend.decompose_sentence("X resigned.")] == ["X resigned."]

    def test_protocol_style_subject_carrying_split(self):
        # A prompt-driven backend repeats the subject across clauses, unlike
        # the partition-preserving rule-based fallback.
        sentence = "John arrived at the station and met his friend."
        client = ScriptedModelClient(
            responses=['["John arrived at the station.", "John met his friend."]']
        )
        atoms = decompose(sentence, PromptedDecomposer(client=client))
        assert [a.text for a in atoms] == [
            "John arrived at the station.",
            "John met his friend.",
        ]

    def test_scripted_miss_raises(self):
        backend = ScriptedDecomposer(mapping={})
        with pytest.raises(BackendUnavailableError):
            backend.decompose_sentence("unknown")


class TestDecomposeWithCache:
    def test_cache_round_trip_single_invocation(self, tmp_path):
        cache = KeyedFileStore(tmp_path)
        backend = ScriptedDecomposer(mapping={"A happened": ["A happened"]})
        first = decompose("A happened", backend, cache=cache)
        second = decompose("A happened", backend, cache=cache)
        assert [a.text for a in first] == [a.text for a in second]
        assert backend.call_count == 1

    def test_cache_persists_across_stores(self, tmp_path):
        cache = KeyedFileStore(tmp_path)
        backend = ScriptedDecomposer(mapping={"A happened": ["A happened"]})
        decompose("A happened", backend, cache=cache)
        fresh_cache = KeyedFileStore(tmp_path)
        again = decompose("A happened", backend, cache=fresh_cache)
        assert [a.text for a in again] == ["A happened"]
        assert backend.call_count == 1

    def test_fallback_policy(self):
        backend = ScriptedDecomposer(mapping={})
        diags: list[Diagnostic] = []
        atoms = decompose("A happened; B happened", backend, fallback_to_rules=True, diagnostics=diags)
        assert [a.text for a in atoms] == ["A happened", "B happened"]
        assert diags[0].code == "decomposer_fallback"
        with pytest.raises(BackendUnavailableError):
            decompose("A happened", backend, fallback_to_rules=False)

    def test_never_empty(self):
        backend = RuleBasedDecomposer()
        for sentence in ["x", "a; b", "word and word", "；；x；；"]:
            assert decompose(sentence, backend)


def _timeline(*rows: tuple[str, str, tuple[str, ...]]) -> Timeline:
    return Timeline(
        topic_id="t",
        nodes=tuple(
            TimelineNode(
                timestamp=date.fromisoformat(iso),
                summary=summary,
                atoms=tuple(EventAtom(a) for a in atoms),
            )
            for iso, summary, atoms in rows
        ),
    )


class TestDecomposeTimeline:
    def test_all_cached_means_zero_calls(self, tmp_path):
        cache = KeyedFileStore(tmp_path)
        backend = ScriptedDecomposer(
            mapping={"A happened": ["A happened"], "B happened": ["B happened"]}
        )
        t = _timeline(("2023-11-01", "A happened", ()), ("2023-11-02", "B happened", ()))
        decompose_timeline(t, backend, cache=cache)
        assert backend.call_count == 2
        decompose_timeline(t, backend, cache=cache)
        assert backend.call_count == 2

    def test_partially_cached(self, tmp_path):
        cache = KeyedFileStore(tmp_path)
        backend = ScriptedDecomposer(
            mapping={
                "A happened": ["A happened"],
                "B happened": ["B happened"],
                "C happened": ["C happened"],
            }
        )
        decompose("B happened", backend, cache=cache)
        assert backend.call_count == 1
        t = _timeline(
            ("2023-11-01", "A happened", ()),
            ("2023-11-02", "B happened", ()),
            ("2023-11-03", "C happened", ()),
        )
        decompose_timeline(t, backend, cache=cache)
        assert backend.call_count == 3

    def test_idempotent_on_decomposed_nodes(self):
        backend = ScriptedDecomposer(mapping={})
        t = _timeline(("2023-11-01", "A happened", ("A happened",)))
        out = decompose_timeline(t, backend)
        assert out.nodes[0].atoms == t.nodes[0].atoms
        assert backend.call_count == 0

    def test_fallback_flags_failing_node(self):
        backend = ScriptedDecomposer(
            mapping={"A happened": ["A happened"], "C happened": ["C happened"]}
        )
        t = _timeline(
            ("2023-11-01", "A happened", ()),
            ("2023-11-02", "B happened; D happened", ()),
            ("2023-11-03", "C happened", ()),
        )
        diags: list[Diagnostic] = []
        out = decompose_timeline(t, backend, fallback_to_rules=True, diagnostics=diags)
        assert [a.text for a in out.nodes[1].atoms] == ["B happened", "D happened"]
        assert [d.context.get("node") for d in diags] == [1]
        assert out.decomposed

    def test_error_carries_node_index(self):
        backend = ScriptedDecomposer(mapping={"A happened": ["A happened"]})
        t = _timeline(("2023-11-01", "A happened", ()), ("2023-11-02", "B happened", ()))
        with pytest.raises(BackendUnavailableError, match="node 1"):
            decompose_timeline(t, backend)

    def test_concurrent_matches_sequential(self, tmp_path):
        mapping = {f"event {i} occurred": [f"event {i} occurred"] for i in range(12)}
        t = Timeline(
            topic_id="t",
            nodes=tuple(
                TimelineNode(timestamp=date(2023, 11, 1 + i), summary=f"event {i} occurred")
                for i in range(12)
            ),
        )
        seq = decompose_timeline(t, ScriptedDecomposer(mapping=dict(mapping)))
        par = decompose_timeline(t, ScriptedDecomposer(mapping=dict(mapping)), max_workers=4)
        assert seq == par


def test_decompose_article_covers_title_and_paragraphs():
    backend = RuleBasedDecomposer()
    article = Article(
        id="a1",
        title="Company discloses breach",
        source="wire",
        publish_date=date(2023, 11, 1),
        paragraphs=("Regulator responds; markets dip", ""),
    )
    atoms = decompose_article(article, backend)
    assert [a.text for a in atoms] == [
        "Company discloses breach",
        "Regulator responds",
        "markets dip",
    ]
