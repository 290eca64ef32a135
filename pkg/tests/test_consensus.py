"""Tests for role selection, consensus merging, and agreement statistics."""

from __future__ import annotations

import itertools
import random
from datetime import date, timedelta

import pytest

from timelinekit.clients import ScriptedModelClient
from timelinekit.consensus import (
    AgreementStats,
    ConsensusResult,
    Role,
    RoleSelection,
    agreement_stats,
    consensus_merge,
    format_agreement_table,
    load_edit_file,
    render_edit_file,
    role_select,
)
from timelinekit.errors import (
    Diagnostic,
    InsufficientGroupsError,
    NoValidNodesError,
    PadFailureError,
)
from timelinekit.model import AtomGroup, EventAtom


def group(gid: str, iso: str, atom_count: int) -> AtomGroup:
    return AtomGroup(
        group_id=gid,
        timestamp=date.fromisoformat(iso),
        atoms=tuple(EventAtom(f"{gid} atom {i}") for i in range(atom_count)),
    )


def groups_for(count: int, atoms_each: int = 1) -> list[AtomGroup]:
    return [
        group(f"G{i:03d}", (date(2023, 1, 1) + timedelta(days=i)).isoformat(), atoms_each)
        for i in range(count)
    ]


class TestRoleSelect:
    def test_valid_selection(self):
        groups = groups_for(6)
        client = ScriptedModelClient(responses=['["G000", "G002", "G004"]'])
        selection = role_select(groups, Role.NEWS_EDITOR, 3, client, topic="q")
        assert selection.selected == ("G000", "G002", "G004")
        system, user = client.requests[0]
        assert system.startswith("You are a specialized news editor.")
        assert "[G000] 2023-01-01" in user
        assert "top 3 event atom groups" in user

    def test_overlong_selection_truncated(self):
        groups = groups_for(6)
        client = ScriptedModelClient(
            responses=['["G000", "G001", "G002", "G003", "G004"]']
        )
        diags: list[Diagnostic] = []
        selection = role_select(
            groups, Role.JOURNALIST, 3, client, diagnostics=diags
        )
        assert selection.selected == ("G000", "G001", "G002")
        assert any(d.code == "selection_truncated" for d in diags)

    def test_unknown_id_dropped_then_reprompted(self):
        groups = groups_for(4)
        client = ScriptedModelClient(
            responses=['["G000", "G999"]', '["G001"]']
        )
        diags: list[Diagnostic] = []
        selection = role_select(
            groups, Role.NLP_RESEARCHER, 2, client, diagnostics=diags
        )
        assert selection.selected == ("G000", "G001")
        assert client.call_count == 2
        assert any(d.code == "unknown_group_id" for d in diags)

    def test_group_prefix_tolerated(self):
        groups = groups_for(3)
        client = ScriptedModelClient(responses=['["Group_G000", "[G001]"]'])
        selection = role_select(groups, Role.NEWS_EDITOR, 2, client)
        assert selection.selected == ("G000", "G001")

    def test_pad_failure_after_three_attempts(self):
        groups = groups_for(4)
        client = ScriptedModelClient(
            responses=['["G000"]', '["G000"]', '["G000"]']
        )
        with pytest.raises(PadFailureError):
            role_select(groups, Role.NEWS_EDITOR, 3, client)
        assert client.call_count == 3

    def test_insufficient_universe(self):
        with pytest.raises(InsufficientGroupsError):
            role_select(groups_for(2), Role.NEWS_EDITOR, 3, ScriptedModelClient(responses=[]))


def selections(*triples) -> list[RoleSelection]:
    roles = (Role.NEWS_EDITOR, Role.JOURNALIST, Role.NLP_RESEARCHER)
    return [RoleSelection(role=r, selected=tuple(ids)) for r, ids in zip(roles, triples)]


class TestConsensusMerge:
    def test_identical_selections(self):
        groups = groups_for(6)
        picks = ("G001", "G003", "G005")
        result = consensus_merge(selections(picks, picks, picks), groups, 3)
        assert set(result.final) == set(picks)
        assert all(result.provenance[g] == "three-vote" for g in result.final)

    def test_disjoint_selections_ranked_fill(self):
        # Nine one-vote groups; ranking is atom count desc, then earliest
        # timestamp, then id: G001(3), G004(3), G003(2) win.
        groups = [
            group("G000", "2023-01-01", 1),
            group("G001", "2023-01-02", 3),
            group("G002", "2023-01-03", 1),
            group("G003", "2023-01-04", 2),
            group("G004", "2023-01-05", 3),
            group("G005", "2023-01-06", 1),
            group("G006", "2023-01-07", 1),
            group("G007", "2023-01-08", 2),
            group("G008", "2023-01-09", 1),
        ]
        result = consensus_merge(
            selections(
                ("G000", "G001", "G002"),
                ("G003", "G004", "G005"),
                ("G006", "G007", "G008"),
            ),
            groups,
            3,
        )
        assert result.final == ("G001", "G004", "G003")
        assert all(result.provenance[g] == "fill" for g in result.final)

    def test_two_three_vote_plus_top_two_vote(self):
        groups = [
            group("A", "2023-01-01", 1),
            group("B", "2023-01-02", 2),
            group("C", "2023-01-03", 3),
            group("D", "2023-01-04", 1),
            group("E", "2023-01-05", 3),
            group("F", "2023-01-06", 2),
            group("G", "2023-01-07", 1),
        ]
        result = consensus_merge(
            selections(
                ("A", "B", "C", "D", "E"),
                ("A", "B", "C", "D", "F"),
                ("A", "B", "E", "F", "G"),
            ),
            groups,
            5,
        )
        assert result.final == ("B", "A", "C", "E", "F")
        assert result.provenance == {
            "B": "three-vote",
            "A": "three-vote",
            "C": "two-vote",
            "E": "two-vote",
            "F": "two-vote",
        }

    def test_three_vote_overflow_truncated_by_rank(self):
        groups = [
            group("A", "2023-01-05", 1),
            group("B", "2023-01-01", 1),
            group("C", "2023-01-02", 3),
        ]
        picks = ("A", "B", "C")
        result = consensus_merge(selections(picks, picks, picks), groups, 2)
        assert result.final == ("C", "B")

    def test_order_of_selections_irrelevant(self):
        groups = groups_for(8, atoms_each=2)
        base = selections(
            ("G000", "G001", "G002"), ("G001", "G002", "G003"), ("G002", "G004", "G005")
        )
        reference = consensus_merge(base, groups, 4)
        for perm in itertools.permutations(base):
            again = consensus_merge(list(perm), groups, 4)
            assert again.final == reference.final
            assert again.provenance == reference.provenance

    def test_universe_too_small(self):
        groups = groups_for(2)
        with pytest.raises(InsufficientGroupsError):
            consensus_merge(
                selections(("G000",), ("G001",), ("G000",)), groups, 3
            )


class TestAgreementStats:
    def test_identical_selections_full(self):
        ids = tuple(f"G{i:03d}" for i in range(10))
        stats = agreement_stats(selections(ids, ids, ids))
        assert stats.full == 10
        assert stats.total == 10
        assert stats.percentage(stats.full) == 100.0

    def test_pair_bucket(self):
        stats = agreement_stats(
            selections(("G000", "G001"), ("G000", "G002"), ("G003", "G004"))
        )
        # G000 by roles 1 and 2; everything else single-role.
        assert stats.partial_12 == 1
        assert stats.partial_13 == 0
        assert stats.partial_23 == 0
        assert stats.full == 0
        assert stats.none == 4

    def test_counts_sum_to_distinct_groups(self):
        rng = random.Random(61)
        universe = [f"G{i:03d}" for i in range(30)]
        for _ in range(50):
            sels = selections(
                tuple(rng.sample(universe, 8)),
                tuple(rng.sample(universe, 8)),
                tuple(rng.sample(universe, 8)),
            )
            stats = agreement_stats(sels)
            distinct = len(set().union(*(s.selected for s in sels)))
            assert stats.total == distinct

    def test_table_format_frozen(self):
        stats = AgreementStats(full=2, partial_12=1, partial_13=0, partial_23=0, none=1)
        expected = (
            "Agreement Type   Count  Percentage\n"
            "Full Agreement       2      50.00%\n"
            "Partial (1, 2)       1      25.00%\n"
            "Partial (1, 3)       0       0.00%\n"
            "Partial (2, 3)       0       0.00%\n"
            "No Agreement         1      25.00%"
        )
        assert format_agreement_table(stats) == expected


class TestEditFile:
    def test_round_trip(self):
        groups = [
            group("G000", "2023-01-01", 2),
            group("G001", "2023-01-05", 1),
        ]
        result = ConsensusResult(
            final=("G001", "G000"),
            provenance={"G001": "three-vote", "G000": "fill"},
        )
        text = render_edit_file("breach saga", groups, result)
        assert "# Topic: breach saga" in text
        assert "1. 2023-01-01: " in text
        assert "2. 2023-01-05: " in text
        with pytest.raises(NoValidNodesError):
            load_edit_file(text)  # unfilled skeleton has no summaries yet
        filled = text.replace("1. 2023-01-01: ", "1. 2023-01-01: first summary").replace(
            "2. 2023-01-05: ", "2. 2023-01-05: second summary"
        )
        timeline = load_edit_file(filled, topic_id="t1")
        assert [n.summary for n in timeline.nodes] == ["first summary", "second summary"]
