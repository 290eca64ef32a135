"""Consensus-based reference annotation: three role-conditioned selections
of the top-N atom groups, the deterministic merge rule, agreement
statistics, and the expert edit-file workflow."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .atoms import extract_string_array
from .clients import ModelClient
from .errors import (
    Diagnostic,
    InsufficientGroupsError,
    NoValidNodesError,
    PadFailureError,
    UnparseableResponseError,
)
from .model import AtomGroup, Timeline, parse_timeline_text
from .templates import fill, load_template


class Role(Enum):
    NEWS_EDITOR = "news_editor"
    JOURNALIST = "journalist"
    NLP_RESEARCHER = "nlp_researcher"


# Canonical 1/2/3 indices used by the agreement buckets.
ROLE_INDEX = {Role.NEWS_EDITOR: 1, Role.JOURNALIST: 2, Role.NLP_RESEARCHER: 3}

_ROLE_TEMPLATES = {
    Role.NEWS_EDITOR: "role_news_editor",
    Role.JOURNALIST: "role_journalist",
    Role.NLP_RESEARCHER: "role_nlp_researcher",
}


@dataclass(frozen=True)
class RoleSelection:
    """An ordered selection of group ids made under one role."""

    role: Role
    selected: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "selected", tuple(self.selected))
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selected group ids must be unique")


def render_groups(groups: Sequence[AtomGroup]) -> str:
    lines = []
    for group in groups:
        atoms = "; ".join(a.text for a in group.atoms)
        lines.append(f"[{group.group_id}] {group.timestamp.isoformat()}: {atoms}")
    return "\n".join(lines)


def _resolve_group_ref(ref: str, known: set[str]) -> str | None:
    candidate = ref.strip().strip("[]")
    if candidate in known:
        return candidate
    if candidate.startswith("Group_") and candidate[len("Group_") :] in known:
        return candidate[len("Group_") :]
    return None


def role_select(
    atom_groups: Sequence[AtomGroup],
    role: Role,
    n: int,
    client: ModelClient,
    topic: str = "",
    example: str = "",
    language: str = "en",
    template_dir: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> RoleSelection:
    """Ask the role-conditioned model for its top-n groups.

    Hallucinated ids are dropped with diagnostics; short selections trigger
    up to two re-prompts that pad with newly seen valid ids, after which
    PadFailureError is raised.
    """
    if len(atom_groups) < n:
        raise InsufficientGroupsError(
            f"{len(atom_groups)} groups available, {n} requested"
        )
    known = {g.group_id for g in atom_groups}
    prompt = fill(
        load_template(_ROLE_TEMPLATES[role], language, template_dir),
        N=str(n),
        topic=topic,
        groups=render_groups(atom_groups),
        example=example,
    )
    system, _, user = prompt.partition("\n")
    chosen: list[str] = []
    for attempt in range(3):
        response = client.complete(system, user, job_id=f"consensus:{role.value}")
        try:
            references = extract_string_array(response)
        except UnparseableResponseError as exc:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        code="selection_unparseable",
                        message=f"{role.value} attempt {attempt + 1}: {exc}",
                    )
                )
            continue
        for ref in references:
            resolved = _resolve_group_ref(ref, known)
            if resolved is None:
                if diagnostics is not None:
                    diagnostics.append(
                        Diagnostic(
                            code="unknown_group_id",
                            message=f"{role.value} returned unknown group {ref!r}",
                        )
                    )
                continue
            if resolved not in chosen:
                chosen.append(resolved)
        if len(chosen) > n:
            if diagnostics is not None:
                diagnostics.append(
                    Diagnostic(
                        code="selection_truncated",
                        message=f"{role.value} returned {len(chosen)} ids, kept first {n}",
                    )
                )
            chosen = chosen[:n]
        if len(chosen) == n:
            return RoleSelection(role=role, selected=tuple(chosen))
    raise PadFailureError(
        f"{role.value} selection still has {len(chosen)}/{n} groups after re-prompts"
    )


@dataclass(frozen=True)
class ConsensusResult:
    """The merged top-n selection with per-group provenance
    (three-vote, two-vote, or fill)."""

    final: tuple[str, ...]
    provenance: dict[str, str]


def _ranking_key(group: AtomGroup) -> tuple[int, object, str]:
    # More atoms first, then earlier timestamp, then group id.
    return (-len(group.atoms), group.timestamp, group.group_id)


def consensus_merge(
    selections: Sequence[RoleSelection],
    atom_groups: Sequence[AtomGroup],
    n: int,
) -> ConsensusResult:
    """Merge exactly three role selections into the final top-n list.

    Groups picked by all three roles are included automatically; two-vote
    then one-vote groups fill the remainder, each tier ordered by
    (atom count desc, earliest timestamp, group id). Membership does not
    depend on the order the selections are supplied.
    """
    if len(selections) != 3:
        raise ValueError("consensus requires exactly three selections")
    if len(atom_groups) < n:
        raise InsufficientGroupsError(
            f"{len(atom_groups)} groups available, {n} requested"
        )
    by_id = {g.group_id: g for g in atom_groups}
    votes: dict[str, int] = {}
    for selection in selections:
        for group_id in selection.selected:
            if group_id not in by_id:
                raise ValueError(f"selection references unknown group {group_id!r}")
            votes[group_id] = votes.get(group_id, 0) + 1

    def tier(count: int) -> list[str]:
        members = [by_id[g] for g, v in votes.items() if v == count]
        return [g.group_id for g in sorted(members, key=_ranking_key)]

    final: list[str] = []
    provenance: dict[str, str] = {}
    for count, label in ((3, "three-vote"), (2, "two-vote"), (1, "fill")):
        for group_id in tier(count):
            if len(final) >= n:
                break
            final.append(group_id)
            provenance[group_id] = label
    if len(final) < n:
        raise InsufficientGroupsError(
            f"only {len(final)} selected groups for a top-{n} consensus"
        )
    return ConsensusResult(final=tuple(final), provenance=provenance)


@dataclass(frozen=True)
class AgreementStats:
    """Counts of how the three roles agreed on the selected groups."""

    full: int
    partial_12: int
    partial_13: int
    partial_23: int
    none: int

    @property
    def total(self) -> int:
        return self.full + self.partial_12 + self.partial_13 + self.partial_23 + self.none

    def percentage(self, count: int) -> float:
        return 0.0 if self.total == 0 else count / self.total * 100.0

    def to_json_dict(self) -> dict:
        return {
            "full": self.full,
            "partial_12": self.partial_12,
            "partial_13": self.partial_13,
            "partial_23": self.partial_23,
            "none": self.none,
            "total": self.total,
        }


def agreement_stats(selections: Sequence[RoleSelection]) -> AgreementStats:
    """Classify every group selected by at least one role.

    Buckets use the canonical role indices 1=news editor, 2=journalist,
    3=NLP researcher regardless of the order the selections are supplied.
    """
    if len(selections) != 3:
        raise ValueError("agreement statistics require exactly three selections")
    picked: dict[str, set[int]] = {}
    for selection in selections:
        index = ROLE_INDEX[selection.role]
        for group_id in selection.selected:
            picked.setdefault(group_id, set()).add(index)
    counts = {"full": 0, "p12": 0, "p13": 0, "p23": 0, "none": 0}
    for members in picked.values():
        if members == {1, 2, 3}:
            counts["full"] += 1
        elif members == {1, 2}:
            counts["p12"] += 1
        elif members == {1, 3}:
            counts["p13"] += 1
        elif members == {2, 3}:
            counts["p23"] += 1
        else:
            counts["none"] += 1
    return AgreementStats(
        full=counts["full"],
        partial_12=counts["p12"],
        partial_13=counts["p13"],
        partial_23=counts["p23"],
        none=counts["none"],
    )


def format_agreement_table(stats: AgreementStats) -> str:
    """Fixed-width agreement table; stable byte-for-byte."""
    rows = (
        ("Full Agreement", stats.full),
        ("Partial (1, 2)", stats.partial_12),
        ("Partial (1, 3)", stats.partial_13),
        ("Partial (2, 3)", stats.partial_23),
        ("No Agreement", stats.none),
    )
    lines = [f"{'Agreement Type':<14}  {'Count':>6}  {'Percentage':>10}"]
    for name, count in rows:
        lines.append(f"{name:<14}  {count:>6}  {stats.percentage(count):>9.2f}%")
    return "\n".join(lines)


# --- expert edit-file workflow -------------------------------------------------


def render_edit_file(
    topic_query: str, groups: Sequence[AtomGroup], result: ConsensusResult
) -> str:
    """Serialize the selected groups plus an empty timeline skeleton.

    Experts compose each group's atoms into the node summary after the
    matching skeleton date; commented lines are ignored on ingestion.
    """
    by_id = {g.group_id: g for g in groups}
    selected = [by_id[group_id] for group_id in result.final]
    selected.sort(key=lambda g: g.timestamp)
    lines = [f"# Topic: {topic_query}", "# Selected atom groups:"]
    for group in selected:
        vote = result.provenance[group.group_id]
        lines.append(f"# [{group.group_id}] {group.timestamp.isoformat()} ({vote})")
        for atom in group.atoms:
            lines.append(f"#   - {atom.text}")
    lines.append("# Compose one summary per line below, keeping the dates:")
    for index, group in enumerate(selected, start=1):
        lines.append(f"{index}. {group.timestamp.isoformat()}: ")
    return "\n".join(lines) + "\n"


def load_edit_file(
    text: str, topic_id: str = "", diagnostics: list[Diagnostic] | None = None
) -> Timeline:
    """Parse a completed edit file back into a timeline.

    Comment lines are dropped; skeleton lines left unfilled are skipped by
    the parser, so an untouched file raises NoValidNodesError.
    """
    body = "\n".join(
        line for line in text.splitlines() if not line.lstrip().startswith("#")
    )
    if not body.strip():
        raise NoValidNodesError("edit file contains no timeline lines")
    return parse_timeline_text(body, topic_id=topic_id, diagnostics=diagnostics)
