"""Mount-then-measure engine: temporal penalty, information scores, cost
matrices, and globally optimal assignment for nodes and edges.

Assignment semantics: costs are negated scores, so minimizing total cost
maximizes total score. Rectangular matrices are padded with zero-cost
dummies; dummy pairs surface as unmatched items. Among equal-cost optima
(equality judged on the shared summation routine) the lexicographically
smallest pairing by (predicted index, reference index) is returned, which
makes every downstream report reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from itertools import permutations
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cache import KeyedFileStore
from .entail import EntailmentBackend, entailment_f1
from .errors import (
    EmptyEdgeSetError,
    EmptyMatrixError,
    TooLargeError,
    UndecomposedNodeError,
)
from .model import Timeline, TimelineNode, sort_levels

BRUTE_FORCE_LIMIT = 8


def temporal_penalty(t_pred: date, t_ref: date) -> float:
    """1 / (|days apart|^2 + 1); 1 exactly when the dates coincide."""
    delta = (t_pred - t_ref).days
    return 1.0 / (delta * delta + 1.0)


def info_score(
    pred_node: TimelineNode,
    ref_node: TimelineNode,
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
) -> float:
    """Temporal penalty times entailment F1 between the nodes' atoms."""
    if not pred_node.decomposed:
        raise UndecomposedNodeError(f"predicted node {pred_node.timestamp} has no atoms")
    if not ref_node.decomposed:
        raise UndecomposedNodeError(f"reference node {ref_node.timestamp} has no atoms")
    score = entailment_f1(pred_node.atoms, ref_node.atoms, backend, cache=cache)
    return temporal_penalty(pred_node.timestamp, ref_node.timestamp) * score.f1


@dataclass(frozen=True)
class CostMatrix:
    """Rows are predicted items, columns reference items, entries are
    negated scores (finite, nonpositive)."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2:
            raise ValueError("cost matrix must be two-dimensional")
        if entries.size and not np.all(np.isfinite(entries)):
            raise ValueError("cost matrix entries must be finite")
        if entries.size and entries.max() > 0.0:
            raise ValueError("cost matrix entries must be nonpositive")
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class MountAssignment:
    """Optimal predicted-to-reference pairing with per-pair scores."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_predicted: tuple[int, ...]
    unmatched_reference: tuple[int, ...]
    total_cost: float

    def pair_indices(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for i, j, _ in self.pairs)


def assignment_total_cost(
    entries: np.ndarray, pairs: Sequence[tuple[int, int]]
) -> float:
    """Shared summation routine: add pair costs in (row, column) order.

    Both solvers report totals through this function so equal pairings give
    bit-identical totals.
    """
    total = 0.0
    for i, j in sorted(pairs):
        total += float(entries[i, j])
    return total


def _assemble(
    entries: np.ndarray,
    pair_indices: Sequence[tuple[int, int]],
    prune_zero_score: bool,
) -> MountAssignment:
    rows, cols = entries.shape
    chosen = sorted(pair_indices)
    if prune_zero_score:
        chosen = [(i, j) for i, j in chosen if entries[i, j] != 0.0]
    total = assignment_total_cost(entries, chosen)
    pairs = tuple((i, j, -float(entries[i, j]) + 0.0) for i, j in chosen)
    matched_rows = {i for i, _ in chosen}
    matched_cols = {j for _, j in chosen}
    return MountAssignment(
        pairs=pairs,
        unmatched_predicted=tuple(i for i in range(rows) if i not in matched_rows),
        unmatched_reference=tuple(j for j in range(cols) if j not in matched_cols),
        total_cost=total,
    )


def _real_pairs(mapping: Mapping[int, int], rows: int, cols: int) -> list[tuple[int, int]]:
    return sorted((i, j) for i, j in mapping.items() if i < rows and j < cols)


def _refine_lexicographic(
    entries: np.ndarray, padded: np.ndarray, solution: dict[int, int], target: float
) -> dict[int, int]:
    """Walk real rows in order, moving each to the smallest real column that
    still completes to the target total; the result is the lexicographically
    smallest pairing among equal-total optima."""
    size = padded.shape[0]
    rows, cols = entries.shape
    fixed_rows: set[int] = set()
    fixed_cols: set[int] = set()
    for i in range(rows):
        current = solution[i]
        upper = current if current < cols else cols
        for candidate in range(upper):
            if candidate in fixed_cols:
                continue
            rest_rows = [r for r in range(size) if r not in fixed_rows and r != i]
            rest_cols = [c for c in range(size) if c not in fixed_cols and c != candidate]
            if rest_rows:
                sub = padded[np.ix_(rest_rows, rest_cols)]
                sub_rows, sub_cols = linear_sum_assignment(sub)
                completion = {
                    rest_rows[a]: rest_cols[b] for a, b in zip(sub_rows, sub_cols)
                }
            else:
                completion = {}
            trial = {r: c for r, c in solution.items() if r in fixed_rows}
            trial[i] = candidate
            trial.update(completion)
            if assignment_total_cost(entries, _real_pairs(trial, rows, cols)) == target:
                solution = trial
                break
        fixed_rows.add(i)
        fixed_cols.add(solution[i])
    return solution


def solve_assignment(cost: CostMatrix, prune_zero_score: bool = False) -> MountAssignment:
    """Minimum-cost assignment with deterministic tie-breaking.

    Rectangular inputs are padded square with zero-cost dummies; pairs that
    land on dummies are reported as unmatched. With ``prune_zero_score``,
    matched pairs whose cost is exactly zero are also moved to unmatched.
    """
    entries = cost.entries
    rows, cols = entries.shape
    if rows == 0 or cols == 0:
        raise EmptyMatrixError("cost matrix has no rows or columns")
    size = max(rows, cols)
    padded = np.zeros((size, size), dtype=np.float64)
    padded[:rows, :cols] = entries
    row_ind, col_ind = linear_sum_assignment(padded)
    solution = {int(r): int(c) for r, c in zip(row_ind, col_ind)}
    target = assignment_total_cost(entries, _real_pairs(solution, rows, cols))
    solution = _refine_lexicographic(entries, padded, solution, target)
    return _assemble(entries, _real_pairs(solution, rows, cols), prune_zero_score)


def brute_force_assignment(
    cost: CostMatrix, prune_zero_score: bool = False
) -> MountAssignment:
    """Exhaustive oracle over all injective mappings of the smaller side.

    Uses the same summation routine and the same lexicographic tie-break as
    solve_assignment; only defined for min(rows, cols) <= 8.
    """
    entries = cost.entries
    rows, cols = entries.shape
    if rows == 0 or cols == 0:
        raise EmptyMatrixError("cost matrix has no rows or columns")
    if min(rows, cols) > BRUTE_FORCE_LIMIT:
        raise TooLargeError(f"brute force capped at min dimension {BRUTE_FORCE_LIMIT}")
    best_total: float | None = None
    best_pairs: tuple[tuple[int, int], ...] | None = None
    if rows <= cols:
        candidates = (
            tuple((i, perm[i]) for i in range(rows))
            for perm in permutations(range(cols), rows)
        )
    else:
        candidates = (
            tuple(sorted((perm[j], j) for j in range(cols)))
            for perm in permutations(range(rows), cols)
        )
    for pairs in candidates:
        total = assignment_total_cost(entries, pairs)
        if (
            best_total is None
            or total < best_total
            or (total == best_total and pairs < best_pairs)
        ):
            best_total = total
            best_pairs = pairs
    assert best_pairs is not None
    return _assemble(entries, best_pairs, prune_zero_score)


# --- node and edge views ------------------------------------------------------


def node_cost_matrix(
    pred_timeline: Timeline,
    ref_timeline: Timeline,
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
) -> CostMatrix:
    """Entry (i, j) is the negated info score of predicted node i against
    reference node j."""
    entries = np.zeros((len(pred_timeline), len(ref_timeline)), dtype=np.float64)
    for i, pred_node in enumerate(pred_timeline.nodes):
        for j, ref_node in enumerate(ref_timeline.nodes):
            entries[i, j] = -info_score(pred_node, ref_node, backend, cache=cache)
    return CostMatrix(entries=entries)


@dataclass(frozen=True)
class Edge:
    """A consecutive node pair of a timeline, tagged with the owning
    timeline's granularity label."""

    tail: TimelineNode
    head: TimelineNode
    granularity_label: str | None = None

    def __post_init__(self) -> None:
        if not self.tail.timestamp < self.head.timestamp:
            raise ValueError("edge tail must precede head")


def build_edges(timeline: Timeline) -> list[Edge]:
    """The k-1 consecutive node pairs of a k-node timeline, in order."""
    return [
        Edge(tail=a, head=b, granularity_label=timeline.granularity_label)
        for a, b in zip(timeline.nodes, timeline.nodes[1:])
    ]


def build_edge_pool(reference_timelines: Mapping[str, Timeline]) -> list[Edge]:
    """Concatenate every level's edges in canonical level order, each edge
    tagged with its level."""
    pool: list[Edge] = []
    for level in sort_levels(reference_timelines):
        timeline = reference_timelines[level]
        for edge in build_edges(timeline):
            pool.append(Edge(tail=edge.tail, head=edge.head, granularity_label=level))
    return pool


def edge_cost(
    pred_edge: Edge,
    ref_edge: Edge,
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
) -> float:
    """Negated sum of tail-to-tail and head-to-head info scores, in [-2, 0]."""
    tail_score = info_score(pred_edge.tail, ref_edge.tail, backend, cache=cache)
    head_score = info_score(pred_edge.head, ref_edge.head, backend, cache=cache)
    return -(tail_score + head_score)


def edge_cost_matrix(
    pred_edges: Sequence[Edge],
    ref_edges: Sequence[Edge],
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
) -> CostMatrix:
    entries = np.zeros((len(pred_edges), len(ref_edges)), dtype=np.float64)
    for i, pred_edge in enumerate(pred_edges):
        for j, ref_edge in enumerate(ref_edges):
            entries[i, j] = edge_cost(pred_edge, ref_edge, backend, cache=cache)
    return CostMatrix(entries=entries)


def solve_edge_assignment(
    pred_edges: Sequence[Edge],
    ref_edges: Sequence[Edge],
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
    prune_zero_score: bool = False,
) -> MountAssignment:
    """Mount predicted edges into the pooled reference edges.

    The pool should come from build_edge_pool so each matched pair can be
    traced back to its granularity level by column index.
    """
    if not pred_edges:
        raise EmptyEdgeSetError("prediction has no edges")
    matrix = edge_cost_matrix(pred_edges, ref_edges, backend, cache=cache)
    return solve_assignment(matrix, prune_zero_score=prune_zero_score)
