"""Event-atom decomposition: prompt-driven backends, a rule-based fallback,
and a persistent cache keyed by (backend id, sentence hash)."""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

from .cache import KeyedFileStore
from .clients import ModelClient
from .errors import (
    BackendUnavailableError,
    Diagnostic,
    ModelError,
    UnparseableResponseError,
)
from .model import Article, EventAtom, Timeline, TimelineNode
from .templates import load_template

_CLAUSE_DELIMITERS = re.compile(r"([;；，])")
_AND_SEPARATOR = " and "


class DecomposerBackend(Protocol):
    """Turns one sentence into its event atoms."""

    backend_id: str

    def decompose_sentence(self, sentence: str) -> list[EventAtom]: ...


def extract_string_array(text: str) -> list[str]:
    """Return the first well-formed JSON array of strings found in ``text``,
    ignoring surrounding prose. Raises UnparseableResponseError otherwise."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            continue
        if isinstance(value, list) and all(isinstance(item, str) for item in value):
            return value
    raise UnparseableResponseError(f"no array of strings in response: {text[:120]!r}")


def parse_decomposition_response(text: str) -> list[EventAtom]:
    """Extract the first array of strings in the response as event atoms.

    Empty strings are dropped; an array that is empty after filtering raises
    UnparseableResponseError.
    """
    atoms = [EventAtom(item) for item in extract_string_array(text) if item.strip()]
    if not atoms:
        raise UnparseableResponseError("atom array empty after filtering")
    return atoms


def _split_on_and(segment: str) -> list[str]:
    # Split on coordinating "and" only where both sides look like clauses
    # (at least two tokens each); keeps noun pairs like "bread and butter".
    parts: list[str] = []
    rest = segment
    while True:
        cut = None
        offset = 0
        while True:
            idx = rest.find(_AND_SEPARATOR, offset)
            if idx < 0:
                break
            left, right = rest[:idx], rest[idx + len(_AND_SEPARATOR) :]
            if len(left.split()) >= 2 and len(right.split()) >= 2:
                cut = idx
                break
            offset = idx + 1
        if cut is None:
            parts.append(rest)
            return parts
        parts.append(rest[:cut])
        rest = rest[cut + len(_AND_SEPARATOR) :]


def rule_based_decompose(sentence: str) -> list[EventAtom]:
    """Deterministic clause splitting used offline and as a fallback.

    Splits on ";", "；" and "，" and on coordinating "and" between clause-like
    sides; always yields at least one atom (the whole sentence).
    """
    if not sentence.strip():
        raise ValueError("sentence must be non-empty")
    segments: list[str] = []
    for piece in _CLAUSE_DELIMITERS.split(sentence):
        if piece in (";", "；", "，"):
            continue
        segments.extend(_split_on_and(piece))
    atoms = [EventAtom(s) for s in segments if s.strip()]
    return atoms if atoms else [EventAtom(sentence)]


@dataclass
class RuleBasedDecomposer:
    """Backend wrapper around rule_based_decompose."""

    backend_id: str = "rules"
    call_count: int = 0

    def decompose_sentence(self, sentence: str) -> list[EventAtom]:
        self.call_count += 1
        return rule_based_decompose(sentence)


@dataclass
class PromptedDecomposer:
    """Backend that asks a model client for atomic propositions.

    The system prompt comes from the template store; the response is parsed
    with parse_decomposition_response. Transport failures surface as
    BackendUnavailableError.
    """

    client: ModelClient
    template_name: str = "decompose_system"
    language: str = "en"
    template_dir: str | None = None
    call_count: int = 0

    def __post_init__(self) -> None:
        self._system = load_template(self.template_name, self.language, self.template_dir)
        self.backend_id = f"prompted:{self.client.client_id}:{self.template_name}:{self.language}"

    def decompose_sentence(self, sentence: str) -> list[EventAtom]:
        self.call_count += 1
        try:
            response = self.client.complete(self._system, sentence, job_id="decompose")
        except ModelError as exc:
            raise BackendUnavailableError(str(exc)) from exc
        return parse_decomposition_response(response)


@dataclass
class ScriptedDecomposer:
    """Table-driven backend for offline runs: sentence text to atom texts.

    A mapped Exception is raised; a missing sentence raises
    BackendUnavailableError so fallback policies can be exercised.
    """

    mapping: dict[str, list[str] | Exception] = field(default_factory=dict)
    backend_id: str = "scripted-decomposer"
    call_count: int = 0

    def decompose_sentence(self, sentence: str) -> list[EventAtom]:
        self.call_count += 1
        if sentence not in self.mapping:
            raise BackendUnavailableError(f"no scripted atoms for: {sentence[:60]!r}")
        entry = self.mapping[sentence]
        if isinstance(entry, Exception):
            raise entry
        return [EventAtom(text) for text in entry]


def _sentence_key(sentence: str) -> str:
    normalized = " ".join(sentence.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def decompose(
    sentence: str,
    backend: DecomposerBackend,
    cache: KeyedFileStore | None = None,
    fallback_to_rules: bool = False,
    diagnostics: list[Diagnostic] | None = None,
) -> list[EventAtom]:
    """Decompose one sentence via the backend, consulting the cache first.

    With ``fallback_to_rules`` a BackendUnavailableError degrades to the
    rule-based splitter (cached under the rules backend id, so a later real
    backend run is not masked) and is flagged in diagnostics.
    """
    if not sentence.strip():
        raise ValueError("sentence must be non-empty")
    key = _sentence_key(sentence)
    if cache is not None:
        hit = cache.get(backend.backend_id, key)
        if hit is not None:
            return [EventAtom(text) for text in hit]
    try:
        atoms = backend.decompose_sentence(sentence)
    except BackendUnavailableError:
        if not fallback_to_rules:
            raise
        atoms = rule_based_decompose(sentence)
        if diagnostics is not None:
            diagnostics.append(
                Diagnostic(
                    code="decomposer_fallback",
                    message=f"backend unavailable, used rules for: {sentence[:60]!r}",
                )
            )
        if cache is not None:
            cache.put([a.text for a in atoms], "rules", key)
        return atoms
    if cache is not None:
        cache.put([a.text for a in atoms], backend.backend_id, key)
    return atoms


def decompose_timeline(
    timeline: Timeline,
    backend: DecomposerBackend,
    cache: KeyedFileStore | None = None,
    fallback_to_rules: bool = False,
    diagnostics: list[Diagnostic] | None = None,
    max_workers: int = 1,
) -> Timeline:
    """Return a copy of the timeline with every node's atoms populated.

    Idempotent: nodes that already carry atoms are untouched. Backend errors
    are re-raised with the node index unless the fallback policy applies.
    """

    def decompose_node(
        index: int, node: TimelineNode
    ) -> tuple[TimelineNode, list[Diagnostic]]:
        if node.decomposed:
            return node, []
        local: list[Diagnostic] = []
        try:
            atoms = decompose(
                node.summary,
                backend,
                cache=cache,
                fallback_to_rules=fallback_to_rules,
                diagnostics=local,
            )
        except (BackendUnavailableError, UnparseableResponseError) as exc:
            raise type(exc)(f"node {index}: {exc}") from exc
        flagged = [
            Diagnostic(d.code, d.message, {**d.context, "node": index}) for d in local
        ]
        node = TimelineNode(timestamp=node.timestamp, summary=node.summary, atoms=tuple(atoms))
        return node, flagged

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [
                pool.submit(decompose_node, i, node)
                for i, node in enumerate(timeline.nodes)
            ]
            results = [future.result() for future in futures]
    else:
        results = [decompose_node(i, n) for i, n in enumerate(timeline.nodes)]
    nodes = tuple(node for node, _ in results)
    if diagnostics is not None:
        for _, flagged in results:
            diagnostics.extend(flagged)
    return Timeline(
        topic_id=timeline.topic_id,
        nodes=nodes,
        granularity_label=timeline.granularity_label,
    )


def decompose_article(
    article: Article,
    backend: DecomposerBackend,
    cache: KeyedFileStore | None = None,
    fallback_to_rules: bool = False,
    diagnostics: list[Diagnostic] | None = None,
) -> list[EventAtom]:
    """Decompose an article's title and each paragraph, concatenated in order."""
    atoms: list[EventAtom] = []
    pieces = [article.title] + list(article.paragraphs)
    for piece in pieces:
        if not piece.strip():
            continue
        atoms.extend(
            decompose(
                piece,
                backend,
                cache=cache,
                fallback_to_rules=fallback_to_rules,
                diagnostics=diagnostics,
            )
        )
    return atoms
