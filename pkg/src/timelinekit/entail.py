"""Binary entailment of claim atoms against evidence atom sets, and the
entailment precision / recall / F1 arithmetic built on top of it."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import requests

from .cache import KeyedFileStore
from .clients import GENERIC_API_KEY_ENV, resolve_api_token
from .errors import BackendUnavailableError, Diagnostic
from .model import EventAtom

_TERMINAL_PUNCTUATION = ".。!！?？;；:：,，"


@lru_cache(maxsize=65536)
def normalize_for_match(text: str) -> str:
    """Case-fold, collapse whitespace, strip terminal punctuation."""
    collapsed = " ".join(text.casefold().split())
    return collapsed.rstrip(_TERMINAL_PUNCTUATION)


class EntailmentBackend(Protocol):
    """Decides whether an evidence atom set entails one claim atom."""

    backend_id: str

    def verdict(self, evidence: Sequence[EventAtom], claim: EventAtom) -> int: ...


@dataclass
class ExactMatchBackend:
    """Deterministic oracle: the claim is entailed when some evidence atom
    contains it after normalization."""

    backend_id: str = "exact-match"

    def verdict(self, evidence: Sequence[EventAtom], claim: EventAtom) -> int:
        needle = normalize_for_match(claim.text)
        return int(any(needle in normalize_for_match(e.text) for e in evidence))


@dataclass
class ScriptedEntailmentBackend:
    """Fixed verdict table keyed by (evidence atom text, claim text).

    The set verdict is the OR over the table entries of the individual
    evidence atoms; absent pairs default to 0.
    """

    table: dict[tuple[str, str], int] = field(default_factory=dict)
    backend_id: str = "scripted-entailment"

    def verdict(self, evidence: Sequence[EventAtom], claim: EventAtom) -> int:
        return int(any(self.table.get((e.text, claim.text), 0) for e in evidence))


class RemoteEntailmentBackend:
    """Classifier over a wire: request carries (premise, hypothesis), the
    response carries a label or a label distribution reduced by argmax.

    ``premise_mode`` selects whether the evidence set is joined into one
    premise ("joined") or queried atom by atom and OR-ed ("per_atom").
    """

    LABELS = ("entailment", "neutral", "contradiction")

    def __init__(
        self,
        endpoint: str,
        premise_mode: str = "joined",
        timeout: float = 30.0,
        api_key_env: str = GENERIC_API_KEY_ENV,
    ):
        if not endpoint:
            raise ValueError("endpoint must be non-empty")
        if premise_mode not in ("joined", "per_atom"):
            raise ValueError(f"unknown premise mode {premise_mode!r}")
        self.endpoint = endpoint
        self.premise_mode = premise_mode
        self.timeout = timeout
        self.api_key_env = api_key_env
        self.backend_id = f"remote-nli:{endpoint}:{premise_mode}"

    def _classify(self, premise: str, hypothesis: str) -> int:
        headers = {"Content-Type": "application/json"}
        token = resolve_api_token(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            reply = requests.post(
                self.endpoint,
                json={"premise": premise, "hypothesis": hypothesis},
                headers=headers,
                timeout=self.timeout,
            )
            reply.raise_for_status()
            payload = reply.json()
        except (requests.RequestException, ValueError) as exc:
            raise BackendUnavailableError(f"entailment request failed: {exc}") from exc
        if "label" in payload:
            return int(str(payload["label"]).lower().startswith("entail"))
        if "scores" in payload:
            scores = payload["scores"]
            best = max(self.LABELS, key=lambda label: float(scores.get(label, 0.0)))
            return int(best == "entailment")
        raise BackendUnavailableError(f"entailment response malformed: {payload!r}")

    def verdict(self, evidence: Sequence[EventAtom], claim: EventAtom) -> int:
        if self.premise_mode == "per_atom":
            return int(any(self._classify(e.text, claim.text) for e in evidence))
        premise = " ".join(e.text for e in evidence)
        return self._classify(premise, claim.text)


def _atoms_digest(atoms: Sequence[EventAtom]) -> str:
    joined = "\x1f".join(a.text for a in atoms)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def entail(
    evidence: Sequence[EventAtom],
    claim: EventAtom,
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
) -> int:
    """1 if the evidence set entails the claim, else 0; empty evidence is 0."""
    if not evidence:
        return 0
    if cache is not None:
        key = (backend.backend_id, _atoms_digest(evidence), _atoms_digest([claim]))
        hit = cache.get(*key)
        if hit is not None:
            return int(hit)
    verdict = int(backend.verdict(tuple(evidence), claim))
    if cache is not None:
        cache.put(verdict, *key)
    return verdict


def entailment_precision(
    pred_atoms: Sequence[EventAtom],
    ref_atoms: Sequence[EventAtom],
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> float:
    """Fraction of predicted atoms entailed by the reference atom set."""
    if not pred_atoms:
        if diagnostics is not None:
            diagnostics.append(
                Diagnostic(code="empty_claim_set", message="no predicted atoms to score")
            )
        return 0.0
    entailed = sum(entail(ref_atoms, atom, backend, cache=cache) for atom in pred_atoms)
    return entailed / len(pred_atoms)


def entailment_recall(
    pred_atoms: Sequence[EventAtom],
    ref_atoms: Sequence[EventAtom],
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> float:
    """Fraction of reference atoms entailed by the predicted atom set."""
    return entailment_precision(
        ref_atoms, pred_atoms, backend, cache=cache, diagnostics=diagnostics
    )


@dataclass(frozen=True)
class EntailmentScore:
    precision: float
    recall: float
    f1: float


def entailment_f1(
    pred_atoms: Sequence[EventAtom],
    ref_atoms: Sequence[EventAtom],
    backend: EntailmentBackend,
    cache: KeyedFileStore | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> EntailmentScore:
    """Harmonic mean of entailment precision and recall; 0 when p + r = 0."""
    precision = entailment_precision(
        pred_atoms, ref_atoms, backend, cache=cache, diagnostics=diagnostics
    )
    recall = entailment_recall(
        pred_atoms, ref_atoms, backend, cache=cache, diagnostics=diagnostics
    )
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
        # The harmonic mean never exceeds max(p, r); clamp away float wobble
        # (2*0.4*0.4/0.8 rounds one ulp above 0.4).
        f1 = min(f1, max(precision, recall))
    return EntailmentScore(precision=precision, recall=recall, f1=f1)
