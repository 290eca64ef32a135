"""Prompt template store.

Templates are plain text files keyed by (name, language). The packaged
defaults live under ``timelinekit/prompts/<language>/<name>.txt``; a
directory with the same layout can override them so prompt variants are
swappable without code changes.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "decompose_system",
    "lp_system",
    "to_system",
    "hm_day_system",
    "hm_merge_system",
    "judge_system",
    "role_news_editor",
    "role_journalist",
    "role_nlp_researcher",
)


def load_template(
    name: str, language: str = "en", template_dir: str | Path | None = None
) -> str:
    """Return the template text for ``name``, preferring ``template_dir``."""
    filename = f"{name}.txt"
    if template_dir is not None:
        candidate = Path(template_dir) / language / filename
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8")
    packaged = resources.files(__package__) / "prompts" / language / filename
    try:
        return packaged.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise KeyError(f"no template {name!r} for language {language!r}") from exc


def fill(template: str, **slots: str) -> str:
    """Substitute ``{slot}`` markers; unknown markers are left untouched."""
    out = template
    for key, value in slots.items():
        out = out.replace("{" + key + "}", value)
    return out
