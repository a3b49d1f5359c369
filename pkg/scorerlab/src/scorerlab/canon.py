"""Action canonicalization for counterfactual comparison.

Two sampled actions count as "the same decision" when they agree after
canonicalization: scaffolding stripped, case folded, whitespace
collapsed, and bracket spacing normalized. The rules are versioned so an
exported artifact records which convention produced its labels.
"""

from __future__ import annotations

import re

from stepprune import DEFAULT_RULES

CANON_VERSION = "canon-v1"

_OPEN_BRACKET_RE = re.compile(r"\s*\[\s*")
_CLOSE_BRACKET_RE = re.compile(r"\s*\]")
_WS_RE = re.compile(r"\s+")


def canonicalize(action: str) -> str:
    """Reduce a sampled action to its canonical comparison form.

    Scaffolding lines ("Thought:", a leading "Action:" tag) are removed
    with the same rules the compression engine uses for step atoms, then
    the first action line is lowercased, inner whitespace collapsed, and
    bracket arguments tightened: "Action: Click[ Buy Now ]" becomes
    "click[buy now]". Spacing after a closing bracket is left alone so
    multi-part actions keep their separators.
    """
    text = DEFAULT_RULES.normalize_action(action)
    text = _WS_RE.sub(" ", text).strip().lower()
    text = _OPEN_BRACKET_RE.sub("[", text)
    text = _CLOSE_BRACKET_RE.sub("]", text)
    return text
