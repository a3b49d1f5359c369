"""Step canonicalization.

Raw agent steps are noisy: actions arrive wrapped in scratchpad lines
("Thought: ..."), observations arrive as multi-line dumps with
environment-specific separator tokens. The rule set here reduces each step
to a compact (action, observation) atom used for scoring and hashing.

Normalization is a fixpoint: applying it to its own output changes nothing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class StepAtom:
    """Canonical single-line forms of one step's action and observation."""

    action_norm: str
    obs_norm: str


@dataclass(frozen=True)
class AtomRuleSet:
    """Declarative rules for reducing raw step text to atoms.

    ``drop_line_prefixes``: action lines starting with any of these (after
    stripping) are discarded before extraction.
    ``action_prefix``: if a surviving line starts with this, the remainder of
    that line is the action.
    ``obs_replacements``: ordered (regex, replacement) pairs applied to the
    observation before whitespace collapsing.
    """

    drop_line_prefixes: tuple[str, ...] = ("Thought:", "Observation:")
    action_prefix: str = "Action:"
    obs_replacements: tuple[tuple[str, str], ...] = ((r"\[SEP\]", "; "),)
    _compiled: tuple[tuple[re.Pattern[str], str], ...] = field(
        init=False, repr=False, compare=False, default=()
    )

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "_compiled",
            tuple((re.compile(pat), repl) for pat, repl in self.obs_replacements),
        )

    def normalize_action(self, text: str) -> str:
        prev = None
        cur = text
        while cur != prev:
            prev = cur
            cur = self._extract_action_once(cur)
        return cur

    def _extract_action_once(self, text: str) -> str:
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if not self._dropped(ln)]
        for ln in lines:
            if ln.startswith(self.action_prefix):
                return ln[len(self.action_prefix) :].strip()
        for ln in lines:
            if ln:
                return ln
        return ""

    def _dropped(self, stripped_line: str) -> bool:
        return any(stripped_line.startswith(p) for p in self.drop_line_prefixes)

    def normalize_obs(self, text: str) -> str:
        for pat, repl in self._compiled:
            text = pat.sub(repl, text)
        return _WS_RUN.sub(" ", text).strip()

    def atomize(self, action_text: str, obs_text: str) -> StepAtom:
        return StepAtom(
            action_norm=self.normalize_action(action_text),
            obs_norm=self.normalize_obs(obs_text),
        )


DEFAULT_RULES = AtomRuleSet()

# Known environments all share the default rules today; the table exists so
# an env can diverge without touching call sites.
_ENV_PRESETS: dict[str, AtomRuleSet] = {
    "webshop": DEFAULT_RULES,
    "scienceworld": DEFAULT_RULES,
    "alfworld": DEFAULT_RULES,
}


def rules_for_env(env: str) -> AtomRuleSet:
    return _ENV_PRESETS.get(env.strip().lower(), DEFAULT_RULES)


def load_rules(path: str | Path) -> AtomRuleSet:
    """Read an AtomRuleSet from a JSON file.

    Recognized keys (all optional): ``drop_line_prefixes`` (list of str),
    ``action_prefix`` (str), ``obs_replacements`` (list of [pattern,
    replacement] pairs).
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: rule file must hold a JSON object")
    kwargs: dict = {}
    if "drop_line_prefixes" in raw:
        kwargs["drop_line_prefixes"] = tuple(_str_items(raw["drop_line_prefixes"], "drop_line_prefixes"))
    if "action_prefix" in raw:
        if not isinstance(raw["action_prefix"], str):
            raise ValueError("action_prefix must be a string")
        kwargs["action_prefix"] = raw["action_prefix"]
    if "obs_replacements" in raw:
        pairs = []
        for item in raw["obs_replacements"]:
            if not (isinstance(item, (list, tuple)) and len(item) == 2):
                raise ValueError("obs_replacements entries must be [pattern, replacement] pairs")
            pat, repl = item
            if not (isinstance(pat, str) and isinstance(repl, str)):
                raise ValueError("obs_replacements entries must hold strings")
            re.compile(pat)  # fail fast on a bad pattern
            pairs.append((pat, repl))
        kwargs["obs_replacements"] = tuple(pairs)
    return AtomRuleSet(**kwargs)


def _str_items(value: Iterable, name: str) -> list[str]:
    out = []
    for item in value:
        if not isinstance(item, str):
            raise ValueError(f"{name} entries must be strings")
        out.append(item)
    return out
