"""Text normalization and lexicon-based entity linking against ER-graph nodes."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from gdcr.graph import ERGraph

_WS_RE = re.compile(r"\s+")

BOUNDARY_WORD = "word"
BOUNDARY_NONE = "substring"


class AmbiguousSurfaceForm(ValueError):
    pass


def normalize_text(text: str) -> str:
    text = unicodedata.normalize("NFKC", text).casefold()
    return _WS_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class Lexicon:
    """Surface form -> node id. Keys are normalized."""

    entries: dict[str, str]
    min_token_len: int = 2
    boundary: str = BOUNDARY_WORD
    fold_plurals: bool = False
    _pattern: re.Pattern | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.boundary not in (BOUNDARY_WORD, BOUNDARY_NONE):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        forms = [f for f in self.entries if len(f) >= self.min_token_len]
        # Longest alternatives first: regex alternation is ordered, so this
        # yields the longest match at each starting offset.
        forms.sort(key=lambda f: (-len(f), f))
        if not forms:
            pattern = None
        else:
            body = "|".join(re.escape(f) for f in forms)
            suffix = "(?:e?s)?" if self.fold_plurals else ""
            if self.boundary == BOUNDARY_WORD:
                pattern = re.compile(rf"(?<!\w)(?P<form>{body}){suffix}(?!\w)")
            else:
                pattern = re.compile(rf"(?P<form>{body}){suffix}")
        object.__setattr__(self, "_pattern", pattern)

    @property
    def node_ids(self) -> set[str]:
        return set(self.entries.values())


@dataclass(frozen=True)
class MentionSet:
    node_ids: frozenset[str]
    # (start, end, node id); offsets index into normalize_text(source)
    spans: tuple[tuple[int, int, str], ...]


def build_lexicon(
    graph: ERGraph,
    min_token_len: int = 2,
    boundary: str = BOUNDARY_WORD,
    fold_plurals: bool = False,
) -> Lexicon:
    entries: dict[str, str] = {}
    for node in graph.nodes:
        for surface in (node.canonical_label, *node.aliases):
            form = normalize_text(surface)
            if not form:
                continue
            owner = entries.get(form)
            if owner is not None and owner != node.id:
                raise AmbiguousSurfaceForm(
                    f"surface form {form!r} maps to both {owner!r} and {node.id!r}"
                )
            entries[form] = node.id
    return Lexicon(entries, min_token_len=min_token_len, boundary=boundary, fold_plurals=fold_plurals)


def link_entities(text: str, lexicon: Lexicon) -> MentionSet:
    norm = normalize_text(text)
    if lexicon._pattern is None or not norm:
        return MentionSet(frozenset(), ())
    spans = []
    for m in lexicon._pattern.finditer(norm):
        spans.append((m.start(), m.end(), lexicon.entries[m.group("form")]))
    return MentionSet(frozenset(s[2] for s in spans), tuple(spans))
