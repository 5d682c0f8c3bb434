"""Distant annotation by dictionary matching.

Matching is greedy and left to right: at each position the longest
dictionary surface form starting there wins (on equal surface forms the
earliest entry's type wins), its tokens are labeled and skipped, and
unmatched tokens stay ``O``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import CorpusError, evaluate_labels


@dataclass
class Gazetteer:
    entries: list = field(default_factory=list)  # (tuple of tokens, type)

    def __post_init__(self):
        for surface, typ in self.entries:
            if not surface:
                raise CorpusError(f"empty surface form for type {typ!r}")

    def __len__(self):
        return len(self.entries)

    def types(self):
        return sorted({t for _, t in self.entries})


def load_gazetteer(path):
    """Read ``TYPE<TAB>surface form`` lines; blank lines and ``#`` comments skipped."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise CorpusError(f"{path}:{lineno}: expected TYPE<TAB>surface form")
            typ, surface = line.split("\t", 1)
            tokens = tuple(surface.split())
            if not tokens:
                raise CorpusError(f"{path}:{lineno}: empty surface form")
            entries.append((tokens, typ.strip()))
    return Gazetteer(entries)


def save_gazetteer(path, gaz):
    with open(path, "w", encoding="utf-8") as fh:
        for surface, typ in gaz.entries:
            fh.write(f"{typ}\t{' '.join(surface)}\n")


class Matcher:
    """Index over a gazetteer for repeated longest-match lookups."""

    def __init__(self, gaz, case_insensitive=False):
        self.case_insensitive = case_insensitive
        self.table = {}
        self.max_len = 0
        for surface, typ in gaz.entries:
            key = self._key(surface)
            # first entry wins for identical surface forms
            self.table.setdefault(key, typ)
            self.max_len = max(self.max_len, len(key))

    def _key(self, tokens):
        if self.case_insensitive:
            return tuple(t.lower() for t in tokens)
        return tuple(tokens)

    def __call__(self, tokens):
        key = self._key(tokens)
        out = ["O"] * len(key)
        i = 0
        while i < len(key):
            for length in range(min(self.max_len, len(key) - i), 0, -1):
                typ = self.table.get(key[i:i + length])
                if typ is not None:
                    out[i:i + length] = [typ] * length
                    i += length
                    break
            else:
                i += 1
        return out


def dict_match(tokens, gaz, case_insensitive=False):
    """Per-token type names (``"O"`` when unmatched) for one sentence."""
    return Matcher(gaz, case_insensitive)(tokens)


def subsample_dictionary(gaz, fraction):
    """The first ``ceil(fraction * n)`` entries, in stored order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"dictionary fraction must lie in (0, 1], got {fraction}")
    # round first: 0.6 * 5 is 3.0000000000000004 in binary
    keep = math.ceil(round(fraction * len(gaz), 9))
    return Gazetteer(list(gaz.entries[:keep]))


def annotate(sentences, gaz, class_names, case_insensitive=False):
    """Overwrite each sentence's training labels with dictionary matches."""
    index = {name: i for i, name in enumerate(class_names)}
    unknown = set(gaz.types()) - set(index)
    if unknown:
        raise CorpusError(f"gazetteer types {sorted(unknown)} not among classes {class_names}")
    matcher = Matcher(gaz, case_insensitive)
    for sent in sentences:
        sent.labels = [index[t] for t in matcher(sent.tokens)]
        sent.__post_init__()
    return sentences


def annotation_quality(distant, gold, class_names=None):
    """Span-level precision/recall/F1 of distant labels against gold."""
    if len(distant) != len(gold):
        raise CorpusError(f"{len(distant)} distant sequences vs {len(gold)} gold sequences")
    for i, (d, g) in enumerate(zip(distant, gold)):
        if len(d) != len(g):
            raise CorpusError(f"sentence {i}: {len(d)} distant labels vs {len(g)} gold labels")
    return evaluate_labels(distant, gold, class_names)
