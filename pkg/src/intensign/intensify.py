"""Intensity labels, gloss enhancement strategies, and intensification splits.

Four ways of writing a low/high intensity mark (d = 1 or 2) into a gloss
stream, all invertible:

    suffixation         WOLKE -> WOLKE-INT2
    end-marking         WOLKE -> WOLKE <INT2>
    delayed-release     WOLKE -> <INT2> WOLKE
    suffix-reiteration  WOLKE -> WOLKE-INT2 WOLKE-INT2

Markers are ordinary vocabulary items; generators downstream need no special
handling for them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum, IntEnum

from sklearn.base import BaseEstimator, TransformerMixin


class IntensityLabel(IntEnum):
    NONE = 0
    LOW = 1
    HIGH = 2


class Strategy(str, Enum):
    SUFFIXATION = "suffixation"
    END_MARKING = "end-marking"
    DELAYED_RELEASE = "delayed-release"
    SUFFIX_REITERATION = "suffix-reiteration"


_SUFFIX_RE = re.compile(r"^(.+)-INT([12])$")
_MARKER_RE = re.compile(r"^<INT([12])>$")


class EnhancementError(ValueError):
    """Token stream is not a valid enhancement under the named strategy."""


def _marker(degree: int) -> str:
    return f"<INT{degree}>"


def _suffixed(token: str, degree: int) -> str:
    return f"{token}-INT{degree}"


@dataclass
class TaggedGlossSequence:
    """Gloss tokens paired with per-token intensity labels."""

    tokens: list[str]
    labels: list[IntensityLabel]

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise EnhancementError(
                f"{len(self.tokens)} tokens vs {len(self.labels)} labels")
        self.labels = [IntensityLabel(l) for l in self.labels]


def apply_strategy(tokens: list[str], labels, strategy: Strategy | str) -> list[str]:
    """Rewrite a labeled gloss sequence; label-0 tokens pass through unchanged."""
    strategy = Strategy(strategy)
    seq = TaggedGlossSequence(list(tokens), list(labels))
    out: list[str] = []
    for token, label in zip(seq.tokens, seq.labels):
        d = int(label)
        if d == 0:
            out.append(token)
        elif strategy is Strategy.SUFFIXATION:
            out.append(_suffixed(token, d))
        elif strategy is Strategy.END_MARKING:
            out.extend([token, _marker(d)])
        elif strategy is Strategy.DELAYED_RELEASE:
            out.extend([_marker(d), token])
        else:  # SUFFIX_REITERATION
            out.extend([_suffixed(token, d)] * 2)
    return out


def strip_enhancement(tokens: list[str], strategy: Strategy | str) -> TaggedGlossSequence:
    """Invert apply_strategy; raises EnhancementError on orphaned markers."""
    strategy = Strategy(strategy)
    if strategy is Strategy.SUFFIXATION:
        return _strip_suffixation(tokens)
    if strategy is Strategy.END_MARKING:
        return _strip_end_marking(tokens)
    if strategy is Strategy.DELAYED_RELEASE:
        return _strip_delayed_release(tokens)
    return _strip_reiteration(tokens)


def _split_suffix(token: str) -> tuple[str, int]:
    m = _SUFFIX_RE.match(token)
    if m:
        return m.group(1), int(m.group(2))
    return token, 0


def _strip_suffixation(tokens) -> TaggedGlossSequence:
    out_tokens, out_labels = [], []
    for tok in tokens:
        base, d = _split_suffix(tok)
        out_tokens.append(base)
        out_labels.append(IntensityLabel(d))
    return TaggedGlossSequence(out_tokens, out_labels)


def _strip_end_marking(tokens) -> TaggedGlossSequence:
    out_tokens: list[str] = []
    out_labels: list[IntensityLabel] = []
    for tok in tokens:
        m = _MARKER_RE.match(tok)
        if m:
            if not out_tokens or out_labels[-1] != IntensityLabel.NONE:
                raise EnhancementError(f"marker {tok} has no preceding host gloss")
            out_labels[-1] = IntensityLabel(int(m.group(1)))
        else:
            out_tokens.append(tok)
            out_labels.append(IntensityLabel.NONE)
    return TaggedGlossSequence(out_tokens, out_labels)


def _strip_delayed_release(tokens) -> TaggedGlossSequence:
    out_tokens: list[str] = []
    out_labels: list[IntensityLabel] = []
    pending = 0
    for tok in tokens:
        m = _MARKER_RE.match(tok)
        if m:
            if pending:
                raise EnhancementError(f"consecutive markers before {tok}")
            pending = int(m.group(1))
        else:
            out_tokens.append(tok)
            out_labels.append(IntensityLabel(pending))
            pending = 0
    if pending:
        raise EnhancementError("trailing marker has no following host gloss")
    return TaggedGlossSequence(out_tokens, out_labels)


def _strip_reiteration(tokens) -> TaggedGlossSequence:
    out_tokens: list[str] = []
    out_labels: list[IntensityLabel] = []
    i = 0
    while i < len(tokens):
        base, d = _split_suffix(tokens[i])
        if d == 0:
            out_tokens.append(base)
            out_labels.append(IntensityLabel.NONE)
            i += 1
            continue
        if i + 1 >= len(tokens) or tokens[i + 1] != tokens[i]:
            raise EnhancementError(f"reiterated token {tokens[i]!r} is missing its twin")
        out_tokens.append(base)
        out_labels.append(IntensityLabel(d))
        i += 2
    return TaggedGlossSequence(out_tokens, out_labels)


class GlossEnhancer(TransformerMixin, BaseEstimator):
    """Stateless transformer between tagged gloss sequences and enhanced streams.

    transform() maps (tokens, labels) pairs to enhanced token lists;
    inverse_transform() recovers the tagged sequences.
    """

    def __init__(self, strategy: str = "suffixation"):
        self.strategy = strategy

    def fit(self, X=None, y=None):
        Strategy(self.strategy)  # validates the name
        return self

    def transform(self, X) -> list[list[str]]:
        out = []
        for item in X:
            if isinstance(item, TaggedGlossSequence):
                tokens, labels = item.tokens, item.labels
            else:
                tokens, labels = item
            out.append(apply_strategy(tokens, labels, self.strategy))
        return out

    def inverse_transform(self, X) -> list[TaggedGlossSequence]:
        return [strip_enhancement(tokens, self.strategy) for tokens in X]


def partition_by_intensity(instances) -> tuple[list, list]:
    """Split instances into (with, without) any low/high intensity gloss."""
    with_int, without = [], []
    for inst in instances:
        labels = getattr(inst, "gloss_labels", None)
        if labels is None:
            raise ValueError(f"instance {getattr(inst, 'id', inst)} carries no gloss labels")
        (with_int if any(l in (1, 2) for l in labels) else without).append(inst)
    return with_int, without
