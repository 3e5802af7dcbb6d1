"""Entity-name normalization and fuzzy n-gram entity tracking."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dialogue import Turn
from .kb import DOMAIN_ENTITY, KnowledgeBase

DEFAULT_PLACE_NAMES = ("Fisherman's Wharf", "San Francisco", "Cambridge")

_ONES = (
    "zero one two three four five six seven eight nine ten eleven twelve "
    "thirteen fourteen fifteen sixteen seventeen eighteen nineteen"
).split()
_TENS = "_ _ twenty thirty forty fifty sixty seventy eighty ninety".split()


def number_to_words(n: int) -> str:
    if not 0 <= n <= 100:
        raise ValueError("only 0..100 supported")
    if n < 20:
        return _ONES[n]
    if n == 100:
        return "one hundred"
    tens, ones = divmod(n, 10)
    return _TENS[tens] if ones == 0 else f"{_TENS[tens]}-{_ONES[ones]}"


def _digits_to_words(text: str) -> str:
    def sub(m):
        value = int(m.group(0))
        return number_to_words(value) if value <= 100 else m.group(0)

    return re.sub(r"\b\d+\b", sub, text)


_SPLIT_SYMBOLS = (" - ", ", ", "/")
_WS = re.compile(r"\s+")
_GUESTHOUSE = re.compile("guesthouse", re.IGNORECASE)


def _collapse(text: str) -> str:
    return _WS.sub(" ", text).strip()


def _strip_places(text: str, place_names: Sequence[str]) -> str:
    lowered_places = [p.lower() for p in place_names if p.strip()]
    changed = True
    while changed:
        changed = False
        low = text.lower()
        for place in lowered_places:
            if low.endswith(place):
                head = text[: len(text) - len(place)]
                # only strip whole trailing words, never the entire name
                if head.strip() and (head.endswith(" ") or not head[-1].isalnum()):
                    text = _collapse(head).rstrip(" ,-/")
                    changed = True
                    break
    return text


def normalize_entity_name(name: str, place_names: Sequence[str] = DEFAULT_PLACE_NAMES) -> str:
    """Canonical lowercase form of a knowledge-base entity name.

    >>> normalize_entity_name("Hard Knox Cafe - Potrero Hill")
    'hard knox cafe'
    """
    text = _collapse(name).replace("&", "and")
    cut = min((i for i in (text.find(s) for s in _SPLIT_SYMBOLS) if i > 0), default=None)
    if cut is not None:
        text = text[:cut]
    text = _GUESTHOUSE.sub("guest house", text)
    text = _strip_places(_collapse(text), place_names)
    text = _digits_to_words(text)
    return _collapse(text.lower())


_EDGE_PUNCT = "\"'.,!?;:()[]{}"


def normalize_utterance(text: str) -> str:
    """Utterance-side normalization used before n-gram matching.

    Same character rewrites as entity names, but without splitting at
    separators or stripping place names, which would destroy free text.
    """
    text = text.replace("&", "and")
    text = _GUESTHOUSE.sub("guest house", text)
    text = _digits_to_words(text)
    return text.lower()


def longest_common_substring(a: str, b: str) -> int:
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, 1):
            if ca == cb:
                v = prev[j - 1] + 1
                cur[j] = v
                if v > best:
                    best = v
        prev = cur
    return best


def match_ratio(a: str, b: str) -> float:
    """2M/T with M the longest contiguous common substring length."""
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return 2.0 * longest_common_substring(a, b) / total


@dataclass(frozen=True)
class NormalizedEntity:
    domain: str
    entity_id: str
    surface: str
    normalized: str

    @property
    def entity_ref(self) -> tuple[str, str]:
        return (self.domain, self.entity_id)

    @property
    def token_count(self) -> int:
        return len(self.normalized.split())


@dataclass(frozen=True)
class EntityMention:
    domain: str
    entity_id: str
    char_start: int
    ratio: float
    name: str = ""

    @property
    def entity_ref(self) -> tuple[str, str]:
        return (self.domain, self.entity_id)


def _max_trim(length: int, threshold: float) -> int:
    # 2M/(La+Lb) > thr and M <= Lb imply La - M < La * 2(1-thr)/(2-thr);
    # flooring keeps the candidate set a superset of the true matches.
    if threshold >= 1.0:
        return 0
    return int(length * 2.0 * (1.0 - threshold) / (2.0 - threshold))


def _trims(text: str, max_trim: int):
    n = len(text)
    for i in range(max_trim + 1):
        for j in range(max_trim + 1 - i):
            if i + j < n:
                yield text[i:n - j]


def _windows(text: str, offset: int):
    """Yield (token, start) with edge punctuation removed from each token."""
    for m in re.finditer(r"\S+", text):
        tok = m.group(0)
        stripped = tok.strip(_EDGE_PUNCT)
        if not stripped:
            continue
        lead = len(tok) - len(tok.lstrip(_EDGE_PUNCT))
        yield stripped, offset + m.start() + lead


class EntityTracker(BaseEstimator):
    """Locate knowledge-base entities mentioned in a dialogue.

    ``fit`` indexes the normalized names of every named entity in the KB;
    ``transform`` returns, per dialogue, the last ``max_entities`` distinct
    entities ordered by the character offset of their final mention.
    """

    def __init__(self, threshold=0.95, place_names=DEFAULT_PLACE_NAMES, max_entities=3, max_context_tokens=None):
        self.threshold = threshold
        self.place_names = place_names
        self.max_entities = max_entities
        self.max_context_tokens = max_context_tokens

    def fit(self, kb: KnowledgeBase, y=None):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        entities = []
        for domain, ent in kb.entities():
            if ent.entity_id == DOMAIN_ENTITY or not ent.name:
                continue
            norm = normalize_entity_name(ent.name, self.place_names)
            if norm:
                entities.append(NormalizedEntity(domain, ent.entity_id, ent.name, norm))
        index: dict[tuple[int, str], list[int]] = defaultdict(list)
        for k, ent in enumerate(entities):
            for core in set(_trims(ent.normalized, _max_trim(len(ent.normalized), self.threshold))):
                index[(ent.token_count, core)].append(k)
        self.entities_ = tuple(entities)
        self.index_ = dict(index)
        self.ngram_sizes_ = tuple(sorted({e.token_count for e in entities}))
        return self

    def _candidates(self, n: int, window: str):
        hits = set()
        for core in set(_trims(window, _max_trim(len(window), self.threshold))):
            hits.update(self.index_.get((n, core), ()))
        return hits

    def find_mentions(self, turns: Sequence[Turn]) -> list[EntityMention]:
        """Every (entity, window) pair above threshold, in context order."""
        check_is_fitted(self, "entities_")
        if self.max_context_tokens:
            from .dialogue import context_window
            turns = context_window(turns, self.max_context_tokens)
        found = []
        offset = 0
        for turn in turns:
            text = normalize_utterance(turn.text)
            toks = list(_windows(text, offset))
            for n in self.ngram_sizes_:
                for i in range(len(toks) - n + 1):
                    window = " ".join(t for t, _ in toks[i:i + n])
                    for k in self._candidates(n, window):
                        ent = self.entities_[k]
                        r = match_ratio(window, ent.normalized)
                        if r > self.threshold:
                            found.append(EntityMention(ent.domain, ent.entity_id, toks[i][1], r, ent.normalized))
            offset += len(text) + 1
        found.sort(key=lambda m: (m.char_start, -len(m.name), m.entity_id, m.domain))
        return found

    def track(self, turns: Sequence[Turn]) -> list[EntityMention]:
        last: dict[tuple[str, str], EntityMention] = {}
        for m in self.find_mentions(turns):
            prev = last.get(m.entity_ref)
            if prev is None or m.char_start >= prev.char_start:
                last[m.entity_ref] = m
        priority = sorted(last.values(), key=lambda m: (-m.char_start, -len(m.name), m.entity_id, m.domain))
        keep = priority[: self.max_entities]
        keep.sort(key=lambda m: (m.char_start, -len(m.name), m.entity_id, m.domain))
        return keep

    def transform(self, dialogues):
        return [self.track(d) for d in dialogues]


def track_entities(kb: KnowledgeBase, turns: Sequence[Turn], **params) -> list[EntityMention]:
    return EntityTracker(**params).fit(kb).track(turns)
