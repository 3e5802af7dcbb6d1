"""Knowledge matching: score FAQ snippets against a dialogue context.

The built-in scorer is a linear function of five lexical features of a
``RankInput``; its weights are learned with a pairwise hinge loss over
positives and mixed-strategy negatives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.utils.validation import check_is_fitted

from . import persist
from .dialogue import Speaker, Turn, context_window
from .entity import EntityTracker, normalize_entity_name, normalize_utterance
from .errors import ConfigError, DegenerateTrainingError, EmptyCandidatesError, ScorerUnavailable
from .kb import DOMAIN_ENTITY, KnowledgeBase, SnippetRef

SEP = "[SEP]"
_USER_PREFIX = f"{Speaker.USER.tag}: "
FEATURE_NAMES = (
    "context_snippet_cosine",
    "query_question_cosine",
    "query_snippet_cosine",
    "name_in_context",
    "question_length_prior",
    "name_recency",
)


@dataclass(frozen=True)
class RankInput:
    context_text: str
    domain: str
    entity_name: str | None
    question: str
    answer: str

    def __post_init__(self):
        if not self.context_text.strip():
            raise ValueError("context_text must be non-empty")

    @property
    def last_user_utterance(self) -> str:
        last = self.context_text.rsplit("\n", 1)[-1]
        return last[len(_USER_PREFIX):] if last.startswith(_USER_PREFIX) else last

    def flatten(self) -> str:
        parts = [self.context_text, self.domain]
        if self.entity_name is not None:
            parts.append(self.entity_name)
        parts += [self.question, self.answer]
        return f" {SEP} ".join(parts)

    @classmethod
    def from_flat(cls, text: str) -> "RankInput":
        parts = text.split(f" {SEP} ")
        if len(parts) == 5:
            return cls(*parts)
        if len(parts) == 4:
            return cls(parts[0], parts[1], None, parts[2], parts[3])
        raise ValueError("flattened ranking input must have 4 or 5 segments")


def build_input(d: Sequence[Turn], ref: SnippetRef, kb: KnowledgeBase, max_context_tokens: int | None = 128) -> RankInput:
    snippet = kb.resolve(ref)
    ent = kb.entity(ref.domain, ref.entity_id)
    turns = context_window(d, max_context_tokens) if max_context_tokens else list(d)
    ctx = "\n".join(f"{t.speaker.tag}: {t.text}" for t in turns)
    name = None if ent.entity_id == DOMAIN_ENTITY else ent.name
    return RankInput(ctx, ref.domain, name, snippet.question, snippet.answer)


@dataclass(frozen=True)
class RankedCandidates:
    items: tuple[tuple[SnippetRef, float], ...]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def refs(self) -> list[SnippetRef]:
        return [r for r, _ in self.items]

    @property
    def top(self) -> SnippetRef:
        return self.items[0][0]

    def to_json(self, k: int | None = None) -> list[dict]:
        return [dict(r.to_json(), score=s) for r, s in self.items[:k]]


def rank(scorer, d: Sequence[Turn], candidates: Sequence[SnippetRef], kb: KnowledgeBase,
         max_context_tokens: int | None = 128) -> RankedCandidates:
    """Score ``candidates`` and sort by descending score, stable on ties."""
    if not candidates:
        raise EmptyCandidatesError("no candidates to rank")
    inputs = [build_input(d, ref, kb, max_context_tokens) for ref in candidates]
    try:
        scores = np.asarray(scorer.score_inputs(inputs), dtype=np.float64)
    except ScorerUnavailable as exc:
        exc.stage = exc.stage or "ranking"
        raise
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return RankedCandidates(tuple((candidates[i], float(scores[i])) for i in order))


def hinge_loss(s_pos, s_neg, margin: float = 1.0):
    if margin <= 0:
        raise ConfigError("margin must be positive")
    return np.maximum(0.0, margin - np.asarray(s_pos) + np.asarray(s_neg))


@dataclass(frozen=True)
class NegativeSamplingConfig:
    ratios: tuple[float, float, float, float] = (0.1, 0.1, 0.1, 0.7)
    negatives_per_positive: int = 4
    seed: int = 0

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.ratios)
        object.__setattr__(self, "ratios", ratios)
        if len(ratios) != 4 or any(not 0.0 <= r <= 1.0 for r in ratios):
            raise ConfigError("ratios must be four values in [0, 1]")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")
        if self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")


class NegativeSampler:
    """Draws negatives from four pools.

    1 whole KB, 2 same domain but other entities, 3 the positive's own
    entity, 4 other entities mentioned in the dialogue. An empty pool falls
    back along 4 -> 3 -> 2 -> 1; the positive itself is never returned.
    """

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self._all = list(kb)
        self._by_domain: dict[str, list[SnippetRef]] = {}
        self._by_entity: dict[tuple[str, str], list[SnippetRef]] = {}
        for ref in self._all:
            self._by_domain.setdefault(ref.domain, []).append(ref)
            self._by_entity.setdefault((ref.domain, ref.entity_id), []).append(ref)

    def pools(self, positive: SnippetRef, mentioned: Iterable[tuple[str, str]]) -> list[list[SnippetRef]]:
        key = (positive.domain, positive.entity_id)
        p1 = [r for r in self._all if r != positive]
        p2 = [r for r in self._by_domain.get(positive.domain, ()) if (r.domain, r.entity_id) != key]
        p3 = [r for r in self._by_entity.get(key, ()) if r != positive]
        others = []
        for ent in dict.fromkeys(tuple(m) for m in mentioned):
            if ent != key:
                others.extend(self._by_entity.get(ent, ()))
        return [p1, p2, p3, others]

    def sample(self, positive: SnippetRef, mentioned, cfg: NegativeSamplingConfig, rng: np.random.Generator):
        """Returns ``[(ref, strategy)]`` with strategy numbered 1..4 as actually used."""
        pools = self.pools(positive, mentioned)
        if not pools[0]:
            raise EmptyCandidatesError("knowledge base holds no snippet besides the positive")
        out = []
        probs = np.asarray(cfg.ratios) / np.sum(cfg.ratios)
        for _ in range(cfg.negatives_per_positive):
            strategy = int(rng.choice(4, p=probs))
            while not pools[strategy]:
                strategy -= 1
            pool = pools[strategy]
            out.append((pool[int(rng.integers(len(pool)))], strategy + 1))
        return out


def sample_negatives(positive: SnippetRef, kb: KnowledgeBase, mentioned, cfg: NegativeSamplingConfig,
                     rng: np.random.Generator | None = None) -> list[SnippetRef]:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return [ref for ref, _ in NegativeSampler(kb).sample(positive, mentioned, cfg, rng)]


_TOKEN = re.compile(r"\S+")


def _find_last(haystack: str, needle: str) -> int:
    """End offset of the last word-bounded occurrence of needle, or -1."""
    if not needle:
        return -1
    end = -1
    for m in re.finditer(r"(?<!\w)" + re.escape(needle) + r"(?!\w)", haystack):
        end = m.end()
    return end


class KnowledgeRanker(BaseEstimator):
    """Linear relevance scorer trained with pairwise hinge loss.

    Features per (context, snippet): TF-IDF cosine of context vs question+answer,
    TF-IDF cosine of the last user utterance vs question and vs question+answer,
    whether the entity (or domain, for domain-level snippets) name occurs in
    the context, a question-length prior, and how late in the context that
    name last occurs.
    """

    def __init__(self, margin=1.0, ratios=(0.1, 0.1, 0.1, 0.7), negatives_per_positive=4,
                 epochs=20, learning_rate=0.05, alpha=1e-4, batch_size=16,
                 max_context_tokens=128, random_state=0):
        self.margin = margin
        self.ratios = ratios
        self.negatives_per_positive = negatives_per_positive
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.batch_size = batch_size
        self.max_context_tokens = max_context_tokens
        self.random_state = random_state

    def bind(self, kb: KnowledgeBase):
        """Build the TF-IDF index over ``kb`` without touching the weights."""
        self.kb_ = kb
        texts = [f"{s.question} {s.answer}" for s in (kb.resolve(r) for r in kb)]
        self.tfidf_ = TfidfVectorizer(sublinear_tf=True, stop_words="english")
        if texts:
            self.tfidf_.fit(texts)
        self._name_cache = {}
        return self

    def _norm_name(self, inp: RankInput) -> str:
        raw = inp.entity_name if inp.entity_name is not None else inp.domain
        hit = self._name_cache.get(raw)
        if hit is None:
            hit = normalize_entity_name(raw) if inp.entity_name is not None else raw.lower()
            self._name_cache[raw] = hit
        return hit

    def features(self, inputs: Sequence[RankInput]) -> np.ndarray:
        check_is_fitted(self, "tfidf_")
        if not inputs:
            return np.zeros((0, len(FEATURE_NAMES)))
        ctx_keys = list(dict.fromkeys(i.context_text for i in inputs))
        ctx_pos = {c: k for k, c in enumerate(ctx_keys)}
        query_keys = [RankInput(c, "", None, "", "").last_user_utterance for c in ctx_keys]
        tf = self.tfidf_
        ctx_m = tf.transform(ctx_keys)
        qry_m = tf.transform(query_keys)
        snip_m = tf.transform([f"{i.question} {i.answer}" for i in inputs])
        ques_m = tf.transform([i.question for i in inputs])
        rows = np.array([ctx_pos[i.context_text] for i in inputs])
        f_ctx = np.asarray(ctx_m[rows].multiply(snip_m).sum(axis=1)).ravel()
        f_qry = np.asarray(qry_m[rows].multiply(ques_m).sum(axis=1)).ravel()
        f_qsn = np.asarray(qry_m[rows].multiply(snip_m).sum(axis=1)).ravel()
        norm_ctx = [normalize_utterance(c) for c in ctx_keys]
        f_in = np.zeros(len(inputs))
        f_rec = np.zeros(len(inputs))
        f_len = np.zeros(len(inputs))
        for k, inp in enumerate(inputs):
            text = norm_ctx[rows[k]]
            end = _find_last(text, self._norm_name(inp))
            if end >= 0:
                f_in[k] = 1.0
                f_rec[k] = end / len(text)
            f_len[k] = 1.0 / (1.0 + len(_TOKEN.findall(inp.question)))
        return np.column_stack([f_ctx, f_qry, f_qsn, f_in, f_len, f_rec])

    def score_inputs(self, inputs: Sequence[RankInput]) -> np.ndarray:
        check_is_fitted(self, "coef_")
        # row-wise sum rather than matmul: a snippet's score must not depend on batch size
        return (self.features(inputs) * self.coef_).sum(axis=1)

    def fit(self, X: Sequence[Sequence[Turn]], y: Sequence, kb: KnowledgeBase, mentions=None):
        """Learn weights from dialogues ``X`` and gold snippet refs ``y``.

        ``y`` items may be a single SnippetRef or a list of them; every
        listed ref is a positive. ``mentions`` optionally gives, per
        dialogue, the (domain, entity_id) pairs mentioned in it; by default
        they come from an EntityTracker over ``kb``.
        """
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        cfg = NegativeSamplingConfig(tuple(self.ratios), self.negatives_per_positive, self.random_state)
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        if not len(X):
            raise DegenerateTrainingError("ranker training needs at least one positive")
        self.bind(kb)
        if mentions is None:
            tracker = EntityTracker().fit(kb)
            mentions = [[m.entity_ref for m in tracker.track(d)] for d in X]
        sampler = NegativeSampler(kb)
        rng = np.random.default_rng(self.random_state)
        pos_inputs, neg_inputs = [], []
        for d, gold, mentioned in zip(X, y, mentions):
            golds = [gold] if isinstance(gold, SnippetRef) else list(gold)
            for pos in golds:
                p_in = build_input(d, pos, kb, self.max_context_tokens)
                for neg, _ in sampler.sample(pos, mentioned, cfg, rng):
                    pos_inputs.append(p_in)
                    neg_inputs.append(build_input(d, neg, kb, self.max_context_tokens))
        if not pos_inputs:
            raise DegenerateTrainingError("ranker training needs at least one positive")
        diff = self.features(pos_inputs) - self.features(neg_inputs)
        self.coef_, self.loss_curve_ = _train_pairwise(
            diff, self.margin, self.epochs, self.learning_rate, self.alpha, self.batch_size, rng)
        self.n_pairs_ = len(diff)
        return self

    def rank(self, d: Sequence[Turn], candidates: Sequence[SnippetRef], kb: KnowledgeBase | None = None) -> RankedCandidates:
        return rank(self, d, candidates, kb if kb is not None else self.kb_, self.max_context_tokens)

    def save(self, path) -> None:
        check_is_fitted(self, "coef_")
        persist.save_weights(path, persist.KIND_RANKER, self.coef_, np.zeros(1), self.margin)

    @classmethod
    def load(cls, path, kb: KnowledgeBase) -> "KnowledgeRanker":
        wf = persist.load_weights(path, persist.KIND_RANKER)
        if wf.coef.shape != (1, len(FEATURE_NAMES)):
            raise ValueError(f"ranker weight file has shape {wf.coef.shape}")
        model = cls(margin=wf.threshold)
        model.coef_ = wf.coef[0].copy()
        return model.bind(kb)


def _train_pairwise(diff, margin, epochs, lr, alpha, batch_size, rng):
    """Minibatch subgradient descent on mean hinge(margin - w.diff)."""
    w = np.zeros(diff.shape[1])
    curve = []
    n = len(diff)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = diff[order[start:start + batch_size]]
            active = (margin - batch @ w) > 0
            grad = alpha * w
            if active.any():
                grad = grad - batch[active].sum(axis=0) / len(batch)
            w = w - lr * grad
        curve.append(float(np.mean(hinge_loss(diff @ w, 0.0, margin))))
    return w, curve
