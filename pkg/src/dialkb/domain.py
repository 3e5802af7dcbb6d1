"""Three-way domain classification {Train, Taxi, Others} over the whole context."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import persist
from .dialogue import Dialogue, LabeledCorpus, Speaker, Turn
from .errors import DegenerateTrainingError, MissingDomainError, ParseError, ScorerUnavailable
from .kb import DOMAIN_ENTITY, KnowledgeBase, SnippetRef, _read_text
from .linear import make_vectorizer, predict_scores, train_linear


class DomainLabel(enum.Enum):
    # declaration order is the argmax tie-break order
    TRAIN = "Train"
    TAXI = "Taxi"
    OTHERS = "Others"

    @property
    def index(self) -> int:
        return _LABELS.index(self)


_LABELS = list(DomainLabel)


def gold_domain_label(ref: SnippetRef | str) -> DomainLabel:
    domain = ref.domain if isinstance(ref, SnippetRef) else str(ref)
    domain = domain.lower()
    if domain == "train":
        return DomainLabel.TRAIN
    if domain == "taxi":
        return DomainLabel.TAXI
    return DomainLabel.OTHERS


class Origin(enum.Enum):
    CORPUS = "corpus"
    ATTRACTION_AUGMENTED = "attraction_augmented"


@dataclass(frozen=True)
class DomainSample:
    context: Dialogue
    label: DomainLabel
    provenance: Origin = Origin.CORPUS

    def to_json(self) -> dict:
        return {"context": self.context.to_json(), "label": self.label.value, "provenance": self.provenance.value}

    @classmethod
    def from_json(cls, obj) -> "DomainSample":
        turns = [Turn(Speaker(t["speaker"]), t["text"]) for t in obj["context"]]
        return cls(Dialogue(turns), DomainLabel(obj["label"]), Origin(obj.get("provenance", "corpus")))


def context_text(d: Sequence[Turn]) -> str:
    return "\n".join(t.text for t in d)


def corpus_domain_samples(corpus: LabeledCorpus) -> list[DomainSample]:
    """Knowledge-seeking turns of a corpus labelled by their first gold snippet."""
    return [DomainSample(d, gold_domain_label(lab.knowledge[0])) for d, lab in corpus if lab.target]


class DomainClassifier(BaseEstimator, ClassifierMixin):
    """Softmax model over hashed n-grams of the full dialogue context."""

    def __init__(self, n_features=2 ** 18, epochs=10, learning_rate=0.05, alpha=1e-6,
                 batch_size=32, random_state=0):
        self.n_features = n_features
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X: Sequence[Sequence[Turn]], y: Sequence[DomainLabel]):
        y_idx = np.array([DomainLabel(v).index for v in y], dtype=np.int64)
        if len(X) != len(y_idx):
            raise ValueError("X and y lengths differ")
        if len(np.unique(y_idx)) < 2:
            raise DegenerateTrainingError("domain classifier training needs at least two classes")
        vec = make_vectorizer(self.n_features)
        coef, intercept, curve = train_linear(
            vec.transform([context_text(d) for d in X]), y_idx, len(_LABELS),
            epochs=self.epochs, learning_rate=self.learning_rate, alpha=self.alpha,
            batch_size=self.batch_size, seed=self.random_state,
        )
        self.coef_, self.intercept_, self.loss_curve_ = coef, intercept, curve
        self.n_features_ = int(self.n_features)
        self.classes_ = np.array(_LABELS, dtype=object)
        return self

    @classmethod
    def uniform(cls, n_features=2 ** 10) -> "DomainClassifier":
        """Zero-weight model: every context gets (1/3, 1/3, 1/3)."""
        model = cls(n_features=n_features)
        model.coef_ = np.zeros((len(_LABELS), n_features))
        model.intercept_ = np.zeros(len(_LABELS))
        model.n_features_ = n_features
        model.classes_ = np.array(_LABELS, dtype=object)
        return model

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        vec = make_vectorizer(self.n_features_)
        return predict_scores(vec.transform([context_text(d) for d in X]), self.coef_, self.intercept_)

    def predict(self, X):
        return [_LABELS[i] for i in np.argmax(self.predict_proba(X), axis=1)]

    def save(self, path) -> None:
        check_is_fitted(self, "coef_")
        persist.save_weights(path, persist.KIND_DOMAIN, self.coef_, self.intercept_)

    @classmethod
    def load(cls, path) -> "DomainClassifier":
        wf = persist.load_weights(path, persist.KIND_DOMAIN)
        model = cls(n_features=wf.coef.shape[1])
        model.coef_, model.intercept_ = wf.coef, wf.intercept
        model.n_features_ = wf.coef.shape[1]
        model.classes_ = np.array(_LABELS, dtype=object)
        return model


def classify_domain(model, d: Sequence[Turn]) -> tuple[DomainLabel, np.ndarray]:
    try:
        dist = np.asarray(model.predict_proba([d])[0], dtype=np.float64)
    except ScorerUnavailable as exc:
        exc.stage = exc.stage or "domain"
        raise
    return _LABELS[int(np.argmax(dist))], dist


def train_domain_classifier(samples: Sequence[DomainSample], **config) -> DomainClassifier:
    samples = list(samples)
    if not samples:
        raise DegenerateTrainingError("no domain samples")
    return DomainClassifier(**config).fit([s.context for s in samples], [s.label for s in samples])


@dataclass(frozen=True)
class SlotSpan:
    char_start: int
    char_end: int
    slot: str = "attraction-name"


def parse_slot_spans(source) -> list[list[list[SlotSpan]]]:
    """Sidecar file: per dialogue, per turn, a list of slot spans."""
    try:
        raw = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed span JSON: {exc.msg}") from None
    if not isinstance(raw, list):
        raise ParseError("span file must be a top-level array", "$")
    out = []
    for i, turns in enumerate(raw):
        if not isinstance(turns, list):
            raise ParseError("expected a list of turns", f"$[{i}]")
        out.append([
            [SlotSpan(int(s["char_start"]), int(s["char_end"]), s.get("slot", "attraction-name")) for s in spans]
            for spans in turns
        ])
    return out


def _substitute(text: str, spans: Sequence[SlotSpan], name: str) -> str:
    for span in sorted(spans, key=lambda s: s.char_start, reverse=True):
        text = text[:span.char_start] + name + text[span.char_end:]
    return text


def augment_attraction_dialogues(
    dialogues: Sequence[Dialogue],
    spans: Sequence[Sequence[Sequence[SlotSpan]]],
    kb: KnowledgeBase,
    rng_seed: int = 0,
    slot: str = "attraction-name",
) -> list[DomainSample]:
    """Re-target attraction dialogues at KB attraction entities.

    Each dialogue carrying at least one ``slot`` span gets a random
    attraction entity substituted into every such span and its final user
    utterance replaced by a random FAQ question of that entity.
    """
    if "attraction" not in kb.domains:
        raise MissingDomainError("knowledge base has no 'attraction' domain")
    if len(dialogues) != len(spans):
        raise ValueError("dialogues and span annotations must align")
    entities = [e for eid, e in kb.domains["attraction"].items() if eid != DOMAIN_ENTITY and e.docs]
    if not entities:
        raise MissingDomainError("attraction domain has no entities with FAQs")
    rng = np.random.default_rng(rng_seed)
    out = []
    for dialogue, turn_spans in zip(dialogues, spans):
        hits = [[s for s in ts if s.slot == slot] for ts in turn_spans]
        if not any(hits):
            continue
        ent = entities[int(rng.integers(len(entities)))]
        docs = list(ent.docs.values())
        question = docs[int(rng.integers(len(docs)))].question
        turns = [
            Turn(t.speaker, _substitute(t.text, hits[i] if i < len(hits) else (), ent.name))
            for i, t in enumerate(dialogue)
        ]
        turns[-1] = Turn(Speaker.USER, question)
        out.append(DomainSample(Dialogue(turns), DomainLabel.OTHERS, Origin.ATTRACTION_AUGMENTED))
    return out
