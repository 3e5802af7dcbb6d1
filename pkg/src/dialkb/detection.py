"""Knowledge-seeking turn detection.

The detector scores only the last user utterance. Training data is the
labelled corpus plus every knowledge-base question as an extra positive,
with an "it"-substituted copy for questions naming their own entity.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import persist
from .dialogue import LabeledCorpus, last_user_utterance
from .entity import DEFAULT_PLACE_NAMES, normalize_entity_name
from .errors import DegenerateTrainingError, DegenerateValidationError, ScorerUnavailable
from .kb import DOMAIN_ENTITY, KnowledgeBase
from .linear import make_vectorizer, predict_scores, train_linear


class Provenance(enum.Enum):
    CORPUS = "corpus"
    KB_QUESTION = "kb_question"
    KB_QUESTION_IT = "kb_question_it_replaced"


@dataclass(frozen=True)
class DetectionSample:
    utterance: str
    label: bool
    provenance: Provenance = Provenance.CORPUS

    def __post_init__(self):
        if not self.utterance.strip():
            raise ValueError("utterance must be non-empty")

    def to_json(self) -> dict:
        return {"utterance": self.utterance, "label": self.label, "provenance": self.provenance.value}

    @classmethod
    def from_json(cls, obj) -> "DetectionSample":
        return cls(obj["utterance"], bool(obj["label"]), Provenance(obj.get("provenance", "corpus")))


def _name_pattern(name: str) -> re.Pattern:
    # a leading article goes with the name: "Does the X have" -> "Does it have"
    return re.compile(r"(?:\bthe\s+)?(?<!\w)" + re.escape(name) + r"(?!\w)", re.IGNORECASE)


def replace_entity_with_it(question: str, surface: str, place_names=DEFAULT_PLACE_NAMES) -> str | None:
    """``question`` with the entity name replaced by "it", or None if absent."""
    for name in (surface, normalize_entity_name(surface, place_names)):
        if not name:
            continue
        pat = _name_pattern(name)
        if pat.search(question):
            return re.sub(r"\s+", " ", pat.sub("it", question)).strip()
    return None


def augment_detection_data(kb: KnowledgeBase, place_names=DEFAULT_PLACE_NAMES) -> list[DetectionSample]:
    samples = []
    for ref in kb:
        ent = kb.entity(ref.domain, ref.entity_id)
        question = kb.resolve(ref).question
        samples.append(DetectionSample(question, True, Provenance.KB_QUESTION))
        if ent.entity_id != DOMAIN_ENTITY and ent.name:
            replaced = replace_entity_with_it(question, ent.name, place_names)
            if replaced:
                samples.append(DetectionSample(replaced, True, Provenance.KB_QUESTION_IT))
    return samples


def corpus_detection_samples(corpus: LabeledCorpus) -> list[DetectionSample]:
    return [DetectionSample(last_user_utterance(d), lab.target) for d, lab in corpus]


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def tune_threshold(scores: Sequence[float], labels: Sequence[bool]) -> tuple[float, float]:
    """F1-optimal threshold for the rule ``p > t``.

    Candidates are 0, 1 and the midpoints between adjacent distinct scores;
    ties go to the smallest threshold. Returns ``(threshold, f1)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and aligned")
    if labels.all() or not labels.any():
        raise DegenerateValidationError("validation needs at least one positive and one negative")
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    candidates = np.unique(np.concatenate([[0.0, 1.0], mids]))

    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    pos_sorted = labels[order].astype(np.int64)
    # positives strictly above t: suffix counts from the first index with score > t
    suffix_pos = np.concatenate([np.cumsum(pos_sorted[::-1])[::-1], [0]])
    n_pos = int(labels.sum())
    best_t, best_f1 = None, -1.0
    for t in candidates:
        first = int(np.searchsorted(s_sorted, t, side="right"))
        tp = int(suffix_pos[first])
        predicted = len(scores) - first
        f1 = f1_from_counts(tp, predicted - tp, n_pos - tp)
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t, best_f1


class KnowledgeSeekingDetector(BaseEstimator, ClassifierMixin):
    """Binary logistic model over hashed word/char n-grams of one utterance."""

    def __init__(self, n_features=2 ** 18, epochs=10, learning_rate=0.05, alpha=1e-6,
                 batch_size=32, threshold=0.5, random_state=0):
        self.n_features = n_features
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.batch_size = batch_size
        self.threshold = threshold
        self.random_state = random_state

    def fit(self, X: Sequence[str], y: Sequence[bool]):
        y = np.asarray(y, dtype=bool)
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        if len(y) == 0 or y.all() or not y.any():
            raise DegenerateTrainingError("detector training needs both classes")
        vec = make_vectorizer(self.n_features)
        coef, intercept, curve = train_linear(
            vec.transform(list(X)), y.astype(np.int64), 2,
            epochs=self.epochs, learning_rate=self.learning_rate, alpha=self.alpha,
            batch_size=self.batch_size, seed=self.random_state,
        )
        self.coef_, self.intercept_, self.loss_curve_ = coef, intercept, curve
        self.threshold_ = float(self.threshold)
        self.classes_ = np.array([False, True])
        self.n_features_ = int(self.n_features)
        return self

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        """Positive-class probability for each text."""
        check_is_fitted(self, "coef_")
        return predict_scores(make_vectorizer(self.n_features_).transform(list(texts)), self.coef_, self.intercept_)

    def predict_proba(self, X):
        p = self.score_texts(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.score_texts(X) > self.threshold_

    def tune_threshold(self, X, y) -> float:
        self.threshold_, self.validation_f1_ = tune_threshold(self.score_texts(X), y)
        return self.threshold_

    def save(self, path) -> None:
        check_is_fitted(self, "coef_")
        persist.save_weights(path, persist.KIND_DETECTOR, self.coef_, self.intercept_, self.threshold_)

    @classmethod
    def load(cls, path) -> "KnowledgeSeekingDetector":
        wf = persist.load_weights(path, persist.KIND_DETECTOR)
        model = cls(n_features=wf.coef.shape[1], threshold=wf.threshold)
        model.coef_, model.intercept_ = wf.coef, wf.intercept
        model.threshold_ = wf.threshold
        model.n_features_ = wf.coef.shape[1]
        model.classes_ = np.array([False, True])
        return model


DetectionModel = KnowledgeSeekingDetector


def detect(model, utterance: str) -> tuple[float, bool]:
    """Score one utterance; positive iff ``p > threshold`` (strict)."""
    try:
        p = float(model.score_texts([utterance])[0])
    except ScorerUnavailable as exc:
        exc.stage = exc.stage or "detection"
        raise
    return p, p > model.threshold_


def train_detector(samples: Iterable[DetectionSample], **config) -> KnowledgeSeekingDetector:
    samples = list(samples)
    if not samples:
        raise DegenerateTrainingError("no detection samples")
    model = KnowledgeSeekingDetector(**config)
    return model.fit([s.utterance for s in samples], [s.label for s in samples])
