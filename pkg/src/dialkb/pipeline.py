"""End-to-end turn handling: detection, hierarchical filtering, ranking, response."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .detection import detect
from .dialogue import LabeledCorpus, Turn, last_user_utterance
from .domain import DomainLabel, classify_domain
from .errors import DialKBError, EmptyCandidatesError, GeneratorUnavailable, ScorerUnavailable
from .kb import KnowledgeBase, SnippetRef, candidates_for
from .ranker import RankedCandidates, rank

DEFAULT_FOLLOW_UP = "Is there anything else I can help you with?"
PREDICTION_TOP_K = 5


class TemplateGenerator:
    """Grounded reply: the selected answer verbatim plus a follow-up sentence."""

    def __init__(self, follow_up: str = DEFAULT_FOLLOW_UP):
        self.follow_up = follow_up

    def generate(self, d: Sequence[Turn], answer: str) -> str:
        answer = answer.strip()
        return f"{answer} {self.follow_up}".strip() if self.follow_up else answer


def generate_response(d: Sequence[Turn], top1_answer: str, generator=None) -> str:
    if not top1_answer or not top1_answer.strip():
        raise ValueError("top-1 answer must be non-empty")
    generator = generator or TemplateGenerator()
    try:
        return generator.generate(d, top1_answer)
    except ScorerUnavailable as exc:
        raise GeneratorUnavailable(str(exc), cause=exc) from exc


@dataclass
class PipelineConfig:
    detection_threshold: float | None = None
    entity_threshold: float = 0.95
    fallback: str = "entity_domains"
    candidate_cap: int | None = None
    max_context_tokens: int | None = 128

    def __post_init__(self):
        for name in ("detection_threshold", "entity_threshold"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.fallback not in ("entity_domains", "all"):
            raise ValueError("fallback must be 'entity_domains' or 'all'")
        if self.candidate_cap is not None and self.candidate_cap < 1:
            raise ValueError("candidate_cap must be >= 1")


@dataclass
class TurnResult:
    knowledge_seeking: bool
    selected: RankedCandidates | None = None
    response: str | None = None
    timing: dict = field(default_factory=dict)
    scorer_calls: int = 0
    domain: DomainLabel | None = None
    entities: tuple = ()
    detection_score: float | None = None

    def __post_init__(self):
        if self.knowledge_seeking != (self.selected is not None) or self.knowledge_seeking != (self.response is not None):
            raise ValueError("selected and response are present iff the turn is knowledge-seeking")

    def to_prediction(self, top_k: int = PREDICTION_TOP_K) -> dict:
        if not self.knowledge_seeking:
            return {"target": False}
        return {
            "target": True,
            "knowledge": [r.to_json() for r in self.selected.refs[:top_k]],
            "response": self.response,
        }


@dataclass
class BatchReport:
    results: list
    errors: list
    total_scorer_calls: int
    exhaustive_scorer_calls: int
    timing: dict

    @property
    def scorer_call_ratio(self) -> float:
        if not self.exhaustive_scorer_calls:
            return 0.0
        return self.total_scorer_calls / self.exhaustive_scorer_calls

    def predictions(self) -> list[dict]:
        return [r.to_prediction() if r is not None else {"target": False} for r in self.results]

    def summary(self) -> dict:
        return {
            "samples": len(self.results),
            "errors": [{"index": i, "stage": s, "message": m} for i, s, m in self.errors],
            "scorer_calls": self.total_scorer_calls,
            "exhaustive_scorer_calls": self.exhaustive_scorer_calls,
            "scorer_call_ratio": self.scorer_call_ratio,
            "timing_seconds": self.timing,
        }


class KnowledgePipeline:
    """Detection -> domain -> entity tracking -> ranking -> response.

    ``detector`` needs ``score_texts`` and ``threshold_``; ``domain_model``
    needs ``predict_proba`` over dialogues; ``ranker`` needs
    ``score_inputs``; ``tracker`` is a fitted EntityTracker. Built-in and
    gateway-backed models are interchangeable.
    """

    def __init__(self, kb: KnowledgeBase, detector, domain_model, tracker, ranker,
                 generator=None, config: PipelineConfig | None = None):
        self.kb = kb
        self.detector = detector
        self.domain_model = domain_model
        self.tracker = tracker
        self.ranker = ranker
        self.generator = generator or TemplateGenerator()
        self.config = config or PipelineConfig()

    def candidates(self, d: Sequence[Turn], domain: DomainLabel, entity_refs=None) -> list[SnippetRef]:
        """Hierarchical filter. ``entity_refs`` are (domain, entity_id) pairs.

        Passing gold values for ``domain`` and ``entity_refs`` gives the
        oracle-mode candidate set.
        """
        kb = self.kb
        if domain in (DomainLabel.TRAIN, DomainLabel.TAXI):
            name = domain.value.lower()
            cands = candidates_for(kb, name) if name in kb.domains else []
        elif entity_refs:
            cands = []
            for dom, eid in entity_refs:
                cands.extend(candidates_for(kb, dom, [eid]))
        elif self.config.fallback == "all":
            cands = list(kb)
        else:
            cands = [r for dom in kb.entity_domains() for r in candidates_for(kb, dom)]
        if not cands:
            # predicted a domain the KB lacks; widen rather than fail
            cands = list(kb)
        if not cands:
            raise EmptyCandidatesError("knowledge base is empty")
        if self.config.candidate_cap:
            cands = cands[: self.config.candidate_cap]
        return cands

    def select_knowledge(self, d: Sequence[Turn]) -> RankedCandidates:
        return self._select(d, {})[0]

    def _select(self, d, timing):
        t0 = time.perf_counter()
        label, _ = classify_domain(self.domain_model, d)
        t1 = time.perf_counter()
        mentions = []
        if label is DomainLabel.OTHERS:
            mentions = self.tracker.track(d)
        t2 = time.perf_counter()
        cands = self.candidates(d, label, [m.entity_ref for m in mentions])
        ranked = rank(self.ranker, d, cands, self.kb, self.config.max_context_tokens)
        t3 = time.perf_counter()
        timing.update(domain=t1 - t0, entity=t2 - t1, ranking=t3 - t2)
        return ranked, label, tuple(m.entity_ref for m in mentions), len(cands)

    def run_turn(self, d: Sequence[Turn]) -> TurnResult:
        timing = {}
        t0 = time.perf_counter()
        p = float(self._detect_score(d))
        threshold = self.config.detection_threshold
        if threshold is None:
            threshold = self.detector.threshold_
        timing["detection"] = time.perf_counter() - t0
        if not p > threshold:
            return TurnResult(False, timing=timing, detection_score=p)
        ranked, label, ents, calls = self._select(d, timing)
        t1 = time.perf_counter()
        answer = self.kb.resolve(ranked.top).answer
        response = generate_response(d, answer, self.generator)
        timing["generation"] = time.perf_counter() - t1
        return TurnResult(True, ranked, response, timing, calls, label, ents, p)

    def _detect_score(self, d):
        p, _ = detect(self.detector, last_user_utterance(d))
        return p

    def batch_run(self, dialogues, workers: int = 1) -> BatchReport:
        if isinstance(dialogues, LabeledCorpus):
            dialogues = dialogues.dialogues
        dialogues = list(dialogues)
        t0 = time.perf_counter()

        def one(item):
            idx, d = item
            try:
                return idx, self.run_turn(d), None
            except (DialKBError, ValueError, LookupError) as exc:
                stage = getattr(exc, "stage", None) or "pipeline"
                return idx, None, (idx, stage, f"{type(exc).__name__}: {exc}")

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(one, enumerate(dialogues)))
        else:
            outcomes = [one(item) for item in enumerate(dialogues)]
        outcomes.sort(key=lambda o: o[0])
        results = [r for _, r, _ in outcomes]
        errors = [e for _, _, e in outcomes if e is not None]
        stages: dict[str, float] = {}
        for r in results:
            if r is not None:
                for k, v in r.timing.items():
                    stages[k] = stages.get(k, 0.0) + v
        stages["wall"] = time.perf_counter() - t0
        calls = sum(r.scorer_calls for r in results if r is not None)
        return BatchReport(results, errors, calls, len(dialogues) * len(self.kb), stages)


def select_knowledge(d: Sequence[Turn], kb: KnowledgeBase, models: dict) -> RankedCandidates:
    return KnowledgePipeline(kb, **models).select_knowledge(d)


def run_turn(d: Sequence[Turn], kb: KnowledgeBase, models: dict, cfg: PipelineConfig | None = None) -> TurnResult:
    return KnowledgePipeline(kb, config=cfg, **models).run_turn(d)


def write_predictions(path, report: BatchReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.predictions(), fh, ensure_ascii=False, indent=1)
        fh.write("\n")
