"""Knowledge-seeking turn detection, hierarchical FAQ selection and grounded responses."""

from .detection import (
    DetectionSample, KnowledgeSeekingDetector, Provenance, augment_detection_data, detect,
    train_detector, tune_threshold,
)
from .dialogue import (
    Dialogue, LabeledCorpus, Speaker, Turn, TurnLabel, context_window, last_user_utterance,
    load_corpus, load_corpus_files,
)
from .domain import (
    DomainClassifier, DomainLabel, DomainSample, augment_attraction_dialogues, classify_domain,
    gold_domain_label, train_domain_classifier,
)
from .entity import EntityMention, EntityTracker, match_ratio, normalize_entity_name, track_entities
from .errors import (
    AlignmentError, ConfigError, DegenerateTrainingError, DegenerateValidationError, DialKBError,
    EmptyCandidatesError, EmptyContextError, GeneratorUnavailable, MissingDomainError, ParseError,
    ProtocolError, ScorerUnavailable, UnknownRefError, ValidationError,
)
from .kb import (
    EntityRecord, KnowledgeBase, Snippet, SnippetRef, candidates_for, kb_stats, load_knowledge_base,
    load_knowledge_file,
)
from .metrics import (
    bleu, detection_metrics, generation_metrics, meteor_lite, paired_t_test, rouge, selection_metrics,
)
from .pipeline import KnowledgePipeline, PipelineConfig, TurnResult, generate_response, run_turn, select_knowledge
from .ranker import (
    KnowledgeRanker, NegativeSamplingConfig, RankedCandidates, RankInput, build_input, hinge_loss, rank,
    sample_negatives,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "ConfigError", "DegenerateTrainingError", "DegenerateValidationError", "DetectionSample",
    "DialKBError", "Dialogue", "DomainClassifier", "DomainLabel", "DomainSample", "EmptyCandidatesError",
    "EmptyContextError", "EntityMention", "EntityRecord", "EntityTracker", "GeneratorUnavailable",
    "KnowledgeBase", "KnowledgePipeline", "KnowledgeRanker", "KnowledgeSeekingDetector", "LabeledCorpus",
    "MissingDomainError", "NegativeSamplingConfig", "ParseError", "PipelineConfig", "ProtocolError",
    "Provenance", "RankInput", "RankedCandidates", "ScorerUnavailable", "Snippet", "SnippetRef", "Speaker",
    "Turn", "TurnLabel", "TurnResult", "UnknownRefError", "ValidationError", "augment_attraction_dialogues",
    "augment_detection_data", "bleu", "build_input", "candidates_for", "classify_domain", "context_window",
    "detect", "detection_metrics", "generate_response", "generation_metrics", "gold_domain_label", "hinge_loss",
    "kb_stats", "last_user_utterance", "load_corpus", "load_corpus_files", "load_knowledge_base",
    "load_knowledge_file", "match_ratio", "meteor_lite", "normalize_entity_name", "paired_t_test", "rank",
    "rouge", "run_turn", "sample_negatives", "select_knowledge", "selection_metrics", "track_entities",
    "train_detector", "train_domain_classifier", "tune_threshold"
]
