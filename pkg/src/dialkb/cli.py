"""Command-line entry point: ``dialkb <command> ...``.

Exit codes: 0 success, 1 internal error, 2 user or input error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .detection import (
    KnowledgeSeekingDetector, augment_detection_data, corpus_detection_samples, train_detector,
)
from .dialogue import last_user_utterance, load_corpus_files, parse_logs, parse_labels
from .domain import (
    DomainClassifier, DomainSample, augment_attraction_dialogues, corpus_domain_samples, parse_slot_spans,
    train_domain_classifier,
)
from .entity import DEFAULT_PLACE_NAMES, EntityTracker
from .errors import ConfigError, DialKBError, ScorerUnavailable
from .evaluation import MODES, evaluate
from .kb import kb_stats, load_knowledge_file
from .metrics import format_report, paired_t_test, selection_metrics
from .pipeline import KnowledgePipeline, PipelineConfig, TemplateGenerator, write_predictions
from .ranker import KnowledgeRanker

MODEL_FILES = {"detector": "detector.bin", "domain": "domain.bin", "ranker": "ranker.bin"}


@dataclass
class RunConfig:
    """All tunables of a run; loaded from JSON and patched with ``--set``."""

    seed: int = 0
    detection_threshold: float | None = None
    entity_threshold: float = 0.95
    place_names: list = field(default_factory=lambda: list(DEFAULT_PLACE_NAMES))
    entity_context_tokens: int | None = None
    ratios: list = field(default_factory=lambda: [0.1, 0.1, 0.1, 0.7])
    negatives_per_positive: int = 4
    margin: float = 1.0
    max_context_tokens: int = 128
    fallback: str = "entity_domains"
    candidate_cap: int | None = None
    follow_up: str = "Is there anything else I can help you with?"
    generator: str = "template"
    beam_width: int = 5  # forwarded to nobody; external generators own decoding
    n_features: int = 2 ** 18
    detector_epochs: int = 10
    domain_epochs: int = 10
    ranker_epochs: int = 20
    gateway: str | None = None
    gateway_tasks: list = field(default_factory=lambda: ["detector", "domain", "ranker", "generator"])
    gateway_timeout: float = 5.0
    gateway_pool_size: int = 1
    gateway_max_in_flight: int = 8
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_sources(cls, config_path=None, overrides=()) -> "RunConfig":
        data = {}
        if config_path:
            try:
                data = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{config_path}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{config_path}: config must be an object")
        known = {f.name for f in fields(cls)}
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            data[key.strip()] = value
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if len(self.ratios) != 4 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError("ratios must be four numbers summing to 1")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.generator not in ("template", "gateway"):
            raise ConfigError("generator must be 'template' or 'gateway'")
        try:
            self.pipeline_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(self.detection_threshold, self.entity_threshold, self.fallback,
                              self.candidate_cap, self.max_context_tokens)

    def path(self, args, name):
        value = getattr(args, name, None)
        return value if value is not None else self.paths.get(name)


class UserError(Exception):
    pass


def _require(value, flag):
    if value is None:
        raise UserError(f"missing required {flag}")
    return value


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _model_path(cfg, args, kind):
    out = getattr(args, "out", None)
    if out:
        return Path(out)
    models = _require(cfg.path(args, "models"), "--models")
    return Path(models) / MODEL_FILES[kind]


def _corpus(cfg, args, prefix=""):
    logs = _require(cfg.path(args, f"{prefix}logs"), f"--{prefix.replace('_', '-')}logs")
    labels = _require(cfg.path(args, f"{prefix}labels"), f"--{prefix.replace('_', '-')}labels")
    return load_corpus_files(logs, labels)


def _kb(cfg, args):
    return load_knowledge_file(_require(cfg.path(args, "kb"), "--kb"))


# commands ------------------------------------------------------------------

def cmd_kb(cfg, args):
    kb = _kb(cfg, args)
    stats = kb_stats(kb)
    if args.action == "validate":
        print(f"ok: {len(kb.domains)} domains, {stats.total_entities} entities, {stats.total_snippets} snippets")
    else:
        sys.stdout.write(stats.format_table())
        if args.json:
            _write_json(args.json, stats.to_json())
    return 0


def cmd_augment(cfg, args):
    kb = _kb(cfg, args)
    if args.kind == "detection":
        samples = augment_detection_data(kb, cfg.place_names)
        if cfg.path(args, "logs"):
            samples += corpus_detection_samples(_corpus(cfg, args))
        rows = [s.to_json() for s in samples]
        counts = {}
        for s in samples:
            key = f"{s.provenance.value}:{'pos' if s.label else 'neg'}"
            counts[key] = counts.get(key, 0) + 1
    else:
        logs = _require(cfg.path(args, "logs"), "--logs")
        spans = _require(args.spans, "--spans")
        dialogues = parse_logs(Path(logs))
        samples = augment_attraction_dialogues(dialogues, parse_slot_spans(Path(spans)), kb, cfg.seed)
        rows = [s.to_json() for s in samples]
        counts = {"attraction_augmented": len(samples)}
    _write_json(_require(args.out, "--out"), rows)
    print(json.dumps({"samples": len(rows), "by_kind": dict(sorted(counts.items()))}))
    return 0


def _load_samples(path, cls):
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [cls.from_json(r) for r in raw]


def cmd_train(cfg, args):
    out = _model_path(cfg, args, args.kind)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "detector":
        from .detection import DetectionSample

        samples = [s for path in args.samples or [] for s in _load_samples(path, DetectionSample)]
        if cfg.path(args, "kb") and not args.samples:
            samples += augment_detection_data(_kb(cfg, args), cfg.place_names)
        if cfg.path(args, "logs"):
            samples += corpus_detection_samples(_corpus(cfg, args))
        model = train_detector(samples, n_features=cfg.n_features, epochs=cfg.detector_epochs,
                               random_state=cfg.seed)
        acc = float((model.predict([s.utterance for s in samples]) == [s.label for s in samples]).mean())
        report = {"samples": len(samples), "train_accuracy": acc, "final_loss": model.loss_curve_[-1]}
        if cfg.path(args, "val_logs"):
            val = _corpus(cfg, args, "val_")
            model.tune_threshold([last_user_utterance(d) for d in val.dialogues], [lab.target for lab in val.labels])
            report.update(threshold=model.threshold_, validation_f1=model.validation_f1_)
        model.save(out)
    elif args.kind == "domain":
        samples = corpus_domain_samples(_corpus(cfg, args)) if cfg.path(args, "logs") else []
        for extra in args.samples or []:
            samples += _load_samples(extra, DomainSample)
        model = train_domain_classifier(samples, n_features=cfg.n_features, epochs=cfg.domain_epochs,
                                        random_state=cfg.seed)
        pred = model.predict([s.context for s in samples])
        acc = sum(p is s.label for p, s in zip(pred, samples)) / len(samples)
        report = {"samples": len(samples), "train_accuracy": acc, "final_loss": model.loss_curve_[-1]}
        model.save(out)
    else:
        kb = _kb(cfg, args)
        corpus = _corpus(cfg, args)
        pos = [(d, lab) for d, lab in corpus if lab.target]
        model = KnowledgeRanker(margin=cfg.margin, ratios=tuple(cfg.ratios),
                                negatives_per_positive=cfg.negatives_per_positive, epochs=cfg.ranker_epochs,
                                max_context_tokens=cfg.max_context_tokens, random_state=cfg.seed)
        model.fit([d for d, _ in pos], [lab.knowledge for _, lab in pos], kb)
        gold_ranked = [model.rank(d, _gold_candidates(kb, lab)) for d, lab in pos]
        sel = selection_metrics(gold_ranked, [lab.knowledge for _, lab in pos])
        report = {"positives": len(pos), "pairs": model.n_pairs_, "final_loss": model.loss_curve_[-1],
                  "train_recall_at_1_gold_entity": sel.recall_at_1, "weights": model.coef_.tolist()}
        model.save(out)
    report["model"] = str(out)
    print(json.dumps(report))
    return 0


def _gold_candidates(kb, lab):
    from .kb import candidates_for

    ref = lab.knowledge[0]
    return candidates_for(kb, ref.domain, [ref.entity_id])


def cmd_tune(cfg, args):
    path = _model_path(cfg, args, "detector") if not args.model else Path(args.model)
    model = KnowledgeSeekingDetector.load(path)
    corpus = _corpus(cfg, args)
    t = model.tune_threshold([last_user_utterance(d) for d in corpus.dialogues], [lab.target for lab in corpus.labels])
    model.save(args.out or path)
    print(json.dumps({"threshold": t, "validation_f1": model.validation_f1_}))
    return 0


def build_pipeline(cfg: RunConfig, args, kb):
    """Built-in models from ``--models``; tasks listed in ``gateway_tasks`` go to the gateway."""
    endpoint = args.gateway if getattr(args, "gateway", None) else cfg.gateway
    delegated = set(cfg.gateway_tasks) if endpoint else set()
    if cfg.generator == "gateway":
        delegated.add("generator")
        if not endpoint:
            raise ConfigError("generator 'gateway' needs a gateway endpoint")
    client = None
    if delegated:
        from .gateway import GatewayClient

        client = GatewayClient(endpoint, pool_size=max(cfg.gateway_pool_size, getattr(args, "workers", 1)),
                               timeout=cfg.gateway_timeout, max_in_flight=cfg.gateway_max_in_flight)
    models_dir = cfg.path(args, "models")

    def local(kind):
        return Path(_require(models_dir, "--models")) / MODEL_FILES[kind]

    if "detector" in delegated:
        from .gateway import GatewayDetector

        threshold = cfg.detection_threshold
        if threshold is None and models_dir and local("detector").exists():
            threshold = KnowledgeSeekingDetector.load(local("detector")).threshold_
        detector = GatewayDetector(client, 0.5 if threshold is None else threshold)
    else:
        detector = KnowledgeSeekingDetector.load(local("detector"))
    if "domain" in delegated:
        from .gateway import GatewayDomainModel

        domain_model = GatewayDomainModel(client)
    else:
        domain_model = DomainClassifier.load(local("domain"))
    if "ranker" in delegated:
        from .gateway import GatewayRanker

        ranker = GatewayRanker(client)
    else:
        ranker = KnowledgeRanker.load(local("ranker"), kb)
    if "generator" in delegated:
        from .gateway import GatewayGenerator

        generator = GatewayGenerator(client)
    else:
        generator = TemplateGenerator(cfg.follow_up)
    tracker = EntityTracker(threshold=cfg.entity_threshold, place_names=tuple(cfg.place_names),
                            max_context_tokens=cfg.entity_context_tokens).fit(kb)
    pipe = KnowledgePipeline(kb, detector, domain_model, tracker, ranker, generator, cfg.pipeline_config())
    return pipe, client


def cmd_run(cfg, args):
    kb = _kb(cfg, args)
    logs = _require(cfg.path(args, "logs"), "--logs")
    dialogues = parse_logs(Path(logs))
    pipe, client = build_pipeline(cfg, args, kb)
    try:
        report = pipe.batch_run(dialogues, workers=args.workers)
    finally:
        if client is not None:
            client.close()
    write_predictions(_require(args.out, "--out"), report)
    summary = report.summary()
    if not args.timing:
        summary.pop("timing_seconds")
    if args.report:
        _write_json(args.report, summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "errors"} | {"errors": len(report.errors)}))
    if report.errors:
        # predictions for the other samples are still written; the run as a whole failed
        idx, stage, msg = report.errors[0]
        print(f"error: {len(report.errors)} of {len(dialogues)} samples failed; first: #{idx} at {stage}: {msg}",
              file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(cfg, args):
    preds = parse_labels(Path(_require(args.predictions, "--predictions")))
    golds = parse_labels(Path(_require(cfg.path(args, "labels"), "--labels")))
    report = evaluate(args.mode, preds, golds)
    if args.out:
        _write_json(args.out, report)
    sys.stdout.write(format_report(report))
    return 0


def _read_scores(path):
    text = Path(path).read_text(encoding="utf-8").strip()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = text.split()
    if not isinstance(data, list):
        raise UserError(f"{path}: expected a JSON array or one number per line")
    try:
        return [float(x) for x in data]
    except (TypeError, ValueError):
        raise UserError(f"{path}: scores must be numbers") from None


def _finite(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def cmd_ttest(cfg, args):
    a, b = _read_scores(args.a), _read_scores(args.b)
    t, p = paired_t_test(a, b)
    report = {"n": len(a), "t": _finite(t), "p": p, "significant_at_0.05": p < 0.05}
    if args.out:
        _write_json(args.out, report)
    print(json.dumps(report))
    return 0


def cmd_synth(cfg, args):
    from .synthetic import LARGE_LAYOUT, make_attraction_sources, make_synthetic, spans_to_json

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = make_synthetic(seed=cfg.seed, n_dialogues=args.dialogues, layout=LARGE_LAYOUT if args.large else None)
    (out / "knowledge.json").write_text(data.kb.dumps() + "\n", encoding="utf-8")
    for split in ("train", "val", "test"):
        corpus = getattr(data, split)
        (out / f"{split}_logs.json").write_text(corpus.dump_logs() + "\n", encoding="utf-8")
        (out / f"{split}_labels.json").write_text(corpus.dump_labels() + "\n", encoding="utf-8")
    src, spans = make_attraction_sources(max(args.dialogues // 10, 1), seed=cfg.seed)
    (out / "attraction_logs.json").write_text(json.dumps([d.to_json() for d in src]) + "\n", encoding="utf-8")
    (out / "attraction_spans.json").write_text(json.dumps(spans_to_json(spans)) + "\n", encoding="utf-8")
    print(json.dumps({"dir": str(out), "snippets": len(data.kb), "train": len(data.train),
                      "val": len(data.val), "test": len(data.test)}))
    return 0


def cmd_config(cfg, args):
    _write_json("-", asdict(cfg))
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialkb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (value parsed as JSON when possible)")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, kb=False, corpus=False, models=False):
        if kb:
            p.add_argument("--kb", help="knowledge.json")
        if corpus:
            p.add_argument("--logs", help="logs.json")
            p.add_argument("--labels", help="labels.json")
        if models:
            p.add_argument("--models", help="model directory")

    p = sub.add_parser("kb", help="knowledge base statistics and validation")
    p.add_argument("action", choices=["stats", "validate"])
    data_args(p, kb=True)
    p.add_argument("--json", help="also write statistics as JSON")
    p.set_defaults(func=cmd_kb)

    p = sub.add_parser("augment", help="write augmented training samples")
    p.add_argument("kind", choices=["detection", "domain"])
    data_args(p, kb=True, corpus=True)
    p.add_argument("--spans", help="attraction slot-span sidecar (domain)")
    p.add_argument("--out", help="output JSON file")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a built-in model")
    p.add_argument("kind", choices=["detector", "domain", "ranker"])
    data_args(p, kb=True, corpus=True, models=True)
    p.add_argument("--samples", nargs="*", help="augmented sample files")
    p.add_argument("--val-logs", dest="val_logs")
    p.add_argument("--val-labels", dest="val_labels")
    p.add_argument("--out", help="model file (default: <models>/<kind>.bin)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune-threshold", help="F1-optimal detection threshold on a validation corpus")
    data_args(p, corpus=True, models=True)
    p.add_argument("--model")
    p.add_argument("--out", help="write tuned model here instead of in place")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("run", help="batch end-to-end predictions")
    data_args(p, kb=True, models=True)
    p.add_argument("--logs")
    p.add_argument("--out", help="predictions JSON")
    p.add_argument("--report", help="run summary JSON")
    p.add_argument("--timing", action="store_true", help="include wall-clock timing in the report")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gateway", help="model gateway: 'stdio:<command>' or host:port")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--predictions")
    p.add_argument("--labels")
    p.add_argument("--out", help="report JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ttest", help="paired t-test on two per-sample score files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("synth", help="write the synthetic corpus")
    p.add_argument("out_dir")
    p.add_argument("--dialogues", type=int, default=600)
    p.add_argument("--large", action="store_true", help="1,000-snippet knowledge base")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("config", help="print the effective configuration")
    p.set_defaults(func=cmd_config)
    return parser


_USER_ERRORS = (UserError, DialKBError, FileNotFoundError, IsADirectoryError, NotADirectoryError,
                LookupError, json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_sources(args.config, args.overrides)
        if getattr(args, "workers", 1) < 1:
            raise UserError("--workers must be >= 1")
        return args.func(cfg, args)
    except ScorerUnavailable as exc:
        print(f"error: model backend unavailable: {exc}", file=sys.stderr)
        return 1
    except _USER_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("DIALKB_DEBUG"):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
