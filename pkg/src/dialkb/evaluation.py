"""Score a predictions file against gold labels, in the labels-file layout."""

from __future__ import annotations

from typing import Sequence

from .dialogue import TurnLabel
from .errors import AlignmentError
from .metrics import detection_metrics, generation_metrics, selection_metrics

MODES = ("detection", "selection", "generation", "end2end")


def _selection(pairs):
    ranked = [list(p.knowledge) if p.target else [] for p, _ in pairs]
    return selection_metrics(ranked, [g.knowledge for _, g in pairs]).to_json()


def _generation(pairs):
    return generation_metrics([p.response or "" for p, _ in pairs], [g.response or "" for _, g in pairs]).to_json()


def evaluate(mode: str, preds: Sequence[TurnLabel], golds: Sequence[TurnLabel]) -> dict:
    """Report dict for one mode.

    ``selection`` covers every gold knowledge-seeking sample (a missed
    detection ranks nothing). ``generation`` needs a predicted response, so it
    and the end2end selection/generation blocks use only samples where both
    prediction and gold are knowledge-seeking; that count is reported.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if len(preds) != len(golds):
        raise AlignmentError(f"predictions ({len(preds)}) and labels ({len(golds)}) differ in length")
    pairs = list(zip(preds, golds))
    both = [(p, g) for p, g in pairs if p.target and g.target]
    report: dict = {"mode": mode, "samples": len(pairs)}
    if mode in ("detection", "end2end"):
        report["detection"] = detection_metrics([p.target for p in preds], [g.target for g in golds]).to_json()
    if mode == "selection":
        report["selection"] = _selection([(p, g) for p, g in pairs if g.target])
    if mode == "generation":
        report["generation"] = _generation(both)
    if mode == "end2end":
        report["intersection"] = len(both)
        report["selection"] = _selection(both)
        report["generation"] = _generation(both)
    return report
