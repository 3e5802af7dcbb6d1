"""Dialogue logs, gold turn labels and context-window helpers."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Sequence

from .errors import AlignmentError, EmptyContextError, ParseError, ValidationError
from .kb import SnippetRef, _read_text


class Speaker(enum.Enum):
    USER = "U"
    AGENT = "S"

    @property
    def tag(self) -> str:
        return "User" if self is Speaker.USER else "Agent"


@dataclass(frozen=True)
class Turn:
    speaker: Speaker
    text: str

    def __post_init__(self):
        if not isinstance(self.speaker, Speaker):
            object.__setattr__(self, "speaker", Speaker(self.speaker))
        if not self.text or not self.text.strip():
            raise ValidationError("turn text must be non-empty")

    def to_json(self) -> dict:
        return {"speaker": self.speaker.value, "text": self.text}


class Dialogue(tuple):
    """Ordered, non-empty sequence of turns ending with a user turn."""

    def __new__(cls, turns: Sequence[Turn]):
        turns = tuple(turns)
        if not turns:
            raise EmptyContextError("dialogue has no turns")
        if turns[-1].speaker is not Speaker.USER:
            raise EmptyContextError("dialogue must end with a user turn")
        return super().__new__(cls, turns)

    @classmethod
    def from_texts(cls, texts: Sequence[str], first: Speaker = Speaker.USER) -> "Dialogue":
        """Build alternating turns; ``first`` is the speaker of ``texts[0]``."""
        order = (Speaker.USER, Speaker.AGENT) if first is Speaker.USER else (Speaker.AGENT, Speaker.USER)
        return cls(Turn(order[i % 2], t) for i, t in enumerate(texts))

    def to_json(self) -> list:
        return [t.to_json() for t in self]

    def text(self, tagged: bool = True) -> str:
        if tagged:
            return "\n".join(f"{t.speaker.tag}: {t.text}" for t in self)
        return "\n".join(t.text for t in self)


@dataclass(frozen=True)
class TurnLabel:
    target: bool
    knowledge: tuple[SnippetRef, ...] | None = None
    response: str | None = None

    def __post_init__(self):
        if self.target:
            if not self.knowledge:
                raise ValidationError("knowledge-seeking label needs a non-empty knowledge list")
            if self.response is None:
                raise ValidationError("knowledge-seeking label needs a response")
        elif self.knowledge is not None or self.response is not None:
            raise ValidationError("non-target label must not carry knowledge or response")

    def to_json(self) -> dict:
        out: dict = {"target": self.target}
        if self.target:
            out["knowledge"] = [r.to_json() for r in self.knowledge]
            out["response"] = self.response
        return out

    @classmethod
    def from_json(cls, obj, path="") -> "TurnLabel":
        if not isinstance(obj, dict) or not isinstance(obj.get("target"), bool):
            raise ParseError("label must be an object with boolean 'target'", path)
        if not obj["target"]:
            return cls(False)
        know = obj.get("knowledge")
        if not isinstance(know, list):
            raise ParseError("'knowledge' must be a list", path)
        refs = tuple(SnippetRef.from_json(k, f"{path}.knowledge[{i}]") for i, k in enumerate(know))
        return cls(True, refs, obj.get("response"))


@dataclass(frozen=True)
class LabeledCorpus:
    pairs: tuple[tuple[Dialogue, TurnLabel], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, idx):
        return self.pairs[idx]

    @property
    def dialogues(self) -> list[Dialogue]:
        return [d for d, _ in self.pairs]

    @property
    def labels(self) -> list[TurnLabel]:
        return [lab for _, lab in self.pairs]

    def subset(self, indices) -> "LabeledCorpus":
        return LabeledCorpus(tuple(self.pairs[i] for i in indices))

    def dump_logs(self) -> str:
        return json.dumps([d.to_json() for d in self.dialogues], ensure_ascii=False)

    def dump_labels(self) -> str:
        return json.dumps([lab.to_json() for lab in self.labels], ensure_ascii=False)


def parse_logs(source) -> list[Dialogue]:
    raw = _load_array(source, "logs")
    out = []
    for i, turns in enumerate(raw):
        if not isinstance(turns, list):
            raise ParseError("dialogue must be an array of turns", f"$[{i}]")
        parsed = []
        for j, t in enumerate(turns):
            if not isinstance(t, dict) or t.get("speaker") not in ("U", "S") or not isinstance(t.get("text"), str):
                raise ParseError("turn must be {speaker: U|S, text: str}", f"$[{i}][{j}]")
            parsed.append(Turn(Speaker(t["speaker"]), t["text"]))
        out.append(Dialogue(parsed))
    return out


def parse_labels(source) -> list[TurnLabel]:
    raw = _load_array(source, "labels")
    return [TurnLabel.from_json(obj, f"$[{i}]") for i, obj in enumerate(raw)]


def _load_array(source, what):
    try:
        raw = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed {what} JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from None
    if not isinstance(raw, list):
        raise ParseError(f"{what} must be a top-level array", "$")
    return raw


def load_corpus(logs_source: bytes | str | IO, labels_source: bytes | str | IO) -> LabeledCorpus:
    logs = parse_logs(logs_source)
    labels = parse_labels(labels_source)
    if len(logs) != len(labels):
        raise AlignmentError(f"{len(logs)} dialogues but {len(labels)} labels")
    return LabeledCorpus(tuple(zip(logs, labels)))


def load_corpus_files(logs_path, labels_path) -> LabeledCorpus:
    with open(logs_path, "rb") as lf, open(labels_path, "rb") as bf:
        return load_corpus(lf, bf)


def last_user_utterance(d: Sequence[Turn]) -> str:
    if not d:
        raise EmptyContextError("dialogue has no turns")
    last = d[-1]
    if last.speaker is not Speaker.USER:
        raise EmptyContextError("last turn is not a user turn")
    return last.text


def context_window(d: Sequence[Turn], max_tokens: int) -> list[Turn]:
    """Longest suffix of turns within ``max_tokens`` whitespace tokens.

    The final turn is always kept; if it alone exceeds the budget only its
    last ``max_tokens`` tokens survive.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    if not d:
        return []
    last = d[-1]
    toks = last.text.split()
    if len(toks) > max_tokens:
        return [Turn(last.speaker, " ".join(toks[-max_tokens:]))]
    kept = [last]
    used = len(toks)
    for turn in reversed(d[:-1]):
        n = len(turn.text.split())
        if used + n > max_tokens:
            break
        kept.append(turn)
        used += n
    kept.reverse()
    return kept
