"""FAQ knowledge base: loading, validation, lookup and statistics.

The on-disk layout is the DSTC9 Track 1 ``knowledge.json`` shape::

    {"hotel": {"12": {"name": "Lensfield Hotel",
                      "docs": {"0": {"title": "...", "body": "..."}}}}}

``title`` is the FAQ question and ``body`` the answer. Domain-level knowledge
(train, taxi) lives under the pseudo-entity ``"*"`` whose name is null.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from types import MappingProxyType
from typing import IO, Iterable, Iterator, Mapping

from .errors import ParseError, UnknownRefError, ValidationError

DOMAIN_ENTITY = "*"


@dataclass(frozen=True)
class Snippet:
    question: str
    answer: str


@dataclass(frozen=True, order=True)
class SnippetRef:
    domain: str
    entity_id: str
    doc_id: str

    def to_json(self) -> dict:
        return {
            "domain": self.domain,
            "entity_id": _json_id(self.entity_id),
            "doc_id": _json_id(self.doc_id),
        }

    @classmethod
    def from_json(cls, obj, path="") -> "SnippetRef":
        if not isinstance(obj, dict):
            raise ParseError("knowledge reference must be an object", path)
        try:
            return cls(str(obj["domain"]).lower(), str(obj["entity_id"]), str(obj["doc_id"]))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", path) from None


def _json_id(value: str):
    # DSTC9 files use integer ids for named entities and docs
    return int(value) if value.isdigit() else value


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    name: str | None
    docs: Mapping[str, Snippet]


class KnowledgeBase:
    """Immutable domain -> entity -> snippet tree.

    Iteration order everywhere follows file insertion order, which is the
    deterministic tie-break key used downstream.
    """

    def __init__(self, domains: Mapping[str, Mapping[str, EntityRecord]]):
        self._domains = MappingProxyType(
            {d: MappingProxyType(dict(ents)) for d, ents in domains.items()}
        )
        self._refs = tuple(
            SnippetRef(d, e.entity_id, doc_id)
            for d, ents in self._domains.items()
            for e in ents.values()
            for doc_id in e.docs
        )

    @property
    def domains(self) -> Mapping[str, Mapping[str, EntityRecord]]:
        return self._domains

    def __len__(self) -> int:
        return len(self._refs)

    def __iter__(self) -> Iterator[SnippetRef]:
        return iter(self._refs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self.to_json() == other.to_json()

    def refs(self) -> tuple[SnippetRef, ...]:
        return self._refs

    def entity(self, domain: str, entity_id: str) -> EntityRecord:
        try:
            return self._domains[domain][entity_id]
        except KeyError:
            raise UnknownRefError(f"unknown entity {domain}/{entity_id}") from None

    def entities(self) -> Iterator[tuple[str, EntityRecord]]:
        for domain, ents in self._domains.items():
            for ent in ents.values():
                yield domain, ent

    def resolve(self, ref: SnippetRef) -> Snippet:
        try:
            return self._domains[ref.domain][ref.entity_id].docs[ref.doc_id]
        except KeyError:
            raise UnknownRefError(f"cannot resolve {ref}") from None

    def __contains__(self, ref) -> bool:
        try:
            self.resolve(ref)
        except UnknownRefError:
            return False
        return True

    def entity_domains(self) -> list[str]:
        """Domains that carry at least one named entity."""
        return [
            d for d, ents in self._domains.items()
            if any(eid != DOMAIN_ENTITY for eid in ents)
        ]

    def to_json(self) -> dict:
        return {
            domain: {
                eid: {
                    "name": ent.name,
                    "docs": {
                        doc_id: {"title": s.question, "body": s.answer}
                        for doc_id, s in ent.docs.items()
                    },
                }
                for eid, ent in ents.items()
            }
            for domain, ents in self._domains.items()
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, indent=1)


def _pairs_no_dupes(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise _DuplicateKey(key)
        seen[key] = value
    return seen


class _DuplicateKey(Exception):
    pass


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    if isinstance(source, os.PathLike):
        with open(source, encoding="utf-8") as fh:
            return fh.read()
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _strict_json(text: str, what: str):
    try:
        return json.loads(text, object_pairs_hook=_pairs_no_dupes)
    except _DuplicateKey as exc:
        raise ValidationError(f"duplicate key {exc.args[0]!r} in {what}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from None


def load_knowledge_base(source: bytes | str | IO) -> KnowledgeBase:
    """Parse and validate a knowledge file.

    Raises ParseError for structurally wrong input and ValidationError for
    duplicate ids or empty questions/answers.
    """
    raw = _strict_json(_read_text(source), "knowledge file")
    if not isinstance(raw, dict):
        raise ParseError("top level must be an object keyed by domain", "$")

    domains: dict[str, dict[str, EntityRecord]] = {}
    for domain_key, ents in raw.items():
        domain = domain_key.strip().lower()
        dpath = f"$.{domain_key}"
        if not domain or " " in domain:
            raise ValidationError(f"{dpath}: domain name must be a single token")
        if domain in domains:
            raise ValidationError(f"{dpath}: domain {domain!r} repeats after case folding")
        if not isinstance(ents, dict):
            raise ParseError("domain must be an object keyed by entity id", dpath)
        records = {}
        for eid, ent in ents.items():
            epath = f"{dpath}.{eid}"
            if not isinstance(ent, dict):
                raise ParseError("entity must be an object", epath)
            if "docs" not in ent or not isinstance(ent["docs"], dict):
                raise ParseError("entity needs a 'docs' object", epath)
            name = ent.get("name")
            if eid == DOMAIN_ENTITY:
                name = None
            elif not isinstance(name, str) or not name.strip():
                raise ValidationError(f"{epath}: named entity needs a non-empty name")
            docs = {}
            for doc_id, doc in ent["docs"].items():
                dp = f"{epath}.docs.{doc_id}"
                if not isinstance(doc, dict):
                    raise ParseError("doc must be an object", dp)
                q, a = doc.get("title"), doc.get("body")
                if not isinstance(q, str) or not isinstance(a, str):
                    raise ParseError("doc needs string 'title' and 'body'", dp)
                if not q.strip() or not a.strip():
                    raise ValidationError(f"{dp}: empty question or answer")
                docs[str(doc_id)] = Snippet(q, a)
            records[str(eid)] = EntityRecord(str(eid), name, MappingProxyType(docs))
        domains[domain] = records
    return KnowledgeBase(domains)


def load_knowledge_file(path) -> KnowledgeBase:
    with open(path, "rb") as fh:
        return load_knowledge_base(fh)


def candidates_for(kb: KnowledgeBase, domain: str, entity_ids: Iterable[str] | None = None) -> list[SnippetRef]:
    """All snippet refs under ``domain``, optionally restricted to ``entity_ids``.

    Order is the given entity order, then snippet insertion order.
    """
    if domain not in kb.domains:
        raise UnknownRefError(f"unknown domain {domain!r}")
    ents = kb.domains[domain]
    if entity_ids is None:
        chosen = list(ents.values())
    else:
        chosen = []
        for eid in entity_ids:
            if eid not in ents:
                raise UnknownRefError(f"unknown entity {domain}/{eid}")
            chosen.append(ents[eid])
    return [SnippetRef(domain, e.entity_id, doc_id) for e in chosen for doc_id in e.docs]


@dataclass(frozen=True)
class DomainStats:
    domain: str
    entities: int
    snippets: int


@dataclass(frozen=True)
class KBStats:
    rows: tuple[DomainStats, ...]

    @property
    def total_entities(self) -> int:
        return sum(r.entities for r in self.rows)

    @property
    def total_snippets(self) -> int:
        return sum(r.snippets for r in self.rows)

    def __getitem__(self, domain: str) -> DomainStats:
        for r in self.rows:
            if r.domain == domain:
                return r
        raise KeyError(domain)

    def to_json(self) -> dict:
        return {
            "domains": {r.domain: {"entities": r.entities, "snippets": r.snippets} for r in self.rows},
            "total": {"entities": self.total_entities, "snippets": self.total_snippets},
        }

    def format_table(self) -> str:
        out = io.StringIO()
        out.write(f"{'domain':<12}{'entities':>10}{'snippets':>10}\n")
        for r in self.rows:
            out.write(f"{r.domain:<12}{r.entities:>10}{r.snippets:>10}\n")
        out.write(f"{'total':<12}{self.total_entities:>10}{self.total_snippets:>10}\n")
        return out.getvalue()


def kb_stats(kb: KnowledgeBase) -> KBStats:
    rows = []
    for domain, ents in kb.domains.items():
        n_ent = sum(1 for eid in ents if eid != DOMAIN_ENTITY)
        n_snip = sum(len(e.docs) for e in ents.values())
        rows.append(DomainStats(domain, n_ent, n_snip))
    return KBStats(tuple(rows))
