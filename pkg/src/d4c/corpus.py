"""Corpus ingestion: CORD-19-shaped JSON documents segmented into paragraphs and sentences.

Identifiers are stable and derived: paragraph ids are ``<doc_id>#p<ordinal>``,
sentence ids are ``<paragraph_id>#s<ordinal>``. Sentence spans index into the
paragraph text, so ``paragraph.text[start:end] == sentence.text`` always holds.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path


class MalformedJson(ValueError):
    """Input is not parseable JSON."""


class MissingId(ValueError):
    """Document record carries no id/paper_id field."""


class DuplicateDocumentId(ValueError):
    """Two ingested files declare the same document id."""


class EmptyCorpus(ValueError):
    """Input directory contains no JSON documents."""


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    abstract_paragraphs: list[str]
    body_paragraphs: list[tuple[str, str]]  # (section label, text)
    url: str | None = None


@dataclass(frozen=True)
class Paragraph:
    id: str
    doc_id: str
    section: str
    text: str
    ordinal: int


@dataclass(frozen=True)
class Sentence:
    id: str
    paragraph_id: str
    text: str
    char_span: tuple[int, int]


def parse_document(json_text: str) -> Document:
    """Parse one CORD-19-shaped JSON record into a Document.

    Accepts either ``paper_id`` or ``id`` as the identifier; absent abstract or
    body sections yield empty paragraph lists. Whitespace-only paragraphs are
    dropped.
    """
    try:
        raw = json.loads(json_text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(raw, dict):
        raise MalformedJson("top-level JSON value must be an object")

    doc_id = raw.get("paper_id") or raw.get("id")
    if not doc_id or not isinstance(doc_id, str):
        raise MissingId("document record has no paper_id/id")

    metadata = raw.get("metadata") or {}
    title = metadata.get("title") or raw.get("title") or ""

    abstract = []
    for entry in raw.get("abstract") or []:
        text = (entry.get("text") or "").strip()
        if text:
            abstract.append(text)

    body = []
    for entry in raw.get("body_text") or []:
        text = (entry.get("text") or "").strip()
        if text:
            body.append(((entry.get("section") or "").strip(), text))

    url = raw.get("url") or metadata.get("url")
    return Document(id=doc_id, title=title.strip(), abstract_paragraphs=abstract,
                    body_paragraphs=body, url=url)


def document_paragraphs(doc: Document) -> list[Paragraph]:
    """All paragraphs of a document, abstract first, ordinals dense from 0."""
    paragraphs = []
    for text in doc.abstract_paragraphs:
        ordinal = len(paragraphs)
        paragraphs.append(Paragraph(id=f"{doc.id}#p{ordinal}", doc_id=doc.id,
                                    section="abstract", text=text, ordinal=ordinal))
    for section, text in doc.body_paragraphs:
        ordinal = len(paragraphs)
        paragraphs.append(Paragraph(id=f"{doc.id}#p{ordinal}", doc_id=doc.id,
                                    section=section or "body", text=text, ordinal=ordinal))
    return paragraphs


# Token before a '.' that does not end a sentence even when followed by
# whitespace and a capital/digit ("Fig. 3", "et al. Smith").
_ABBREVIATIONS = frozenset({
    "dr", "mr", "mrs", "ms", "prof", "st", "no", "vs", "etc", "et", "al",
    "fig", "figs", "eq", "eqs", "ref", "refs", "sec", "ca", "cf", "approx",
    "resp", "spp", "e.g", "i.e",
})

_BOUNDARY_RE = re.compile(r"[.!?]+(?=\s+[A-Z0-9])")
_TRAILING_WORD_RE = re.compile(r"[A-Za-z](?:[A-Za-z.]*[A-Za-z])?$")


def _is_abbreviation_dot(text: str, terminator_start: int) -> bool:
    match = _TRAILING_WORD_RE.search(text, 0, terminator_start)
    if match is None:
        return False
    return match.group(0).lower().rstrip(".") in _ABBREVIATIONS


def segment_sentences(paragraph: Paragraph) -> list[Sentence]:
    """Split a paragraph into sentences with character spans.

    Boundaries are terminator runs (``.!?``) followed by whitespace and a
    capital letter or digit; dots after known abbreviations are protected.
    Decimal points never qualify (no whitespace follows them). A paragraph
    without boundaries yields a single sentence.
    """
    text = paragraph.text
    boundaries = []
    for match in _BOUNDARY_RE.finditer(text):
        if match.group(0) == "." and _is_abbreviation_dot(text, match.start()):
            continue
        boundaries.append(match.end())

    sentences = []
    start = 0
    for end in [*boundaries, len(text)]:
        if end <= start:
            continue
        while start < end and text[start].isspace():
            start += 1
        trimmed_end = end
        while trimmed_end > start and text[trimmed_end - 1].isspace():
            trimmed_end -= 1
        if trimmed_end > start:
            ordinal = len(sentences)
            sentences.append(Sentence(id=f"{paragraph.id}#s{ordinal}",
                                      paragraph_id=paragraph.id,
                                      text=text[start:trimmed_end],
                                      char_span=(start, trimmed_end)))
        start = end
    return sentences


@dataclass(frozen=True)
class IngestStats:
    documents: int
    paragraphs: int
    sentences: int


@dataclass
class CorpusStore:
    """Immutable corpus view: documents sorted by id plus derived segment indexes."""

    documents: list[Document]
    paragraphs: list[Paragraph] = field(default_factory=list)
    sentences: list[Sentence] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.documents = sorted(self.documents, key=lambda d: d.id)
        if not self.paragraphs:
            for doc in self.documents:
                self.paragraphs.extend(document_paragraphs(doc))
        if not self.sentences:
            for paragraph in self.paragraphs:
                self.sentences.extend(segment_sentences(paragraph))
        self._doc_index = {d.id: d for d in self.documents}
        self._paragraph_index = {p.id: p for p in self.paragraphs}
        self._sentence_index = {s.id: s for s in self.sentences}

    def document(self, doc_id: str) -> Document:
        return self._doc_index[doc_id]

    def paragraph(self, paragraph_id: str) -> Paragraph:
        return self._paragraph_index[paragraph_id]

    def sentence(self, sentence_id: str) -> Sentence:
        return self._sentence_index[sentence_id]

    def unit_text(self, unit_id: str) -> str:
        """Text of a paragraph or sentence id."""
        if unit_id in self._paragraph_index:
            return self._paragraph_index[unit_id].text
        return self._sentence_index[unit_id].text

    def stats(self) -> IngestStats:
        return IngestStats(documents=len(self.documents),
                           paragraphs=len(self.paragraphs),
                           sentences=len(self.sentences))


def ingest(input_dir: str | Path) -> tuple[CorpusStore, IngestStats]:
    """Ingest every ``*.json`` file under a directory into a deterministic store.

    Raises DuplicateDocumentId when two files declare the same id and
    EmptyCorpus when no JSON files are found.
    """
    input_dir = Path(input_dir)
    paths = sorted(input_dir.glob("*.json"))
    if not paths:
        raise EmptyCorpus(f"no *.json files in {input_dir}")

    documents: dict[str, Document] = {}
    for path in paths:
        doc = parse_document(path.read_text(encoding="utf-8"))
        if doc.id in documents:
            raise DuplicateDocumentId(doc.id)
        documents[doc.id] = doc

    store = CorpusStore(documents=list(documents.values()))
    return store, store.stats()


def _document_to_json(doc: Document) -> str:
    record = {
        "id": doc.id,
        "title": doc.title,
        "abstract_paragraphs": doc.abstract_paragraphs,
        "body_paragraphs": [list(pair) for pair in doc.body_paragraphs],
        "url": doc.url,
    }
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def save_store(store: CorpusStore, out_dir: str | Path) -> None:
    """Write documents.jsonl (one document per line, sorted by id) and stats.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [_document_to_json(doc) for doc in store.documents]
    (out_dir / "documents.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""),
                                             encoding="utf-8")
    stats = store.stats()
    stats_json = json.dumps({"documents": stats.documents, "paragraphs": stats.paragraphs,
                             "sentences": stats.sentences}, sort_keys=True, indent=2)
    (out_dir / "stats.json").write_text(stats_json + "\n", encoding="utf-8")


def load_store(store_dir: str | Path) -> CorpusStore:
    store_dir = Path(store_dir)
    documents = []
    with open(store_dir / "documents.jsonl", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            documents.append(Document(
                id=raw["id"], title=raw["title"],
                abstract_paragraphs=list(raw["abstract_paragraphs"]),
                body_paragraphs=[(s, t) for s, t in raw["body_paragraphs"]],
                url=raw.get("url")))
    return CorpusStore(documents=documents)
