"""Dictionary-based annotation of drugs (ATC codes) and diseases (MeSH descriptors).

Matching is leftmost-longest over token sequences, case-insensitive, on token
boundaries. Tokens are alphanumeric runs that keep internal hyphens and
slashes, so trade names like "Co-Renitec" or combination labels like
"Lopinavir/Ritonavir" stay single tokens.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusStore


class InvalidAtcFormat(ValueError):
    """ATC codes are letter, 2 digits, letter, letter, 2 digits."""


class InvalidCode(ValueError):
    """Code does not match the gazetteer kind's format."""


class ConflictingSynonym(ValueError):
    """One surface form cannot map to two codes within a gazetteer."""


_ATC_RE = re.compile(r"^[A-Z]\d{2}[A-Z]{2}\d{2}$")
_MESH_RE = re.compile(r"^[A-Z]\d+$")
_TREE_NUMBER_RE = re.compile(r"^[A-Za-z0-9]+(?:\.[A-Za-z0-9]+)*$")

TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:[-/][A-Za-z0-9]+)*")


@dataclass(frozen=True)
class AtcCode:
    code: str
    level1: str
    level2: str
    level3: str
    level4: str
    level5: str
    label: str = ""


def parse_atc(code_string: str) -> AtcCode:
    """Split a level-5 ATC code into its five level prefixes."""
    if not isinstance(code_string, str) or not _ATC_RE.match(code_string):
        raise InvalidAtcFormat(f"not a level-5 ATC code: {code_string!r}")
    return AtcCode(code=code_string,
                   level1=code_string[:1], level2=code_string[:3],
                   level3=code_string[:4], level4=code_string[:5],
                   level5=code_string)


@dataclass(frozen=True)
class MeshDescriptor:
    code: str
    label: str
    tree_numbers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not _MESH_RE.match(self.code):
            raise InvalidCode(f"not a MeSH unique id: {self.code!r}")
        for number in self.tree_numbers:
            if not _TREE_NUMBER_RE.match(number):
                raise InvalidCode(f"malformed MeSH tree number: {number!r}")


@dataclass(frozen=True)
class Mention:
    unit_id: str
    char_span: tuple[int, int]
    surface: str
    code: str
    kind: str  # "drug" | "disease"


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Lowercased tokens with their character spans."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


class Gazetteer:
    """Surface form dictionary mapping token sequences to canonical codes."""

    def __init__(self, kind: str):
        if kind not in ("drug", "disease"):
            raise ValueError(f"unknown gazetteer kind: {kind!r}")
        self.kind = kind
        self.entries: dict[tuple[str, ...], str] = {}
        self.labels: dict[str, str] = {}
        # first token -> [(token tuple, code)] sorted longest-first
        self._by_first: dict[str, list[tuple[tuple[str, ...], str]]] = {}

    def _validate_code(self, code: str) -> None:
        if self.kind == "drug":
            if not _ATC_RE.match(code):
                raise InvalidCode(f"not an ATC code: {code!r}")
        elif not _MESH_RE.match(code):
            raise InvalidCode(f"not a MeSH id: {code!r}")

    def add(self, surface: str, code: str) -> None:
        key = tuple(token for token, _, _ in tokenize(surface))
        if not key:
            return
        existing = self.entries.get(key)
        if existing is not None:
            if existing != code:
                raise ConflictingSynonym(
                    f"{surface!r} maps to both {existing} and {code}")
            return
        self.entries[key] = code
        bucket = self._by_first.setdefault(key[0], [])
        bucket.append((key, code))
        bucket.sort(key=lambda item: len(item[0]), reverse=True)

    def resolve(self, keyword: str) -> str | None:
        """Resolve a code, label, or synonym to its canonical code."""
        if self.kind == "drug" and _ATC_RE.match(keyword.upper()):
            code = keyword.upper()
            return code if code in self.labels else None
        if self.kind == "disease" and _MESH_RE.match(keyword.upper()):
            code = keyword.upper()
            return code if code in self.labels else None
        key = tuple(token for token, _, _ in tokenize(keyword))
        return self.entries.get(key)

    def __contains__(self, code: str) -> bool:
        return code in self.labels


def build_gazetteer(rows: list[tuple[str, str, str]], kind: str) -> Gazetteer:
    """Build a gazetteer from (code, label, ';'-separated synonyms) rows.

    The label and every synonym become lookup keys. Conflicting surface forms
    (one form, two codes) and malformed codes are rejected.
    """
    gazetteer = Gazetteer(kind)
    for code, label, synonyms in rows:
        gazetteer._validate_code(code)
        gazetteer.labels.setdefault(code, label)
        gazetteer.add(label, code)
        for synonym in synonyms.split(";"):
            synonym = synonym.strip()
            if synonym:
                gazetteer.add(synonym, code)
    return gazetteer


def load_gazetteer_csv(path: str | Path, kind: str) -> Gazetteer:
    """Load a code,label,synonyms CSV (header row required)."""
    import csv

    rows = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"empty gazetteer file: {path}")
        for row in reader:
            if not row or not row[0].strip():
                continue
            code = row[0].strip()
            label = row[1].strip() if len(row) > 1 else ""
            synonyms = row[2].strip() if len(row) > 2 else ""
            rows.append((code, label, synonyms))
    return build_gazetteer(rows, kind)


def find_mentions(text: str, gazetteer: Gazetteer, unit_id: str = "") -> list[Mention]:
    """Leftmost-longest non-overlapping gazetteer matches, ordered by offset."""
    tokens = tokenize(text)
    by_first = gazetteer._by_first
    kind = gazetteer.kind
    mentions = []
    i = 0
    n = len(tokens)
    while i < n:
        candidates = by_first.get(tokens[i][0])
        if candidates:
            for key, code in candidates:
                length = len(key)
                if i + length > n:
                    continue
                if all(tokens[i + j][0] == key[j] for j in range(1, length)):
                    start = tokens[i][1]
                    end = tokens[i + length - 1][2]
                    mentions.append(Mention(unit_id=unit_id, char_span=(start, end),
                                            surface=text[start:end], code=code,
                                            kind=kind))
                    i += length
                    break
            else:
                i += 1
        else:
            i += 1
    return mentions


@dataclass
class AnnotationStore:
    """Mentions at paragraph and sentence granularity plus code labels."""

    mentions: list[Mention]
    drug_labels: dict[str, str] = field(default_factory=dict)
    disease_labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.mentions = sorted(self.mentions,
                               key=lambda m: (m.unit_id, m.char_span[0], m.kind))
        self._by_unit: dict[str, list[Mention]] = {}
        for mention in self.mentions:
            self._by_unit.setdefault(mention.unit_id, []).append(mention)

    def for_unit(self, unit_id: str) -> list[Mention]:
        return self._by_unit.get(unit_id, [])

    def paragraph_mentions(self) -> list[Mention]:
        return [m for m in self.mentions if "#s" not in m.unit_id]

    def sentence_mentions(self) -> list[Mention]:
        return [m for m in self.mentions if "#s" in m.unit_id]

    def summary(self) -> dict[str, int]:
        drugs = {m.code for m in self.mentions if m.kind == "drug"}
        diseases = {m.code for m in self.mentions if m.kind == "disease"}
        return {"drugs": len(drugs), "diseases": len(diseases)}


def annotate_corpus(store: CorpusStore, atc: Gazetteer, mesh: Gazetteer) -> AnnotationStore:
    """Annotate every paragraph and sentence with drug and disease mentions.

    Paragraph-level mentions are found sentence by sentence and projected back
    to paragraph offsets, so every sentence mention has a paragraph counterpart
    with the same code.
    """
    mentions: list[Mention] = []
    sentences_by_paragraph: dict[str, list] = {}
    for sentence in store.sentences:
        sentences_by_paragraph.setdefault(sentence.paragraph_id, []).append(sentence)

    for paragraph in store.paragraphs:
        for sentence in sentences_by_paragraph.get(paragraph.id, []):
            offset = sentence.char_span[0]
            for gazetteer in (atc, mesh):
                for found in find_mentions(sentence.text, gazetteer, unit_id=sentence.id):
                    mentions.append(found)
                    start, end = found.char_span
                    mentions.append(Mention(unit_id=paragraph.id,
                                            char_span=(start + offset, end + offset),
                                            surface=found.surface, code=found.code,
                                            kind=found.kind))
    return AnnotationStore(mentions=mentions, drug_labels=dict(atc.labels),
                           disease_labels=dict(mesh.labels))


def save_annotations(store: AnnotationStore, out_dir: str | Path) -> None:
    """Write mentions.jsonl (unit_id,start,end,surface,code,kind) and labels.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "mentions.jsonl", "w", encoding="utf-8") as handle:
        for m in store.mentions:
            record = {"unit_id": m.unit_id, "start": m.char_span[0],
                      "end": m.char_span[1], "surface": m.surface,
                      "code": m.code, "kind": m.kind}
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True,
                                    separators=(",", ":")) + "\n")
    labels = {"drugs": store.drug_labels, "diseases": store.disease_labels}
    (out_dir / "labels.json").write_text(
        json.dumps(labels, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")


def load_annotations(store_dir: str | Path) -> AnnotationStore:
    store_dir = Path(store_dir)
    mentions = []
    with open(store_dir / "mentions.jsonl", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            mentions.append(Mention(unit_id=raw["unit_id"],
                                    char_span=(raw["start"], raw["end"]),
                                    surface=raw["surface"], code=raw["code"],
                                    kind=raw["kind"]))
    labels_path = store_dir / "labels.json"
    drug_labels: dict[str, str] = {}
    disease_labels: dict[str, str] = {}
    if labels_path.exists():
        raw = json.loads(labels_path.read_text(encoding="utf-8"))
        drug_labels = raw.get("drugs", {})
        disease_labels = raw.get("diseases", {})
    return AnnotationStore(mentions=mentions, drug_labels=drug_labels,
                           disease_labels=disease_labels)
