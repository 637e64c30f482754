"""CSV-to-RDF mapping engine with N-Triples output and pattern queries.

Annotations are exported to flat CSV tables, a YAML mapping document binds
those tables to a vocabulary, and the generated triples serialize canonically
so reruns are byte-identical. A small conjunctive evaluator answers basic
graph pattern queries (with STRSTARTS/equality filters) over the result.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Union
from urllib.parse import quote

import yaml

from .annotate import AnnotationStore
from .corpus import CorpusStore


class DanglingMention(ValueError):
    """A mention references a unit id that is not in the corpus."""


class MappingSyntaxError(ValueError):
    """Mapping document violates the supported grammar."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownColumn(ValueError):
    """A template or reference names a column absent from its source table."""

    def __init__(self, column: str):
        super().__init__(column)
        self.column = column


class InvalidIriTemplate(ValueError):
    """Subject or object template cannot yield an absolute IRI."""


class MissingTable(ValueError):
    """A mapping's source table was not provided."""


class UnboundSelectVar(ValueError):
    """A select or filter variable does not appear in any pattern."""


RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
XSD = "http://www.w3.org/2001/XMLSchema#"
SKOS = "http://www.w3.org/2004/02/skos/core#"
DCTERMS = "http://purl.org/dc/terms/"
ONTO = "https://w3id.org/def/DRUGS4COVID19#"
RESOURCE_BASE = "https://drugs4covid.example/resource/"

RDF_TYPE = RDF + "type"
XSD_STRING = XSD + "string"

DEFAULT_PREFIXES = {
    "rdf": RDF,
    "rdfs": RDFS,
    "xsd": XSD,
    "skos": SKOS,
    "dc": DCTERMS,
    "dcterms": DCTERMS,
}


@dataclass(frozen=True)
class RdfLiteral:
    """Literal term; datatype None means xsd:string (the simple form)."""

    lexical: str
    datatype: str | None = None

    def __post_init__(self) -> None:
        if self.datatype == XSD_STRING:
            object.__setattr__(self, "datatype", None)


class Triple(NamedTuple):
    subject: str
    predicate: str
    obj: Union[str, RdfLiteral]  # plain str is an IRI


def _escape_literal(text: str) -> str:
    return (text.replace("\\", "\\\\").replace("\"", "\\\"")
            .replace("\n", "\\n").replace("\r", "\\r"))


def _format_term(term: Union[str, RdfLiteral]) -> str:
    if isinstance(term, RdfLiteral):
        quoted = f'"{_escape_literal(term.lexical)}"'
        if term.datatype is not None:
            return f"{quoted}^^<{term.datatype}>"
        return quoted
    return f"<{term}>"


def _triple_line(triple: Triple) -> str:
    return (f"<{triple.subject}> <{triple.predicate}> "
            f"{_format_term(triple.obj)} .")


@dataclass(frozen=True)
class TripleSet:
    """Immutable triple collection iterated in canonical line order."""

    triples: frozenset[Triple]

    def __iter__(self):
        return iter(sorted(self.triples, key=_triple_line))

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self.triples


# Annotation export


EXPORT_TABLES = (
    "papers.csv", "paragraphs.csv", "sentences.csv",
    "drug_mentions.csv", "disease_mentions.csv",
    "substances.csv", "diseases.csv",
    "paragraph_drug_mentions.csv", "paragraph_disease_mentions.csv",
    "sentence_drug_mentions.csv", "sentence_disease_mentions.csv",
    "paper_drug_mentions.csv",
)


def export_annotations(annotations: AnnotationStore, corpus: CorpusStore,
                       directory: str | Path) -> dict[str, list[dict[str, str]]]:
    """Write the annotation CSV tables the mapping engine consumes.

    Emits one file per EXPORT_TABLES entry into ``directory`` (RFC 4180
    quoting, header row, rows sorted) and returns the same tables in memory.
    The *_mentions tables keyed by paragraph/sentence id exist because the
    mapping subset has no joins: unit ids are pre-resolved per granularity.
    """
    for mention in annotations.mentions:
        try:
            corpus.unit_text(mention.unit_id)
        except KeyError:
            raise DanglingMention(mention.unit_id) from None

    tables: dict[str, list[dict[str, str]]] = {}
    tables["papers.csv"] = [
        {"id": doc.id, "title": doc.title,
         "abstract": " ".join(doc.abstract_paragraphs), "url": doc.url or ""}
        for doc in corpus.documents
    ]
    tables["paragraphs.csv"] = [
        {"id": p.id, "paper_id": p.doc_id, "section": p.section, "text": p.text}
        for p in corpus.paragraphs
    ]
    tables["sentences.csv"] = [
        {"id": s.id, "paragraph_id": s.paragraph_id, "text": s.text}
        for s in corpus.sentences
    ]

    drug_mentions = [m for m in annotations.mentions if m.kind == "drug"]
    disease_mentions = [m for m in annotations.mentions if m.kind == "disease"]
    tables["drug_mentions.csv"] = [
        {"unit_id": m.unit_id, "atc_code": m.code, "surface": m.surface}
        for m in drug_mentions
    ]
    tables["disease_mentions.csv"] = [
        {"unit_id": m.unit_id, "mesh_code": m.code, "surface": m.surface}
        for m in disease_mentions
    ]

    tables["substances.csv"] = [
        {"atc_code": code, "label": annotations.drug_labels.get(code, code)}
        for code in sorted({m.code for m in drug_mentions})
    ]
    tables["diseases.csv"] = [
        {"mesh_code": code, "label": annotations.disease_labels.get(code, code)}
        for code in sorted({m.code for m in disease_mentions})
    ]

    def pair_rows(mentions, unit_key: str, code_key: str, sentence: bool):
        pairs = {(m.unit_id, m.code) for m in mentions
                 if ("#s" in m.unit_id) == sentence}
        return [{unit_key: unit_id, code_key: code}
                for unit_id, code in sorted(pairs)]

    tables["paragraph_drug_mentions.csv"] = pair_rows(
        drug_mentions, "paragraph_id", "atc_code", sentence=False)
    tables["paragraph_disease_mentions.csv"] = pair_rows(
        disease_mentions, "paragraph_id", "mesh_code", sentence=False)
    tables["sentence_drug_mentions.csv"] = pair_rows(
        drug_mentions, "sentence_id", "atc_code", sentence=True)
    tables["sentence_disease_mentions.csv"] = pair_rows(
        disease_mentions, "sentence_id", "mesh_code", sentence=True)

    paper_pairs = {(corpus.paragraph(m.unit_id).doc_id, m.code)
                   for m in drug_mentions if "#s" not in m.unit_id}
    tables["paper_drug_mentions.csv"] = [
        {"paper_id": paper_id, "atc_code": code}
        for paper_id, code in sorted(paper_pairs)
    ]

    for name in EXPORT_TABLES:
        tables[name] = sorted(tables[name], key=lambda row: tuple(row.values()))

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    headers = {
        "papers.csv": ["id", "title", "abstract", "url"],
        "paragraphs.csv": ["id", "paper_id", "section", "text"],
        "sentences.csv": ["id", "paragraph_id", "text"],
        "drug_mentions.csv": ["unit_id", "atc_code", "surface"],
        "disease_mentions.csv": ["unit_id", "mesh_code", "surface"],
        "substances.csv": ["atc_code", "label"],
        "diseases.csv": ["mesh_code", "label"],
        "paragraph_drug_mentions.csv": ["paragraph_id", "atc_code"],
        "paragraph_disease_mentions.csv": ["paragraph_id", "mesh_code"],
        "sentence_drug_mentions.csv": ["sentence_id", "atc_code"],
        "sentence_disease_mentions.csv": ["sentence_id", "mesh_code"],
        "paper_drug_mentions.csv": ["paper_id", "atc_code"],
    }
    for name in EXPORT_TABLES:
        with open(directory / name, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=headers[name],
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(tables[name])
    return tables


def load_tables(directory: str | Path) -> dict[str, list[dict[str, str]]]:
    """Read every *.csv in a directory into name -> list of row dicts."""
    tables = {}
    for path in sorted(Path(directory).glob("*.csv")):
        with open(path, encoding="utf-8", newline="") as handle:
            tables[path.name] = [dict(row) for row in csv.DictReader(handle)]
    return tables


# Mapping document


@dataclass(frozen=True)
class ObjectSpec:
    """Object of a predicate-object rule.

    kind "template": IRI built from {column} slots; "reference": literal from
    a $(column) cell; "iri"/"literal": constants. datatype applies to the two
    literal kinds only.
    """

    kind: str
    value: str
    datatype: str | None = None


@dataclass(frozen=True)
class Mapping:
    name: str
    source: str
    subject_template: str
    class_iri: str | None
    predicate_objects: tuple[tuple[str, ObjectSpec], ...]


@dataclass(frozen=True)
class MappingSet:
    mappings: tuple[Mapping, ...]
    prefixes: dict[str, str]


_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*:")
_PREFIXED_RE = re.compile(r"^([A-Za-z][\w.-]*):(.*)$", re.DOTALL)
_BAD_IRI_CHARS = re.compile(r"[\x00-\x20<>\"{}|^`\\]")
_REFERENCE_RE = re.compile(r"^\$\((\w+)\)$")


def _expand_iri(value: str, prefixes: dict[str, str]) -> str | None:
    """Absolute IRI for a prefixed name or http(s)/urn string, else None."""
    if value.startswith(("http://", "https://", "urn:")):
        return value
    match = _PREFIXED_RE.match(value)
    if match and match.group(1) in prefixes:
        return prefixes[match.group(1)] + match.group(2)
    return None


def _template_columns(template: str) -> tuple[list[str], str]:
    """Column slots and the fixed skeleton of an IRI template."""
    columns = []
    fixed = []
    for part in re.split(r"(\{[^{}]*\})", template):
        if part.startswith("{") and part.endswith("}") and len(part) > 2:
            columns.append(part[1:-1])
        else:
            fixed.append(part)
    skeleton = "".join(fixed)
    if "{" in skeleton or "}" in skeleton:
        raise InvalidIriTemplate(f"unbalanced or empty braces in {template!r}")
    return columns, skeleton


def _validate_template(template: str) -> list[str]:
    columns, skeleton = _template_columns(template)
    if not _SCHEME_RE.match(skeleton):
        raise InvalidIriTemplate(f"{template!r} does not expand to an absolute IRI")
    if _BAD_IRI_CHARS.search(skeleton):
        raise InvalidIriTemplate(f"{template!r} contains characters illegal in IRIs")
    return columns


def _node_line(node) -> int:
    return node.start_mark.line + 1


def _require_scalar(node, what: str) -> str:
    if not isinstance(node, yaml.ScalarNode):
        raise MappingSyntaxError(f"{what} must be a scalar", _node_line(node))
    return node.value


def parse_mapping(document: str,
                  schemas: dict[str, Iterable[str]] | None = None) -> MappingSet:
    """Parse the supported YAML mapping subset into a MappingSet.

    Grammar: top-level ``prefixes`` (name -> IRI) and ``mappings`` (name ->
    {sources, s, po}). ``sources`` is one CSV table (an optional ``~csv``
    suffix is stripped); ``s`` is an IRI template with {column} slots; ``po``
    entries are [predicate, object] or [predicate, object, datatype] where
    the predicate ``a`` declares the row class. Objects are $(column)
    references, {column} IRI templates, or constants (IRI when prefixed or
    absolute, literal otherwise). Unknown keys are rejected. When ``schemas``
    maps a table name to its columns, every referenced column is checked.
    """
    try:
        root = yaml.compose(document, yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise MappingSyntaxError(getattr(exc, "problem", None) or str(exc),
                                 line) from exc
    if root is None or not isinstance(root, yaml.MappingNode):
        raise MappingSyntaxError("document must be a mapping", 1)

    prefixes = dict(DEFAULT_PREFIXES)
    mappings_node = None
    for key_node, value_node in root.value:
        key = _require_scalar(key_node, "top-level key")
        if key == "prefixes":
            if not isinstance(value_node, yaml.MappingNode):
                raise MappingSyntaxError("prefixes must be a mapping",
                                         _node_line(value_node))
            for name_node, iri_node in value_node.value:
                name = _require_scalar(name_node, "prefix name")
                iri = _require_scalar(iri_node, "prefix IRI")
                if not _SCHEME_RE.match(iri) or _BAD_IRI_CHARS.search(iri):
                    raise MappingSyntaxError(f"prefix {name!r} is not an absolute IRI",
                                             _node_line(iri_node))
                prefixes[name] = iri
        elif key == "mappings":
            mappings_node = value_node
        else:
            raise MappingSyntaxError(f"unsupported top-level key {key!r}",
                                     _node_line(key_node))
    if mappings_node is None:
        raise MappingSyntaxError("missing 'mappings' section", 1)
    if not isinstance(mappings_node, yaml.MappingNode):
        raise MappingSyntaxError("mappings must be a mapping",
                                 _node_line(mappings_node))

    mappings = []
    for name_node, body_node in mappings_node.value:
        name = _require_scalar(name_node, "mapping name")
        mappings.append(_parse_one_mapping(name, body_node, prefixes, schemas))
    return MappingSet(mappings=tuple(mappings), prefixes=prefixes)


def _parse_one_mapping(name: str, body: yaml.Node, prefixes: dict[str, str],
                       schemas: dict[str, Iterable[str]] | None) -> Mapping:
    if not isinstance(body, yaml.MappingNode):
        raise MappingSyntaxError(f"mapping {name!r} must be a mapping",
                                 _node_line(body))
    source = subject = None
    po_node = None
    for key_node, value_node in body.value:
        key = _require_scalar(key_node, "mapping key")
        if key == "sources":
            source = _parse_source(value_node)
        elif key == "s":
            subject = _require_scalar(value_node, "subject template")
        elif key == "po":
            po_node = value_node
        else:
            raise MappingSyntaxError(
                f"unsupported key {key!r} in mapping {name!r}",
                _node_line(key_node))
    if source is None or subject is None or po_node is None:
        raise MappingSyntaxError(
            f"mapping {name!r} needs 'sources', 's' and 'po'", _node_line(body))

    expanded_subject = _expand_iri(subject, prefixes) or subject
    referenced = list(_validate_template(expanded_subject))

    class_iri = None
    predicate_objects = []
    if not isinstance(po_node, yaml.SequenceNode):
        raise MappingSyntaxError("po must be a sequence", _node_line(po_node))
    for entry in po_node.value:
        if not isinstance(entry, yaml.SequenceNode) or not 2 <= len(entry.value) <= 3:
            raise MappingSyntaxError(
                "po entry must be [predicate, object] or [predicate, object, datatype]",
                _node_line(entry))
        parts = [_require_scalar(item, "po element") for item in entry.value]
        predicate_raw, object_raw = parts[0], parts[1]
        datatype = None
        if len(parts) == 3:
            datatype = _expand_iri(parts[2], prefixes)
            if datatype is None:
                raise MappingSyntaxError(f"datatype {parts[2]!r} is not an IRI",
                                         _node_line(entry.value[2]))

        if predicate_raw == "a":
            if datatype is not None:
                raise MappingSyntaxError("class declaration takes no datatype",
                                         _node_line(entry))
            iri = _expand_iri(object_raw, prefixes)
            if iri is None:
                raise MappingSyntaxError(f"class {object_raw!r} is not an IRI",
                                         _node_line(entry))
            if class_iri is not None:
                raise MappingSyntaxError(
                    f"mapping {name!r} declares more than one class",
                    _node_line(entry))
            class_iri = iri
            continue

        predicate = _expand_iri(predicate_raw, prefixes)
        if predicate is None:
            raise MappingSyntaxError(f"predicate {predicate_raw!r} is not an IRI",
                                     _node_line(entry.value[0]))
        spec = _parse_object_spec(object_raw, datatype, prefixes, _node_line(entry))
        if spec.kind == "reference":
            referenced.append(spec.value)
        elif spec.kind == "template":
            referenced.extend(_template_columns(spec.value)[0])
        predicate_objects.append((predicate, spec))

    if schemas is not None and source in schemas:
        columns = set(schemas[source])
        for column in referenced:
            if column not in columns:
                raise UnknownColumn(column)

    return Mapping(name=name, source=source, subject_template=expanded_subject,
                   class_iri=class_iri, predicate_objects=tuple(predicate_objects))


def _parse_source(node: yaml.Node) -> str:
    if isinstance(node, yaml.SequenceNode):
        if len(node.value) != 1:
            raise MappingSyntaxError("exactly one source per mapping",
                                     _node_line(node))
        node = node.value[0]
    value = _require_scalar(node, "source")
    return value[:-4] if value.endswith("~csv") else value


def _parse_object_spec(raw: str, datatype: str | None, prefixes: dict[str, str],
                       line: int) -> ObjectSpec:
    reference = _REFERENCE_RE.match(raw)
    if reference:
        return ObjectSpec(kind="reference", value=reference.group(1),
                          datatype=datatype)
    expanded = _expand_iri(raw, prefixes) or raw
    if "{" in expanded or "}" in expanded:
        if datatype is not None:
            raise MappingSyntaxError("datatype applies to literal objects only",
                                     line)
        _validate_template(expanded)
        return ObjectSpec(kind="template", value=expanded)
    if _expand_iri(raw, prefixes) is not None:
        if datatype is not None:
            raise MappingSyntaxError("datatype applies to literal objects only",
                                     line)
        return ObjectSpec(kind="iri", value=expanded)
    return ObjectSpec(kind="literal", value=raw, datatype=datatype)


# Triple generation


def _expand_template(template: str, row: dict[str, str]) -> str | None:
    """Template with row values percent-encoded in; None if any cell empty."""
    columns, _ = _template_columns(template)
    result = template
    for column in columns:
        if column not in row:
            raise UnknownColumn(column)
        value = row[column]
        if value == "":
            return None
        result = result.replace("{" + column + "}", quote(value, safe=""))
    return result


def _object_value(spec: ObjectSpec, row: dict[str, str]) -> Union[str, RdfLiteral, None]:
    if spec.kind == "reference":
        if spec.value not in row:
            raise UnknownColumn(spec.value)
        cell = row[spec.value]
        if cell == "":
            return None
        return RdfLiteral(cell, spec.datatype)
    if spec.kind == "template":
        return _expand_template(spec.value, row)
    if spec.kind == "iri":
        return spec.value
    return RdfLiteral(spec.value, spec.datatype)


def generate_triples(tables: dict[str, list[dict[str, str]]],
                     mapping_set: MappingSet) -> TripleSet:
    """Apply every mapping to its source table rows, deduplicating triples.

    Each row yields one subject; a class triple when the mapping declares
    one; and one triple per predicate-object whose referenced cells are all
    non-empty. Rows whose subject slots contain an empty cell yield nothing.
    """
    out: set[Triple] = set()
    for mapping in mapping_set.mappings:
        if mapping.source not in tables:
            raise MissingTable(mapping.source)
        for row in tables[mapping.source]:
            subject = _expand_template(mapping.subject_template, row)
            if subject is None:
                continue
            if mapping.class_iri is not None:
                out.add(Triple(subject, RDF_TYPE, mapping.class_iri))
            for predicate, spec in mapping.predicate_objects:
                obj = _object_value(spec, row)
                if obj is not None:
                    out.add(Triple(subject, predicate, obj))
    return TripleSet(frozenset(out))


# Serialization


def serialize_ntriples(triples: Iterable[Triple]) -> bytes:
    """Canonical N-Triples: sorted lines, single spaces, ' .' line ends."""
    lines = sorted(_triple_line(t) for t in set(triples))
    return "".join(line + "\n" for line in lines).encode("utf-8")


_IRIREF = r"<([^\x00-\x20<>\"{}|^`\\]*)>"
_LITERAL = r'"((?:[^"\\\n\r]|\\[tbnrf"\'\\]|\\u[0-9A-Fa-f]{4}|\\U[0-9A-Fa-f]{8})*)"'
_LINE_RE = re.compile(
    rf"^\s*{_IRIREF}\s+{_IRIREF}\s+(?:{_IRIREF}|{_LITERAL}(?:\^\^{_IRIREF})?)\s*\.\s*$"
)
_ESCAPE_RE = re.compile(r"\\(?:[tbnrf\"'\\]|u[0-9A-Fa-f]{4}|U[0-9A-Fa-f]{8})")
_ECHAR = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f",
          "\"": "\"", "'": "'", "\\": "\\"}


def _unescape_literal(text: str) -> str:
    def replace(match: re.Match) -> str:
        body = match.group(0)[1:]
        if body[0] in ("u", "U"):
            return chr(int(body[1:], 16))
        return _ECHAR[body]

    return _ESCAPE_RE.sub(replace, text)


def parse_ntriples(data: Union[str, bytes]) -> TripleSet:
    """Parse N-Triples text (IRIs and literals; no blank nodes)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    triples = set()
    for number, line in enumerate(data.split("\n"), start=1):
        if not line.strip():
            continue
        match = _LINE_RE.match(line)
        if match is None:
            raise ValueError(f"line {number}: not a valid triple: {line!r}")
        subject, predicate, obj_iri, lexical, datatype = match.groups()
        if obj_iri is not None:
            obj: Union[str, RdfLiteral] = obj_iri
        else:
            obj = RdfLiteral(_unescape_literal(lexical), datatype)
        triples.add(Triple(subject, predicate, obj))
    return TripleSet(frozenset(triples))


def save_graph(triples: Iterable[Triple], path: str | Path) -> None:
    Path(path).write_bytes(serialize_ntriples(triples))


def load_graph(path: str | Path) -> TripleSet:
    return parse_ntriples(Path(path).read_bytes())


# Pattern queries


@dataclass(frozen=True)
class Var:
    name: str


Term = Union[str, RdfLiteral, Var]


@dataclass(frozen=True)
class QueryFilter:
    """op "strstarts": string form of var starts with value (a plain str);
    op "eq": var's term equals value (a Term)."""

    op: str
    var: str
    value: Union[str, RdfLiteral, Var]


@dataclass(frozen=True)
class PatternQuery:
    select: tuple[str, ...]
    patterns: tuple[tuple[Term, Term, Term], ...]
    filters: tuple[QueryFilter, ...] = ()
    distinct: bool = False


def _parse_query_term(raw, prefixes: dict[str, str], predicate: bool = False) -> Term:
    if isinstance(raw, dict):
        if "var" in raw:
            return Var(str(raw["var"]).lstrip("?"))
        if "iri" in raw:
            return str(raw["iri"])
        if "literal" in raw:
            datatype = raw.get("datatype")
            if datatype is not None:
                datatype = _expand_iri(str(datatype), prefixes) or str(datatype)
            return RdfLiteral(str(raw["literal"]), datatype)
        raise ValueError(f"term object needs 'var', 'iri' or 'literal': {raw!r}")
    raw = str(raw)
    if raw.startswith("?"):
        return Var(raw[1:])
    if predicate and raw == "a":
        return RDF_TYPE
    iri = _expand_iri(raw, prefixes)
    if iri is not None:
        return iri
    return RdfLiteral(raw)


def parse_query(obj: dict) -> PatternQuery:
    """Build a PatternQuery from its JSON form.

    Shape: {select: [?var, ...], patterns: [[s, p, o], ...],
    filters: [[strstarts|eq, ?var, value], ...], distinct: bool,
    prefixes: {name: iri}}. String terms starting with "?" are variables;
    "a" in predicate position is rdf:type; prefixed names and absolute IRIs
    are IRIs; anything else is a literal.
    """
    prefixes = dict(DEFAULT_PREFIXES)
    prefixes.update(obj.get("prefixes") or {})
    select = tuple(str(v).lstrip("?") for v in obj.get("select") or [])
    if not select:
        raise ValueError("query needs at least one select variable")

    patterns = []
    for pattern in obj.get("patterns") or []:
        if len(pattern) != 3:
            raise ValueError(f"pattern must have three terms: {pattern!r}")
        subject = _parse_query_term(pattern[0], prefixes)
        predicate = _parse_query_term(pattern[1], prefixes, predicate=True)
        obj_term = _parse_query_term(pattern[2], prefixes)
        patterns.append((subject, predicate, obj_term))
    if not patterns:
        raise ValueError("query needs at least one pattern")

    filters = []
    for entry in obj.get("filters") or []:
        if len(entry) != 3 or entry[0] not in ("strstarts", "eq"):
            raise ValueError(f"filter must be [strstarts|eq, var, value]: {entry!r}")
        op, var, value = entry
        if op == "strstarts":
            parsed_value: Union[str, RdfLiteral, Var] = str(value)
        else:
            parsed_value = _parse_query_term(value, prefixes)
        filters.append(QueryFilter(op=op, var=str(var).lstrip("?"),
                                   value=parsed_value))

    return PatternQuery(select=select, patterns=tuple(patterns),
                        filters=tuple(filters), distinct=bool(obj.get("distinct")))


def _term_string(term: Union[str, RdfLiteral]) -> str:
    return term.lexical if isinstance(term, RdfLiteral) else term


def evaluate_query(triples: Iterable[Triple],
                   query: PatternQuery) -> list[dict[str, str]]:
    """All bindings matching every pattern, filtered, projected, sorted.

    Projection maps each select variable to the bound term's string form
    (IRI text or literal lexical form); rows are sorted by that tuple and
    deduplicated when the query is distinct.
    """
    all_triples = list(triples)
    pattern_vars = {term.name for pattern in query.patterns
                    for term in pattern if isinstance(term, Var)}
    for name in query.select:
        if name not in pattern_vars:
            raise UnboundSelectVar(f"select variable ?{name} not in any pattern")
    for flt in query.filters:
        if flt.var not in pattern_vars:
            raise UnboundSelectVar(f"filter variable ?{flt.var} not in any pattern")
        if isinstance(flt.value, Var) and flt.value.name not in pattern_vars:
            raise UnboundSelectVar(
                f"filter variable ?{flt.value.name} not in any pattern")

    by_predicate: dict[str, list[Triple]] = {}
    for triple in all_triples:
        by_predicate.setdefault(triple.predicate, []).append(triple)

    bindings: list[dict[str, Union[str, RdfLiteral]]] = [{}]
    for subject, predicate, obj in query.patterns:
        if isinstance(predicate, Var):
            candidates = all_triples
        else:
            candidates = by_predicate.get(predicate, [])
        extended = []
        for binding in bindings:
            for triple in candidates:
                attempt = dict(binding)
                if (_match(subject, triple.subject, attempt)
                        and _match(predicate, triple.predicate, attempt)
                        and _match(obj, triple.obj, attempt)):
                    extended.append(attempt)
        bindings = extended
        if not bindings:
            break

    rows = []
    for binding in bindings:
        if all(_passes(flt, binding) for flt in query.filters):
            rows.append(tuple(_term_string(binding[name]) for name in query.select))
    rows.sort()
    if query.distinct:
        rows = list(dict.fromkeys(rows))
    return [dict(zip(query.select, row)) for row in rows]


def _match(pattern_term: Term, value: Union[str, RdfLiteral],
           binding: dict[str, Union[str, RdfLiteral]]) -> bool:
    if isinstance(pattern_term, Var):
        if pattern_term.name in binding:
            return binding[pattern_term.name] == value
        binding[pattern_term.name] = value
        return True
    return pattern_term == value


def _passes(flt: QueryFilter, binding: dict[str, Union[str, RdfLiteral]]) -> bool:
    bound = binding[flt.var]
    if flt.op == "strstarts":
        return _term_string(bound).startswith(str(flt.value))
    value = binding[flt.value.name] if isinstance(flt.value, Var) else flt.value
    return bound == value
