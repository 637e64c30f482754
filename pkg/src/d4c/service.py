"""HTTP facade over the pipeline artifacts.

All state is loaded read-only at startup; every endpoint is a pure read, so
identical requests return identical bodies for a given artifact directory.
Routes mirror the public API shape: /search, /bio-api/*, /kg/query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .annotate import AnnotationStore, Gazetteer, load_annotations, load_gazetteer_csv
from .corpus import CorpusStore, load_store
from .diseasesim import (NoSharedTerms, TermList, compare_diseases,
                         load_embeddings, load_terms)
from .drugsim import AnnIndex, UnknownDrug, load_ann, query_replacements
from .kgmap import TripleSet, evaluate_query, parse_ntriples, parse_query


@dataclass
class ServiceState:
    corpus: CorpusStore
    annotations: AnnotationStore
    atc: Gazetteer
    mesh: Gazetteer
    ann_index: AnnIndex
    terms: TermList
    disease_models: dict
    triples: TripleSet
    titles: dict[str, str] = field(default_factory=dict)
    paragraph_order: dict[str, int] = field(default_factory=dict)
    paragraphs_by_code: dict[str, list[str]] = field(default_factory=dict)
    pair_counts: dict[tuple[str, str], int] = field(default_factory=dict)
    code_kinds: dict[str, str] = field(default_factory=dict)


def load_state(artifacts: str | Path) -> ServiceState:
    artifacts = Path(artifacts)
    corpus = load_store(artifacts / "corpus")
    annotations = load_annotations(artifacts / "annotations")
    atc = load_gazetteer_csv(artifacts / "gazetteers" / "atc.csv", "drug")
    mesh = load_gazetteer_csv(artifacts / "gazetteers" / "mesh.csv", "disease")
    ann_index = load_ann(artifacts / "drugs" / "ann.bin")
    terms = load_terms(artifacts / "diseases" / "terms.csv")
    disease_models = {}
    for path in sorted((artifacts / "diseases").glob("*.vec")):
        if path.stem != "base":
            disease_models[path.stem] = load_embeddings(path, disease=path.stem)
    triples = parse_ntriples((artifacts / "kg.nt").read_bytes())

    state = ServiceState(corpus=corpus, annotations=annotations, atc=atc,
                         mesh=mesh, ann_index=ann_index, terms=terms,
                         disease_models=disease_models, triples=triples)
    state.titles = {doc.id: doc.title for doc in corpus.documents}
    state.paragraph_order = {p.id: i for i, p in enumerate(corpus.paragraphs)}

    # Paragraph-level mention inventory: which codes appear where, and how
    # often every pair of codes shares a paragraph. The pair counts back all
    # "related" rankings; for drug-disease pairs they coincide with the
    # drugsim co-occurrence matrix.
    codes_by_paragraph: dict[str, set[str]] = {}
    for mention in annotations.paragraph_mentions():
        state.code_kinds[mention.code] = mention.kind
        codes_by_paragraph.setdefault(mention.unit_id, set()).add(mention.code)
        bucket = state.paragraphs_by_code.setdefault(mention.code, [])
        if mention.unit_id not in bucket:
            bucket.append(mention.unit_id)
    for bucket in state.paragraphs_by_code.values():
        bucket.sort(key=state.paragraph_order.__getitem__)
    for codes in codes_by_paragraph.values():
        ordered = sorted(codes)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                state.pair_counts[(a, b)] = state.pair_counts.get((a, b), 0) + 1
    return state


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": code, "message": message}, status_code=status)


def _resolve(state: ServiceState, keyword: str) -> tuple[str, str] | None:
    """Resolve a label, synonym, or code to ("drug"|"disease", code)."""
    code = state.atc.resolve(keyword)
    if code is not None:
        return "drug", code
    code = state.mesh.resolve(keyword)
    if code is not None:
        return "disease", code
    return None


def _label(state: ServiceState, code: str) -> str:
    return state.atc.labels.get(code) or state.mesh.labels.get(code, "")


def _related(state: ServiceState, code: str, kind: str) -> list[tuple[str, int]]:
    """Codes of `kind` sharing a paragraph with `code`, by count then code."""
    partners = []
    for (a, b), count in state.pair_counts.items():
        partner = b if a == code else a if b == code else None
        if partner is not None and state.code_kinds.get(partner) == kind:
            partners.append((partner, count))
    partners.sort(key=lambda item: (-item[1], item[0]))
    return partners


def _drug_rows(state: ServiceState, partners: list[tuple[str, int]]) -> list[dict]:
    return [{"atc_code": code, "label": _label(state, code), "score": float(count)}
            for code, count in partners]


def _disease_rows(state: ServiceState, partners: list[tuple[str, int]]) -> list[dict]:
    return [{"mesh_code": code, "label": _label(state, code), "score": float(count)}
            for code, count in partners]


def create_app(artifacts: str | Path) -> FastAPI:
    state = load_state(artifacts)
    app = FastAPI(title="d4c", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.get("/healthz")
    def healthz():
        return {"status": "ok",
                "documents": len(state.corpus.documents),
                "paragraphs": len(state.corpus.paragraphs),
                "triples": len(state.triples.triples)}

    @app.get("/search")
    def search(q: str = "", offset: str = "0", limit: str = "10"):
        try:
            offset_n, limit_n = int(offset), int(limit)
        except ValueError:
            return _error(400, "bad_pagination",
                          f"offset and limit must be integers, got "
                          f"offset={offset!r} limit={limit!r}")
        if offset_n < 0 or limit_n < 1:
            return _error(400, "bad_pagination",
                          f"need offset >= 0 and limit >= 1, got "
                          f"offset={offset_n} limit={limit_n}")
        resolved = _resolve(state, q)
        if resolved is None:
            return _error(404, "unknown_term", f"unknown term: {q!r}")
        kind, code = resolved
        unit_ids = state.paragraphs_by_code.get(code, [])
        page = unit_ids[offset_n:offset_n + limit_n]
        paragraphs = []
        for unit_id in page:
            paragraph = state.corpus.paragraph(unit_id)
            spans = [{"start": m.char_span[0], "end": m.char_span[1],
                      "code": m.code, "kind": m.kind, "surface": m.surface}
                     for m in state.annotations.for_unit(unit_id)]
            spans.sort(key=lambda span: (span["start"], span["end"], span["code"]))
            paragraphs.append({"paper_id": paragraph.doc_id,
                               "paragraph_id": unit_id,
                               "title": state.titles.get(paragraph.doc_id, ""),
                               "section": paragraph.section,
                               "text": paragraph.text,
                               "spans": spans})
        return {"query": q,
                "resolved": {"kind": kind, "code": code,
                             "label": _label(state, code)},
                "total": len(unit_ids),
                "page": {"offset": offset_n, "limit": limit_n},
                "paragraphs": paragraphs,
                "related_drugs": _drug_rows(
                    state, [p for p in _related(state, code, "drug")
                            if p[0] != code]),
                "related_diseases": _disease_rows(
                    state, [p for p in _related(state, code, "disease")
                            if p[0] != code])}

    @app.get("/bio-api/replacements")
    def replacements(keywords: str = "", k: str = "5"):
        try:
            k_n = int(k)
        except ValueError:
            return _error(400, "bad_request", f"k must be an integer, got {k!r}")
        if k_n < 0:
            return _error(400, "bad_request", f"k must be >= 0, got {k_n}")
        try:
            ranked = query_replacements(state.ann_index, keywords, k_n,
                                        gazetteer=state.atc)
        except UnknownDrug:
            return _error(404, "unknown_term", f"unknown drug: {keywords!r}")
        return [{"atc_code": code, "label": label, "score": score}
                for code, label, score in ranked]

    @app.get("/bio-api/drugs")
    def related_drugs(keywords: str = ""):
        resolved = _resolve(state, keywords)
        if resolved is None:
            return _error(404, "unknown_term", f"unknown term: {keywords!r}")
        _, code = resolved
        return _drug_rows(state, [p for p in _related(state, code, "drug")
                                  if p[0] != code])

    @app.get("/bio-api/diseases")
    def related_diseases(keywords: str = ""):
        resolved = _resolve(state, keywords)
        if resolved is None:
            return _error(404, "unknown_term", f"unknown term: {keywords!r}")
        _, code = resolved
        return _disease_rows(state, [p for p in _related(state, code, "disease")
                                     if p[0] != code])

    @app.get("/bio-api/disease-neighbors")
    def disease_neighbors(keywords: str = ""):
        resolved = _resolve(state, keywords)
        if resolved is None or resolved[0] != "disease":
            return _error(404, "unknown_term", f"unknown disease: {keywords!r}")
        code = resolved[1]
        model = state.disease_models.get(code)
        if model is None:
            return _error(404, "unknown_term",
                          f"no trained model for disease {code}")
        neighbors = []
        for other_code, other in state.disease_models.items():
            if other_code == code:
                continue
            try:
                distance = compare_diseases(model, other, state.terms).aggregate
            except NoSharedTerms:
                continue
            neighbors.append({"mesh_code": other_code,
                              "label": _label(state, other_code),
                              "distance": distance})
        neighbors.sort(key=lambda row: (row["distance"], row["mesh_code"]))
        return neighbors

    @app.post("/kg/query")
    async def kg_query(request: Request):
        try:
            body = await request.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(400, "bad_query", "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "bad_query", "query must be a JSON object")
        try:
            query = parse_query(body)
            rows = evaluate_query(state.triples, query)
        except ValueError as exc:
            return _error(400, "bad_query", str(exc))
        return {"count": len(rows), "rows": rows}

    return app
