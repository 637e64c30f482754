"""Pipeline orchestration behind the ``d4c`` executable.

Each subcommand is one stage: it reads the previous stages' artifacts from
the artifact directory, writes its own, and prints a one-line summary.
Stages re-read everything from disk, so deleting one artifact and re-running
just that stage reproduces it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .annotate import (Gazetteer, annotate_corpus, load_annotations,
                       load_gazetteer_csv, save_annotations, tokenize)
from .corpus import ingest as ingest_corpus
from .corpus import load_store, save_store
from .diseasesim import (EmbeddingConfig, extract_terms, save_embeddings,
                         save_terms, train_disease_model)
from .drugsim import (build_ann_index, build_matrix, agglomerate, save_ann,
                      save_matrix, select_clusters, tfidf_transform)
from .kgmap import (EXPORT_TABLES, evaluate_query, export_annotations,
                    generate_triples, parse_mapping, parse_ntriples,
                    parse_query, serialize_ntriples)
from .topics import (Hyperparams, infer_distribution, paragraph_training_data,
                     save_distributions, save_model, train_topic_model)


class UsageError(Exception):
    """Bad invocation (exit 2): unknown config key, missing required option."""


class StageError(Exception):
    """Stage cannot run (exit 1): missing artifact, bad input data."""


# Every tunable has a default here; the default's type decides how config
# file and --set values are coerced. Empty-string paths mean "not set".
DEFAULTS: dict[str, object] = {
    "corpus": "",
    "atc": "",
    "mesh": "",
    "mapping": "",
    "topic_alpha": 0.0,  # 0 resolves to 50/K at training time
    "topic_beta": 0.01,
    "topic_iterations": 1000,
    "topic_seed": 13,
    "cluster_k_min": 2,
    "cluster_k_max": 0,  # 0 means n - 1
    "ann_trees": 10,
    "ann_leaf_size": 16,
    "ann_seed": 5,
    "disease_dim": 100,
    "disease_window": 5,
    "disease_negatives": 5,
    "disease_epochs": 5,
    "disease_base_epochs": 15,
    "disease_seed": 29,
    "disease_min_count": 1,
    "disease_learning_rate": 0.025,
    "disease_terms": 25,
    "disease_min_paragraphs": 1,
}


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key} expects a "
                         f"{type(default).__name__}, got {raw!r}") from None
    return raw


def load_config(path: str | None, overrides: list[str]) -> dict[str, object]:
    """key=value file plus --set overrides, on top of DEFAULTS."""
    config = dict(DEFAULTS)

    def apply(text: str, where: str) -> None:
        if "=" not in text:
            raise UsageError(f"{where}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in DEFAULTS:
            raise UsageError(f"{where}: unknown config key {key!r}")
        config[key] = _coerce(key, value)

    if path:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from None
        for number, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            apply(line, f"{path}:{number}")
    for entry in overrides:
        apply(entry, "--set")
    return config


# (artifact key, relative path, producing stage) in pipeline order; missing
# prerequisites are reported earliest-first so the user knows where to restart.
ARTIFACTS = {
    "corpus": ("corpus/documents.jsonl", "ingest"),
    "annotations": ("annotations/mentions.jsonl", "annotate"),
    "gazetteers": ("gazetteers/atc.csv", "annotate"),
    "topics": ("topics/model.json", "topics-train"),
    "drugs": ("drugs/ann.bin", "drugs-cluster"),
    "diseases": ("diseases/terms.csv", "diseases-train"),
    "kg_tables": ("kg_tables/papers.csv", "kg-export"),
    "kg": ("kg.nt", "kg-build"),
}


def _require(artifacts: Path, *keys: str) -> None:
    for key in keys:
        relative, stage = ARTIFACTS[key]
        path = artifacts / relative
        if not path.exists():
            raise StageError(f"missing artifact {path}; run 'd4c {stage}' first")


@contextmanager
def _lock(artifacts: Path):
    """One writer owns the artifact directory at a time."""
    artifacts.mkdir(parents=True, exist_ok=True)
    path = artifacts / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(f"artifact directory locked by another run: {path}") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _record(artifacts: Path, stage: str, config: dict[str, object],
            summary: dict[str, object]) -> None:
    """Echo the stage summary and effective config into run_meta.json.

    No timestamps on purpose: re-running with the same inputs must leave
    byte-identical metadata.
    """
    path = artifacts / "run_meta.json"
    meta = {"stages": {}}
    if path.exists():
        meta = json.loads(path.read_text(encoding="utf-8"))
    meta.setdefault("stages", {})[stage] = {"config": config, "summary": summary}
    path.write_text(json.dumps(meta, ensure_ascii=False, sort_keys=True,
                               indent=2) + "\n", encoding="utf-8")


def _emit(as_json: bool, stage: str, summary: dict[str, object], text: str) -> None:
    if as_json:
        print(json.dumps({"stage": stage, **summary}, sort_keys=True))
    else:
        print(f"{stage}: {text}")


def _setting(args, config: dict[str, object], flag: str, key: str) -> str:
    value = getattr(args, flag, None) or str(config[key])
    if not value:
        raise UsageError(f"no {key} path given (use --{flag.replace('_', '-')} "
                         f"or {key}= in config)")
    return value


def _paragraph_disease_contexts(store, annotations):
    texts = {p.id: p.text for p in store.paragraphs}
    by_code: dict[str, list[str]] = {}
    for mention in annotations.paragraph_mentions():
        if mention.kind == "disease":
            by_code.setdefault(mention.code, [])
            if mention.unit_id not in by_code[mention.code]:
                by_code[mention.code].append(mention.unit_id)
    return {code: [[t for t, _, _ in tokenize(texts[pid])] for pid in sorted(ids)]
            for code, ids in by_code.items()}


# Stage implementations. Each returns (summary dict, human-readable text).


def _stage_ingest(args, config, artifacts: Path):
    source = _setting(args, config, "input", "corpus")
    if not Path(source).is_dir():
        raise StageError(f"corpus directory not found: {source}")
    try:
        store, stats = ingest_corpus(source)
    except ValueError as exc:
        raise StageError(str(exc)) from None
    save_store(store, artifacts / "corpus")
    summary = {"documents": stats.documents, "paragraphs": stats.paragraphs,
               "sentences": stats.sentences}
    return summary, (f"{stats.documents} documents, {stats.paragraphs} "
                     f"paragraphs, {stats.sentences} sentences")


def _stage_annotate(args, config, artifacts: Path):
    _require(artifacts, "corpus")
    atc_path = _setting(args, config, "atc", "atc")
    mesh_path = _setting(args, config, "mesh", "mesh")
    for path in (atc_path, mesh_path):
        if not Path(path).is_file():
            raise StageError(f"gazetteer file not found: {path}")
    store = load_store(artifacts / "corpus")
    atc = load_gazetteer_csv(atc_path, "drug")
    mesh = load_gazetteer_csv(mesh_path, "disease")
    annotations = annotate_corpus(store, atc, mesh)
    save_annotations(annotations, artifacts / "annotations")
    gazetteer_dir = artifacts / "gazetteers"
    gazetteer_dir.mkdir(parents=True, exist_ok=True)
    (gazetteer_dir / "atc.csv").write_bytes(Path(atc_path).read_bytes())
    (gazetteer_dir / "mesh.csv").write_bytes(Path(mesh_path).read_bytes())
    drugs = {m.code for m in annotations.mentions if m.kind == "drug"}
    diseases = {m.code for m in annotations.mentions if m.kind == "disease"}
    summary = {"mentions": len(annotations.mentions), "drugs": len(drugs),
               "diseases": len(diseases)}
    return summary, (f"{len(annotations.mentions)} mentions, {len(drugs)} drugs, "
                     f"{len(diseases)} diseases")


def _stage_topics(args, config, artifacts: Path):
    _require(artifacts, "corpus", "annotations")
    store = load_store(artifacts / "corpus")
    annotations = load_annotations(artifacts / "annotations")
    unit_ids, data = paragraph_training_data(store, annotations)
    hyper = Hyperparams(alpha=config["topic_alpha"] or None,
                        beta=config["topic_beta"],
                        iterations=config["topic_iterations"],
                        seed=config["topic_seed"])
    try:
        model = train_topic_model(data, hyper)
    except ValueError as exc:
        raise StageError(str(exc)) from None
    out = artifacts / "topics"
    save_model(model, out)
    distributions = [infer_distribution(model, tokens, unit_id)
                     for unit_id, (tokens, _) in zip(unit_ids, data)]
    save_distributions(distributions, out / "theta.jsonl")
    summary = {"topics": model.K, "vocabulary": len(model.vocabulary),
               "units": len(distributions)}
    return summary, (f"{model.K} topics over {len(model.vocabulary)} words, "
                     f"{len(distributions)} unit distributions")


def _stage_drugs(args, config, artifacts: Path):
    _require(artifacts, "annotations")
    annotations = load_annotations(artifacts / "annotations")
    try:
        matrix = build_matrix(annotations)
    except ValueError as exc:
        raise StageError(str(exc)) from None
    out = artifacts / "drugs"
    save_matrix(matrix, out)
    vectors = tfidf_transform(matrix)
    k_max = config["cluster_k_max"] or None
    try:
        dendrogram = agglomerate(vectors)
        k, assignment = select_clusters(dendrogram, vectors,
                                        k_min=config["cluster_k_min"],
                                        k_max=k_max)
    except ValueError as exc:
        raise StageError(str(exc)) from None
    with open(out / "clusters.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["atc_code", "cluster"])
        for code, cluster in zip(matrix.drugs, assignment):
            writer.writerow([code, cluster])
    index = build_ann_index(vectors, tree_count=config["ann_trees"],
                            leaf_size=config["ann_leaf_size"],
                            seed=config["ann_seed"])
    save_ann(index, out / "ann.bin")
    summary = {"drugs": len(matrix.drugs), "diseases": len(matrix.diseases),
               "clusters": k, "excluded": len(matrix.excluded_drugs)}
    return summary, (f"{len(matrix.drugs)} drugs x {len(matrix.diseases)} "
                     f"diseases, {k} clusters")


def _stage_diseases(args, config, artifacts: Path):
    _require(artifacts, "corpus", "annotations")
    store = load_store(artifacts / "corpus")
    annotations = load_annotations(artifacts / "annotations")
    out = artifacts / "diseases"
    out.mkdir(parents=True, exist_ok=True)

    terms = extract_terms([p.text for p in store.paragraphs],
                          n=config["disease_terms"])
    save_terms(terms, out / "terms.csv")

    shared = dict(dim=config["disease_dim"], window=config["disease_window"],
                  negatives=config["disease_negatives"],
                  init_seed=config["disease_seed"],
                  min_count=config["disease_min_count"],
                  learning_rate=config["disease_learning_rate"])
    # The corpus-wide base model plays the pretrained role: every disease
    # model fine-tunes from the same well-trained starting vectors, so
    # per-term distances measure usage drift rather than training noise.
    base = train_disease_model(
        [[t for t, _, _ in tokenize(p.text)] for p in store.paragraphs],
        EmbeddingConfig(epochs=config["disease_base_epochs"], **shared),
        disease="base")
    save_embeddings(base, out / "base.vec")

    contexts = _paragraph_disease_contexts(store, annotations)
    fine_tune = EmbeddingConfig(epochs=config["disease_epochs"], **shared)
    trained = []
    for code in sorted(contexts):
        if len(contexts[code]) < config["disease_min_paragraphs"]:
            continue
        model = train_disease_model(contexts[code], fine_tune, disease=code,
                                    pretrained=base.embeddings)
        save_embeddings(model, out / f"{code}.vec")
        trained.append(code)
    summary = {"models": len(trained), "terms": len(terms.terms),
               "base_vocabulary": len(base.embeddings)}
    return summary, (f"{len(trained)} disease models, {len(terms.terms)} "
                     f"reference terms")


def _stage_kg_export(args, config, artifacts: Path):
    _require(artifacts, "corpus", "annotations")
    store = load_store(artifacts / "corpus")
    annotations = load_annotations(artifacts / "annotations")
    tables = export_annotations(annotations, store, artifacts / "kg_tables")
    rows = sum(len(table) for table in tables.values())
    summary = {"tables": len(tables), "rows": rows}
    return summary, f"{len(tables)} tables, {rows} rows"


def _load_tables(directory: Path) -> dict[str, list[dict[str, str]]]:
    tables = {}
    for name in EXPORT_TABLES:
        path = directory / name
        if not path.exists():
            raise StageError(f"missing artifact {path}; run 'd4c kg-export' first")
        with open(path, encoding="utf-8", newline="") as handle:
            tables[name] = list(csv.DictReader(handle))
    return tables


def _stage_kg_build(args, config, artifacts: Path):
    _require(artifacts, "corpus", "annotations", "kg_tables")
    mapping_path = _setting(args, config, "mapping", "mapping")
    if not Path(mapping_path).is_file():
        raise StageError(f"mapping file not found: {mapping_path}")
    tables = _load_tables(artifacts / "kg_tables")
    try:
        mapping = parse_mapping(Path(mapping_path).read_text(encoding="utf-8"))
        triples = generate_triples(tables, mapping)
    except (ValueError, KeyError) as exc:
        raise StageError(str(exc)) from None
    data = serialize_ntriples(triples)
    (artifacts / "kg.nt").write_bytes(data)
    count = data.count(b"\n")
    summary = {"triples": count, "mappings": len(mapping.mappings)}
    return summary, f"{count} triples from {len(mapping.mappings)} mappings"


def _stage_query(args, config, artifacts: Path):
    _require(artifacts, "kg")
    query_path = Path(args.query_file)
    if not query_path.is_file():
        raise StageError(f"query file not found: {query_path}")
    try:
        query = parse_query(json.loads(query_path.read_text(encoding="utf-8")))
        triples = parse_ntriples((artifacts / "kg.nt").read_text(encoding="utf-8"))
        rows = evaluate_query(triples, query)
    except (ValueError, KeyError) as exc:
        raise StageError(str(exc)) from None
    if args.json:
        print(json.dumps({"stage": "query", "count": len(rows), "rows": rows},
                         sort_keys=True))
    else:
        header = list(query.select)
        widths = [max(len(name), *(len(row[name]) for row in rows), 0)
                  if rows else len(name) for name in header]
        print("  ".join(name.ljust(width)
                        for name, width in zip(header, widths)).rstrip())
        for row in rows:
            print("  ".join(row[name].ljust(width)
                            for name, width in zip(header, widths)).rstrip())
    return None


def _stage_serve(args, config, artifacts: Path):
    for key in ("corpus", "annotations", "gazetteers", "drugs", "diseases", "kg"):
        _require(artifacts, key)
    import uvicorn

    from .service import create_app

    app = create_app(artifacts)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return None


WRITER_STAGES = {
    "ingest": _stage_ingest,
    "annotate": _stage_annotate,
    "topics-train": _stage_topics,
    "drugs-cluster": _stage_drugs,
    "diseases-train": _stage_diseases,
    "kg-export": _stage_kg_export,
    "kg-build": _stage_kg_build,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--artifacts", default=argparse.SUPPRESS,
                        help="artifact directory (default: $D4C_ARTIFACTS or ./artifacts)")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="key=value config file")
    common.add_argument("--set", action="append", dest="overrides",
                        default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override one config key")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="print machine-readable summaries")

    parser = argparse.ArgumentParser(
        prog="d4c", parents=[common],
        description="Corpus annotation, similarity models, and knowledge graph pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", parents=[common], help="load a corpus directory")
    p.add_argument("--input", help="directory of document JSON files")
    p = sub.add_parser("annotate", parents=[common],
                       help="annotate the corpus with drug and disease gazetteers")
    p.add_argument("--atc", help="drug gazetteer CSV")
    p.add_argument("--mesh", help="disease gazetteer CSV")
    sub.add_parser("topics-train", parents=[common],
                   help="train the labeled topic model")
    sub.add_parser("drugs-cluster", parents=[common],
                   help="build the drug similarity matrix, clusters, and index")
    sub.add_parser("diseases-train", parents=[common],
                   help="train per-disease embedding models")
    sub.add_parser("kg-export", parents=[common],
                   help="export annotation tables as CSV")
    p = sub.add_parser("kg-build", parents=[common],
                       help="generate kg.nt from the mapping rules")
    p.add_argument("--mapping", help="mapping rules YAML file")
    p = sub.add_parser("query", parents=[common],
                       help="evaluate a pattern query against kg.nt")
    p.add_argument("query_file", help="query JSON file")
    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    args.json = getattr(args, "json", False)

    try:
        config = load_config(getattr(args, "config", None),
                             getattr(args, "overrides", []))
        artifacts = Path(getattr(args, "artifacts", None)
                         or os.environ.get("D4C_ARTIFACTS") or "artifacts")
        if args.command in WRITER_STAGES:
            stage = WRITER_STAGES[args.command]
            with _lock(artifacts):
                summary, text = stage(args, config, artifacts)
                _record(artifacts, args.command, config, summary)
            _emit(args.json, args.command, summary, text)
        elif args.command == "query":
            _stage_query(args, config, artifacts)
        else:
            _stage_serve(args, config, artifacts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
