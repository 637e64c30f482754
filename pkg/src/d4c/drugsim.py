"""Drug similarity from disease co-mention profiles.

Drugs are rows of a paragraph-level drug x disease co-occurrence matrix,
TF-IDF weighted and L2-normalized. On top of the vectors: single-linkage
clustering with silhouette-based cluster-count selection, and a forest of
random-hyperplane trees for approximate nearest-neighbor replacement queries.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .annotate import AnnotationStore, Gazetteer


class NoCooccurrences(ValueError):
    """No paragraph mentions both a drug and a disease."""


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class TooFewItems(ValueError):
    pass


class SingleCluster(ValueError):
    pass


class UnknownDrug(KeyError):
    pass


@dataclass
class CooccurrenceMatrix:
    drugs: list[str]
    diseases: list[str]
    counts: np.ndarray  # drugs x diseases, int64
    excluded_drugs: list[str] = field(default_factory=list)


def build_matrix(annotations: AnnotationStore) -> CooccurrenceMatrix:
    """Count paragraphs mentioning each (drug, disease) pair.

    A paragraph contributes at most 1 to any pair regardless of repeated
    mentions. Drugs (and diseases) that never co-occur are left out; dropped
    drugs are reported in excluded_drugs.
    """
    pair_paragraphs: dict[tuple[str, str], set[str]] = {}
    all_drugs: set[str] = set()
    by_paragraph: dict[str, tuple[set[str], set[str]]] = {}
    for mention in annotations.paragraph_mentions():
        drugs, diseases = by_paragraph.setdefault(mention.unit_id, (set(), set()))
        if mention.kind == "drug":
            drugs.add(mention.code)
            all_drugs.add(mention.code)
        else:
            diseases.add(mention.code)
    for unit_id, (drugs, diseases) in by_paragraph.items():
        for drug in drugs:
            for disease in diseases:
                pair_paragraphs.setdefault((drug, disease), set()).add(unit_id)
    if not pair_paragraphs:
        raise NoCooccurrences("no paragraph mentions both a drug and a disease")

    kept_drugs = sorted({drug for drug, _ in pair_paragraphs})
    kept_diseases = sorted({disease for _, disease in pair_paragraphs})
    drug_index = {code: i for i, code in enumerate(kept_drugs)}
    disease_index = {code: j for j, code in enumerate(kept_diseases)}
    counts = np.zeros((len(kept_drugs), len(kept_diseases)), np.int64)
    for (drug, disease), paragraphs in pair_paragraphs.items():
        counts[drug_index[drug], disease_index[disease]] = len(paragraphs)
    return CooccurrenceMatrix(drugs=kept_drugs, diseases=kept_diseases,
                              counts=counts,
                              excluded_drugs=sorted(all_drugs - set(kept_drugs)))


@dataclass
class DrugVector:
    drug: str
    weights: np.ndarray


def tfidf_transform(matrix: CooccurrenceMatrix) -> list[DrugVector]:
    """weight(i,j) = count * (ln((1+N)/(1+df_j)) + 1), rows L2-normalized."""
    counts = matrix.counts.astype(np.float64)
    n_drugs = counts.shape[0]
    df = (counts > 0).sum(axis=0)
    idf = np.log((1.0 + n_drugs) / (1.0 + df)) + 1.0
    weighted = counts * idf
    norms = np.linalg.norm(weighted, axis=1, keepdims=True)
    normalized = np.divide(weighted, norms, out=np.zeros_like(weighted),
                           where=norms > 0)
    return [DrugVector(drug=code, weights=normalized[i])
            for i, code in enumerate(matrix.drugs)]


def _weights(u) -> np.ndarray:
    return u.weights if isinstance(u, DrugVector) else np.asarray(u, np.float64)


def cosine_similarity(u, v) -> float:
    a = _weights(u)
    b = _weights(v)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVector("cosine undefined for zero vectors")
    return float(np.dot(a, b) / (norm_a * norm_b))


def cosine_distance_matrix(vectors: list[DrugVector]) -> np.ndarray:
    stacked = np.stack([v.weights for v in vectors])
    norms = np.linalg.norm(stacked, axis=1, keepdims=True)
    unit = stacked / norms
    distance = 1.0 - unit @ unit.T
    np.fill_diagonal(distance, 0.0)
    return np.maximum(distance, 0.0)


@dataclass
class Dendrogram:
    n: int
    merges: list[tuple[int, int, float]]  # cluster ids: 0..n-1 original, n+step merged


def agglomerate(vectors: list[DrugVector]) -> Dendrogram:
    """Single-linkage clustering under cosine distance.

    Ties pick the smallest (id_a, id_b) pair; a merge at step t creates
    cluster id n + t.
    """
    n = len(vectors)
    if n < 2:
        raise TooFewItems("need at least 2 vectors")
    base = cosine_distance_matrix(vectors)
    # current cluster id -> member original indices
    active: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges: list[tuple[int, int, float]] = []
    for step in range(n - 1):
        best = None
        ids = sorted(active)
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                a, b = ids[x], ids[y]
                link = min(base[i, j] for i in active[a] for j in active[b])
                key = (link, a, b)
                if best is None or key < best:
                    best = key
        link, a, b = best
        merges.append((a, b, link))
        members = active.pop(a) + active.pop(b)
        active[n + step] = members
    return Dendrogram(n=n, merges=merges)


def cut_dendrogram(dendrogram: Dendrogram, k: int) -> list[int]:
    """Assignment after the first n-k merges; labels ordered by smallest member."""
    n = dendrogram.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    active: dict[int, list[int]] = {i: [i] for i in range(n)}
    for step in range(n - k):
        a, b, _ = dendrogram.merges[step]
        active[n + step] = active.pop(a) + active.pop(b)
    clusters = sorted((min(members), members) for members in active.values())
    assignment = [0] * n
    for label, (_, members) in enumerate(clusters):
        for i in members:
            assignment[i] = label
    return assignment


def silhouette_score(vectors: list[DrugVector], assignment: list[int]) -> float:
    """Mean silhouette under cosine distance; singleton clusters score 0."""
    labels = sorted(set(assignment))
    if len(labels) < 2:
        raise SingleCluster("silhouette needs at least 2 clusters")
    distance = cosine_distance_matrix(vectors)
    members = {label: [i for i, l in enumerate(assignment) if l == label]
               for label in labels}
    scores = []
    for i, label in enumerate(assignment):
        own = members[label]
        if len(own) == 1:
            scores.append(0.0)
            continue
        a = sum(distance[i, j] for j in own if j != i) / (len(own) - 1)
        b = min(sum(distance[i, j] for j in members[other]) / len(members[other])
                for other in labels if other != label)
        denominator = max(a, b)
        scores.append(0.0 if denominator == 0 else (b - a) / denominator)
    return float(np.mean(scores))


def select_clusters(dendrogram: Dendrogram, vectors: list[DrugVector],
                    k_min: int = 2, k_max: int | None = None) -> tuple[int, list[int]]:
    """Sweep k, keep the best mean silhouette; ties go to the smallest k."""
    n = dendrogram.n
    if k_max is None:
        k_max = n - 1
    if not k_min <= k_max <= n - 1:
        raise ValueError(f"need {k_min} <= k_max <= {n - 1}")
    best = None
    for k in range(k_min, k_max + 1):
        assignment = cut_dendrogram(dendrogram, k)
        score = silhouette_score(vectors, assignment)
        if best is None or score > best[0] + 1e-12:
            best = (score, k, assignment)
    return best[1], best[2]


@dataclass
class _Leaf:
    indices: list[int]


@dataclass
class _Split:
    normal: np.ndarray
    threshold: float
    left: "_Leaf | _Split"
    right: "_Leaf | _Split"


@dataclass
class AnnIndex:
    codes: list[str]
    vectors: np.ndarray
    tree_count: int
    leaf_size: int
    seed: int
    trees: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.code_index = {code: i for i, code in enumerate(self.codes)}


def _build_tree(vectors: np.ndarray, indices: list[int], leaf_size: int, rng):
    if len(indices) <= leaf_size:
        return _Leaf(indices=indices)
    for _ in range(3):
        picks = rng.choice(len(indices), size=2, replace=False)
        p = vectors[indices[picks[0]]]
        q = vectors[indices[picks[1]]]
        normal = p - q
        if not np.any(normal):
            continue
        threshold = float(normal @ ((p + q) / 2.0))
        left = [i for i in indices if float(normal @ vectors[i]) < threshold]
        right = [i for i in indices if float(normal @ vectors[i]) >= threshold]
        if left and right:
            return _Split(normal=normal, threshold=threshold,
                          left=_build_tree(vectors, left, leaf_size, rng),
                          right=_build_tree(vectors, right, leaf_size, rng))
    return _Leaf(indices=indices)


def build_ann_index(vectors: list[DrugVector], tree_count: int = 10,
                    leaf_size: int = 16, seed: int = 5) -> AnnIndex:
    """Forest of trees, each splitting on hyperplanes equidistant to two
    random member points, until nodes hold at most leaf_size drugs."""
    stacked = np.stack([v.weights for v in vectors])
    index = AnnIndex(codes=[v.drug for v in vectors], vectors=stacked,
                     tree_count=tree_count, leaf_size=leaf_size, seed=seed)
    rng = np.random.default_rng(seed)
    index.trees = [_build_tree(stacked, list(range(len(vectors))), leaf_size, rng)
                   for _ in range(tree_count)]
    return index


def ann_candidates(index: AnnIndex, vector: np.ndarray,
                   search_k: int | None = None) -> list[int]:
    """Best-first search over all trees, widest-margin nodes first."""
    import heapq

    if search_k is None:
        search_k = index.tree_count * index.leaf_size * 4
    heap = []
    for t, tree in enumerate(index.trees):
        heapq.heappush(heap, (-math.inf, t, tree))
    counter = len(index.trees)
    seen: set[int] = set()
    while heap and len(seen) < search_k:
        priority, _, node = heapq.heappop(heap)
        priority = -priority
        if isinstance(node, _Leaf):
            seen.update(node.indices)
            continue
        margin = float(node.normal @ vector) - node.threshold
        near, far = (node.right, node.left) if margin >= 0 else (node.left, node.right)
        heapq.heappush(heap, (-min(priority, abs(margin)), counter, near))
        counter += 1
        heapq.heappush(heap, (-min(priority, -abs(margin)), counter, far))
        counter += 1
    return sorted(seen)


def query_replacements(index: AnnIndex, drug_or_keyword: str, k: int,
                       gazetteer: Gazetteer | None = None,
                       ) -> list[tuple[str, str, float]]:
    """k most cosine-similar drugs to the resolved query drug.

    Candidates come from the tree forest and are reranked exactly; the query
    drug never appears in its own results.
    """
    code = None
    if gazetteer is not None:
        code = gazetteer.resolve(drug_or_keyword)
    if code is None and drug_or_keyword.upper() in index.code_index:
        code = drug_or_keyword.upper()
    if code is None or code not in index.code_index:
        raise UnknownDrug(drug_or_keyword)
    query_row = index.code_index[code]
    query_vector = index.vectors[query_row]
    scored = []
    for i in ann_candidates(index, query_vector):
        if i == query_row:
            continue
        similarity = cosine_similarity(query_vector, index.vectors[i])
        scored.append((-similarity, index.codes[i]))
    scored.sort()
    labels = gazetteer.labels if gazetteer is not None else {}
    return [(code_i, labels.get(code_i, ""), -negative)
            for negative, code_i in scored[:k]]


def save_matrix(matrix: CooccurrenceMatrix, out_dir) -> None:
    """drugs.csv / diseases.csv index tables + counts.csv nonzero triplets."""
    import csv
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "drugs.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", "atc_code"])
        for i, code in enumerate(matrix.drugs):
            writer.writerow([i, code])
    with open(out_dir / "diseases.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", "mesh_code"])
        for j, code in enumerate(matrix.diseases):
            writer.writerow([j, code])
    with open(out_dir / "counts.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["row", "col", "count"])
        rows, cols = np.nonzero(matrix.counts)
        for i, j in zip(rows.tolist(), cols.tolist()):
            writer.writerow([i, j, int(matrix.counts[i, j])])


def load_matrix(in_dir) -> CooccurrenceMatrix:
    import csv
    from pathlib import Path

    in_dir = Path(in_dir)

    def read_index(name, column):
        out = []
        with open(in_dir / name, encoding="utf-8", newline="") as handle:
            for row in csv.DictReader(handle):
                out.append((int(row["index"]), row[column]))
        return [code for _, code in sorted(out)]

    drugs = read_index("drugs.csv", "atc_code")
    diseases = read_index("diseases.csv", "mesh_code")
    counts = np.zeros((len(drugs), len(diseases)), np.int64)
    with open(in_dir / "counts.csv", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            counts[int(row["row"]), int(row["col"])] = int(row["count"])
    return CooccurrenceMatrix(drugs=drugs, diseases=diseases, counts=counts)


_ANN_MAGIC = b"D4CANN1\n"


def save_ann(index: AnnIndex, path) -> None:
    """Binary layout: magic, params, code table, raw vectors. Trees rebuild
    deterministically from the recorded seed on load."""
    codes_blob = json.dumps(index.codes, separators=(",", ":")).encode("utf-8")
    n, dim = index.vectors.shape
    header = struct.pack("<4q", index.tree_count, index.leaf_size, index.seed,
                         len(codes_blob))
    shape = struct.pack("<2q", n, dim)
    payload = np.ascontiguousarray(index.vectors, "<f8").tobytes()
    with open(path, "wb") as handle:
        handle.write(_ANN_MAGIC + header + codes_blob + shape + payload)


def load_ann(path) -> AnnIndex:
    with open(path, "rb") as handle:
        blob = handle.read()
    if not blob.startswith(_ANN_MAGIC):
        raise ValueError("not an ANN index file")
    offset = len(_ANN_MAGIC)
    tree_count, leaf_size, seed, codes_size = struct.unpack_from("<4q", blob, offset)
    offset += struct.calcsize("<4q")
    codes = json.loads(blob[offset:offset + codes_size].decode("utf-8"))
    offset += codes_size
    n, dim = struct.unpack_from("<2q", blob, offset)
    offset += struct.calcsize("<2q")
    vectors = np.frombuffer(blob, "<f8", count=n * dim, offset=offset).reshape(n, dim)
    rebuilt = build_ann_index(
        [DrugVector(drug=code, weights=vectors[i]) for i, code in enumerate(codes)],
        tree_count=tree_count, leaf_size=leaf_size, seed=seed)
    return rebuilt
