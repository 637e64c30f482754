"""Drug vectors, clustering, and approximate replacement queries."""

import itertools

import numpy as np
import pytest
import scipy.cluster.hierarchy
import scipy.spatial.distance

from d4c.annotate import Mention, AnnotationStore, build_gazetteer
from d4c.drugsim import (
    AnnIndex,
    CooccurrenceMatrix,
    DimensionMismatch,
    DrugVector,
    NoCooccurrences,
    SingleCluster,
    TooFewItems,
    UnknownDrug,
    ZeroVector,
    agglomerate,
    build_ann_index,
    build_matrix,
    cosine_similarity,
    cut_dendrogram,
    load_ann,
    load_matrix,
    query_replacements,
    save_ann,
    save_matrix,
    select_clusters,
    silhouette_score,
    tfidf_transform,
)


def mention(unit_id, code, kind, start=0):
    return Mention(unit_id=unit_id, char_span=(start, start + len(code)),
                   surface=code, code=code, kind=kind)


def annotations_from(paragraph_codes):
    """paragraph_codes: {unit_id: (drug codes, disease codes)} with repeats allowed."""
    mentions = []
    for unit_id, (drugs, diseases) in paragraph_codes.items():
        offset = 0
        for code in drugs:
            mentions.append(mention(unit_id, code, "drug", offset))
            offset += 20
        for code in diseases:
            mentions.append(mention(unit_id, code, "disease", offset))
            offset += 20
    return AnnotationStore(mentions=mentions)


class TestBuildMatrix:
    def test_single_pair(self):
        annotations = annotations_from({"d#p0": (["P01BA01"], ["C000657245"])})
        matrix = build_matrix(annotations)
        assert matrix.drugs == ["P01BA01"]
        assert matrix.diseases == ["C000657245"]
        assert matrix.counts.tolist() == [[1]]

    def test_repeated_mentions_count_once_per_paragraph(self):
        annotations = annotations_from(
            {"d#p0": (["P01BA01", "P01BA01"], ["D008288"])})
        matrix = build_matrix(annotations)
        assert matrix.counts.tolist() == [[1]]

    def test_no_cooccurrence_raises(self):
        annotations = annotations_from({"d#p0": (["P01BA01"], []),
                                        "d#p1": ([], ["D008288"])})
        with pytest.raises(NoCooccurrences):
            build_matrix(annotations)

    def test_lonely_drug_excluded_and_reported(self):
        annotations = annotations_from({"d#p0": (["P01BA01"], ["D008288"]),
                                        "d#p1": (["J05AE06"], [])})
        matrix = build_matrix(annotations)
        assert matrix.drugs == ["P01BA01"]
        assert matrix.excluded_drugs == ["J05AE06"]

    def test_sentence_mentions_do_not_count(self):
        annotations = annotations_from({"d#p0": (["P01BA01"], ["D008288"]),
                                        "d#p0#s0": (["J05AE06"], ["D003231"])})
        matrix = build_matrix(annotations)
        assert matrix.drugs == ["P01BA01"]
        assert matrix.diseases == ["D008288"]

    def test_matches_nested_loop_oracle_on_random_fixture(self):
        rng = np.random.default_rng(8)
        drugs = [f"A{i:02d}AA{i:02d}" for i in range(1, 7)]
        diseases = [f"D{i:06d}" for i in range(1, 9)]
        paragraph_codes = {}
        for p in range(30):
            chosen_drugs = [d for d in drugs if rng.random() < 0.4]
            chosen_diseases = [d for d in diseases if rng.random() < 0.4]
            paragraph_codes[f"doc#p{p}"] = (chosen_drugs, chosen_diseases)
        matrix = build_matrix(annotations_from(paragraph_codes))

        for i, drug in enumerate(matrix.drugs):
            for j, disease in enumerate(matrix.diseases):
                expected = sum(
                    1 for drugs_here, diseases_here in paragraph_codes.values()
                    if drug in drugs_here and disease in diseases_here)
                assert matrix.counts[i, j] == expected


class TestTfidf:
    def test_ubiquitous_disease_gets_idf_one(self):
        matrix = CooccurrenceMatrix(
            drugs=["A01AA01", "B01AA01"], diseases=["D000001"],
            counts=np.array([[2], [3]]))
        vectors = tfidf_transform(matrix)
        # idf = ln(3/3)+1 = 1, single column normalizes to 1
        assert vectors[0].weights.tolist() == [1.0]
        assert vectors[1].weights.tolist() == [1.0]

    def test_diagonal_counts_normalize_to_axes(self):
        matrix = CooccurrenceMatrix(
            drugs=["A01AA01", "B01AA01"], diseases=["D000001", "D000002"],
            counts=np.array([[2, 0], [0, 3]]))
        vectors = tfidf_transform(matrix)
        np.testing.assert_allclose(vectors[0].weights, [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(vectors[1].weights, [0.0, 1.0], atol=1e-12)

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(3)
        counts = rng.integers(0, 5, size=(7, 9))
        counts[counts.sum(axis=1) == 0, 0] = 1
        matrix = CooccurrenceMatrix(
            drugs=[f"A{i:02d}AA01" for i in range(7)],
            diseases=[f"D{j:06d}" for j in range(9)], counts=counts)
        vectors = tfidf_transform(matrix)
        n = 7
        for i, vector in enumerate(vectors):
            raw = np.zeros(9)
            for j in range(9):
                df = sum(1 for r in range(n) if counts[r, j] > 0)
                raw[j] = counts[i, j] * (np.log((1 + n) / (1 + df)) + 1)
            expected = raw / np.linalg.norm(raw)
            np.testing.assert_allclose(vector.weights, expected, atol=1e-9)
            assert np.linalg.norm(vector.weights) == pytest.approx(1.0, abs=1e-9)
            assert all((w == 0) == (counts[i, j] == 0)
                       for j, w in enumerate(vector.weights))


class TestCosine:
    def test_identical_is_one(self):
        v = DrugVector("A01AA01", np.array([1.0, 2.0]))
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert cosine_similarity(np.array([1.0, 0.0]),
                                 np.array([0.0, 2.0])) == pytest.approx(0.0)

    def test_hand_computed_value(self):
        assert cosine_similarity(np.array([1.0, 2.0, 0.0]),
                                 np.array([2.0, 1.0, 0.0])) == pytest.approx(0.8)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        u, v = rng.normal(size=(2, 6))
        assert cosine_similarity(u, v) == pytest.approx(cosine_similarity(v, u))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity(np.ones(2), np.ones(3))

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine_similarity(np.zeros(2), np.ones(2))


def vectors_from_gram(gram):
    """Unit vectors whose pairwise cosines realize a PSD Gram matrix."""
    chol = np.linalg.cholesky(np.asarray(gram))
    return [DrugVector(f"A{i:02d}AA01", row) for i, row in enumerate(chol)]


class TestAgglomerate:
    def test_hand_traced_merges(self):
        # cosine distances: d(0,1)=0.1, d(1,2)=0.5, d(0,2)=0.6
        vectors = vectors_from_gram([[1.0, 0.9, 0.4],
                                     [0.9, 1.0, 0.5],
                                     [0.4, 0.5, 1.0]])
        dendrogram = agglomerate(vectors)
        (a0, b0, d0), (a1, b1, d1) = dendrogram.merges
        assert (a0, b0) == (0, 1)
        assert d0 == pytest.approx(0.1, abs=1e-9)
        assert (a1, b1) == (2, 3)
        assert d1 == pytest.approx(0.5, abs=1e-9)

    def test_identical_vectors_merge_at_zero(self):
        vectors = [DrugVector(f"A{i:02d}AA01", np.array([1.0, 1.0]))
                   for i in range(4)]
        dendrogram = agglomerate(vectors)
        assert all(abs(d) < 1e-12 for _, _, d in dendrogram.merges)

    def test_too_few_items(self):
        with pytest.raises(TooFewItems):
            agglomerate([DrugVector("A01AA01", np.ones(2))])

    def test_matches_scipy_single_linkage(self):
        rng = np.random.default_rng(14)
        for trial in range(5):
            data = rng.normal(size=(12, 5))
            vectors = [DrugVector(f"A{i:02d}AA01", row) for i, row in enumerate(data)]
            dendrogram = agglomerate(vectors)
            condensed = scipy.spatial.distance.pdist(data, metric="cosine")
            linkage = scipy.cluster.hierarchy.linkage(condensed, method="single")
            got = [d for _, _, d in dendrogram.merges]
            np.testing.assert_allclose(got, linkage[:, 2], atol=1e-9)
            for k in (2, 3, 5):
                mine = cut_dendrogram(dendrogram, k)
                theirs = scipy.cluster.hierarchy.fcluster(
                    linkage, t=k, criterion="maxclust")
                partition_mine = {frozenset(np.flatnonzero(np.array(mine) == c))
                                  for c in set(mine)}
                partition_theirs = {frozenset(np.flatnonzero(theirs == c))
                                    for c in set(theirs)}
                assert partition_mine == partition_theirs

    def test_merge_distances_non_decreasing(self):
        rng = np.random.default_rng(21)
        data = rng.normal(size=(15, 4))
        vectors = [DrugVector(f"A{i:02d}AA01", row) for i, row in enumerate(data)]
        distances = [d for _, _, d in agglomerate(vectors).merges]
        assert distances == sorted(distances)


def silhouette_oracle(vectors, assignment):
    data = np.stack([v.weights for v in vectors])
    unit = data / np.linalg.norm(data, axis=1, keepdims=True)
    distance = 1.0 - unit @ unit.T
    scores = []
    for i in range(len(vectors)):
        same = [j for j in range(len(vectors))
                if assignment[j] == assignment[i] and j != i]
        if not same:
            scores.append(0.0)
            continue
        a = float(np.mean([distance[i, j] for j in same]))
        b = min(float(np.mean([distance[i, j] for j in range(len(vectors))
                               if assignment[j] == other]))
                for other in set(assignment) if other != assignment[i])
        scores.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return float(np.mean(scores))


class TestSilhouette:
    def test_perfectly_separated_identical_clusters(self):
        vectors = [DrugVector("A01AA01", np.array([1.0, 0.0])),
                   DrugVector("A02AA01", np.array([1.0, 0.0])),
                   DrugVector("B01AA01", np.array([0.0, 1.0])),
                   DrugVector("B02AA01", np.array([0.0, 1.0]))]
        assert silhouette_score(vectors, [0, 0, 1, 1]) == pytest.approx(1.0)

    def test_random_split_of_tight_blob_scores_low(self):
        rng = np.random.default_rng(6)
        base = np.array([1.0, 1.0, 1.0])
        vectors = [DrugVector(f"A{i:02d}AA01", base + rng.normal(scale=1e-3, size=3))
                   for i in range(20)]
        assignment = [int(x) for x in rng.integers(0, 2, size=20)]
        if len(set(assignment)) < 2:
            assignment[0] = 1 - assignment[0]
        assert silhouette_score(vectors, assignment) <= 0.1

    def test_singleton_contributes_zero(self):
        vectors = [DrugVector("A01AA01", np.array([1.0, 0.0])),
                   DrugVector("A02AA01", np.array([1.0, 0.0])),
                   DrugVector("B01AA01", np.array([0.0, 1.0]))]
        score = silhouette_score(vectors, [0, 0, 1])
        assert score == pytest.approx((1.0 + 1.0 + 0.0) / 3)

    def test_single_cluster_raises(self):
        vectors = [DrugVector("A01AA01", np.ones(2)),
                   DrugVector("A02AA01", np.ones(2))]
        with pytest.raises(SingleCluster):
            silhouette_score(vectors, [0, 0])

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(31)
        for trial in range(5):
            data = rng.normal(size=(25, 6))
            vectors = [DrugVector(f"A{i:02d}AA01", row)
                       for i, row in enumerate(data)]
            assignment = [int(x) for x in rng.integers(0, 4, size=25)]
            if len(set(assignment)) < 2:
                continue
            got = silhouette_score(vectors, assignment)
            assert got == pytest.approx(silhouette_oracle(vectors, assignment),
                                        abs=1e-9)


def planted_vectors(k, per_cluster, dim, seed, noise=0.05):
    rng = np.random.default_rng(seed)
    centers = np.eye(k, dim)
    out = []
    for c in range(k):
        for i in range(per_cluster):
            v = centers[c] + rng.normal(scale=noise, size=dim)
            out.append(DrugVector(f"{'ABCDEFGH'[c]}{i:02d}AA01", v / np.linalg.norm(v)))
    return out


class TestSelectClusters:
    @pytest.mark.parametrize("planted_k", [2, 3, 5])
    def test_recovers_planted_k(self, planted_k):
        vectors = planted_vectors(planted_k, 10, 8, seed=planted_k)
        dendrogram = agglomerate(vectors)
        k, assignment = select_clusters(dendrogram, vectors, k_min=2,
                                        k_max=min(8, len(vectors) - 1))
        assert k == planted_k
        # every planted group lands in exactly one recovered cluster
        for c in range(planted_k):
            group = assignment[c * 10:(c + 1) * 10]
            assert len(set(group)) == 1

    def test_tie_prefers_smallest_k(self):
        vectors = [DrugVector("A01AA01", np.array([1.0, 0.0])),
                   DrugVector("A02AA01", np.array([1.0, 0.0])),
                   DrugVector("B01AA01", np.array([0.0, 1.0])),
                   DrugVector("B02AA01", np.array([0.0, 1.0]))]
        dendrogram = agglomerate(vectors)
        k, _ = select_clusters(dendrogram, vectors, k_min=2, k_max=3)
        assert k == 2

    def test_k_max_validated(self):
        vectors = planted_vectors(2, 3, 4, seed=1)
        dendrogram = agglomerate(vectors)
        with pytest.raises(ValueError):
            select_clusters(dendrogram, vectors, k_min=2, k_max=len(vectors))


def collect_leaf_indices(node):
    if hasattr(node, "indices"):
        return list(node.indices)
    return collect_leaf_indices(node.left) + collect_leaf_indices(node.right)


class TestAnnIndex:
    def test_single_drug_single_leaf(self):
        index = build_ann_index([DrugVector("A01AA01", np.array([1.0, 0.0]))])
        assert len(index.trees) == 10
        for tree in index.trees:
            assert collect_leaf_indices(tree) == [0]

    def test_every_drug_in_every_tree_once(self):
        rng = np.random.default_rng(4)
        vectors = [DrugVector(f"A{i:03d}", rng.normal(size=6)) for i in range(100)]
        index = build_ann_index(vectors, tree_count=5, leaf_size=8)
        for tree in index.trees:
            assert sorted(collect_leaf_indices(tree)) == list(range(100))

    def test_leaf_size_respected_on_separable_data(self):
        vectors = planted_vectors(4, 20, 8, seed=9)
        index = build_ann_index(vectors, tree_count=3, leaf_size=16)

        def leaf_sizes(node):
            if hasattr(node, "indices"):
                return [len(node.indices)]
            return leaf_sizes(node.left) + leaf_sizes(node.right)

        for tree in index.trees:
            assert max(leaf_sizes(tree)) <= 16

    def test_deterministic_given_seed(self):
        vectors = planted_vectors(3, 10, 6, seed=2)
        first = build_ann_index(vectors, seed=11)
        second = build_ann_index(vectors, seed=11)
        query = vectors[0].weights
        from d4c.drugsim import ann_candidates
        assert ann_candidates(first, query) == ann_candidates(second, query)


class TestQueryReplacements:
    def test_two_drug_index_returns_the_other(self):
        vectors = [DrugVector("A01AA01", np.array([1.0, 0.1])),
                   DrugVector("B01AA01", np.array([0.1, 1.0]))]
        index = build_ann_index(vectors)
        results = query_replacements(index, "A01AA01", 1)
        assert [code for code, _, _ in results] == ["B01AA01"]

    def test_twin_drug_rank_one_similarity_one(self):
        rng = np.random.default_rng(12)
        vectors = [DrugVector(f"C{i:02d}AA01", rng.normal(size=8)) for i in range(20)]
        twin = DrugVector("A01AA01", vectors[0].weights.copy())
        vectors[0] = DrugVector("A01AA02", vectors[0].weights)
        vectors.append(twin)
        index = build_ann_index(vectors)
        results = query_replacements(index, "A01AA02", 3)
        assert results[0][0] == "A01AA01"
        assert results[0][2] == pytest.approx(1.0, abs=1e-9)

    def test_keyword_resolves_via_gazetteer(self):
        gazetteer = build_gazetteer(
            [("P01BA01", "Chloroquine", "Aralen"),
             ("P01BA02", "Hydroxychloroquine", "")], "drug")
        vectors = [DrugVector("P01BA01", np.array([1.0, 0.2])),
                   DrugVector("P01BA02", np.array([0.9, 0.3]))]
        index = build_ann_index(vectors)
        results = query_replacements(index, "chloroquine", 1, gazetteer)
        assert results == [("P01BA02", "Hydroxychloroquine",
                            pytest.approx(cosine_similarity(vectors[0], vectors[1])))]

    def test_unknown_drug_raises(self):
        index = build_ann_index([DrugVector("A01AA01", np.ones(2))])
        with pytest.raises(UnknownDrug):
            query_replacements(index, "nonexistent", 3)

    def test_query_never_in_results(self):
        vectors = planted_vectors(3, 10, 6, seed=7)
        index = build_ann_index(vectors)
        for v in vectors[:5]:
            results = query_replacements(index, v.drug, 10)
            assert v.drug not in [code for code, _, _ in results]

    def test_recall_against_exact_scan(self):
        rng = np.random.default_rng(19)
        vectors = []
        for c in range(30):
            center = rng.normal(size=12)
            for i in range(10):
                v = center + rng.normal(scale=0.15, size=12)
                vectors.append(DrugVector(f"Q{c:02d}X{i:02d}", v))
        index = build_ann_index(vectors)
        stacked = np.stack([v.weights for v in vectors])
        unit = stacked / np.linalg.norm(stacked, axis=1, keepdims=True)
        queries = rng.choice(len(vectors), size=50, replace=False)
        recalls = []
        for q in queries:
            got = {code for code, _, _ in
                   query_replacements(index, vectors[q].drug, 5)}
            sims = unit @ unit[q]
            sims[q] = -np.inf
            exact = {vectors[i].drug for i in np.argsort(-sims)[:5]}
            recalls.append(len(got & exact) / 5)
        assert float(np.mean(recalls)) >= 0.9


class TestPersistence:
    def test_matrix_round_trip_deterministic(self, tmp_path):
        annotations = annotations_from({
            "d#p0": (["P01BA01", "J05AE06"], ["D008288"]),
            "d#p1": (["P01BA01"], ["C000657245", "D008288"]),
        })
        matrix = build_matrix(annotations)
        save_matrix(matrix, tmp_path / "a")
        reloaded = load_matrix(tmp_path / "a")
        assert reloaded.drugs == matrix.drugs
        assert reloaded.diseases == matrix.diseases
        assert np.array_equal(reloaded.counts, matrix.counts)
        save_matrix(reloaded, tmp_path / "b")
        for name in ("drugs.csv", "diseases.csv", "counts.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_ann_round_trip(self, tmp_path):
        vectors = planted_vectors(3, 8, 6, seed=15)
        index = build_ann_index(vectors, tree_count=4, leaf_size=8, seed=3)
        path = tmp_path / "ann.bin"
        save_ann(index, path)
        reloaded = load_ann(path)
        assert reloaded.codes == index.codes
        assert reloaded.tree_count == 4
        assert reloaded.leaf_size == 8
        assert reloaded.seed == 3
        assert np.array_equal(reloaded.vectors, index.vectors)
        query = vectors[0].drug
        assert query_replacements(reloaded, query, 5) == query_replacements(
            index, query, 5)
        save_ann(reloaded, tmp_path / "ann2.bin")
        assert path.read_bytes() == (tmp_path / "ann2.bin").read_bytes()
