"""Labeled topic model: training, inference, hashing, and similarity."""

import functools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from d4c.topics import (
    DistributionStore,
    EmptyAfterFiltering,
    Hyperparams,
    InsufficientLabels,
    TopicDistribution,
    TopicModel,
    UnknownTopic,
    UnknownUnit,
    explorer_tree,
    hash_distribution,
    infer_distribution,
    jensen_shannon,
    load_distributions,
    load_model,
    save_distributions,
    save_model,
    similar_documents,
    topic_top_words,
    train_topic_model,
)

SUBSTANCES = ("A01AA01", "B01AA01", "C01AA01")


def planted_vocabulary(topic):
    return [f"w{topic}{j:02d}" for j in range(20)]


def planted_corpus(seed=0, per_substance=50, tokens_per_paragraph=30):
    rng = np.random.default_rng(seed)
    paragraphs = []
    for topic, code in enumerate(SUBSTANCES):
        vocabulary = planted_vocabulary(topic)
        for _ in range(per_substance):
            draws = rng.integers(0, len(vocabulary), size=tokens_per_paragraph)
            paragraphs.append(([vocabulary[i] for i in draws], {code}))
    return paragraphs


@functools.lru_cache(maxsize=1)
def planted_model():
    return train_topic_model(planted_corpus(), Hyperparams(iterations=300, seed=7))


class TestTrain:
    def test_fewer_than_two_substances_rejected(self):
        with pytest.raises(InsufficientLabels):
            train_topic_model([(["a", "b"], {"A01AA01"})])

    def test_empty_paragraph_rejected(self):
        with pytest.raises(ValueError):
            train_topic_model([(["a"], {"A01AA01"}), ([], {"B01AA01"})])

    def test_topic_count_and_labels(self):
        model = planted_model()
        assert model.K == len(SUBSTANCES) + 1
        assert model.topic_labels == {0: "A01AA01", 1: "B01AA01", 2: "C01AA01"}
        assert model.background_topic == 3
        assert model.background_topic not in model.topic_labels

    def test_phi_rows_sum_to_one(self):
        model = planted_model()
        assert model.phi.shape == (model.K, len(model.vocabulary))
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
        assert (model.phi > 0).all()

    def test_planted_vocabulary_recovered(self):
        model = planted_model()
        for topic, _ in enumerate(SUBSTANCES):
            word, _ = topic_top_words(model, topic, 1)[0]
            assert word in planted_vocabulary(topic)

    def test_same_seed_is_bit_identical(self):
        config = Hyperparams(iterations=50, seed=99)
        corpus = planted_corpus(per_substance=5)
        first = train_topic_model(corpus, config)
        second = train_topic_model(corpus, config)
        assert np.array_equal(first.phi, second.phi)

    def test_alpha_defaults_to_fifty_over_k(self):
        model = planted_model()
        assert model.hyperparams.alpha == pytest.approx(50.0 / model.K)

    def test_single_label_paragraph_concentrates_mass(self):
        paragraphs = [(["w"] * 30, {"A01AA01"})]
        paragraphs += [([f"x{i}" for i in range(10)], {"B01AA01"}) for _ in range(3)]
        model = train_topic_model(paragraphs, Hyperparams(iterations=200, seed=3))
        topic = model.label_to_topic["A01AA01"]
        w = model.word_index["w"]
        assert model.phi[topic, w] == model.phi[topic].max()


class TestTopWords:
    def tiny_model(self, phi, vocabulary):
        return TopicModel(K=phi.shape[0], vocabulary=vocabulary,
                          phi=np.asarray(phi, float),
                          topic_labels={0: "A01AA01"}, hyperparams=Hyperparams())

    def test_sorted_descending(self):
        model = self.tiny_model(np.array([[0.1, 0.7, 0.2]]), ["a", "b", "c"])
        assert topic_top_words(model, 0, 3) == [("b", 0.7), ("c", 0.2), ("a", 0.1)]

    def test_tie_breaks_lexicographically(self):
        model = self.tiny_model(np.array([[0.4, 0.4, 0.2]]), ["ab", "aa", "c"])
        assert [w for w, _ in topic_top_words(model, 0, 2)] == ["aa", "ab"]

    def test_n_larger_than_vocabulary(self):
        model = self.tiny_model(np.array([[0.5, 0.5]]), ["a", "b"])
        assert len(topic_top_words(model, 0, 10)) == 2

    def test_unknown_topic(self):
        model = self.tiny_model(np.array([[1.0]]), ["a"])
        with pytest.raises(UnknownTopic):
            topic_top_words(model, 5, 1)


class TestInfer:
    def test_planted_tokens_map_to_their_topic(self):
        model = planted_model()
        for topic, _ in enumerate(SUBSTANCES):
            tokens = planted_vocabulary(topic)[:10] * 3
            dist = infer_distribution(model, tokens)
            assert int(np.argmax(dist.theta)) == topic
            assert dist.theta.sum() == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        model = planted_model()
        tokens = planted_vocabulary(0)[:5] * 4
        first = infer_distribution(model, tokens)
        second = infer_distribution(model, tokens)
        assert np.array_equal(first.theta, second.theta)

    def test_all_oov_raises(self):
        model = planted_model()
        with pytest.raises(EmptyAfterFiltering):
            infer_distribution(model, ["nope", "missing"])

    def test_oov_tokens_ignored(self):
        model = planted_model()
        tokens = planted_vocabulary(1)[:8]
        with_noise = infer_distribution(model, tokens + ["zzz-unknown"])
        without = infer_distribution(model, tokens)
        assert np.array_equal(with_noise.theta, without.theta)


def dist(theta, unit_id="u"):
    return TopicDistribution(unit_id=unit_id, theta=np.asarray(theta, float))


class TestHashDistribution:
    def test_dominant_topic_fills_level_zero_only(self):
        h = hash_distribution(dist([0.9, 0.05, 0.05]))
        assert h.levels == (frozenset({0}), frozenset(), frozenset())

    def test_two_topics_reach_half(self):
        h = hash_distribution(dist([0.4, 0.35, 0.25]))
        assert h.levels[0] == {0, 1}
        assert h.levels[1] == {2}
        assert h.levels[2] == set()

    def test_uniform_tie_breaks_by_index(self):
        h = hash_distribution(dist([0.25, 0.25, 0.25, 0.25]))
        assert h.levels[0] == {0, 1}

    def test_floor_applies_to_level_two(self):
        # after levels 0 and 1 close at 0.81, t2 (0.18 > 1/6) survives the
        # floor while the tail topics fall below it
        h = hash_distribution(dist([0.5, 0.31, 0.18, 0.004, 0.002, 0.004]))
        assert h.levels[0] == {0}
        assert h.levels[1] == {1}
        assert h.levels[2] == {2}

    def test_levels_are_disjoint_and_level_zero_nonempty(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            theta = rng.dirichlet(np.full(6, 0.3))
            h = hash_distribution(dist(theta))
            assert h.levels[0]
            assert not (h.levels[0] & h.levels[1])
            assert not (h.levels[0] & h.levels[2])
            assert not (h.levels[1] & h.levels[2])

    def test_equal_distributions_hash_equally(self):
        rng = np.random.default_rng(11)
        theta = rng.dirichlet(np.full(8, 0.2))
        assert hash_distribution(dist(theta)) == hash_distribution(dist(theta.copy()))


class TestJensenShannon:
    @given(st.lists(st.floats(0.001, 1.0), min_size=4, max_size=4),
           st.lists(st.floats(0.001, 1.0), min_size=4, max_size=4))
    def test_symmetric_and_bounded(self, a, b):
        p = np.array(a) / np.sum(a)
        q = np.array(b) / np.sum(b)
        d_pq = jensen_shannon(p, q)
        d_qp = jensen_shannon(q, p)
        assert d_pq == pytest.approx(d_qp, abs=1e-12)
        assert -1e-12 <= d_pq <= np.log(2) + 1e-12

    def test_identical_is_zero(self):
        p = np.array([0.2, 0.3, 0.5])
        assert jensen_shannon(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_support_is_ln_two(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.0, 1.0])
        assert jensen_shannon(p, q) == pytest.approx(np.log(2), abs=1e-12)

    def test_zero_entries_do_not_produce_nan(self):
        p = np.array([0.5, 0.5, 0.0])
        q = np.array([0.0, 0.5, 0.5])
        assert np.isfinite(jensen_shannon(p, q))


def synthetic_store(n_units=200, K=12, seed=17, concentration=0.1):
    rng = np.random.default_rng(seed)
    distributions = [
        TopicDistribution(unit_id=f"u{i:04d}",
                          theta=rng.dirichlet(np.full(K, concentration)))
        for i in range(n_units)
    ]
    return DistributionStore(distributions)


class TestSimilarDocuments:
    def test_duplicate_is_rank_one_with_zero_divergence(self):
        theta = np.array([0.6, 0.3, 0.1])
        store = DistributionStore([
            dist(theta, "a"), dist(theta.copy(), "b"),
            dist([0.1, 0.3, 0.6], "c"),
        ])
        results = similar_documents(store, "a", 2)
        assert results[0][0] == "b"
        assert results[0][1] == pytest.approx(0.0, abs=1e-12)

    def test_query_excluded_and_k_respected(self):
        store = synthetic_store(50)
        results = similar_documents(store, "u0000", 5)
        assert len(results) == 5
        assert all(unit != "u0000" for unit, _ in results)
        divergences = [d for _, d in results]
        assert divergences == sorted(divergences)

    def test_unknown_unit_raises(self):
        store = synthetic_store(10)
        with pytest.raises(UnknownUnit):
            similar_documents(store, "missing", 3)

    def test_unique_level_zero_topic_gives_empty_result(self):
        store = DistributionStore([
            dist([0.97, 0.01, 0.01, 0.01], "alone"),
            dist([0.01, 0.97, 0.01, 0.01], "b"),
            dist([0.01, 0.01, 0.97, 0.01], "c"),
        ])
        assert similar_documents(store, "alone", 5) == []

    def test_recall_against_exact_scan(self):
        store = synthetic_store(200)
        rng = np.random.default_rng(23)
        queries = [f"u{i:04d}" for i in rng.choice(200, size=30, replace=False)]
        recalls = []
        for query in queries:
            approx = {unit for unit, _ in similar_documents(store, query, 10)}
            theta = store.distributions[query].theta
            exact = sorted(
                ((jensen_shannon(theta, other.theta), uid)
                 for uid, other in store.distributions.items() if uid != query))
            exact_top = {uid for _, uid in exact[:10]}
            recalls.append(len(approx & exact_top) / 10)
        assert float(np.mean(recalls)) >= 0.9


class TestExplorerTree:
    def test_identical_rank_sequences_share_a_leaf(self):
        theta = np.array([0.5, 0.3, 0.15, 0.05])
        store = DistributionStore([dist(theta, "a"), dist(theta.copy(), "b")])
        tree = explorer_tree(store, depth=3)
        leaves = tree.leaves()
        assert len(leaves) == 1
        assert leaves[0].units == ["a", "b"]

    def test_leaf_units_partition_the_store(self):
        store = synthetic_store(80, seed=3)
        tree = explorer_tree(store, depth=3)
        units = [u for leaf in tree.leaves() for u in leaf.units]
        assert sorted(units) == sorted(store.distributions)

    def test_planted_corpus_has_three_top_level_branches(self):
        # small alpha keeps each paragraph's mass on its own substance topic
        # instead of letting one group drift into the background topic
        model = train_topic_model(planted_corpus(),
                                  Hyperparams(alpha=0.5, iterations=300, seed=7))
        unit_distributions = []
        for topic, _ in enumerate(SUBSTANCES):
            for j in range(4):
                tokens = planted_vocabulary(topic)[j:j + 8] * 4
                unit_distributions.append(
                    infer_distribution(model, tokens, unit_id=f"t{topic}-{j}"))
        store = DistributionStore(unit_distributions)
        tree = explorer_tree(store, depth=1)
        assert sorted(tree.children) == [0, 1, 2]


class TestSerialization:
    def test_model_round_trip(self, tmp_path):
        model = planted_model()
        save_model(model, tmp_path / "m")
        reloaded = load_model(tmp_path / "m")
        assert reloaded.K == model.K
        assert reloaded.vocabulary == model.vocabulary
        assert reloaded.topic_labels == model.topic_labels
        assert reloaded.hyperparams == model.hyperparams
        assert reloaded.hash_thresholds == model.hash_thresholds
        assert np.array_equal(reloaded.phi, model.phi)

    def test_model_bytes_deterministic(self, tmp_path):
        model = planted_model()
        save_model(model, tmp_path / "a")
        save_model(load_model(tmp_path / "a"), tmp_path / "b")
        assert (tmp_path / "a" / "phi.bin").read_bytes() == (tmp_path / "b" / "phi.bin").read_bytes()
        assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()

    def test_distributions_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        distributions = [dist(rng.dirichlet(np.ones(4)), f"u{i}") for i in range(5)]
        path = tmp_path / "theta.jsonl"
        save_distributions(distributions, path)
        reloaded = load_distributions(path)
        assert [d.unit_id for d in reloaded] == [f"u{i}" for i in range(5)]
        for a, b in zip(distributions, reloaded):
            assert np.array_equal(a.theta, b.theta)

    def test_theta_line_shape(self, tmp_path):
        path = tmp_path / "theta.jsonl"
        save_distributions([dist([0.5, 0.5], "x")], path)
        record = json.loads(path.read_text().strip())
        assert set(record) == {"unit_id", "theta"}
