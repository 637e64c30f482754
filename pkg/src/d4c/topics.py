"""Labeled topic model over annotated paragraphs.

Topics are tied to active substances: a paragraph's tokens may only be
assigned to the topics of substances mentioned in it, plus one shared
background topic (always the last index). Trained distributions are hashed
into relevance levels for candidate lookup and reranked by Jensen-Shannon
divergence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _gibbs
from .annotate import AnnotationStore, tokenize
from .corpus import CorpusStore


class InsufficientLabels(ValueError):
    """Training needs at least two distinct substances."""


class UnknownTopic(KeyError):
    pass


class UnknownUnit(KeyError):
    pass


class EmptyAfterFiltering(ValueError):
    """Every token fell outside the model vocabulary."""


@dataclass(frozen=True)
class Hyperparams:
    alpha: float | None = None  # None resolves to 50/K at training time
    beta: float = 0.01
    iterations: int = 1000
    seed: int = 13


DEFAULT_THRESHOLDS = (0.5, 0.8)


@dataclass
class TopicModel:
    K: int
    vocabulary: list[str]
    phi: np.ndarray
    topic_labels: dict[int, str]
    hyperparams: Hyperparams
    hash_thresholds: tuple[float, float] = DEFAULT_THRESHOLDS

    def __post_init__(self) -> None:
        self.word_index = {word: i for i, word in enumerate(self.vocabulary)}
        self.label_to_topic = {label: t for t, label in self.topic_labels.items()}

    @property
    def background_topic(self) -> int:
        return self.K - 1


@dataclass(frozen=True)
class TopicDistribution:
    unit_id: str
    theta: np.ndarray

    def __post_init__(self) -> None:
        total = float(np.sum(self.theta))
        if not np.isclose(total, 1.0, atol=1e-9) or np.any(self.theta < 0):
            raise ValueError(f"not a probability vector (sum={total})")


@dataclass(frozen=True)
class TopicHash:
    levels: tuple[frozenset[int], frozenset[int], frozenset[int]]


def train_topic_model(paragraphs: list[tuple[list[str], set[str]]],
                      config: Hyperparams | None = None) -> TopicModel:
    """Collapsed Gibbs training; deterministic for a given seed.

    `paragraphs` pairs each token list with the substance codes mentioned in
    that paragraph. Topic ids follow sorted substance order; the background
    topic is the last index.
    """
    config = config or Hyperparams()
    substances = sorted({code for _, labels in paragraphs for code in labels})
    if len(substances) < 2:
        raise InsufficientLabels(f"need >= 2 substances, got {len(substances)}")
    K = len(substances) + 1
    topic_of = {code: t for t, code in enumerate(substances)}
    background = K - 1

    vocabulary = sorted({token for tokens, _ in paragraphs for token in tokens})
    word_index = {word: i for i, word in enumerate(vocabulary)}
    V = len(vocabulary)

    word_ids = []
    doc_of = []
    adm_flat = []
    adm_offsets = [0]
    for d, (tokens, labels) in enumerate(paragraphs):
        if not tokens:
            raise ValueError(f"paragraph {d} has no tokens")
        for token in tokens:
            word_ids.append(word_index[token])
            doc_of.append(d)
        adm_flat.extend(sorted(topic_of[code] for code in labels))
        adm_flat.append(background)
        adm_offsets.append(len(adm_flat))

    alpha = config.alpha if config.alpha is not None else 50.0 / K
    resolved = replace(config, alpha=alpha)
    n_wt, n_t, _ = _gibbs.sample_counts(
        np.asarray(word_ids, np.int64), np.asarray(doc_of, np.int64),
        np.asarray(adm_flat, np.int64), np.asarray(adm_offsets, np.int64),
        K, V, alpha, config.beta, config.iterations, config.seed)

    phi = (n_wt.T + config.beta) / (n_t[:, None] + V * config.beta)
    return TopicModel(K=K, vocabulary=vocabulary, phi=phi,
                      topic_labels={t: code for code, t in topic_of.items()},
                      hyperparams=resolved)


def topic_top_words(model: TopicModel, topic_id: int, n: int) -> list[tuple[str, float]]:
    """Highest-probability words of a topic, ties broken lexicographically."""
    if not 0 <= topic_id < model.K:
        raise UnknownTopic(topic_id)
    row = model.phi[topic_id]
    ranked = sorted(zip(model.vocabulary, row), key=lambda item: (-item[1], item[0]))
    return [(word, float(prob)) for word, prob in ranked[:n]]


def infer_distribution(model: TopicModel, tokens: list[str],
                       unit_id: str = "") -> TopicDistribution:
    """Fold-in sampling with fixed phi; out-of-vocabulary tokens are dropped."""
    word_ids = [model.word_index[t] for t in tokens if t in model.word_index]
    if not word_ids:
        raise EmptyAfterFiltering("no in-vocabulary tokens")
    h = model.hyperparams
    theta = _gibbs.fold_in(np.asarray(word_ids, np.int64), model.phi,
                           h.alpha, h.iterations, h.seed)
    return TopicDistribution(unit_id=unit_id, theta=theta)


def hash_distribution(dist: TopicDistribution,
                      thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> TopicHash:
    """Split topics into relevance levels by descending probability mass.

    Level 0 is the smallest prefix reaching the first cumulative threshold,
    level 1 extends it to the second, level 2 keeps whatever else still sits
    strictly above the uniform floor 1/K.
    """
    theta = dist.theta
    K = theta.shape[0]
    order = np.argsort(-theta, kind="stable")
    levels: list[set[int]] = [set(), set(), set()]
    cumulative = 0.0
    current = 0
    for topic in order:
        topic = int(topic)
        if current < 2:
            levels[current].add(topic)
            cumulative += float(theta[topic])
            # one prefix can cross both thresholds, leaving level 1 empty
            while current < 2 and cumulative >= thresholds[current] - 1e-12:
                current += 1
        elif theta[topic] > 1.0 / K:
            levels[2].add(topic)
    return TopicHash(levels=(frozenset(levels[0]), frozenset(levels[1]),
                             frozenset(levels[2])))


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> float:
    """JS divergence with natural log; 0 for identical, at most ln 2."""
    p = np.asarray(p, np.float64)
    q = np.asarray(q, np.float64)
    m = 0.5 * (p + q)
    left = np.where(p > 0, p * np.log(np.divide(p, m, out=np.ones_like(p),
                                                where=p > 0)), 0.0)
    right = np.where(q > 0, q * np.log(np.divide(q, m, out=np.ones_like(q),
                                                 where=q > 0)), 0.0)
    return float(0.5 * left.sum() + 0.5 * right.sum())


class DistributionStore:
    """Indexed unit distributions with level-0 buckets for candidate lookup."""

    def __init__(self, distributions: list[TopicDistribution],
                 thresholds: tuple[float, float] = DEFAULT_THRESHOLDS):
        self.distributions: dict[str, TopicDistribution] = {}
        self.hashes: dict[str, TopicHash] = {}
        self._level0_buckets: dict[int, list[str]] = {}
        self.thresholds = thresholds
        for dist in distributions:
            if dist.unit_id in self.distributions:
                raise ValueError(f"duplicate unit id: {dist.unit_id}")
            self.distributions[dist.unit_id] = dist
            topic_hash = hash_distribution(dist, thresholds)
            self.hashes[dist.unit_id] = topic_hash
            for topic in topic_hash.levels[0]:
                self._level0_buckets.setdefault(topic, []).append(dist.unit_id)

    def __len__(self) -> int:
        return len(self.distributions)

    def candidates(self, unit_id: str) -> list[str]:
        """Units whose level-0 set intersects the query's, excluding the query."""
        level0 = self.hashes[unit_id].levels[0]
        seen = set()
        for topic in level0:
            seen.update(self._level0_buckets.get(topic, ()))
        seen.discard(unit_id)
        return sorted(seen)


def similar_documents(store: DistributionStore, unit_id: str,
                      k: int) -> list[tuple[str, float]]:
    """k nearest units by JS divergence among level-0 hash candidates."""
    if unit_id not in store.distributions:
        raise UnknownUnit(unit_id)
    query = store.distributions[unit_id].theta
    scored = [(jensen_shannon(query, store.distributions[other].theta), other)
              for other in store.candidates(unit_id)]
    scored.sort(key=lambda item: (item[0], item[1]))
    return [(other, divergence) for divergence, other in scored[:k]]


@dataclass
class TreeNode:
    children: dict[int, "TreeNode"] = field(default_factory=dict)
    units: list[str] = field(default_factory=list)

    def leaves(self) -> list["TreeNode"]:
        if not self.children:
            return [self]
        out = []
        for topic in sorted(self.children):
            out.extend(self.children[topic].leaves())
        return out


def explorer_tree(store: DistributionStore, depth: int = 3) -> TreeNode:
    """Trie over each unit's top-ranked topic ids (rank 1..depth)."""
    root = TreeNode()
    for unit_id in sorted(store.distributions):
        theta = store.distributions[unit_id].theta
        order = np.argsort(-theta, kind="stable")[:depth]
        node = root
        for topic in order:
            node = node.children.setdefault(int(topic), TreeNode())
        node.units.append(unit_id)
    return root


def paragraph_training_data(corpus: CorpusStore, annotations: AnnotationStore,
                            ) -> tuple[list[str], list[tuple[list[str], set[str]]]]:
    """Tokenized paragraphs paired with their mentioned substance codes.

    Paragraphs with no tokens are skipped. Returns (unit_ids, training pairs)
    in corpus order.
    """
    unit_ids = []
    data = []
    for paragraph in corpus.paragraphs:
        tokens = [token for token, _, _ in tokenize(paragraph.text)]
        if not tokens:
            continue
        labels = {m.code for m in annotations.for_unit(paragraph.id)
                  if m.kind == "drug"}
        unit_ids.append(paragraph.id)
        data.append((tokens, labels))
    return unit_ids, data


def save_model(model: TopicModel, out_dir: str | Path) -> None:
    """model.json holds metadata; phi.bin holds row-major little-endian floats."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = model.hyperparams
    meta = {
        "k": model.K,
        "vocabulary": model.vocabulary,
        "topic_labels": {str(t): code for t, code in model.topic_labels.items()},
        "hyperparams": {"alpha": h.alpha, "beta": h.beta,
                        "iterations": h.iterations, "seed": h.seed},
        "hash_thresholds": list(model.hash_thresholds),
    }
    (out_dir / "model.json").write_text(
        json.dumps(meta, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out_dir / "phi.bin").write_bytes(np.ascontiguousarray(model.phi, "<f8").tobytes())


def load_model(model_dir: str | Path) -> TopicModel:
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "model.json").read_text(encoding="utf-8"))
    K = meta["k"]
    vocabulary = meta["vocabulary"]
    phi = np.frombuffer((model_dir / "phi.bin").read_bytes(), "<f8").reshape(
        K, len(vocabulary)).copy()
    h = meta["hyperparams"]
    return TopicModel(
        K=K, vocabulary=vocabulary, phi=phi,
        topic_labels={int(t): code for t, code in meta["topic_labels"].items()},
        hyperparams=Hyperparams(alpha=h["alpha"], beta=h["beta"],
                                iterations=h["iterations"], seed=h["seed"]),
        hash_thresholds=tuple(meta["hash_thresholds"]))


def save_distributions(distributions: list[TopicDistribution],
                       path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for dist in distributions:
            record = {"theta": [float(x) for x in dist.theta],
                      "unit_id": dist.unit_id}
            handle.write(json.dumps(record, sort_keys=True,
                                    separators=(",", ":")) + "\n")


def load_distributions(path: str | Path) -> list[TopicDistribution]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            out.append(TopicDistribution(unit_id=raw["unit_id"],
                                         theta=np.asarray(raw["theta"], np.float64)))
    return out
