"""Per-disease word embeddings and disease-to-disease distances.

Every disease model shares the same deterministic per-word initialization, so
distances between the embeddings of one term across two models measure how
differently the diseases' contexts shaped that term, not initialization noise.
Two aggregate measures are provided: mean per-term Euclidean distance and an
exact Word Mover's Distance over the term bags.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .annotate import tokenize

STOPWORDS = frozenset("""
a about above after again against all also am an and any are as at be because
been before being below between both but by can could did do does doing down
during each few for from further had has have having he her here hers him his
how i if in into is it its itself just may me might more most must my no nor
not of off on once only or other our out over own same she should so some such
than that the their them then there these they this those through to too under
until up very was we were what when where which while who whom why will with
would you your
""".split())


class EmptySample(ValueError):
    pass


class EmptyContexts(ValueError):
    pass


class TermNotCovered(KeyError):
    pass


class NoSharedTerms(ValueError):
    pass


class BagTooLarge(ValueError):
    pass


class InvalidWeights(ValueError):
    pass


EXACT_BAG_LIMIT = 30


@dataclass(frozen=True)
class TermList:
    terms: tuple[tuple[str, int], ...]


def _alphabetic(token: str) -> bool:
    return token.isalpha() and token.isascii()


def extract_terms(paragraphs: list[str], n: int = 25) -> TermList:
    """Most frequent 1-3 token terms, ties broken lexicographically.

    Terms may not start or end with a stopword, and every token must be purely
    alphabetic. Single-letter unigrams are dropped; a single-letter token
    inside a longer term ("t cell") is fine.
    """
    if not paragraphs:
        raise EmptySample("no paragraphs to extract terms from")
    frequencies: dict[str, int] = {}
    for paragraph in paragraphs:
        tokens = [t for t, _, _ in tokenize(paragraph)]
        for start in range(len(tokens)):
            for length in (1, 2, 3):
                if start + length > len(tokens):
                    break
                gram = tokens[start:start + length]
                if not all(_alphabetic(t) for t in gram):
                    break  # a bad token poisons every longer gram from here
                if gram[0] in STOPWORDS or gram[-1] in STOPWORDS:
                    continue
                if length == 1 and len(gram[0]) == 1:
                    continue
                term = " ".join(gram)
                frequencies[term] = frequencies.get(term, 0) + 1
    ranked = sorted(frequencies.items(), key=lambda item: (-item[1], item[0]))
    return TermList(terms=tuple(ranked[:n]))


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    init_seed: int = 29
    min_count: int = 1
    learning_rate: float = 0.025


@dataclass
class DiseaseModel:
    disease: str
    embeddings: dict[str, np.ndarray]
    config: EmbeddingConfig | None = None

    def vector(self, term: str) -> np.ndarray:
        """Term vector; multi-token terms average their token vectors."""
        tokens = term.lower().split()
        missing = [t for t in tokens if t not in self.embeddings]
        if missing or not tokens:
            raise TermNotCovered(term)
        return np.mean([self.embeddings[t] for t in tokens], axis=0)


def _init_vector(word: str, init_seed: int, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{init_seed}\x00{word}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return (rng.random(dim) - 0.5) / dim


def _sigmoid(x: float) -> float:
    if x > 30:
        return 1.0
    if x < -30:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def train_disease_model(contexts: list[list[str]],
                        config: EmbeddingConfig | None = None,
                        disease: str = "",
                        pretrained: dict[str, np.ndarray] | None = None,
                        ) -> DiseaseModel:
    """Skip-gram with negative sampling over the disease's paragraphs.

    Initial vectors are functions of (word, init_seed) only, so models for
    different diseases start identical where vocabularies overlap. A
    pretrained map overrides initialization for covered words. Zero epochs
    returns the initialization untouched.
    """
    config = config or EmbeddingConfig()
    counts: dict[str, int] = {}
    for context in contexts:
        for token in context:
            token = token.lower()
            counts[token] = counts.get(token, 0) + 1
    vocabulary = sorted(w for w, c in counts.items() if c >= config.min_count)
    if not vocabulary:
        raise EmptyContexts("no vocabulary after filtering")
    word_index = {w: i for i, w in enumerate(vocabulary)}

    dim = config.dim
    if pretrained:
        vectors = np.stack([
            pretrained[w] if w in pretrained else _init_vector(w, config.init_seed, dim)
            for w in vocabulary])
    else:
        vectors = np.stack([_init_vector(w, config.init_seed, dim)
                            for w in vocabulary])
    outputs = np.zeros_like(vectors)

    weights = np.array([counts[w] for w in vocabulary], np.float64) ** 0.75
    cumulative = np.cumsum(weights / weights.sum())
    sentences = [[word_index[t.lower()] for t in context
                  if t.lower() in word_index] for context in contexts]
    rng = np.random.default_rng(config.init_seed)
    lr = config.learning_rate

    for _ in range(config.epochs):
        for sentence in sentences:
            for position, center in enumerate(sentence):
                span = int(rng.integers(1, config.window + 1))
                lo = max(0, position - span)
                hi = min(len(sentence), position + span + 1)
                for other in range(lo, hi):
                    if other == position:
                        continue
                    context_word = sentence[other]
                    gradient = np.zeros(dim)
                    draws = rng.random(config.negatives)
                    targets = [(context_word, 1.0)]
                    for draw in draws:
                        negative = int(np.searchsorted(cumulative, draw))
                        if negative != context_word:
                            targets.append((negative, 0.0))
                    for target, label in targets:
                        f = _sigmoid(float(vectors[center] @ outputs[target]))
                        g = (label - f) * lr
                        gradient += g * outputs[target]
                        outputs[target] += g * vectors[center]
                    vectors[center] += gradient

    embeddings = {w: vectors[i].copy() for w, i in word_index.items()}
    return DiseaseModel(disease=disease, embeddings=embeddings, config=config)


def term_distance(model_a: DiseaseModel, model_b: DiseaseModel, term: str) -> float:
    """Euclidean distance between one term's vectors in two models."""
    return float(np.linalg.norm(model_a.vector(term) - model_b.vector(term)))


@dataclass(frozen=True)
class DiseaseDistance:
    pair: tuple[str, str]
    per_term: dict[str, float]
    aggregate: float
    compared_terms: int
    uncovered: tuple[str, ...] = ()


def compare_diseases(model_a: DiseaseModel, model_b: DiseaseModel,
                     terms: TermList) -> DiseaseDistance:
    """Mean per-term distance over the terms both models cover."""
    per_term: dict[str, float] = {}
    uncovered = []
    for term, _ in terms.terms:
        try:
            per_term[term] = term_distance(model_a, model_b, term)
        except TermNotCovered:
            uncovered.append(term)
    if not per_term:
        raise NoSharedTerms(f"{model_a.disease} and {model_b.disease} share no terms")
    return DiseaseDistance(pair=(model_a.disease, model_b.disease),
                           per_term=per_term,
                           aggregate=float(np.mean(list(per_term.values()))),
                           compared_terms=len(per_term),
                           uncovered=tuple(uncovered))


def _check_bag(bag) -> tuple[list, np.ndarray]:
    items = list(bag.items()) if isinstance(bag, dict) else list(bag)
    if not items:
        raise InvalidWeights("empty bag")
    if len(items) > EXACT_BAG_LIMIT:
        raise BagTooLarge(f"bag size {len(items)} exceeds {EXACT_BAG_LIMIT}")
    weights = np.array([w for _, w in items], np.float64)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise InvalidWeights("weights must be non-negative and sum to 1")
    return [x for x, _ in items], weights / weights.sum()


def wmd(bag_a, bag_b, distance_fn) -> float:
    """Exact minimum-cost transport between two weighted bags.

    Solved by successive shortest augmenting paths with Dijkstra potentials
    over the bipartite transport network.
    """
    items_a, supply = _check_bag(bag_a)
    items_b, demand = _check_bag(bag_b)
    cost = np.array([[float(distance_fn(x, y)) for y in items_b]
                     for x in items_a])
    if np.any(cost < 0):
        raise ValueError("ground distances must be non-negative")
    return _transport(supply.copy(), demand.copy(), cost)


def _transport(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray) -> float:
    """Successive shortest paths on the m x n transportation network.

    Nodes 0..m-1 are suppliers, m..m+n-1 consumers. Each round runs Dijkstra
    over reduced costs from every supplier with remaining mass (their
    potentials stay 0, so the multi-source start is sound), augments along the
    cheapest path to a consumer with remaining demand, and relabels.
    """
    m, n = cost.shape
    flow = np.zeros((m, n))
    potential = np.zeros(m + n)
    epsilon = 1e-15
    remaining = float(min(supply.sum(), demand.sum()))

    while remaining > 1e-12:
        dist = np.full(m + n, np.inf)
        parent = np.full(m + n, -1, np.int64)
        visited = np.zeros(m + n, bool)
        heap = []
        for i in range(m):
            if supply[i] > epsilon:
                dist[i] = 0.0
                heapq.heappush(heap, (0.0, i))
        while heap:
            d, u = heapq.heappop(heap)
            if visited[u]:
                continue
            visited[u] = True
            if u < m:
                for j in range(n):
                    v = m + j
                    # never relax a settled node: rounding can leave reduced
                    # costs at ~-1e-16, and re-parenting a settled node can
                    # close a parent cycle
                    if visited[v]:
                        continue
                    candidate = d + cost[u, j] + potential[u] - potential[v]
                    if candidate < dist[v]:
                        dist[v] = candidate
                        parent[v] = u
                        heapq.heappush(heap, (candidate, v))
            else:
                j = u - m
                for i in range(m):
                    if visited[i] or flow[i, j] <= epsilon:
                        continue
                    candidate = d - cost[i, j] + potential[u] - potential[i]
                    if candidate < dist[i]:
                        dist[i] = candidate
                        parent[i] = u
                        heapq.heappush(heap, (candidate, i))

        target = -1
        for j in range(n):
            if demand[j] > epsilon and dist[m + j] < np.inf:
                if target < 0 or dist[m + j] < dist[m + target]:
                    target = j
        if target < 0:
            raise RuntimeError("transport network disconnected")

        path = []
        node = m + target
        while parent[node] >= 0:
            path.append((int(parent[node]), node))
            node = int(parent[node])
        source = node

        bottleneck = min(float(supply[source]), float(demand[target]))
        for u, v in path:
            if u >= m:  # backward edge undoes flow[v, u - m]
                bottleneck = min(bottleneck, float(flow[v, u - m]))
        for u, v in path:
            if u < m:
                flow[u, v - m] += bottleneck
            else:
                flow[v, u - m] -= bottleneck
        supply[source] -= bottleneck
        demand[target] -= bottleneck
        remaining -= bottleneck

        ceiling = dist[m + target]
        for v in range(m + n):
            potential[v] += min(dist[v], ceiling) if dist[v] < np.inf else ceiling

    return float((flow * cost).sum())


def wmd_compare(model_a: DiseaseModel, model_b: DiseaseModel,
                terms: TermList) -> float:
    """WMD between uniform bags of shared terms, ground distance Euclidean."""
    shared = []
    for term, _ in terms.terms:
        try:
            model_a.vector(term)
            model_b.vector(term)
        except TermNotCovered:
            continue
        shared.append(term)
    if not shared:
        raise NoSharedTerms(f"{model_a.disease} and {model_b.disease} share no terms")
    weight = 1.0 / len(shared)
    bag_a = [(term, weight) for term in shared]
    bag_b = [(term, weight) for term in shared]

    def ground(term_x: str, term_y: str) -> float:
        return float(np.linalg.norm(model_a.vector(term_x) - model_b.vector(term_y)))

    return wmd(bag_a, bag_b, ground)


def save_embeddings(model: DiseaseModel, path) -> None:
    """word2vec text format: header "V D", then one word and vector per line."""
    words = sorted(model.embeddings)
    dim = len(next(iter(model.embeddings.values()))) if words else 0
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{len(words)} {dim}\n")
        for word in words:
            values = " ".join(f"{x:.17g}" for x in model.embeddings[word])
            handle.write(f"{word} {values}\n")


def load_embeddings(path, disease: str = "") -> DiseaseModel:
    embeddings: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split()
        dim = int(header[1])
        for line in handle:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"malformed embedding line: {line!r}")
            embeddings[parts[0]] = np.array([float(x) for x in parts[1:]])
    return DiseaseModel(disease=disease, embeddings=embeddings)


def save_terms(terms: TermList, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["term", "frequency"])
        for term, frequency in terms.terms:
            writer.writerow([term, frequency])


def load_terms(path) -> TermList:
    import csv

    with open(path, encoding="utf-8", newline="") as handle:
        rows = [(row["term"], int(row["frequency"]))
                for row in csv.DictReader(handle)]
    return TermList(terms=tuple(rows))
