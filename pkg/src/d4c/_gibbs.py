"""Numba kernels for collapsed Gibbs sampling with per-document admissible topics.

Counts use float64 so the probability arithmetic stays in one dtype inside the
jitted loops. Seeding numba's own generator inside the kernel makes runs
reproducible regardless of caller RNG state.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sample_counts(word_ids, doc_of, adm_flat, adm_offsets, K, V,
                  alpha, beta, iterations, seed):
    """Run collapsed Gibbs over flattened tokens; return (n_wt, n_t, n_dt)."""
    np.random.seed(seed)
    n_tokens = word_ids.shape[0]
    n_docs = adm_offsets.shape[0] - 1
    n_wt = np.zeros((V, K), np.float64)
    n_t = np.zeros(K, np.float64)
    n_dt = np.zeros((n_docs, K), np.float64)
    z = np.empty(n_tokens, np.int64)

    max_adm = 0
    for d in range(n_docs):
        width = adm_offsets[d + 1] - adm_offsets[d]
        if width > max_adm:
            max_adm = width
    cumulative = np.empty(max_adm, np.float64)

    for i in range(n_tokens):
        d = doc_of[i]
        lo = adm_offsets[d]
        hi = adm_offsets[d + 1]
        pick = lo + int(np.random.random() * (hi - lo))
        if pick >= hi:
            pick = hi - 1
        t = adm_flat[pick]
        z[i] = t
        n_wt[word_ids[i], t] += 1.0
        n_t[t] += 1.0
        n_dt[d, t] += 1.0

    v_beta = V * beta
    for _ in range(iterations):
        for i in range(n_tokens):
            w = word_ids[i]
            d = doc_of[i]
            t = z[i]
            n_wt[w, t] -= 1.0
            n_t[t] -= 1.0
            n_dt[d, t] -= 1.0

            lo = adm_offsets[d]
            hi = adm_offsets[d + 1]
            total = 0.0
            for j in range(lo, hi):
                tt = adm_flat[j]
                p = (n_wt[w, tt] + beta) / (n_t[tt] + v_beta) * (n_dt[d, tt] + alpha)
                total += p
                cumulative[j - lo] = total
            u = np.random.random() * total
            chosen = hi - lo - 1
            for j in range(hi - lo):
                if cumulative[j] > u:
                    chosen = j
                    break
            t = adm_flat[lo + chosen]
            z[i] = t
            n_wt[w, t] += 1.0
            n_t[t] += 1.0
            n_dt[d, t] += 1.0
    return n_wt, n_t, n_dt


@njit(cache=True)
def fold_in(word_ids, phi, alpha, iterations, seed):
    """Sample topic assignments under fixed phi; return the smoothed theta."""
    np.random.seed(seed)
    K = phi.shape[0]
    n_tokens = word_ids.shape[0]
    n_t = np.zeros(K, np.float64)
    z = np.empty(n_tokens, np.int64)
    cumulative = np.empty(K, np.float64)

    for i in range(n_tokens):
        t = int(np.random.random() * K)
        if t >= K:
            t = K - 1
        z[i] = t
        n_t[t] += 1.0

    for _ in range(iterations):
        for i in range(n_tokens):
            w = word_ids[i]
            t = z[i]
            n_t[t] -= 1.0
            total = 0.0
            for tt in range(K):
                p = phi[tt, w] * (n_t[tt] + alpha)
                total += p
                cumulative[tt] = total
            u = np.random.random() * total
            chosen = K - 1
            for tt in range(K):
                if cumulative[tt] > u:
                    chosen = tt
                    break
            z[i] = chosen
            n_t[chosen] += 1.0

    return (n_t + alpha) / (n_tokens + K * alpha)
