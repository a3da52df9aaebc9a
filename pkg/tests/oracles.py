"""Independent reference implementations used to check the package.

Everything here is deliberately brute force (enumeration, pair counting,
probability-form entropies) and shares no code with the implementations
under test.
"""

from itertools import combinations, permutations

import numpy as np


def set_partitions(n):
    """All partitions of range(n) as canonical label tuples (1-based,
    first-appearance order), via restricted growth strings."""
    labels = [0] * n

    def rec(i, max_used):
        if i == n:
            yield tuple(v + 1 for v in labels)
            return
        for v in range(max_used + 2):
            labels[i] = v
            yield from rec(i + 1, max(max_used, v))

    yield from rec(0, -1)


def contingency_counts(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    ua = sorted(set(a.tolist()))
    ub = sorted(set(b.tolist()))
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    for x, y in zip(a, b):
        table[ua.index(x), ub.index(y)] += 1
    return table


def brute_force_acc(pred, gt):
    """Best accuracy over every injective map from the smaller cluster set
    into the larger one."""
    table = contingency_counts(pred, gt)
    r, c = table.shape
    if r <= c:
        candidates = (
            sum(table[i, m[i]] for i in range(r)) for m in permutations(range(c), r)
        )
    else:
        candidates = (
            sum(table[m[j], j] for j in range(c)) for m in permutations(range(r), c)
        )
    return max(candidates) / len(pred)


def nmi_prob_form(a, b):
    """Probability-form NMI: Shannon MI over sqrt of Shannon entropies.

    Marginals come from integer counts so single-cluster entropies are
    exactly zero.
    """
    table = contingency_counts(a, b)
    n = int(table.sum())
    pi = table.sum(axis=1) / n
    pj = table.sum(axis=0) / n
    pij = table / n
    mi = 0.0
    for i in range(len(pi)):
        for j in range(len(pj)):
            if pij[i, j] > 0:
                mi += pij[i, j] * np.log(pij[i, j] / (pi[i] * pj[j]))
    ha = -sum(p * np.log(p) for p in pi if p > 0)
    hb = -sum(p * np.log(p) for p in pj if p > 0)
    if ha == 0.0 or hb == 0.0:
        return 0.0
    return mi / np.sqrt(ha * hb)


def ari_pair_counts(a, b):
    """ARI from direct pair counting: 2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d))."""
    a = list(a)
    b = list(b)
    ss = sd = ds = dd = 0
    for i, j in combinations(range(len(a)), 2):
        same_a = a[i] == a[j]
        same_b = b[i] == b[j]
        if same_a and same_b:
            ss += 1
        elif same_a:
            sd += 1
        elif same_b:
            ds += 1
        else:
            dd += 1
    denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd)
    if denom == 0:
        return 1.0
    return 2.0 * (ss * dd - sd * ds) / denom


def brute_force_assignment(cost):
    """Minimum-cost one-to-one assignment by enumerating injections of the
    smaller dimension into the larger."""
    cost = np.asarray(cost, dtype=np.float64)
    r, c = cost.shape
    best = np.inf
    if r <= c:
        for m in permutations(range(c), r):
            best = min(best, sum(cost[i, m[i]] for i in range(r)))
    else:
        for m in permutations(range(r), c):
            best = min(best, sum(cost[m[j], j] for j in range(c)))
    return best


def brute_force_neighbor_sets(data, theta, k_min):
    """O(n^2) reference of thresholded cosine neighbor selection."""
    data = np.asarray(data, dtype=np.float64)
    n = len(data)
    floor = min(k_min, n - 1)
    out = []
    for x in range(n):
        sims = []
        for y in range(n):
            if y == x:
                continue
            u, v = data[x], data[y]
            s = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
            sims.append((min(1.0, max(-1.0, s)), y))
        sims.sort(key=lambda t: (-t[0], t[1]))
        selected = [y for s, y in sims if s >= theta]
        if len(selected) < floor:
            selected = [y for _, y in sims[:floor]]
        out.append(selected)
    return out


def softmax_logsumexp(logits):
    """Reference softmax through an explicit log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max()
    lse = m + np.log(np.sum(np.exp(logits - m)))
    return np.exp(logits - lse)
