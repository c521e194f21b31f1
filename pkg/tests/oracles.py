"""Slow, loop-based reference computations used to check the vectorized code.

Nothing here imports from partial_em, so a bug in the package cannot leak
into its own oracle.
"""

import math

import numpy as np


def cofactor_det(a):
    a = [list(map(float, row)) for row in a]
    n = len(a)
    if n == 1:
        return a[0][0]
    if n == 2:
        return a[0][0] * a[1][1] - a[0][1] * a[1][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in a[1:]]
        total += (-1) ** j * a[0][j] * cofactor_det(minor)
    return total


def log_density_inverse(x, mean, cov):
    """log N(x | mean, cov) from the explicit inverse and a cofactor determinant."""
    x, mean, cov = np.asarray(x, float), np.asarray(mean, float), np.asarray(cov, float)
    d = x.shape[0]
    inv = np.linalg.inv(cov)
    diff = x - mean
    quad = sum(diff[i] * inv[i, j] * diff[j] for i in range(d) for j in range(d))
    return -0.5 * d * math.log(2 * math.pi) - 0.5 * math.log(cofactor_det(cov)) - 0.5 * quad


def posterior(x, weights, means, covs):
    dens = [weights[k] * math.exp(log_density_inverse(x, means[k], covs[k])) for k in range(len(weights))]
    total = sum(dens)
    return [v / total for v in dens]


def mstep_direct(points, w):
    """Weighted means, biased covariances and weights, one point at a time."""
    n, d = len(points), len(points[0])
    k_count = len(w[0])
    weights, means, covs = [], [], []
    for k in range(k_count):
        nk = sum(w[i][k] for i in range(n))
        mu = [sum(w[i][k] * points[i][j] for i in range(n)) / nk for j in range(d)]
        cov = [[sum(w[i][k] * (points[i][a] - mu[a]) * (points[i][b] - mu[b]) for i in range(n)) / nk
                for b in range(d)] for a in range(d)]
        weights.append(nk / n)
        means.append(mu)
        covs.append(cov)
    return np.array(weights), np.array(means), np.array(covs)


def f_direct(points, weights, means, covs, q):
    total = 0.0
    for i, x in enumerate(points):
        for k in range(len(weights)):
            if q[i][k] > 0:
                lj = math.log(weights[k]) + log_density_inverse(x, means[k], covs[k])
                total += q[i][k] * (lj - math.log(q[i][k]))
    return total


def loglik_direct(points, weights, means, covs):
    return sum(
        math.log(sum(weights[k] * math.exp(log_density_inverse(x, means[k], covs[k]))
                     for k in range(len(weights))))
        for x in points
    )


def recursive_heap_leaves(weights, indices):
    """Leaves of a max-heap built with recursive max-heapify (ties: lower index first)."""
    a = list(zip(map(float, weights), map(int, indices)))
    n = len(a)

    def better(p, q):
        return p[0] > q[0] or (p[0] == q[0] and p[1] < q[1])

    def heapify(i):
        left, right, best = 2 * i + 1, 2 * i + 2, i
        if right < n and better(a[right], a[left]):
            cand = right
        else:
            cand = left
        if cand < n and better(a[cand], a[best]):
            best = cand
        if best != i:
            a[i], a[best] = a[best], a[i]
            heapify(best)

    for i in reversed(range(n // 2)):
        heapify(i)
    return sorted(idx for _, idx in a[n // 2:])


def majority(labels_in_cluster):
    counts = {}
    for lab in labels_in_cluster:
        counts[lab] = counts.get(lab, 0) + 1
    best = max(counts.values())
    return min(lab for lab, c in counts.items() if c == best)


def classification_error_count(assign, labels):
    clusters = {}
    for a, lab in zip(assign, labels):
        clusters.setdefault(a, []).append(lab)
    wrong = 0
    for members in clusters.values():
        m = majority(members)
        wrong += sum(1 for lab in members if lab != m)
    return wrong / len(labels)


def confusion_direct(assign, labels):
    clusters = {}
    for a, lab in zip(assign, labels):
        clusters.setdefault(a, []).append(lab)
    major = {c: majority(m) for c, m in clusters.items()}
    table = {}
    for a, lab in zip(assign, labels):
        key = (major[a], lab)
        table[key] = table.get(key, 0) + 1
    return table


def membership_error_direct(w_a, w_b, perm):
    num = sum((w_a[i][perm[j]] - w_b[i][j]) ** 2 for i in range(len(w_b)) for j in range(len(w_b[0])))
    den = sum(v * v for row in w_b for v in row)
    return math.sqrt(num / den)


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + d * np.eye(d))
