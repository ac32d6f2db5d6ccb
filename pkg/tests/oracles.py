"""Independent reference implementations used by the tests.

Each one is a direct, loop-based evaluation of a formula, written without reference to
the vectorised code paths it checks.
"""

import math

import numpy as np


def infonce_loop(v, v_hat, negatives, tau):
    total = 0.0
    for i in range(len(v)):
        pos = math.exp(float(np.dot(v[i], v_hat[i])) / tau)
        neg = sum(math.exp(float(np.dot(v[i], n)) / tau) for n in negatives)
        total += -math.log(pos / (pos + neg))
    return total / len(v)


def softmax_list(logits):
    m = max(logits)
    e = [math.exp(x - m) for x in logits]
    z = sum(e)
    return [x / z for x in e]


def global_loop(v, v_bar, negatives, tau_ot, tau_tt):
    total = 0.0
    for i in range(len(v)):
        so = softmax_list([float(np.dot(v[i], n)) / tau_ot for n in negatives])
        st = softmax_list([float(np.dot(v_bar[i], n)) / tau_tt for n in negatives])
        total += sum(t * math.log(t / o) for t, o in zip(st, so) if t > 0)
    return total / len(v)


def local_loop(v_mix, v_tilde, negatives, tau):
    total = 0.0
    for i in range(len(v_mix)):
        num = math.exp(float(np.dot(v_mix[i], v_tilde[i])) / tau)
        den = sum(math.exp(float(np.dot(v_mix[i], n)) / tau) for n in negatives)
        total += -math.log(num / den)
    return total / len(v_mix)


def class_similarity_loop(x, labels):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    intra, inter, phi = [], [], []
    for i in range(n):
        pos = [float(x[i] @ x[j]) for j in range(n) if j != i and labels[j] == labels[i]]
        neg = [float(x[i] @ x[j]) for j in range(n) if labels[j] != labels[i]]
        if not pos:
            continue
        p = sum(pos) / len(pos)
        q = sum(neg) / len(neg)
        intra.append(p)
        inter.append(q)
        phi.append((p + 1) / (q + 1))
    return sum(intra) / len(intra), sum(inter) / len(inter), sum(phi) / len(phi)


def knn_vote_loop(train, train_labels, query, k, temperature):
    sims = sorted(((float(np.dot(query, t)), idx) for idx, t in enumerate(train)), key=lambda s: (-s[0], s[1]))[:k]
    scores = {}
    for sim, idx in sims:
        scores[int(train_labels[idx])] = scores.get(int(train_labels[idx]), 0.0) + math.exp(sim / temperature)
    return sorted(scores, key=lambda c: (-scores[c], c))[0]


def central_difference(fn, x, h=1e-6):
    """Gradient of scalar ``fn`` at float64 array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = fn(x)
        x[idx] = old - h
        down = fn(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)
