#!/usr/bin/env python3
"""Brute-force recomputation of the frozen hand values used by the Rust tests.

Everything here is written from the defining formulas with plain loops and
the standard library only, independent of the Rust implementation. Run it
and compare against the constants in `tests/hand_values.rs` and the
acceptance suite.
"""
import itertools
import math


def cd(emb):
    g = len(emb)
    total = 0.0
    for i in range(g):
        for j in range(g):
            c = sum(a * b for a, b in zip(emb[i], emb[j]))
            d = min(max(1.0 - c, 0.0), 1.0)
            if i == j:
                d = 0.0
            total += d / (g * g)
    return total


def bot(masses, cents):
    dim = len(cents[0])
    bary = [sum(m * c[t] for m, c in zip(masses, cents)) for t in range(dim)]
    n = math.sqrt(sum(x * x for x in bary))
    if n < 1e-9:
        return 0.5
    bary = [x / n for x in bary]
    s = sum(m * (1 - sum(a * b for a, b in zip(c, bary))) / 2 for m, c in zip(masses, cents))
    return min(max(s, 0.0), 1.0)


def advantages(r, eps=0.0):
    g = len(r)
    mu = sum(r) / g
    sd = math.sqrt(sum((x - mu) ** 2 for x in r) / g)
    return [(x - mu) / (sd + eps) for x in r]


def rd(r, lo, hi):
    g = len(r)
    mu = sum(r) / g
    raw = sum(abs(x - mu) for x in r)
    # brute-force maximum over all extreme assignments
    best = 0.0
    for bits in itertools.product([lo, hi], repeat=g):
        m = sum(bits) / g
        best = max(best, sum(abs(x - m) for x in bits))
    closed = 2.0 / g * (g // 2) * ((g + 1) // 2) * (hi - lo)
    return raw, best, closed, min(max(raw / closed, 0.0), 1.0)


def pairwise_var(means, masses):
    k = len(means)
    s = 0.0
    for i in range(k):
        for j in range(k):
            s += masses[i] * masses[j] * sum((a - b) ** 2 for a, b in zip(means[i], means[j]))
    return 0.5 * s


def ranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    r = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for t in range(i, j + 1):
            r[order[t]] = (i + j) / 2 + 1
        i = j + 1
    return r


def spearman(u, v):
    ru, rv = ranks(u), ranks(v)
    n = len(u)
    d2 = sum((a - b) ** 2 for a, b in zip(ru, rv))
    return 1 - 6 * d2 / (n * (n * n - 1))


if __name__ == "__main__":
    print("cd_orthogonal_pair", cd([[1, 0], [0, 1]]))
    print("cd_antipodal_pair", cd([[1, 0], [-1, 0]]))
    print("bot_075_025_orthogonal", bot([0.75, 0.25], [[1, 0], [0, 1]]))
    print("bot_antipodal", bot([0.5, 0.5], [[1, 0], [-1, 0]]))
    print("se_075_025", -(0.75 * math.log(0.75) + 0.25 * math.log(0.25)))
    print("adv_2000", advantages([2, 0, 0, 0]))
    print("adv_10", advantages([1, 0]))
    raw, best, closed, norm = rd([2, 0, 0, 0], 0, 2)
    print("rd_2000", raw, best, closed, norm)
    print("rd_max_16", rd([0] * 16, 0, 2)[2], "brute", rd([0] * 16, 0, 2)[1])
    alpha_g = 0.6 / math.log(4)
    print("alpha_g_4", alpha_g)
    w_cd = min(max(1 - alpha_g * 0.5 ** 2, 0), 1)
    w_rd = 1 + alpha_g * 0.75
    print("omega_cd", w_cd)
    print("omega_rd", w_rd)
    print("a_tilde_1", advantages([2, 0, 0, 0])[0] * w_cd * w_rd)
    print("a_tilde_1_eps", advantages([2, 0, 0, 0], 1e-6)[0] * w_cd * w_rd)
    m3 = [[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]]
    p3 = [1 / 3] * 3
    v = pairwise_var(m3, p3)
    gini = 1 - sum(p * p for p in p3)
    bound = 4 / 2 * gini
    print("slack_instance", v, bound, bound - v)
    print("pairwise_antipodal", pairwise_var([[1, 0], [-1, 0]], [0.5, 0.5]))
    print("spearman_0.8", spearman([1, 2, 3, 4], [1, 3, 2, 4]))
    # sample-level gradient variance, G=2, A=(1,-1), g=(1,0)
    x = [[1.0, 0.0], [-1.0, 0.0]]
    mean = [sum(c) / 2 for c in zip(*x)]
    print("sample_var", sum(sum((a - b) ** 2 for a, b in zip(xi, mean)) for xi in x) / 2)
    print("qhawkeye", 1 - 0.6 * min(max((1.0) / 1.0, 0), 1))
    print("r2vpo_3", 1 / (1 + 3))
