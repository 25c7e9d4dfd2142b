"""Slow, direct-definition reference implementations used only by the tests."""
import itertools
import math

import numpy as np


def k_gauss(a, b, width_sq):
    d = np.asarray(a, float) - np.asarray(b, float)
    return math.exp(-float(d @ d) / (2.0 * width_sq))


def kernel_loop(points, locations, width_sq):
    J, n = len(locations), len(points)
    out = np.empty((J, n))
    for i in range(J):
        for j in range(n):
            out[i, j] = k_gauss(points[j], locations[i], width_sq)
    return out


def h_core(K, L, m, i, j):
    """U-statistic core for location m on the pair (i, j)."""
    return 0.5 * (K[m, i] - K[m, j]) * (L[m, i] - L[m, j])


def u_stat_bruteforce(K, L):
    """(2 / (n(n-1))) * sum over unordered pairs of the core."""
    J, n = K.shape
    out = np.zeros(J)
    for m in range(J):
        acc = 0.0
        for i, j in itertools.combinations(range(n), 2):
            acc += h_core(K, L, m, i, j)
        out[m] = 2.0 * acc / (n * (n - 1))
    return out


def v_stat_bruteforce(K, L):
    """(1 / n^2) * sum over all ordered pairs, diagonal included."""
    J, n = K.shape
    out = np.zeros(J)
    for m in range(J):
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += h_core(K, L, m, i, j)
        out[m] = acc / n**2
    return out


def sigma_loop(K, L):
    """Per-sample centered-product covariance written as explicit loops."""
    J, n = K.shape
    kbar = [[K[i, m] - sum(K[i]) / n for m in range(n)] for i in range(J)]
    lbar = [[L[i, m] - sum(L[i]) / n for m in range(n)] for i in range(J)]
    ub = [sum(kbar[i][m] * lbar[i][m] for m in range(n)) / n for i in range(J)]
    S = np.zeros((J, J))
    for i in range(J):
        for j in range(J):
            acc = 0.0
            for m in range(n):
                acc += (kbar[i][m] * lbar[i][m] - ub[i]) * (kbar[j][m] * lbar[j][m] - ub[j])
            S[i, j] = acc / n
    return S


def lambda_explicit_inverse(K, L, gamma):
    n = K.shape[1]
    u = u_stat_bruteforce(K, L)
    S = sigma_loop(K, L)
    return n * float(u @ np.linalg.inv(S + gamma * np.eye(len(u))) @ u)


def hsic_three_term(Kmat, Lmat):
    """Biased HSIC via E[kl] + E[k]E[l] - 2 E_x[E_x' k E_y' l] with full Gram matrices."""
    n = Kmat.shape[0]
    t1 = sum(Kmat[i, j] * Lmat[i, j] for i in range(n) for j in range(n)) / n**2
    t2 = (sum(Kmat[i, j] for i in range(n) for j in range(n)) / n**2) * \
         (sum(Lmat[i, j] for i in range(n) for j in range(n)) / n**2)
    t3 = sum(
        (sum(Kmat[i, j] for j in range(n)) / n) * (sum(Lmat[i, q] for q in range(n)) / n)
        for i in range(n)
    ) / n
    return t1 + t2 - 2.0 * t3


def median_pairwise(points):
    pts = np.asarray(points, float)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = sorted(
        math.sqrt(float((pts[i] - pts[j]) @ (pts[i] - pts[j])))
        for i, j in itertools.combinations(range(len(pts)), 2)
    )
    m = len(d)
    return d[m // 2] if m % 2 else 0.5 * (d[m // 2 - 1] + d[m // 2])
