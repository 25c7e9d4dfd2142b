"""Quadratic-time HSIC with a permutation threshold (reference baseline).

Memory and time are O(n^2); samples above ``MAX_QUADRATIC_N`` rows are
refused unless ``allow_large=True``.
"""
from __future__ import annotations

import numpy as np

from nfsic.errors import InputError
from nfsic.htest import TestOutcome, check_alpha, permutation_outcome, permuted_statistics
from nfsic.kernels import GaussianKernel
from nfsic.statistic import JointSample

MAX_QUADRATIC_N = 20000


def _check_size(n: int, allow_large: bool) -> None:
    if n < 4:
        raise InputError(f"HSIC needs at least 4 rows, got {n}")
    if n > MAX_QUADRATIC_N and not allow_large:
        raise InputError(
            f"n={n} exceeds {MAX_QUADRATIC_N}; the quadratic-time HSIC needs O(n^2) memory "
            "(pass allow_large=True to override)"
        )


def _centered(G: np.ndarray) -> np.ndarray:
    # H G H with H = I - 11^T/n
    G = G - G.mean(axis=0, keepdims=True)
    return G - G.mean(axis=1, keepdims=True)


def hsic_statistic(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel,
                   allow_large: bool = False) -> float:
    """Biased estimate (1/n^2) tr(HKH HLH) over the full Gram matrices."""
    _check_size(sample.n, allow_large)
    Kc = _centered(kx.matrix(sample.xs, sample.xs))
    L = ky.matrix(sample.ys, sample.ys)
    # tr(HKH HLH) = tr(HKH L) because H is idempotent
    return max(float(np.vdot(Kc, L)) / sample.n**2, 0.0)


def hsic_test(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel, alpha: float = 0.05,
              num_perms: int = 300, seed: int = 0, allow_large: bool = False) -> TestOutcome:
    alpha = check_alpha(alpha)
    n = sample.n
    _check_size(n, allow_large)
    Kc = _centered(kx.matrix(sample.xs, sample.xs))
    L = ky.matrix(sample.ys, sample.ys)
    observed = max(float(np.vdot(Kc, L)) / n**2, 0.0)

    def permuted(perm: np.ndarray) -> float:
        Lp = L.take(perm, axis=0).take(perm, axis=1)
        return max(float(np.vdot(Kc, Lp)) / n**2, 0.0)

    perm_stats = permuted_statistics(permuted, n, num_perms, seed)
    return permutation_outcome(observed, perm_stats, alpha)


hsic_test.__test__ = False
