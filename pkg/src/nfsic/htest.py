"""Test decisions: chi2(J) asymptotic threshold and permutation threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from nfsic.chi2 import chi2_quantile, chi2_sf
from nfsic.errors import InputError
from nfsic.kernels import GaussianKernel
from nfsic.statistic import (
    DEFAULT_GAMMA,
    JointSample,
    NfsicState,
    TestLocations,
    compute_KL,
    nfsic_from_KL,
    regularized_solve,
)

CHI2 = "chi2"
PERMUTATION = "permutation"


@dataclass(frozen=True)
class TestOutcome:
    """Result of one test.

    For the chi2 method ``reject == (statistic >= threshold) == (p_value <= alpha)``.
    For the permutation method ``reject == (p_value <= alpha)``, which implies
    ``statistic > threshold``.
    """

    __test__ = False

    statistic: float
    threshold: float
    p_value: float
    reject: bool
    method: str
    alpha: float
    tuned_params: Optional[Any] = None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "p_value": self.p_value,
            "reject": self.reject,
            "threshold_method": self.method,
            "alpha": self.alpha,
        }


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def test_chi2(statistic, J: int, alpha: float = 0.05) -> TestOutcome:
    """Compare the statistic (a float or NfsicState) against the chi2(J) (1-alpha)-quantile."""
    alpha = check_alpha(alpha)
    lam = statistic.lambda_hat if isinstance(statistic, NfsicState) else float(statistic)
    if J < 1:
        raise InputError(f"J must be >= 1, got {J}")
    threshold = chi2_quantile(J, 1.0 - alpha)
    return TestOutcome(
        statistic=lam,
        threshold=threshold,
        p_value=chi2_sf(J, lam),
        reject=bool(lam >= threshold),
        method=CHI2,
        alpha=alpha,
    )


test_chi2.__test__ = False


def perm_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for permutation `index`, fixed by (seed, index) alone."""
    return np.random.default_rng([int(seed), int(index)])


def permutation_threshold(perm_stats, alpha: float) -> float:
    """Order statistic at 1-based rank ceil((1 - alpha) * B) of the permuted statistics."""
    s = np.sort(np.asarray(perm_stats, dtype=np.float64))
    B = s.shape[0]
    # guard against (1 - alpha) * B landing a hair above an integer
    k = max(1, math.ceil((1.0 - alpha) * B - 1e-9))
    return float(s[k - 1])


def permutation_outcome(observed: float, perm_stats, alpha: float) -> TestOutcome:
    alpha = check_alpha(alpha)
    perm_stats = np.asarray(perm_stats, dtype=np.float64)
    B = perm_stats.shape[0]
    if B < 1:
        raise InputError("need at least one permutation")
    p_value = (1.0 + np.count_nonzero(perm_stats >= observed)) / (1.0 + B)
    return TestOutcome(
        statistic=float(observed),
        threshold=permutation_threshold(perm_stats, alpha),
        p_value=float(p_value),
        reject=bool(p_value <= alpha),
        method=PERMUTATION,
        alpha=alpha,
    )


def permuted_statistics(stat_of_perm: Callable[[np.ndarray], float], n: int,
                        num_perms: int, seed: int) -> np.ndarray:
    if num_perms < 1:
        raise InputError(f"num_perms must be >= 1, got {num_perms}")
    out = np.empty(num_perms)
    for b in range(num_perms):
        out[b] = stat_of_perm(perm_rng(seed, b).permutation(n))
    return out


class _PermutedNfsic:
    """lambda_hat with the y-side columns reordered; x-side terms computed once."""

    def __init__(self, K: np.ndarray, L: np.ndarray, gamma: float):
        n = K.shape[1]
        self.n = n
        self.gamma = gamma
        self.K = K
        self.Kc = K - K.mean(axis=1, keepdims=True)
        self.L = L
        self.Lc = L - L.mean(axis=1, keepdims=True)
        # row sums are permutation invariant
        self.ksls = K.sum(axis=1) * L.sum(axis=1) / (n * (n - 1))

    def __call__(self, perm: np.ndarray) -> float:
        n = self.n
        Lp = self.L[:, perm]
        u = np.sum(self.K * Lp, axis=1) / (n - 1) - self.ksls
        G = self.Kc * self.Lc[:, perm]
        G -= G.mean(axis=1, keepdims=True)
        S = G @ G.T / n
        s, _, _ = regularized_solve(0.5 * (S + S.T), u, self.gamma)
        return max(float(n * (u @ s)), 0.0)


def test_permutation(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel,
                     locs: TestLocations, gamma: float = DEFAULT_GAMMA, alpha: float = 0.05,
                     num_perms: int = 300, seed: int = 0) -> TestOutcome:
    """Permutation test: rows of ys are shuffled while xs stays fixed."""
    alpha = check_alpha(alpha)
    K, L = compute_KL(sample, kx, ky, locs)
    observed = nfsic_from_KL(K, L, gamma).lambda_hat
    perm_stats = permuted_statistics(_PermutedNfsic(K, L, gamma), sample.n, num_perms, seed)
    return permutation_outcome(observed, perm_stats, alpha)


test_permutation.__test__ = False
