"""Linear-time dependence statistics evaluated at a finite set of test locations.

All estimators are written in terms of the J x n kernel matrices

    K[i, j] = k(v_i, x_j),    L[i, j] = l(w_i, y_j)

so that a full evaluation costs O(J^3 + J^2 n + (dx + dy) J n).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from nfsic.errors import InputError, SingularCovarianceError
from nfsic.kernels import GaussianKernel, as_matrix

DEFAULT_GAMMA = 1e-8
# Ridge used for the single retry after a failed factorization is max(gamma, this) * 10.
FALLBACK_GAMMA_FLOOR = 1e-6


@dataclass(frozen=True)
class JointSample:
    """n paired observations; row i of `xs` goes with row i of `ys`."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = as_matrix(self.xs, "xs")
        ys = as_matrix(self.ys, "ys")
        if xs.shape[0] != ys.shape[0]:
            raise InputError(f"xs has {xs.shape[0]} rows but ys has {ys.shape[0]}")
        if xs.shape[0] < 2:
            raise InputError(f"a joint sample needs at least 2 rows, got {xs.shape[0]}")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def dx(self) -> int:
        return self.xs.shape[1]

    @property
    def dy(self) -> int:
        return self.ys.shape[1]

    def subset(self, idx) -> "JointSample":
        return JointSample(self.xs[idx], self.ys[idx])


@dataclass(frozen=True)
class TestLocations:
    """J paired test locations (v_i, w_i)."""

    __test__ = False  # not a pytest class

    vs: np.ndarray
    ws: np.ndarray

    def __post_init__(self):
        vs = as_matrix(self.vs, "vs")
        ws = as_matrix(self.ws, "ws")
        if vs.shape[0] != ws.shape[0]:
            raise InputError(f"vs has {vs.shape[0]} rows but ws has {ws.shape[0]}")
        if vs.shape[0] < 1:
            raise InputError("at least one test location is required")
        object.__setattr__(self, "vs", vs)
        object.__setattr__(self, "ws", ws)

    @property
    def J(self) -> int:
        return self.vs.shape[0]


@dataclass(frozen=True)
class NfsicState:
    u_hat: np.ndarray
    sigma_hat: np.ndarray
    gamma: float
    lambda_hat: float
    # True when the factorization failed at the requested gamma and the
    # statistic was computed with the larger fallback ridge stored in `gamma`.
    gamma_adjusted: bool = field(default=False)

    @property
    def J(self) -> int:
        return self.u_hat.shape[0]


def compute_KL(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel,
               locs: TestLocations) -> tuple[np.ndarray, np.ndarray]:
    if locs.vs.shape[1] != sample.dx:
        raise InputError(f"x locations have dimension {locs.vs.shape[1]}, sample has dx={sample.dx}")
    if locs.ws.shape[1] != sample.dy:
        raise InputError(f"y locations have dimension {locs.ws.shape[1]}, sample has dy={sample.dy}")
    return kx.matrix(sample.xs, locs.vs), ky.matrix(sample.ys, locs.ws)


def _check_KL(K, L, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.ndim != 2 or K.shape != L.shape:
        raise InputError(f"K and L must be 2D arrays of equal shape, got {K.shape} and {L.shape}")
    if K.shape[1] < min_n:
        raise InputError(f"need at least {min_n} samples, got {K.shape[1]}")
    return K, L


def u_hat(K, L) -> np.ndarray:
    """Unbiased (U-statistic) estimate of mu_xy - mu_x mu_y at each location."""
    K, L = _check_KL(K, L, 2)
    n = K.shape[1]
    return np.sum(K * L, axis=1) / (n - 1) - K.sum(axis=1) * L.sum(axis=1) / (n * (n - 1))


def u_hat_biased(K, L) -> np.ndarray:
    """V-statistic counterpart of :func:`u_hat`; equals ``u_hat * (n - 1) / n``."""
    K, L = _check_KL(K, L, 1)
    n = K.shape[1]
    return np.sum(K * L, axis=1) / n - K.sum(axis=1) * L.sum(axis=1) / n**2


def _gamma_matrix(K: np.ndarray, L: np.ndarray, ub=None) -> np.ndarray:
    Kc = K - K.mean(axis=1, keepdims=True)
    Lc = L - L.mean(axis=1, keepdims=True)
    G = Kc * Lc
    if ub is None:
        # row means of Kc * Lc are exactly u_hat_biased
        G -= G.mean(axis=1, keepdims=True)
    else:
        G -= np.asarray(ub, dtype=np.float64)[:, np.newaxis]
    return G


def sigma_hat(K, L, ub=None) -> np.ndarray:
    """Plug-in covariance of the centered kernel products, Gamma Gamma^T / n.

    `ub` is :func:`u_hat_biased` of the same matrices; computed if omitted.
    """
    K, L = _check_KL(K, L, 2)
    G = _gamma_matrix(K, L, ub)
    S = G @ G.T / K.shape[1]
    return 0.5 * (S + S.T)


def regularized_solve(S: np.ndarray, u: np.ndarray, gamma: float) -> tuple[np.ndarray, float, bool]:
    """Solve (S + gamma I) s = u by Cholesky.

    On factorization failure, retries once with ``max(gamma, 1e-6) * 10``.
    Returns ``(s, gamma_used, adjusted)``.
    """
    if gamma < 0 or not np.isfinite(gamma):
        raise InputError(f"gamma must be a finite nonnegative number, got {gamma}")
    eye = np.eye(S.shape[0])
    try:
        cf = scipy.linalg.cho_factor(S + gamma * eye, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(cf, u, check_finite=False), gamma, False
    except np.linalg.LinAlgError:
        pass
    g2 = max(gamma, FALLBACK_GAMMA_FLOOR) * 10.0
    try:
        cf = scipy.linalg.cho_factor(S + g2 * eye, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"covariance estimate is singular even with gamma={g2:g}; use a larger gamma"
        ) from exc
    return scipy.linalg.cho_solve(cf, u, check_finite=False), g2, True


def nfsic_from_KL(K, L, gamma: float = DEFAULT_GAMMA) -> NfsicState:
    K, L = _check_KL(K, L, 2)
    n = K.shape[1]
    u = u_hat(K, L)
    S = sigma_hat(K, L)
    s, g, adjusted = regularized_solve(S, u, gamma)
    lam = max(float(n * (u @ s)), 0.0)
    return NfsicState(u_hat=u, sigma_hat=S, gamma=g, lambda_hat=lam, gamma_adjusted=adjusted)


def nfsic_statistic(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel,
                    locs: TestLocations, gamma: float = DEFAULT_GAMMA) -> NfsicState:
    """Normalized statistic n u^T (Sigma + gamma I)^{-1} u; ~chi2(J) under independence."""
    K, L = compute_KL(sample, kx, ky, locs)
    return nfsic_from_KL(K, L, gamma)


def fsic_statistic(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel,
                   locs: TestLocations) -> float:
    """Unnormalized criterion (1/J) * sum_i u_hat_i^2."""
    K, L = compute_KL(sample, kx, ky, locs)
    u = u_hat(K, L)
    return float(u @ u) / u.shape[0]


@dataclass(frozen=True)
class WitnessSurface:
    """Per-grid-point J=1 quantities; every field has one entry per grid point."""

    mu_xy: np.ndarray
    mu_x_mu_y: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray


def witness_surface(sample: JointSample, kx: GaussianKernel, ky: GaussianKernel,
                    grid_v, grid_w, gamma: float = DEFAULT_GAMMA,
                    chunk: int = 4096) -> WitnessSurface:
    """Evaluate each grid point (grid_v[g], grid_w[g]) as a single test location."""
    grid_v = as_matrix(grid_v, "grid_v")
    grid_w = as_matrix(grid_w, "grid_w")
    if grid_v.shape[0] == 0 or grid_v.shape[0] != grid_w.shape[0]:
        raise InputError("grid must be non-empty with matching v and w rows")
    n = sample.n
    out = {key: np.empty(grid_v.shape[0]) for key in ("mu_xy", "mu_x_mu_y", "sigma", "lam")}
    for start in range(0, grid_v.shape[0], chunk):
        sl = slice(start, start + chunk)
        K, L = compute_KL(sample, kx, ky, TestLocations(grid_v[sl], grid_w[sl]))
        kl = np.sum(K * L, axis=1)
        mxy = kl / n
        mxmy = (K.sum(axis=1) * L.sum(axis=1) - kl) / (n * (n - 1))
        G = _gamma_matrix(K, L)
        var = np.sum(G * G, axis=1) / n
        u = mxy - mxmy
        out["mu_xy"][sl] = mxy
        out["mu_x_mu_y"][sl] = mxmy
        out["sigma"][sl] = var
        with np.errstate(divide="ignore", invalid="ignore"):
            out["lam"][sl] = np.where(var + gamma > 0, n * u**2 / (var + gamma), 0.0)
    return WitnessSurface(**out)
