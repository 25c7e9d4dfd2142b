"""Power diagnostics and Monte-Carlo rejection-rate simulations."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from nfsic.baselines import hsic_test
from nfsic.errors import DomainError, InputError, NfsicError
from nfsic.htest import CHI2, PERMUTATION, check_alpha, test_chi2, test_permutation
from nfsic.kernels import median_kernel
from nfsic.problems import SIN, ProblemSpec, generate
from nfsic.statistic import (
    DEFAULT_GAMMA,
    JointSample,
    TestLocations,
    nfsic_statistic,
    regularized_solve,
)
from nfsic.tuning import TuningConfig, adaptive_test

NFSIC_OPT = "nfsic_opt"
NFSIC_MED = "nfsic_med"
QHSIC = "qhsic"
METHODS = (NFSIC_OPT, NFSIC_MED, QHSIC)

# Largest tolerated fraction of failed trials per grid point.
MAX_FAILURE_FRACTION = 0.01


# ---------------------------------------------------------------------------
# Power lower bound
# ---------------------------------------------------------------------------

def b_star(B_k: float = 1.0, B_l: float = 1.0) -> float:
    B = B_k * B_l
    return max(
        2 * B**4,
        8 * max(B * B_k, B_l) ** 4,
        8 * max(B * B_l, B_k) ** 4,
        18 * max(B, B_k, B_l) ** 6,
        18 * max(B_k**2, B_l) ** 6,
        18 * max(B_k, B_l**2) ** 6,
        32 * 3**2 * max(B_k, B_l) ** 8,
    ) / 12**2


@dataclass(frozen=True)
class PowerBoundInputs:
    lambda_n: float
    r: float
    n: int
    J: int
    gamma_n: float
    B_k: float = 1.0
    B_l: float = 1.0
    c_tilde: float = 1.0

    def __post_init__(self):
        for name in ("n", "J", "gamma_n", "B_k", "B_l", "c_tilde"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n < 2:
            raise InputError("n must be >= 2")

    @property
    def B(self) -> float:
        return self.B_k * self.B_l

    @property
    def B_star(self) -> float:
        return b_star(self.B_k, self.B_l)

    @property
    def c1(self) -> float:
        return 4 * self.B**2 * self.J * math.sqrt(self.J) * self.c_tilde

    @property
    def c2(self) -> float:
        return 4 * self.B * math.sqrt(self.J) * self.c_tilde

    @property
    def c3(self) -> float:
        return 4 * self.B**2 * self.J * self.c_tilde**2

    @property
    def xi1(self) -> float:
        return 1.0 / (3**2 * self.c1**2 * self.J**2 * self.B_star)

    @property
    def xi2(self) -> float:
        return 72 * self.c2**2 * self.J * self.B**2

    @property
    def xi3(self) -> float:
        return 8 * self.c1 * self.B**2 * self.J

    @property
    def xi4(self) -> float:
        return 2**8 * self.B**4 * self.J**2 * self.c1**2


def power_bound_terms(inputs: PowerBoundInputs) -> tuple[float, float, float]:
    """The three subtracted exponential terms of the lower bound."""
    p = inputs
    if p.lambda_n < p.r:
        raise DomainError(f"the bound holds for lambda_n >= r; got lambda_n={p.lambda_n} < r={p.r}")
    n = p.n
    d = p.lambda_n - p.r
    t1 = 62.0 * math.exp(-p.xi1 * p.gamma_n**2 * d**2 / n)
    t2 = 2.0 * math.exp(-math.floor(0.5 * n) * d**2 / (p.xi2 * n**2))
    inner = d * p.gamma_n * (n - 1) / 3.0 - p.xi3 * n - p.c3 * p.gamma_n**2 * n * (n - 1)
    t3 = 2.0 * math.exp(-inner**2 / (p.xi4 * n**2 * (n - 1)))
    return t1, t2, t3


def power_lower_bound(inputs: PowerBoundInputs) -> float:
    """Lower bound on P(lambda_hat >= r); below zero when vacuous."""
    t1, t2, t3 = power_bound_terms(inputs)
    return 1.0 - t1 - t2 - t3


def estimate_c_tilde(sample: JointSample, kx, ky, locs: TestLocations,
                     gamma: float = DEFAULT_GAMMA) -> float:
    """Frobenius norm of (Sigma_hat + gamma I)^{-1} as a data-driven stand-in for c_tilde."""
    state = nfsic_statistic(sample, kx, ky, locs, gamma)
    J = state.J
    inv, _, _ = regularized_solve(state.sigma_hat, np.eye(J), state.gamma)
    return float(np.linalg.norm(inv, "fro"))


# ---------------------------------------------------------------------------
# Simulations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationPlan:
    """Monte-Carlo plan: `trials` fresh datasets per value of `grid_param`.

    `grid_param` is ``"n"`` or a problem parameter (``omega``, ``dx``, ``dy``,
    ``d``, ``noise_sd``); `n` is the sample size when the grid is not over n.
    """

    problem: ProblemSpec
    method: str
    grid: Sequence
    grid_param: str = "n"
    n: int = 4000
    trials: int = 300
    alpha: float = 0.05
    J: int = 10
    master_seed: int = 0
    gamma: Optional[float] = None  # None: the method's own default
    threshold: str = CHI2
    num_perms: int = 300
    tuning: TuningConfig = field(default_factory=TuningConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.trials < 1:
            raise InputError("trials must be >= 1")
        if len(self.grid) == 0:
            raise InputError("grid must be non-empty")
        if self.J < 1:
            raise InputError("J must be >= 1")
        if self.threshold not in (CHI2, PERMUTATION):
            raise InputError(f"threshold must be '{CHI2}' or '{PERMUTATION}'")
        check_alpha(self.alpha)
        for value in self.grid:
            self.setting(value)

    def setting(self, value) -> tuple[ProblemSpec, int]:
        if self.grid_param == "n":
            return self.problem, int(value)
        return self.problem.with_param(self.grid_param, value), self.n


@dataclass(frozen=True)
class TrialRecord:
    grid_index: int
    grid_value: float
    trial: int
    reject: bool
    statistic: float
    p_value: float
    runtime_s: float
    error: Optional[str] = None


@dataclass(frozen=True)
class RateRow:
    grid_value: float
    trials: int
    rejections: int
    failures: int
    rate: float
    mean_runtime_ms: float


def trial_seeds(master_seed: int, grid_index: int, trial: int) -> tuple[int, int]:
    """(data seed, test seed) fixed by the master seed and the trial coordinates only."""
    ss = np.random.SeedSequence([int(master_seed), int(grid_index), int(trial)])
    data_seed, test_seed = ss.generate_state(2, dtype=np.uint32)
    return int(data_seed), int(test_seed)


def nfsic_med_test(sample: JointSample, J: int, alpha: float, seed: int,
                   gamma: float = DEFAULT_GAMMA, threshold: str = CHI2, num_perms: int = 300):
    """Full-sample test with median-heuristic widths and J standard-normal locations."""
    rng = np.random.default_rng(seed)
    kx = median_kernel(sample.xs, seed=seed)
    ky = median_kernel(sample.ys, seed=seed)
    locs = TestLocations(rng.standard_normal((J, sample.dx)), rng.standard_normal((J, sample.dy)))
    if threshold == PERMUTATION:
        return test_permutation(sample, kx, ky, locs, gamma, alpha, num_perms, seed)
    return test_chi2(nfsic_statistic(sample, kx, ky, locs, gamma), J, alpha)


def qhsic_test(sample: JointSample, alpha: float, seed: int, num_perms: int = 300):
    kx = median_kernel(sample.xs, seed=seed)
    ky = median_kernel(sample.ys, seed=seed)
    return hsic_test(sample, kx, ky, alpha, num_perms, seed)


def run_method(method: str, sample: JointSample, J: int, alpha: float, seed: int,
               gamma: Optional[float] = None, threshold: str = CHI2, num_perms: int = 300,
               tuning: Optional[TuningConfig] = None):
    """One test by name. ``gamma=None`` keeps the method default (the tuning
    config's ridge for nfsic_opt, the fixed-parameter ridge otherwise)."""
    if method == NFSIC_OPT:
        cfg = tuning or TuningConfig()
        cfg = replace(cfg, gamma=cfg.gamma if gamma is None else gamma, seed=seed,
                      threshold=threshold, num_perms=num_perms)
        return adaptive_test(sample, J, alpha, cfg)
    if method == NFSIC_MED:
        return nfsic_med_test(sample, J, alpha, seed, DEFAULT_GAMMA if gamma is None else gamma,
                              threshold, num_perms)
    if method == QHSIC:
        return qhsic_test(sample, alpha, seed, num_perms)
    raise InputError(f"unknown method {method!r}")


def _run_trial(plan: SimulationPlan, grid_index: int, trial: int) -> TrialRecord:
    value = plan.grid[grid_index]
    problem, n = plan.setting(value)
    data_seed, test_seed = trial_seeds(plan.master_seed, grid_index, trial)
    start = time.perf_counter()
    try:
        sample = generate(problem, n, data_seed)
        out = run_method(plan.method, sample, plan.J, plan.alpha, test_seed, plan.gamma,
                         plan.threshold, plan.num_perms, plan.tuning)
    except NfsicError as exc:
        return TrialRecord(grid_index, value, trial, False, math.nan, math.nan,
                           time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}")
    return TrialRecord(grid_index, value, trial, out.reject, out.statistic, out.p_value,
                       time.perf_counter() - start)


def _run_chunk(args) -> list:
    plan, jobs = args
    return [_run_trial(plan, g, t) for g, t in jobs]


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("NFSIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"NFSIC_THREADS must be an integer, got {env!r}") from exc
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def _map_jobs(chunk_fn, plan, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return chunk_fn((plan, jobs))
    chunks = [jobs[i::workers] for i in range(workers)]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(chunk_fn, [(plan, c) for c in chunks if c]):
            out.extend(part)
    return out


def aggregate(records: Sequence[TrialRecord], grid: Sequence, trials: int) -> list[RateRow]:
    rows = []
    for g, value in enumerate(grid):
        recs = [r for r in records if r.grid_index == g]
        failures = sum(r.error is not None for r in recs)
        if failures > MAX_FAILURE_FRACTION * trials:
            first = next(r.error for r in recs if r.error is not None)
            raise RuntimeError(
                f"{failures}/{trials} trials failed at grid value {value} (first error: {first})"
            )
        rejections = sum(r.reject for r in recs)
        rows.append(RateRow(
            grid_value=value,
            trials=trials,
            rejections=rejections,
            failures=failures,
            rate=rejections / trials,
            mean_runtime_ms=1000.0 * float(np.mean([r.runtime_s for r in recs])),
        ))
    return rows


def simulate_rejection_rate(plan: SimulationPlan, workers: Optional[int] = None
                            ) -> tuple[list[RateRow], list[TrialRecord]]:
    """Rejection rate per grid value over `plan.trials` independent datasets.

    Failed trials count as non-rejections; more than 1% failures at a grid
    value raises. Records are returned in (grid, trial) order whatever the
    execution order.
    """
    jobs = [(g, t) for g in range(len(plan.grid)) for t in range(plan.trials)]
    records = _map_jobs(_run_chunk, plan, jobs, worker_count(workers))
    records.sort(key=lambda r: (r.grid_index, r.trial))
    return aggregate(records, plan.grid, plan.trials), records


@dataclass(frozen=True)
class _SweepPlan:
    problem: ProblemSpec
    grid: Sequence
    n: int
    alpha: float
    master_seed: int
    gamma: float


def _sweep_trial(plan: _SweepPlan, grid_index: int, trial: int) -> TrialRecord:
    J = int(plan.grid[grid_index])
    data_seed, test_seed = trial_seeds(plan.master_seed, grid_index, trial)
    start = time.perf_counter()
    try:
        sample = generate(plan.problem, plan.n, data_seed)
        rng = np.random.default_rng(test_seed)
        locs = TestLocations(rng.uniform(-math.pi, math.pi, (J, 1)),
                             rng.uniform(-math.pi, math.pi, (J, 1)))
        kx = median_kernel(sample.xs, seed=test_seed)
        ky = median_kernel(sample.ys, seed=test_seed)
        out = test_chi2(nfsic_statistic(sample, kx, ky, locs, plan.gamma), J, plan.alpha)
    except NfsicError as exc:
        return TrialRecord(grid_index, J, trial, False, math.nan, math.nan,
                           time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}")
    return TrialRecord(grid_index, J, trial, out.reject, out.statistic, out.p_value,
                       time.perf_counter() - start)


def _sweep_chunk(args) -> list:
    plan, jobs = args
    return [_sweep_trial(plan, g, t) for g, t in jobs]


def power_vs_J_sweep(problem: ProblemSpec, J_grid: Sequence[int], n: int, trials: int,
                     seed: int = 0, alpha: float = 0.05, gamma: float = DEFAULT_GAMMA,
                     workers: Optional[int] = None) -> tuple[list[RateRow], list[TrialRecord]]:
    """Power of the chi2 test with random Uniform((-pi, pi)^2) locations for each J."""
    if problem.dx != 1 or problem.dy != 1:
        raise InputError("the J sweep is defined for one-dimensional X and Y")
    if trials < 1 or len(J_grid) == 0 or min(J_grid) < 1:
        raise InputError("need trials >= 1 and a non-empty grid of J >= 1")
    check_alpha(alpha)
    plan = _SweepPlan(problem, list(J_grid), int(n), alpha, seed, gamma)
    jobs = [(g, t) for g in range(len(plan.grid)) for t in range(trials)]
    records = _map_jobs(_sweep_chunk, plan, jobs, worker_count(workers))
    records.sort(key=lambda r: (r.grid_index, r.trial))
    return aggregate(records, plan.grid, trials), records


def default_sweep_problem(omega: float = 2.0) -> ProblemSpec:
    return ProblemSpec(SIN, omega=omega)
