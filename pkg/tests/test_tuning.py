import math

import numpy as np
import pytest

from nfsic.errors import InputError
from nfsic.kernels import median_heuristic
from nfsic.problems import sample_sg, sample_sin
from nfsic.statistic import JointSample, TestLocations, nfsic_statistic
from nfsic.tuning import (
    TuningConfig,
    adaptive_test,
    decode,
    initial_params,
    objective,
    objective_grad,
    optimize,
    pack,
    split,
)


def test_split_sizes_and_disjointness():
    xs = np.arange(10.0)[:, None]
    sample = JointSample(xs, -xs)
    train, test = split(sample, 0.5, seed=1)
    assert (train.n, test.n) == (5, 5)
    rows = set(train.xs[:, 0]) | set(test.xs[:, 0])
    assert rows == set(range(10)) and not set(train.xs[:, 0]) & set(test.xs[:, 0])
    # pairs stay intact
    np.testing.assert_array_equal(train.ys, -train.xs)


def test_split_deterministic():
    sample = sample_sg(50, 2, 1, seed=0)
    a, b = split(sample, 0.3, seed=4), split(sample, 0.3, seed=4)
    np.testing.assert_array_equal(a[0].xs, b[0].xs)
    assert a[0].n == 15


def test_split_halves_have_similar_means():
    sample = sample_sg(4000, 1, 1, seed=2)
    train, test = split(sample, 0.5, seed=0)
    se = math.sqrt(1 / train.n + 1 / test.n)
    assert abs(train.xs.mean() - test.xs.mean()) < 4 * se
    assert abs(train.ys.mean() - test.ys.mean()) < 4 * se


def test_split_errors():
    with pytest.raises(InputError):
        split(sample_sg(3, 1, 1, 0), 0.5)
    with pytest.raises(InputError):
        split(sample_sg(10, 1, 1, 0), 0.05)


def test_config_validation():
    with pytest.raises(InputError):
        TuningConfig(train_fraction=1.0)
    with pytest.raises(InputError):
        TuningConfig(width_bounds=(2.0, 1.0))
    with pytest.raises(InputError):
        TuningConfig(threshold="exact")


def test_objective_is_statistic_on_decoded_params():
    train = sample_sin(300, 1.0, seed=0)
    rng = np.random.default_rng(0)
    locs = TestLocations(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)))
    params = pack(0.7, 1.4, locs)
    kx, ky, dec = decode(params, 1, 1)
    assert kx.width_sq == pytest.approx(0.7) and ky.width_sq == pytest.approx(1.4)
    direct = nfsic_statistic(train, kx, ky, dec, 1e-6).lambda_hat
    assert objective(train, params, 1e-6) == pytest.approx(direct, rel=1e-12)


def test_objective_clamps_widths():
    train = sample_sin(200, 1.0, seed=0)
    locs = TestLocations(np.zeros((1, 1)), np.zeros((1, 1)))
    bounds = ((0.5, 2.0), (0.5, 2.0))
    wide = objective(train, pack(100.0, 1.0, locs), 1e-6, bounds)
    at_bound = objective(train, pack(2.0, 1.0, locs), 1e-6, bounds)
    assert wide == at_bound


def test_objective_singular_is_minus_infinity(monkeypatch):
    import nfsic.tuning
    from nfsic.errors import SingularCovarianceError

    def fail(*args, **kwargs):
        raise SingularCovarianceError("singular")

    train = sample_sin(50, 1.0, seed=0)
    locs = TestLocations(np.zeros((2, 1)), np.ones((2, 1)))
    monkeypatch.setattr(nfsic.tuning, "regularized_solve", fail)
    assert objective(train, pack(1.0, 1.0, locs), 0.0) == -math.inf


def test_objective_uses_gamma_fallback_on_flat_data():
    train = JointSample(np.ones((6, 1)), np.ones((6, 1)))
    locs = TestLocations(np.zeros((2, 1)), np.zeros((2, 1)))
    assert objective(train, pack(1.0, 1.0, locs), 0.0) == pytest.approx(0.0, abs=1e-30)


def test_redundant_location_lowers_objective():
    train = sample_sin(1000, 1.0, seed=5)
    t1v, t1w = np.array([1.5]), np.array([1.5])
    same = TestLocations(np.stack([t1v, t1v]), np.stack([t1w, t1w]))
    apart = TestLocations(np.stack([t1v, -t1v]), np.stack([t1w, t1w]))
    assert objective(train, pack(1.0, 1.0, same)) < objective(train, pack(1.0, 1.0, apart))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    train = sample_sin(150, 1.0, seed=seed)
    J = 3
    locs = TestLocations(rng.uniform(-2, 2, size=(J, 1)), rng.uniform(-2, 2, size=(J, 1)))
    params = pack(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), locs)
    _, g = objective_grad(train, params, 1e-4)
    for i in range(params.size):
        h = 1e-5 * max(1.0, abs(params[i]))
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        fd = (objective(train, up, 1e-4) - objective(train, dn, 1e-4)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-6 * max(1.0, abs(fd)))


def test_max_iters_zero_returns_initialization():
    train = sample_sin(400, 1.0, seed=1)
    cfg = TuningConfig(max_iters=0, seed=3)
    tuned = optimize(train, 4, cfg)
    init, _ = initial_params(train, 4, cfg)
    assert tuned.kernel_x.width_sq == pytest.approx(median_heuristic(train.xs, seed=3) ** 2)
    np.testing.assert_array_equal(tuned.locations.vs.ravel(), init[2:6])
    assert len(tuned.objective_trace) == 1
    # initial locations are distinct training rows, slightly jittered
    d = np.abs(tuned.locations.vs[:, None, 0] - train.xs[None, :, 0]).min(axis=1)
    assert np.all(d < 0.1)


def test_optimize_improves_and_respects_bounds():
    train = sample_sin(600, 1.0, seed=2)
    cfg = TuningConfig(max_iters=30, width_bounds=(0.5, 2.0))
    tuned = optimize(train, 3, cfg)
    trace = tuned.objective_trace
    assert trace[-1] >= trace[0]
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    m2 = median_heuristic(train.xs) ** 2
    assert 0.5 * m2 * (1 - 1e-12) <= tuned.kernel_x.width_sq <= 2.0 * m2 * (1 + 1e-12)
    assert np.all(np.isfinite(tuned.locations.vs)) and np.all(np.isfinite(tuned.locations.ws))


def test_optimize_errors():
    with pytest.raises(InputError):
        optimize(sample_sg(5, 1, 1, 0), 6)
    with pytest.raises(InputError):
        optimize(sample_sg(5, 1, 1, 0), 0)


@pytest.mark.slow
def test_optimized_beats_random_locations():
    train = sample_sin(2000, 2.0, seed=11)
    tuned = optimize(train, 5, TuningConfig(seed=0))
    best = tuned.objective_trace[-1]
    rng = np.random.default_rng(12)
    mx2, my2 = median_heuristic(train.xs) ** 2, median_heuristic(train.ys) ** 2
    random_vals = []
    for _ in range(20):
        locs = TestLocations(rng.uniform(-np.pi, np.pi, (5, 1)), rng.uniform(-np.pi, np.pi, (5, 1)))
        random_vals.append(objective(train, pack(mx2, my2, locs)))
    assert best > np.median(random_vals)


def test_adaptive_test_deterministic_and_populated():
    sample = sample_sin(800, 1.0, seed=3)
    cfg = TuningConfig(max_iters=20, seed=5)
    a = adaptive_test(sample, 3, 0.05, cfg)
    b = adaptive_test(sample, 3, 0.05, cfg)
    assert a.statistic == b.statistic and a.p_value == b.p_value
    assert a.tuned_params is not None
    d = a.tuned_params.to_dict()
    assert set(d) == {"sigma2_x", "sigma2_y", "locations"}
    assert len(d["locations"]["v"]) == 3


def test_adaptive_test_permutation_threshold():
    sample = sample_sin(400, 1.0, seed=3)
    out = adaptive_test(sample, 2, 0.05, TuningConfig(max_iters=5, threshold="permutation",
                                                        num_perms=50))
    assert out.method == "permutation"
    assert 1 / 51 <= out.p_value <= 1
