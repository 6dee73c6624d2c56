import math

import numpy as np
import pytest

from dgmlab.coefficients import InitialLaw, builtin_coefficients
from dgmlab.graph_limits import GraphSpec, ValidationError, dgm_limit, generate_graph
from dgmlab.meanfield import (MeanFieldSolution, barmu, bump, coupling_error, law_continuity_profile, monomial,
                              picard_solve, representative_initial, simulate_representatives, uniform_u_grid,
                              weak_form_report, weak_form_residual)
from dgmlab.metrics import bl_distance_rd, wasserstein2_1d
from dgmlab.particle_sim import BrownianStore, EmpiricalMeasure, PathEnsemble, TimeGrid, simulate_particles

COMPLETE = GraphSpec("complete")
ETA = dgm_limit(COMPLETE, 64)
LINEAR = builtin_coefficients({"family": "linear", "rate": 1.0}, {"family": "linear", "rate": 1.0},
                              {"family": "constant", "sigma": 0.5})
OU = builtin_coefficients({"family": "linear", "rate": 1.0}, None, {"family": "constant", "sigma": 0.5})
GAUSS = InitialLaw("gaussian", {"m": 1.0, "s2": 0.5})


def solve(cs, grid, M=300, K=4, law=GAUSS, eta=ETA, eta_hat=None, tol=1e-8, max_iter=20, seed=0):
    return picard_solve(eta, eta if eta_hat is None else eta_hat, cs, law, uniform_u_grid(K), M, grid, tol,
                        max_iter, seed)


def test_law_independent_dynamics_fixed_after_one_iterate():
    cs = builtin_coefficients({"family": "tanh", "rate": 1.0}, None, {"family": "constant", "sigma": 0.3})
    sol = solve(cs, TimeGrid(1, 50))
    assert sol.iteration_log[1][1] == 0.0
    assert sol.converged and len(sol.iteration_log) == 2


def test_ode_flow_when_no_noise_or_interaction():
    grid = TimeGrid(1, 100)
    sol = solve(builtin_coefficients({"family": "linear", "rate": 1.0}), grid)
    x0 = sol.states[:, :, 0, 0]
    np.testing.assert_allclose(sol.states[:, :, -1, 0], x0 * (1 - grid.dt) ** grid.steps, rtol=1e-12)


def test_scaled_noise_variance():
    sigma, scale, T = 0.5, 2.0, 1.0
    cs = builtin_coefficients(noise={"family": "constant", "sigma": sigma})
    law = InitialLaw("gaussian", {"m": 0.0, "s2": 0.3})
    sol = solve(cs, TimeGrid(T, 50), M=4000, K=2, law=law, eta_hat=ETA.scaled(scale))
    expected = 0.3 + sigma ** 2 * scale ** 2 * T
    for i in range(2):
        x = sol.states[i, :, -1, 0]
        # standard error of a Gaussian sample variance is var * sqrt(2 / M)
        assert abs(x.var(ddof=1) - expected) < 4 * expected * math.sqrt(2 / x.size)


def test_picard_contraction_ratio():
    sol = solve(LINEAR, TimeGrid(0.5, 50), M=500, tol=1e-3, max_iter=15)
    d = [dist for _, dist, _ in sol.iteration_log]
    assert sol.converged
    assert all(b / a < 1 for a, b in zip(d[1:], d[2:]))


def test_max_iter_without_convergence():
    sol = solve(LINEAR, TimeGrid(1.0, 20), tol=1e-12, max_iter=3)
    assert not sol.converged and len(sol.iteration_log) == 3
    assert all(dist >= 0 for _, dist, _ in sol.iteration_log)


def test_picard_input_validation():
    with pytest.raises(ValidationError):
        solve(LINEAR, TimeGrid(1, 5), M=1)
    with pytest.raises(ValidationError):
        solve(LINEAR, TimeGrid(1, 5), tol=0.0)


def test_iteration_log_csv(tmp_path):
    sol = solve(LINEAR, TimeGrid(0.5, 10), tol=1e-3)
    sol.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iterate,distance,wallclock_seconds"
    assert len(lines) == len(sol.iteration_log) + 1


# --- representatives and coupling


def _particles(cs, n, grid, seed, law=GAUSS):
    store = BrownianStore.generate(seed, n, grid)
    return simulate_particles(generate_graph(COMPLETE, n, 0), cs, law, grid, seed, brownian=store), store


def test_representatives_zero_dynamics():
    grid = TimeGrid(1, 10)
    cs = builtin_coefficients()
    sol = solve(cs, grid)
    ens, store = _particles(cs, 8, grid, 3)
    reps = simulate_representatives(ETA, ETA, cs, sol, store, 8)
    assert np.array_equal(reps.states, np.repeat(reps.states[:, :1], grid.steps + 1, axis=1))
    np.testing.assert_array_equal(reps.states[:, 0], ens.states[:, 0])
    np.testing.assert_allclose(reps.labels, np.arange(1, 9) / 8)


def test_shared_draws_give_zero_coupling_without_interaction():
    grid = TimeGrid(1, 30)
    cs = builtin_coefficients({"family": "tanh"})
    sol = solve(cs, grid)
    ens, store = _particles(cs, 16, grid, 5)
    rep = coupling_error(ens, simulate_representatives(ETA, ETA, cs, sol, store, 16))
    assert rep.mean == 0.0


def test_noise_only_increments_equal_particle_increments():
    grid = TimeGrid(1, 30)
    sol = solve(OU, grid)
    cs = builtin_coefficients(noise={"family": "constant", "sigma": 0.5})
    ens, store = _particles(cs, 10, grid, 2)
    reps = simulate_representatives(ETA, ETA, cs, sol, store, 10)
    np.testing.assert_allclose(np.diff(reps.states, axis=1), 0.5 * store.increments[:10], rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.diff(reps.states, axis=1), np.diff(ens.states, axis=1), rtol=0, atol=1e-15)


def test_representative_grid_mismatch():
    sol = solve(OU, TimeGrid(1, 10))
    with pytest.raises(ValidationError):
        simulate_representatives(ETA, ETA, OU, sol, BrownianStore.generate(0, 5, TimeGrid(1, 20)), 5)


def test_coupling_error_examples():
    grid = TimeGrid(1, 5)
    x = np.random.default_rng(0).normal(size=(6, 6, 1))
    a = PathEnsemble(x, grid)
    assert coupling_error(a, a).mean == 0.0
    assert coupling_error(a, PathEnsemble(x + 0.3, grid)).mean == pytest.approx(0.09)
    with pytest.raises(ValidationError):
        coupling_error(a, PathEnsemble(x[:3], grid))


def test_independent_initial_draws_differ():
    shared = representative_initial(GAUSS, 10, 1)
    indep = representative_initial(GAUSS, 10, 1, shared=False)
    assert not np.array_equal(shared, indep)


# --- pooled law


def _manual_solution(states, u_grid):
    states = np.asarray(states, dtype=float)
    K, M, S, d = states.shape
    return MeanFieldSolution(np.asarray(u_grid, float), states, np.zeros((K, M, S - 1, d)), TimeGrid(1, S - 1),
                             (), True, 1e-3, InitialLaw("point"), 0)


def test_barmu_examples():
    sol = _manual_solution(np.array([[[[0.0], [0.0]]], [[[1.0], [1.0]]]]), [0.25, 0.75])
    mu = barmu(sol, 1).merged()
    assert mu.points.ravel().tolist() == [0.0, 1.0]
    assert mu.weights.tolist() == [0.5, 0.5]

    single = solve(OU, TimeGrid(1, 10), K=1)
    a, b = barmu(single, 10), single.law(0, 10)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)


def test_barmu_is_mixture_of_label_laws():
    sol = solve(OU, TimeGrid(1, 10), K=3, M=50)
    pooled = barmu(sol, 10)
    mixture = np.concatenate([sol.law(i, 10).points for i in range(3)])
    assert np.array_equal(pooled.points, mixture)
    np.testing.assert_allclose(pooled.weights, 1 / 150, rtol=1e-14)


def test_bl_below_w2_for_pooled_laws():
    grid = TimeGrid(1, 20)
    sol = solve(LINEAR, grid, M=15, K=4)
    for seed in range(10):
        ens, _ = _particles(LINEAR, 40, grid, seed)
        for k in (5, 20):
            a, b = EmpiricalMeasure.uniform(ens.states[:, k]), barmu(sol, k)
            assert bl_distance_rd(a, b) <= wasserstein2_1d(a, b) + 1e-12


# --- weak form


def test_weak_form_zero_dynamics():
    sol = solve(builtin_coefficients(), TimeGrid(1, 20))
    for tf in (monomial(1), monomial(2), bump(1.0, 2.0)):
        assert weak_form_residual(sol, ETA, ETA, builtin_coefficients(), tf, 0.5, (0.0, 1.0)) == 0.0


def test_weak_form_drift_only_is_first_order_in_dt():
    cs = builtin_coefficients({"family": "linear", "rate": 1.0})
    res = []
    for steps in (25, 50, 100, 200):
        sol = solve(cs, TimeGrid(1, steps), M=200, K=1)
        res.append(weak_form_residual(sol, ETA, ETA, cs, monomial(1), 0.5, (0.0, 1.0)))
    ratios = [a / b for a, b in zip(res, res[1:])]
    assert all(1.8 < r < 2.2 for r in ratios)


def test_weak_form_plain_residual_shrinks_with_M():
    # RMS over seeds of the uncontrolled residual should halve when M quadruples
    rms = []
    for M in (250, 1000, 4000):
        vals = [weak_form_report(solve(OU, TimeGrid(1, 50), M=M, K=1, seed=s), ETA, ETA, OU, monomial(2), 0.5,
                                 (0.0, 1.0), control_variate=False).residual for s in range(12)]
        rms.append(math.sqrt(np.mean(np.square(vals))))
    assert rms[0] > rms[1] > rms[2]


def test_weak_form_window_validation():
    sol = solve(OU, TimeGrid(1, 10))
    with pytest.raises(ValidationError):
        weak_form_residual(sol, ETA, ETA, OU, monomial(1), 0.5, (0.5, 0.5))


def test_bump_derivatives_match_finite_differences():
    tf = bump(0.2, 1.5)
    x = np.linspace(-1.2, 1.6, 41)
    h = 1e-5
    np.testing.assert_allclose(tf.dphi(x), (tf.phi(x + h) - tf.phi(x - h)) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(tf.d2phi(x), (tf.dphi(x + h) - tf.dphi(x - h)) / (2 * h), atol=1e-6)


# --- label continuity


def test_label_continuity_constant_is_stable_under_refinement():
    spec = GraphSpec("graphon_weighted", {"kernel": "product"})
    eta = dgm_limit(spec, 256)
    law = InitialLaw("gaussian_u", {"m0": 0.0, "alpha": 1.0, "s2": 0.25})
    cs = builtin_coefficients({"family": "tanh"}, {"family": "sine", "rate": 1.0}, {"family": "constant", "sigma": 0.5})
    grid = TimeGrid(1, 40)
    consts = []
    for K in (4, 8, 16):
        sol = picard_solve(eta, eta, cs, law, uniform_u_grid(K), 2000, grid, 1e-3, 20, 0)
        consts.append(law_continuity_profile(sol, eta, eta, grid.steps).constant())
    assert all(c < 2.0 * consts[0] for c in consts[1:])
