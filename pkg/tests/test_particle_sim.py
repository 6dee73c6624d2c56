import math

import numpy as np
import pytest

from dgmlab.coefficients import CoefficientSet, InitialLaw, builtin_coefficients
from dgmlab.graph_limits import AdjacencyPair, GraphSpec, ValidationError, generate_graph
from dgmlab.particle_sim import (BrownianStore, EmpiricalMeasure, SimulationError, TimeGrid, empirical_measure,
                                 read_trajectories, second_moment, simulate_particles, write_trajectories)

COMPLETE = GraphSpec("complete")


def test_time_grid():
    g = TimeGrid(1.0, 4)
    assert g.dt == 0.25
    np.testing.assert_allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.index_of(0.5) == 2
    with pytest.raises(ValidationError):
        g.index_of(0.3)
    for bad in ((0.0, 4), (1.0, 0), (1.0, 2.5)):
        with pytest.raises(ValidationError):
            TimeGrid(*bad)


def test_zero_dynamics_paths_are_constant():
    pair = generate_graph(COMPLETE, 5, 0)
    ens = simulate_particles(pair, builtin_coefficients(), InitialLaw("gaussian", {"s2": 1.0}), TimeGrid(1, 20), 3)
    assert np.all(ens.states == ens.states[:, :1])


def test_linear_drift_matches_euler_closed_form():
    grid = TimeGrid(1.0, 1000)
    cs = builtin_coefficients({"family": "linear", "rate": 1.0})
    ens = simulate_particles(generate_graph(COMPLETE, 3, 0), cs, InitialLaw("point", {"x0": 1.0}), grid, 0)
    exact = (1 - grid.dt) ** np.arange(grid.steps + 1)
    np.testing.assert_allclose(ens.states[0, :, 0], exact, rtol=1e-12)
    assert ens.states[0, -1, 0] == pytest.approx(math.exp(-1), abs=1e-3)


def test_antisymmetric_interaction_conserves_mean():
    cs = builtin_coefficients(interaction={"family": "linear", "rate": 1.0})
    law = InitialLaw("gaussian", {"m": 0.3, "s2": 2.0})
    ens = simulate_particles(generate_graph(COMPLETE, 50, 0), cs, law, TimeGrid(1, 200), 4)
    means = ens.states[:, :, 0].mean(axis=0)
    assert np.max(np.abs(means - means[0])) <= 1e-10


def test_stream_of_a_path_does_not_depend_on_batch():
    grid = TimeGrid(1.0, 30)
    big = BrownianStore.generate(9, 40, grid, d=2)
    small = BrownianStore.generate(9, 5, grid, d=2)
    single = BrownianStore.generate(9, 1, grid, d=2, indices=[17])
    assert np.array_equal(big.increments[:5], small.increments)
    assert np.array_equal(big.increments[17], single.increments[0])


def test_brownian_increment_statistics():
    grid = TimeGrid(1.0, 200)
    inc = BrownianStore.generate(2, 600, grid).increments.ravel()
    assert inc.size >= 100_000
    sd = math.sqrt(grid.dt)
    assert abs(inc.mean()) < 4 * sd / math.sqrt(inc.size)
    assert inc.var() == pytest.approx(grid.dt, rel=0.05)


def test_determinism_bit_exact():
    pair = generate_graph(GraphSpec("erdos_renyi", {"p": 0.4}), 20, 5)
    cs = builtin_coefficients({"family": "tanh"}, {"family": "sine", "rate": 0.5},
                              {"family": "saturating", "sigma": 0.4})
    law = InitialLaw("gaussian_u", {"alpha": 1.0, "s2": 0.5})
    a = simulate_particles(pair, cs, law, TimeGrid(1, 50), 8)
    b = simulate_particles(pair, cs, law, TimeGrid(1, 50), 8)
    assert a.states.tobytes() == b.states.tobytes()


def test_exchangeability_under_complete_graph():
    n, grid = 12, TimeGrid(1.0, 40)
    cs = builtin_coefficients({"family": "tanh"}, {"family": "sine", "rate": 0.8},
                              {"family": "saturating", "sigma": 0.5, "beta": 0.5})
    law = InitialLaw("gaussian", {"s2": 1.0})
    pair = generate_graph(COMPLETE, n, 0)
    store = BrownianStore.generate(1, n, grid)
    base = simulate_particles(pair, cs, law, grid, 1, brownian=store)
    perm = np.random.default_rng(0).permutation(n)
    permuted_store = BrownianStore(store.increments[perm], store.seed, store.dt)
    other = simulate_particles(pair, cs, law, grid, 1, initial=base.states[perm, 0], brownian=permuted_store)
    # summation order changes with the permutation, so equality is up to rounding
    np.testing.assert_allclose(other.states, base.states[perm], rtol=0, atol=1e-12)


def test_nonfinite_state_aborts():
    cs = CoefficientSet(lambda x: x * x, lambda x, y: np.zeros(np.broadcast_shapes(x.shape, y.shape)),
                        lambda x, y: np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1]))
    with pytest.raises(SimulationError, match="step .* particle"):
        with np.errstate(over="ignore", invalid="ignore"):
            simulate_particles(generate_graph(COMPLETE, 2, 0), cs, InitialLaw("point", {"x0": 10.0}),
                               TimeGrid(10, 10), 0)


def test_empirical_measure_and_moments():
    grid = TimeGrid(1, 5)
    cs = builtin_coefficients()
    one = simulate_particles(generate_graph(COMPLETE, 1, 0), cs, InitialLaw("point", {"x0": 2.0}), grid, 0)
    mu = empirical_measure(one, 3)
    assert mu.weights.tolist() == [1.0]

    four = simulate_particles(generate_graph(COMPLETE, 4, 0), cs, InitialLaw("point", {"x0": 0.0}), grid, 0)
    merged = empirical_measure(four, 5).merged()
    assert merged.points.tolist() == [[0.0]] and merged.weights.tolist() == [1.0]
    assert second_moment(four, 5) == 0.0

    law = InitialLaw("gaussian", {"s2": 1.0}, d=2)
    ens = simulate_particles(generate_graph(COMPLETE, 4000, 0), builtin_coefficients(d=2), law, grid, 0)
    x = ens.states[:, 0]
    mu = empirical_measure(ens, 0)
    assert mu.expect(lambda p: p[:, 0]) == pytest.approx(x[:, 0].mean(), abs=1e-12)
    m2 = second_moment(ens, 0)
    sq = np.sum(x * x, axis=1)
    assert abs(m2 - 2) < 4 * sq.std() / math.sqrt(x.shape[0])


def test_second_moment_scales_quadratically():
    ens = simulate_particles(generate_graph(COMPLETE, 10, 0), builtin_coefficients(),
                             InitialLaw("gaussian", {"s2": 1.0}), TimeGrid(1, 2), 0)
    from dgmlab.particle_sim import PathEnsemble

    doubled = PathEnsemble(2 * ens.states, ens.grid)
    assert second_moment(doubled, 1) == pytest.approx(4 * second_moment(ens, 1), rel=1e-14)


def test_empirical_measure_normalises():
    mu = EmpiricalMeasure(np.array([[0.0], [1.0], [2.0]]), np.array([1.0, 1.0, 2.0]))
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        EmpiricalMeasure(np.zeros((2, 1)), np.array([1.0, -1.0]))


def test_store_mismatch_rejected():
    grid = TimeGrid(1, 10)
    store = BrownianStore.generate(0, 3, TimeGrid(1, 20))
    with pytest.raises(ValidationError):
        simulate_particles(generate_graph(COMPLETE, 3, 0), builtin_coefficients(), InitialLaw("point"), grid, 0,
                           brownian=store)


def test_diagonal_of_noise_graph_included():
    # a single particle with a self loop feels its own noise weight
    pair = AdjacencyPair(np.zeros((1, 1)), np.array([[3.0]]))
    cs = builtin_coefficients(noise={"family": "constant", "sigma": 1.0})
    grid = TimeGrid(1, 10)
    ens = simulate_particles(pair, cs, InitialLaw("point"), grid, 0)
    np.testing.assert_allclose(np.diff(ens.states[0, :, 0]), 3.0 * ens.brownian.increments[0, :, 0], atol=1e-15)


def test_trajectory_dump_roundtrip(tmp_path):
    ens = simulate_particles(generate_graph(COMPLETE, 3, 0), builtin_coefficients(noise={"family": "constant"}, d=2),
                             InitialLaw("gaussian", {"s2": 1.0}, d=2), TimeGrid(0.5, 4), 6)
    path = tmp_path / "traj.tsv"
    write_trajectories(ens, path)
    head = path.read_text().splitlines()[0]
    assert "N=3" in head and "d=2" in head and "steps=4" in head and "seed=6" in head
    back = read_trajectories(path)
    assert np.array_equal(back.states, ens.states)
    assert back.grid.steps == 4
