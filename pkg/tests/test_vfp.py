import math

import numpy as np
import pytest

from dgmlab.coefficients import InitialLaw, builtin_coefficients
from dgmlab.graph_limits import GraphSpec, ValidationError, dgm_limit
from dgmlab.meanfield import monomial, picard_solve, uniform_u_grid
from dgmlab.particle_sim import TimeGrid
from dgmlab.vfp import (SchemeError, SpatialGrid, compare_to_mc, density_from_law, mass, moment, solve_vfp,
                        write_density_csv)

ETA = dgm_limit(GraphSpec("complete"), 64)
U1 = np.array([0.5])


def _solve(cs, law, xg, tg, u_grid=U1, eta=ETA, eta_hat=ETA, **kw):
    return solve_vfp(eta, eta_hat, cs, density_from_law(law, xg, u_grid), xg, u_grid, tg, **kw)


def test_zero_dynamics_keeps_density():
    xg = SpatialGrid(-3, 3, 60)
    fld = _solve(builtin_coefficients(), InitialLaw("gaussian", {"m": 0.2, "s2": 0.4}), xg, TimeGrid(1, 5))
    np.testing.assert_array_equal(fld.rho[:, -1], fld.rho[:, 0])


def test_heat_kernel_variance():
    sigma, s2, T = 0.5, 0.2, 1.0
    xg = SpatialGrid(-5, 5, 400)
    cs = builtin_coefficients(noise={"family": "constant", "sigma": sigma})
    fld = _solve(cs, InitialLaw("gaussian", {"m": 0.0, "s2": s2}), xg, TimeGrid(T, 4))
    var = moment(fld, 0, -1, 2) - moment(fld, 0, -1, 1) ** 2
    assert abs(var - (s2 + sigma ** 2 * T)) < 0.02 * (s2 + sigma ** 2 * T)


def test_ou_relaxes_to_stationary_variance():
    sigma = 0.5
    xg = SpatialGrid(-2, 2, 800)
    cs = builtin_coefficients({"family": "linear", "rate": 1.0}, None, {"family": "constant", "sigma": sigma})
    fld = _solve(cs, InitialLaw("gaussian", {"m": 1.0, "s2": 0.5}), xg, TimeGrid(4, 4))
    var = moment(fld, 0, -1, 2) - moment(fld, 0, -1, 1) ** 2
    assert abs(var - sigma ** 2 / 2) < 0.02 * sigma ** 2 / 2
    assert abs(moment(fld, 0, -1, 1) - math.exp(-4)) < xg.dx / 2  # first-order upwind


@pytest.mark.parametrize("noise", [{"family": "constant", "sigma": 0.7},
                                   {"family": "saturating", "sigma": 0.4, "beta": 0.5}])
def test_mass_is_conserved(noise):
    xg = SpatialGrid(-4, 4, 160)
    cs = builtin_coefficients({"family": "tanh", "rate": 1.0}, {"family": "linear", "rate": 0.5}, noise)
    u = uniform_u_grid(3)
    fld = _solve(cs, InitialLaw("gaussian_u", {"m0": 0.0, "alpha": 1.0, "s2": 0.3}), xg, TimeGrid(1, 10), u_grid=u)
    for i in range(3):
        for k in range(11):
            assert abs(mass(fld, i, k) - 1.0) <= 1e-10


def test_symmetric_problem_keeps_zero_mean():
    xg = SpatialGrid(-3, 3, 120)
    cs = builtin_coefficients({"family": "tanh"}, {"family": "sine"}, {"family": "constant", "sigma": 0.5})
    fld = _solve(cs, InitialLaw("gaussian", {"m": 0.0, "s2": 0.5}), xg, TimeGrid(1, 5))
    for k in range(6):
        assert abs(moment(fld, 0, k, 1)) < 1e-12


def test_point_initial_law_mean():
    xg = SpatialGrid(-2, 2, 80)
    cs = builtin_coefficients(noise={"family": "constant", "sigma": 0.3})
    fld = _solve(cs, InitialLaw("point", {"x0": 0.53}), xg, TimeGrid(0.5, 5))
    assert abs(moment(fld, 0, -1, 1) - 0.53) <= xg.dx


def test_upwind_advection_is_first_order():
    # constant drift transports the mean exactly; the error shows up in the variance (numerical diffusion)
    cs = builtin_coefficients({"family": "constant", "value": 1.0})
    law = InitialLaw("gaussian", {"m": -1.0, "s2": 0.1})
    errors = []
    for cells in (100, 200, 400):
        xg = SpatialGrid(-3, 3, cells)
        fld = _solve(cs, law, xg, TimeGrid(1, 1))
        var = moment(fld, 0, -1, 2) - moment(fld, 0, -1, 1) ** 2
        errors.append(abs(var - 0.1))
    rates = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert all(0.8 < r < 1.2 for r in rates)


def test_translation_equivariance():
    cs = builtin_coefficients(None, {"family": "linear", "rate": 1.0}, {"family": "constant", "sigma": 0.4})
    tg = TimeGrid(0.5, 5)
    a = _solve(cs, InitialLaw("gaussian", {"m": 0.0, "s2": 0.3}), SpatialGrid(-3, 3, 120), tg)
    b = _solve(cs, InitialLaw("gaussian", {"m": 1.0, "s2": 0.3}), SpatialGrid(-2, 4, 120), tg)
    np.testing.assert_allclose(a.rho, b.rho, atol=1e-12)


def test_substep_cap_names_the_limiting_term():
    cs = builtin_coefficients(noise={"family": "constant", "sigma": 2.0})
    with pytest.raises(SchemeError, match="diffusion"):
        _solve(cs, InitialLaw("gaussian", {"m": 0.0, "s2": 0.3}), SpatialGrid(-3, 3, 300), TimeGrid(1, 1),
               max_substeps=10)


def test_rejects_bad_inputs():
    xg = SpatialGrid(-1, 1, 10)
    with pytest.raises(ValidationError):
        SpatialGrid(1, 1, 10)
    with pytest.raises(ValidationError):
        solve_vfp(ETA, ETA, builtin_coefficients(), -np.ones((1, 10)), xg, U1, TimeGrid(1, 1))
    with pytest.raises(ValidationError):
        solve_vfp(ETA, ETA, builtin_coefficients(d=2), np.ones((1, 10)), xg, U1, TimeGrid(1, 1))


def test_density_from_law_has_unit_mass():
    xg = SpatialGrid(-2, 3, 50)
    for law in (InitialLaw("uniform", {"a": -0.5, "b": 1.2}), InitialLaw("gaussian", {"m": 0.3, "s2": 0.2}),
                InitialLaw("point", {"x0": 1.0})):
        rho = density_from_law(law, xg, [0.1, 0.9])
        np.testing.assert_allclose(rho.sum(axis=1) * xg.dx, 1.0, rtol=1e-14)


def test_compare_to_mc_within_standard_errors():
    # no interaction, so the Monte Carlo samples are independent and the standard errors honest
    cs = builtin_coefficients({"family": "linear", "rate": 1.0}, None, {"family": "constant", "sigma": 0.5})
    law = InitialLaw("gaussian", {"m": 1.0, "s2": 0.5})
    tg, u = TimeGrid(1, 50), uniform_u_grid(2)
    sol = picard_solve(ETA, ETA, cs, law, u, 2000, tg, 1e-3, 20, 0)
    fld = _solve(cs, law, SpatialGrid(-4, 5, 1800), tg, u_grid=u)
    cmp = compare_to_mc(fld, sol, [monomial(1), monomial(2)], checkpoints=[0, 25, 50])
    assert cmp.gaps.shape == (2, 2, 3)
    assert cmp.within(4.0)
    with pytest.raises(ValidationError):
        compare_to_mc(fld, picard_solve(ETA, ETA, cs, law, u, 50, TimeGrid(1, 10), 1e-3, 5, 0), [monomial(1)])


def test_density_csv(tmp_path):
    xg = SpatialGrid(0, 1, 4)
    fld = _solve(builtin_coefficients(), InitialLaw("uniform", {"a": 0.0, "b": 1.0}), xg, TimeGrid(1, 2))
    write_density_csv(fld, tmp_path / "d.csv", steps=[0, 2])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "u,t,x,rho" and len(lines) == 1 + 2 * 4
    assert float(lines[1].split(",")[3]) == pytest.approx(1.0)
