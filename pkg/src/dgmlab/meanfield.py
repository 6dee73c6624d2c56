"""Mean-field limit: Picard iteration over laws, coupled representatives, weak-form check.

The law family mu_{u,t} is represented by ``M`` sample paths at each point of a
label grid.  Fibre atoms of a DGM are mapped to the nearest label-grid law.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, InitialLaw, initial_states, interaction_sum
from .graph_limits import DigraphMeasure, ValidationError, bl_distance
from .metrics import wasserstein2_1d
from .particle_sim import (BrownianStore, EmpiricalMeasure, PathEnsemble, SimulationError, TimeGrid,
                           euler_step)
from .streams import BM_MEANFIELD, INIT_INDEPENDENT, INIT_MEANFIELD, INIT_PARTICLE, keyed_normals


def uniform_u_grid(points: int) -> np.ndarray:
    """Cell midpoints of a uniform partition of I."""
    if points < 1:
        raise ValidationError("need at least one label")
    return (np.arange(points) + 0.5) / points


@dataclass(frozen=True, eq=False)
class MeanFieldSolution:
    u_grid: np.ndarray
    states: np.ndarray  # [labels, M, steps + 1, d]
    increments: np.ndarray  # [labels, M, steps, d]
    grid: TimeGrid
    iteration_log: tuple  # (iterate, distance, wallclock_seconds)
    converged: bool
    tol: float
    law0: InitialLaw
    seed: int

    @property
    def M(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[3]

    def ensemble(self, i: int) -> PathEnsemble:
        store = BrownianStore(self.increments[i], self.seed, self.grid.dt, BM_MEANFIELD, i)
        return PathEnsemble(self.states[i], self.grid, store, np.full(self.M, self.u_grid[i]))

    def law(self, i: int, step: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.uniform(self.states[i, :, step])

    def law_at(self, u: float, step: int) -> EmpiricalMeasure:
        i = int(np.argmin(np.abs(self.u_grid - u)))
        return self.law(i, step)

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iterate,distance,wallclock_seconds\n")
            for it, dist, wall in self.iteration_log:
                fh.write(f"{it},{dist:.17g},{wall:.17g}\n")


def _law_step(cs, x, y, W, W_hat):
    """Drift and noise amplitude for states ``x`` [U, A, d] against frozen laws ``y``."""
    drift = cs.f(x) + interaction_sum(cs.g, W, x, y)
    amp = interaction_sum(cs.h, W_hat, x, y)
    return drift, amp


def _check_finite(x, step, what):
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite {what} state at step {step}")


def picard_solve(eta: DigraphMeasure, eta_hat: DigraphMeasure, cs: CoefficientSet, law: InitialLaw,
                 u_grid, M: int, grid: TimeGrid, tol: float, max_iter: int, seed: int) -> MeanFieldSolution:
    """Fixed point of the law recursion with the previous iterate frozen inside g and h.

    Iterate 0 is the initial sample held constant in time.  All iterates share
    the same initial draws and Brownian increments, keyed by ``(seed, u, m)``.
    """
    if M < 2:
        raise ValidationError("need M >= 2 samples per label")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    u_grid = np.asarray(u_grid, dtype=float)
    K, d, steps, dt = u_grid.size, cs.d, grid.steps, grid.dt
    W = eta.weight_matrix(u_grid)
    W_hat = eta_hat.weight_matrix(u_grid)

    x0 = np.stack([initial_states(law, np.full(M, u), seed, INIT_MEANFIELD, group=i)
                   for i, u in enumerate(u_grid)])
    dB = np.stack([np.sqrt(dt) * keyed_normals(seed, BM_MEANFIELD, i, np.arange(M), (steps, d))
                   for i in range(K)])

    prev = np.repeat(x0[:, :, None, :], steps + 1, axis=2)
    log, converged = [], False
    start = time.perf_counter()
    for it in range(1, max_iter + 1):
        cur = np.empty_like(prev)
        cur[:, :, 0] = x0
        x = x0.copy()
        for k in range(steps):
            drift, amp = _law_step(cs, x, prev[:, :, k], W, W_hat)
            x = euler_step(x, drift, amp, dt, dB[:, :, k])
            _check_finite(x, k + 1, f"iterate-{it}")
            cur[:, :, k + 1] = x
        gap = np.max(np.sum((cur - prev) ** 2, axis=3), axis=2)  # [K, M]
        dist = float(np.max(np.sqrt(np.mean(gap, axis=1))))
        log.append((it, dist, time.perf_counter() - start))
        prev = cur
        if dist < tol:
            converged = True
            break
    prev.setflags(write=False)
    dB.setflags(write=False)
    return MeanFieldSolution(u_grid, prev, dB, grid, tuple(log), converged, float(tol), law, int(seed))


def representative_initial(law: InitialLaw, n: int, seed: int, shared: bool = True) -> np.ndarray:
    """Initial states of the representatives at labels ``i/n``.

    ``shared=True`` reproduces the particle draws exactly (same keyed streams).
    """
    labels = np.arange(1, n + 1) / n
    return initial_states(law, labels, seed, INIT_PARTICLE if shared else INIT_INDEPENDENT)


def simulate_representatives(eta: DigraphMeasure, eta_hat: DigraphMeasure, cs: CoefficientSet,
                             sol: MeanFieldSolution, brownian: BrownianStore, n: int,
                             initial=None) -> PathEnsemble:
    """Mean-field processes at labels ``i/n`` driven by the particle increments.

    Without ``initial`` the particle initial draws are reused, so the pair
    (particle i, representative i/n) is synchronously coupled in both the
    initial condition and the noise.
    """
    grid = sol.grid
    if not brownian.matches(grid) or brownian.n_paths < n:
        raise ValidationError("Brownian store does not match the mean-field grid or count")
    labels = np.arange(1, n + 1) / n
    if initial is None:
        initial = representative_initial(sol.law0, n, brownian.seed)
    x0 = np.asarray(initial, dtype=float).reshape(n, sol.d)
    W = eta.weight_matrix(labels, sol.u_grid)
    W_hat = eta_hat.weight_matrix(labels, sol.u_grid)

    states = np.empty((n, grid.steps + 1, sol.d))
    states[:, 0] = x0
    x = x0[:, None, :]
    for k in range(grid.steps):
        drift, amp = _law_step(cs, x, sol.states[:, :, k], W, W_hat)
        x = euler_step(x, drift, amp, grid.dt, brownian.increments[:n, k][:, None, :])
        _check_finite(x, k + 1, "representative")
        states[:, k + 1] = x[:, 0]
    return PathEnsemble(states, grid, brownian, labels)


@dataclass(frozen=True)
class CouplingReport:
    per_particle_sup_sq: np.ndarray
    mean: float
    bound: float | None = None


def coupling_error(particles: PathEnsemble, reps: PathEnsemble, bound: float | None = None) -> CouplingReport:
    """Per path ``sup_k |X_i(k) - X_{i/N}(k)|^2`` and their mean."""
    if particles.states.shape != reps.states.shape or particles.grid != reps.grid:
        raise ValidationError("ensembles must have equal shapes and grids")
    gap = np.sum((particles.states - reps.states) ** 2, axis=2)
    sup_sq = gap.max(axis=1)
    return CouplingReport(sup_sq, float(np.mean(sup_sq)), bound)


def barmu(sol: MeanFieldSolution, step: int) -> EmpiricalMeasure:
    """Label-averaged law: every sample of every label with equal weight."""
    return EmpiricalMeasure.uniform(sol.states[:, :, step].reshape(-1, sol.d))


# --------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    phi: Callable
    dphi: Callable
    d2phi: Callable
    name: str = "phi"


def monomial(power: int) -> TestFunction:
    """``x**power`` with its derivatives (one-dimensional)."""
    k = int(power)
    return TestFunction(
        lambda x: x ** k,
        lambda x: k * x ** (k - 1) if k >= 1 else np.zeros_like(x),
        lambda x: k * (k - 1) * x ** (k - 2) if k >= 2 else np.zeros_like(x),
        name=f"x^{k}",
    )


def bump(center: float = 0.0, width: float = 1.0) -> TestFunction:
    """Smooth compactly supported bump exp(-1/(1 - r^2)) on |x - center| < width."""
    def parts(x):
        r = (np.asarray(x, dtype=float) - center) / width
        inside = np.abs(r) < 1
        s = np.where(inside, 1 - r * r, 1.0)
        e = np.where(inside, np.exp(-1 / s), 0.0)
        return r, s, e, inside

    def phi(x):
        return parts(x)[2]

    def dphi(x):
        r, s, e, inside = parts(x)
        return np.where(inside, e * (-2 * r / s ** 2) / width, 0.0)

    def d2phi(x):
        r, s, e, inside = parts(x)
        return np.where(inside, e * (6 * r ** 4 - 2) / s ** 4 / width ** 2, 0.0)

    return TestFunction(phi, dphi, d2phi, name="bump")


@dataclass(frozen=True)
class WeakFormReport:
    residual: float
    stderr: float  # standard error of the plain estimator
    stderr_controlled: float
    plain_residual: float


def weak_form_report(sol: MeanFieldSolution, eta: DigraphMeasure, eta_hat: DigraphMeasure,
                     cs: CoefficientSet, testfn: TestFunction, u: float, window,
                     control_variate: bool = True) -> WeakFormReport:
    """Gap in the weak Fokker–Planck identity for the law at label ``u``.

    The time integral is a trapezoid rule on grid nodes; the law integrals are
    Monte Carlo averages over the stored ensembles.  With ``control_variate``
    the discrete Ito integral of ``phi'(X) H dB`` (mean zero) is subtracted
    path by path, which removes the leading sampling noise.
    """
    if sol.d != 1:
        raise ValidationError("weak-form check supports d = 1")
    grid = sol.grid
    k1, k2 = grid.index_of(window[0]), grid.index_of(window[1])
    if k1 >= k2:
        raise ValidationError("window must satisfy t1 < t2")
    i = int(np.argmin(np.abs(sol.u_grid - u)))
    W = eta.weight_matrix(sol.u_grid[i:i + 1], sol.u_grid)
    W_hat = eta_hat.weight_matrix(sol.u_grid[i:i + 1], sol.u_grid)

    X = sol.states[i, :, :, 0]  # [M, steps + 1]
    gen = np.empty((sol.M, k2 - k1 + 1))
    amp = np.empty_like(gen)
    for col, k in enumerate(range(k1, k2 + 1)):
        x = sol.states[i:i + 1, :, k]
        drift, h = _law_step(cs, x, sol.states[:, :, k], W, W_hat)
        xk = X[:, k]
        gen[:, col] = testfn.dphi(xk) * drift[0, :, 0] + 0.5 * h[0] ** 2 * testfn.d2phi(xk)
        amp[:, col] = h[0]
    integral = grid.dt * (gen[:, 0] / 2 + gen[:, 1:-1].sum(axis=1) + gen[:, -1] / 2)
    plain = testfn.phi(X[:, k2]) - testfn.phi(X[:, k1]) - integral
    ito = np.sum(testfn.dphi(X[:, k1:k2]) * amp[:, :-1] * sol.increments[i, :, k1:k2, 0], axis=1)
    controlled = plain - ito
    m = sol.M
    est = controlled if control_variate else plain
    return WeakFormReport(
        residual=float(abs(np.mean(est))),
        stderr=float(np.std(plain, ddof=1) / np.sqrt(m)),
        stderr_controlled=float(np.std(controlled, ddof=1) / np.sqrt(m)),
        plain_residual=float(abs(np.mean(plain))),
    )


def weak_form_residual(sol, eta, eta_hat, cs, testfn, u, window, control_variate: bool = True) -> float:
    return weak_form_report(sol, eta, eta_hat, cs, testfn, u, window, control_variate).residual


# --------------------------------------------------------------------------
# label continuity


@dataclass(frozen=True)
class LawContinuity:
    w2: np.ndarray  # W2 between adjacent label laws
    du: np.ndarray
    fiber_bl: np.ndarray  # max of drift / noise fibre BL gaps between adjacent labels

    def constant(self) -> float:
        """Smallest C with w2 <= C (du + fiber_bl) on every adjacent pair."""
        return float(np.max(self.w2 / (self.du + self.fiber_bl)))


def law_continuity_profile(sol: MeanFieldSolution, eta: DigraphMeasure, eta_hat: DigraphMeasure,
                           step: int) -> LawContinuity:
    laws = [sol.law(i, step) for i in range(sol.u_grid.size)]
    w2 = np.array([wasserstein2_1d(a, b) for a, b in zip(laws[:-1], laws[1:])])
    du = np.diff(sol.u_grid)
    gaps = []
    for a, b in zip(sol.u_grid[:-1], sol.u_grid[1:]):
        gaps.append(max(bl_distance(eta.fiber(a), eta.fiber(b)), bl_distance(eta_hat.fiber(a), eta_hat.fiber(b))))
    return LawContinuity(w2, du, np.array(gaps))
