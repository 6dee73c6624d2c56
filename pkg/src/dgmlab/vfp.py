"""Finite-volume solver for the per-label Vlasov–Fokker–Planck system (d = 1).

For each label u the density solves

    d_t rho_u + d_x(a_u rho_u) = d_xx(D_u rho_u),
    a_u(x) = f(x) + sum_v W[u, v] int g(x, y) rho_v(y) dy,
    D_u(x) = 0.5 * (sum_v W_hat[u, v] int h(x, y) rho_v(y) dy)^2,

with upwind advective fluxes, the diffusion written as second differences of
``D rho`` and zero flux through both ends of the box.  Nonlocal integrals use
cell sums ``rho * dx`` and are refreshed every internal substep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .coefficients import CoefficientSet, InitialLaw, interaction_sum
from .graph_limits import DigraphMeasure, ValidationError
from .particle_sim import TimeGrid

CFL_SAFETY = 0.9
NEGATIVE_TOL = -1e-12
BOUNDARY_CELLS = 5


class SchemeError(RuntimeError):
    """The explicit scheme could not advance (step cap hit or negative density)."""


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float
    x_max: float
    cells: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValidationError("x_min must be below x_max")
        if self.cells < 4:
            raise ValidationError("need at least 4 cells")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.cells) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        """Interior faces only; the two boundary faces carry no flux."""
        return self.x_min + np.arange(1, self.cells) * self.dx


@dataclass(frozen=True, eq=False)
class DensityField:
    rho: np.ndarray  # [labels, checkpoints, cells]
    xg: SpatialGrid
    tg: TimeGrid
    u_grid: np.ndarray
    substeps: int = 0
    boundary_mass: np.ndarray | None = None  # mass within a few cells of either end, final time

    @property
    def times(self) -> np.ndarray:
        return self.tg.times


def mass(field: DensityField, u_index: int, checkpoint: int) -> float:
    return float(np.sum(field.rho[u_index, checkpoint]) * field.xg.dx)


def moment(field: DensityField, u_index: int, checkpoint: int, order: int) -> float:
    x = field.xg.centers
    return float(np.sum(x ** order * field.rho[u_index, checkpoint]) * field.xg.dx)


def density_from_law(law: InitialLaw, xg: SpatialGrid, u_grid) -> np.ndarray:
    """Cell-averaged initial densities, one row per label, each of unit mass.

    Gaussian laws are integrated exactly over cells and renormalised to the
    box; point laws put all mass in the containing cell.
    """
    if law.d != 1:
        raise ValidationError("densities are one-dimensional")
    edges = xg.x_min + np.arange(xg.cells + 1) * xg.dx
    rows = []
    for u in np.atleast_1d(u_grid):
        if law.family == "point":
            r = np.zeros(xg.cells)
            r[int(np.clip((law.mean(u)[0] - xg.x_min) // xg.dx, 0, xg.cells - 1))] = 1.0
        elif law.family == "uniform":
            a, b = law._vec("a", 0.0)[0], law._vec("b", 1.0)[0]
            r = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0, None)
            if b == a:
                r = np.zeros(xg.cells)
                r[int(np.clip((a - xg.x_min) // xg.dx, 0, xg.cells - 1))] = 1.0
        else:
            m, s = law.mean(u)[0], np.sqrt(law.variance()[0])
            if s == 0:
                r = np.zeros(xg.cells)
                r[int(np.clip((m - xg.x_min) // xg.dx, 0, xg.cells - 1))] = 1.0
            else:
                r = np.diff(ndtr((edges - m) / s))
        rows.append(r / (r.sum() * xg.dx))
    return np.array(rows)


def _nonlocal(kernel, W, at, centers, weights, cache):
    """``out[u, x] = sum_v W[u, v] sum_c weights[v, c] k(at[x], centers[c])``."""
    K = W.shape[0]
    if kernel.kind == "generic":
        if "mat" not in cache:
            vals = kernel(at[:, None, None], centers[None, :, None])
            cache["mat"] = np.asarray(vals, dtype=float).reshape(at.size, centers.size, -1)[..., 0]
        return (cache["mat"] @ (W @ weights).T).T
    x = np.broadcast_to(at[None, :, None], (K, at.size, 1))
    y = np.broadcast_to(centers[None, :, None], (weights.shape[0], centers.size, 1))
    out = interaction_sum(kernel, W, x, y, p=weights)
    return out[..., 0] if out.ndim == 3 else out


def solve_vfp(eta: DigraphMeasure, eta_hat: DigraphMeasure, cs: CoefficientSet, rho0, xg: SpatialGrid,
              u_grid, tg: TimeGrid, max_substeps: int = 2_000_000) -> DensityField:
    """Explicit conservative solve; densities are stored at every node of ``tg``."""
    if cs.d != 1:
        raise ValidationError("the PDE solver is one-dimensional")
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=float))
    rho = np.array(rho0, dtype=float).reshape(u_grid.size, xg.cells)
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ValidationError("initial densities must be finite and nonnegative")
    W = eta.weight_matrix(u_grid)
    W_hat = eta_hat.weight_matrix(u_grid)
    dx, centers, faces = xg.dx, xg.centers, xg.faces
    f_faces = np.asarray(cs.f(faces[:, None]), dtype=float)[:, 0]
    g_cache, h_cache = {}, {}

    out = np.empty((u_grid.size, tg.steps + 1, xg.cells))
    out[:, 0] = rho
    substeps = 0
    t = 0.0
    for k in range(1, tg.steps + 1):
        target = k * tg.dt
        while t < target - 1e-14 * max(1.0, tg.t_final):
            cell_mass = rho * dx
            a = f_faces[None, :] + _nonlocal(cs.g, W, faces, centers, cell_mass, g_cache)
            H = _nonlocal(cs.h, W_hat, centers, centers, cell_mass, h_cache)
            D = 0.5 * H * H
            amax, dmax = float(np.abs(a).max()), float(D.max())
            rate = 2 * amax / dx + 2 * dmax / dx ** 2
            dt = target - t if rate == 0 else min(CFL_SAFETY / rate, target - t)
            substeps += 1
            if substeps > max_substeps:
                limiting = "advection speed" if 2 * amax / dx >= 2 * dmax / dx ** 2 else "diffusion coefficient"
                raise SchemeError(f"substep cap {max_substeps} exceeded; limited by the {limiting} "
                                  f"(max|a|={amax:.3g}, max D={dmax:.3g})")
            flux = np.maximum(a, 0) * rho[:, :-1] + np.minimum(a, 0) * rho[:, 1:]
            Drho = D * rho
            flux -= (Drho[:, 1:] - Drho[:, :-1]) / dx
            div = np.zeros_like(rho)
            div[:, :-1] += flux
            div[:, 1:] -= flux
            rho = rho - (dt / dx) * div
            if rho.min() < NEGATIVE_TOL:
                u_bad, c_bad = np.unravel_index(np.argmin(rho), rho.shape)
                raise SchemeError(f"negative density {rho[u_bad, c_bad]:.3g} at label {u_grid[u_bad]:.6g}, "
                                  f"x={centers[c_bad]:.6g}, t={t + dt:.6g}")
            t += dt
        t = target
        out[:, k] = rho
    edge = np.concatenate([rho[:, :BOUNDARY_CELLS], rho[:, -BOUNDARY_CELLS:]], axis=1)
    return DensityField(out, xg, tg, u_grid, substeps, edge.sum(axis=1) * dx)


# --------------------------------------------------------------------------
# comparison with Monte Carlo


@dataclass(frozen=True)
class MCComparison:
    gaps: np.ndarray  # [labels, testfns, checkpoints]
    stderr: np.ndarray
    checkpoints: np.ndarray
    names: tuple

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())

    def within(self, factor: float = 3.0, scheme_tol: float = 0.0) -> bool:
        return bool(np.all(self.gaps <= factor * (self.stderr + scheme_tol)))


def compare_to_mc(field: DensityField, sol, testfns, checkpoints=None) -> MCComparison:
    """Gaps ``|<phi, rho> - <phi, empirical>|`` with the Monte Carlo standard error of each.

    The standard error treats the samples of a label as independent.  When the
    samples interact through their own empirical law the sample mean keeps part
    of its initial fluctuation, so the reported error can be optimistic.
    """
    if field.u_grid.shape != sol.u_grid.shape or not np.allclose(field.u_grid, sol.u_grid):
        raise ValidationError("label grids differ")
    if field.tg != sol.grid:
        raise ValidationError("time grids differ")
    if checkpoints is None:
        checkpoints = np.arange(field.tg.steps + 1)
    checkpoints = np.asarray(checkpoints, dtype=int)
    phis = [getattr(t, "phi", t) for t in testfns]
    names = tuple(getattr(t, "name", f"phi{j}") for j, t in enumerate(testfns))
    x, dx = field.xg.centers, field.xg.dx
    K, J, C = field.u_grid.size, len(phis), checkpoints.size
    gaps, stderr = np.empty((K, J, C)), np.empty((K, J, C))
    for i in range(K):
        for j, phi in enumerate(phis):
            px = phi(x)
            for c, step in enumerate(checkpoints):
                pde = float(np.sum(px * field.rho[i, step]) * dx)
                vals = phi(sol.states[i, :, step, 0])
                gaps[i, j, c] = abs(pde - vals.mean())
                stderr[i, j, c] = vals.std(ddof=1) / np.sqrt(vals.size)
    return MCComparison(gaps, stderr, checkpoints, names)


def write_density_csv(field: DensityField, path, steps=None) -> None:
    """CSV dump ``u,t,x,rho`` at the given time nodes (all nodes by default)."""
    x = field.xg.centers
    steps = range(field.tg.steps + 1) if steps is None else steps
    with open(path, "w") as fh:
        fh.write("u,t,x,rho\n")
        for i, u in enumerate(field.u_grid):
            for k in steps:
                t = k * field.tg.dt
                for xc, r in zip(x, field.rho[i, k]):
                    fh.write(f"{u:.17g},{t:.17g},{xc:.17g},{r:.17g}\n")
