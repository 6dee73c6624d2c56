"""Wasserstein and bounded-Lipschitz distances on empirical measures and coupled paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .graph_limits import ValidationError, bl_dual_lp
from .particle_sim import EmpiricalMeasure, TimeGrid

W2_LP_MAX_ATOMS = 32
BL_LP_MAX_ATOMS = 64


def _sorted_1d(mu: EmpiricalMeasure):
    if mu.d != 1:
        raise ValidationError("wasserstein2_1d needs one-dimensional measures")
    order = np.argsort(mu.points[:, 0], kind="stable")
    return mu.points[order, 0], mu.weights[order]


def wasserstein2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 on the line through the quantile (monotone) coupling."""
    xa, wa = _sorted_1d(mu)
    xb, wb = _sorted_1d(nu)
    if abs(wa.sum() - wb.sum()) > 1e-12:
        raise ValidationError("measures must have equal total mass")
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    breaks = np.union1d(ca, cb)
    lengths = np.diff(breaks, prepend=0.0)
    mids = breaks - 0.5 * lengths
    ia = np.minimum(np.searchsorted(ca, mids), xa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mids), xb.size - 1)
    return float(np.sqrt(max(0.0, np.sum(lengths * (xa[ia] - xb[ib]) ** 2))))


def wasserstein2_lp(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """W2 from the full transport LP; any dimension, small instances only."""
    m, n = mu.weights.size, nu.weights.size
    if m > W2_LP_MAX_ATOMS or n > W2_LP_MAX_ATOMS:
        raise ValidationError(f"transport LP limited to {W2_LP_MAX_ATOMS} atoms per side")
    if mu.d != nu.d:
        raise ValidationError("dimension mismatch")
    cost = cdist(mu.points, nu.points, "sqeuclidean").ravel()
    rows = np.kron(np.eye(m), np.ones((1, n)))
    cols = np.kron(np.ones((1, m)), np.eye(n))
    res = linprog(cost, A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([mu.weights, nu.weights]),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(0.0, res.fun)))


@dataclass(frozen=True, eq=False)
class CoupledPairs:
    """Synchronously coupled path samples ``x[m]`` and ``y[m]`` on one grid."""

    x: np.ndarray  # [pairs, steps + 1, d]
    y: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        x, y = np.asarray(self.x, dtype=float), np.asarray(self.y, dtype=float)
        if x.ndim == 2:
            x, y = x[..., None], y[..., None]
        if x.shape != y.shape or x.shape[1] != self.grid.steps + 1:
            raise ValidationError("coupled paths need equal shapes matching the grid")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def running_sup_sq(self) -> np.ndarray:
        """``[pairs, steps + 1]`` running maximum of the squared gap."""
        gap = np.sum((self.x - self.y) ** 2, axis=2)
        return np.maximum.accumulate(gap, axis=1)


def path_sup_distance_sq(cp: CoupledPairs, t_index: int) -> float:
    """Mean over pairs of ``sup_{k <= t_index} |X_k - Y_k|^2``."""
    if not 0 <= t_index <= cp.grid.steps:
        raise ValidationError("t_index outside the time grid")
    return float(np.mean(cp.running_sup_sq()[:, t_index]))


def wn_aggregate(per_u, mode: str = "l2") -> float:
    """Aggregate per-label distances on a uniform label grid (``l2`` or ``inf``)."""
    vals = np.asarray(per_u, dtype=float).ravel()
    if vals.size == 0:
        raise ValidationError("need at least one value")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValidationError("values must be finite and >= 0")
    if mode == "l2":
        return float(min(np.sqrt(np.mean(vals ** 2)), vals.max()))
    if mode == "inf":
        return float(vals.max())
    raise ValidationError(f"unknown mode {mode!r}")


def bl_distance_rd(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Bounded-Lipschitz distance in R^d with Euclidean pair constraints."""
    if mu.weights.size > BL_LP_MAX_ATOMS or nu.weights.size > BL_LP_MAX_ATOMS:
        raise ValidationError(f"BL LP limited to {BL_LP_MAX_ATOMS} atoms per side")
    if mu.d != nu.d:
        raise ValidationError("dimension mismatch")
    points, charges = signed_charges_rd(mu, nu)
    i, j = np.triu_indices(points.shape[0], k=1)
    dist = np.linalg.norm(points[i] - points[j], axis=1)
    return bl_dual_lp(charges, i, j, dist)


def signed_charges_rd(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    pts = np.vstack([mu.points, nu.points])
    w = np.concatenate([mu.weights, -nu.weights])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    charges = np.zeros(uniq.shape[0])
    np.add.at(charges, inv.ravel(), w)
    return uniq, charges
