"""Digraph measures (DGMs), graph generators and the bounded-Lipschitz metric layer.

A DGM is stored discretised: a strictly increasing grid of fibre labels
``u_grid`` on I = [0, 1], one finite atomic measure per label, and a
piecewise-constant lookup where label ``u`` belongs to the cell
``(u_grid[i-1], u_grid[i]]`` (the first cell is closed at 0).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .simplex import simplex_max

PRUNE_RELATIVE = 1e-15
ORACLE_MAX_ATOMS = 64

_GRAPH_STREAM = 0x6A09E667


class ValidationError(ValueError):
    """Invalid input to a graph or measure constructor."""


class UnsupportedError(ValueError):
    """Requested operation has no defined result for this input."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# measures on I


@dataclass(frozen=True, eq=False)
class DiscreteMeasure1D:
    """Finite positive atomic measure on [0, 1], canonicalised on construction."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if pos.shape != w.shape:
            raise ValidationError("positions and weights must have the same length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(w))):
            raise ValidationError("non-finite atom position or weight")
        if np.any(w < 0):
            raise ValidationError("negative atom weight")
        if np.any((pos < 0) | (pos > 1)):
            raise ValidationError("atom position outside [0, 1]")
        if pos.size:
            uniq, inverse = np.unique(pos, return_inverse=True)
            merged = np.zeros(uniq.size)
            np.add.at(merged, inverse, w)
            total = merged.sum()
            keep = merged > PRUNE_RELATIVE * total if total > 0 else np.zeros(uniq.size, bool)
            pos, w = uniq[keep], merged[keep]
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "weights", _readonly(w))

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, float]]) -> "DiscreteMeasure1D":
        if len(atoms) == 0:
            return cls(np.empty(0), np.empty(0))
        pos, w = zip(*atoms)
        return cls(np.array(pos, dtype=float), np.array(w, dtype=float))

    @classmethod
    def empty(cls) -> "DiscreteMeasure1D":
        return cls(np.empty(0), np.empty(0))

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.positions.tolist(), self.weights.tolist()))

    def scaled(self, factor: float) -> "DiscreteMeasure1D":
        return DiscreteMeasure1D(self.positions, self.weights * factor)

    def key(self) -> bytes:
        """Content digest; equal measures have equal keys."""
        h = hashlib.blake2b(digest_size=16)
        h.update(self.positions.tobytes())
        h.update(self.weights.tobytes())
        return h.digest()

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure1D):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(
            self.weights, other.weights
        )

    def __hash__(self):
        return hash(self.key())

    def __len__(self):
        return self.positions.size

    def __repr__(self):
        return f"DiscreteMeasure1D({self.atoms!r})"


@dataclass(frozen=True, eq=False)
class DigraphMeasure:
    u_grid: np.ndarray
    fibers: tuple[DiscreteMeasure1D, ...]

    def __post_init__(self):
        grid = np.asarray(self.u_grid, dtype=float).ravel()
        fibers = tuple(self.fibers)
        if grid.size == 0:
            raise ValidationError("u_grid must be nonempty")
        if len(fibers) != grid.size:
            raise ValidationError("need exactly one fibre per grid point")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("u_grid must be strictly increasing")
        if grid[0] < 0 or grid[-1] > 1:
            raise ValidationError("u_grid must lie in [0, 1]")
        for fib in fibers:
            if not isinstance(fib, DiscreteMeasure1D):
                raise ValidationError("fibres must be DiscreteMeasure1D instances")
        object.__setattr__(self, "u_grid", _readonly(grid))
        object.__setattr__(self, "fibers", fibers)

    def __len__(self):
        return self.u_grid.size

    def cell_index(self, u) -> np.ndarray | int:
        """Index of the grid cell containing ``u`` (cells are right-closed)."""
        idx = np.searchsorted(self.u_grid, u, side="left")
        idx = np.clip(idx, 0, self.u_grid.size - 1)
        return int(idx) if np.ndim(idx) == 0 else idx

    def fiber(self, u: float) -> DiscreteMeasure1D:
        return self.fibers[self.cell_index(u)]

    def scaled(self, factor: float) -> "DigraphMeasure":
        return DigraphMeasure(self.u_grid, tuple(f.scaled(factor) for f in self.fibers))

    def masses(self) -> np.ndarray:
        return np.array([f.mass for f in self.fibers])

    def weight_matrix(self, label_grid: np.ndarray, column_grid: np.ndarray | None = None) -> np.ndarray:
        """Fibre masses binned onto the nearest point of ``column_grid``.

        Row ``r`` describes the fibre seen by label ``label_grid[r]``; column
        ``c`` holds the mass that fibre puts nearest to ``column_grid[c]``.
        ``column_grid`` defaults to ``label_grid``.
        """
        label_grid = np.atleast_1d(np.asarray(label_grid, dtype=float))
        column_grid = label_grid if column_grid is None else np.atleast_1d(np.asarray(column_grid, dtype=float))
        out = np.zeros((label_grid.size, column_grid.size))
        for r, u in enumerate(label_grid):
            fib = self.fiber(u)
            if len(fib) == 0:
                continue
            cols = nearest_index(column_grid, fib.positions)
            np.add.at(out[r], cols, fib.weights)
        return out


def nearest_index(grid: np.ndarray, points) -> np.ndarray:
    """Index of the nearest grid point; ties go to the lower index."""
    grid = np.asarray(grid, dtype=float)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    hi = np.clip(np.searchsorted(grid, points, side="left"), 0, grid.size - 1)
    lo = np.clip(hi - 1, 0, grid.size - 1)
    use_lo = np.abs(points - grid[lo]) <= np.abs(grid[hi] - points)
    return np.where(use_lo, lo, hi)


# --------------------------------------------------------------------------
# adjacency matrices


@dataclass(frozen=True, eq=False)
class AdjacencyPair:
    a: np.ndarray
    a_hat: np.ndarray

    def __post_init__(self):
        a = _check_matrix(self.a, "a")
        a_hat = _check_matrix(self.a_hat, "a_hat")
        if a.shape != a_hat.shape:
            raise ValidationError("drift and noise matrices must have the same size")
        object.__setattr__(self, "a", _readonly(a))
        object.__setattr__(self, "a_hat", _readonly(a_hat))

    @property
    def n(self) -> int:
        return self.a.shape[0]


def _check_matrix(a, name="a") -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValidationError(f"{name} must be a nonempty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(a < 0):
        raise ValidationError(f"{name} has negative entries")
    return a


def read_adjacency_pair(path) -> AdjacencyPair:
    """Read two square blocks (drift then noise): a line with n, then n rows."""
    tokens = Path(path).read_text().split()
    pos = 0

    def block():
        nonlocal pos
        if pos >= len(tokens):
            raise ValidationError(f"{path}: missing matrix block")
        n = int(tokens[pos])
        pos += 1
        vals = tokens[pos:pos + n * n]
        if len(vals) != n * n:
            raise ValidationError(f"{path}: expected {n * n} entries, found {len(vals)}")
        pos += n * n
        return np.array(vals, dtype=float).reshape(n, n)

    a = block()
    a_hat = block()
    if pos != len(tokens):
        raise ValidationError(f"{path}: trailing data after two matrix blocks")
    return AdjacencyPair(a, a_hat)


def write_adjacency_pair(pair: AdjacencyPair, path) -> None:
    lines = []
    for m in (pair.a, pair.a_hat):
        lines.append(str(m.shape[0]))
        lines.extend(" ".join(f"{x:.17g}" for x in row) for row in m)
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# DGM construction


def dgm_from_matrix(a, n: int | None = None) -> DigraphMeasure:
    """Step-function DGM of a matrix: fibre i puts mass a[i, j]/n at j/n."""
    a = _check_matrix(a)
    if n is None:
        n = a.shape[0]
    if a.shape[0] != n:
        raise ValidationError(f"matrix is {a.shape[0]}x{a.shape[0]}, expected n={n}")
    labels = np.arange(1, n + 1) / n
    fibers = tuple(DiscreteMeasure1D(labels, row / n) for row in a)
    return DigraphMeasure(labels, fibers)


def dgm_norm(eta: DigraphMeasure) -> float:
    """Bounded-Lipschitz norm; for positive fibres this is the largest fibre mass."""
    return float(eta.masses().max())


def check_growth_assumption(a) -> float:
    """Normalised growth statistic (1/n) max_i sum_j a_ij^2."""
    a = _check_matrix(a)
    return float((a ** 2).sum(axis=1).max() / a.shape[0])


# --------------------------------------------------------------------------
# bounded-Lipschitz distance


def _signed_charges(mu: DiscreteMeasure1D, nu: DiscreteMeasure1D):
    pos = np.concatenate([mu.positions, nu.positions])
    w = np.concatenate([mu.weights, -nu.weights])
    uniq, inverse = np.unique(pos, return_inverse=True)
    charges = np.zeros(uniq.size)
    np.add.at(charges, inverse, w)
    return uniq, charges


def bl_dual_lp(charges: np.ndarray, pair_i, pair_j, pair_dist) -> float:
    """sup of sum_p charges[p] f_p over ||f||_inf + Lip(f) <= 1.

    Lipschitz constraints are imposed on the listed pairs only; the caller
    decides which pairs suffice (adjacent pairs on a line, all pairs in R^d).
    Variables are (f_0..f_{n-1}, L) with |f_p| <= 1 - L.
    """
    charges = np.asarray(charges, dtype=float)
    n = charges.size
    if n == 0 or not np.any(charges):
        return 0.0
    pair_i = np.asarray(pair_i, dtype=int)
    pair_j = np.asarray(pair_j, dtype=int)
    pair_dist = np.asarray(pair_dist, dtype=float)
    npairs = pair_i.size
    Lcol = n

    rows, cols, vals = [], [], []
    idx = np.arange(n)
    # +f_p + L <= 1 and -f_p + L <= 1
    for sign, offset in ((1.0, 0), (-1.0, n)):
        rows += [idx + offset, idx + offset]
        cols += [idx, np.full(n, Lcol)]
        vals += [np.full(n, sign), np.ones(n)]
    # +-(f_i - f_j) - d_ij L <= 0
    k = np.arange(npairs)
    for sign, offset in ((1.0, 2 * n), (-1.0, 2 * n + npairs)):
        r = k + offset
        rows += [r, r, r]
        cols += [pair_i, pair_j, np.full(npairs, Lcol)]
        vals += [np.full(npairs, sign), np.full(npairs, -sign), -pair_dist]
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n + 2 * npairs, n + 1),
    )
    b = np.concatenate([np.ones(2 * n), np.zeros(2 * npairs)])
    obj = np.concatenate([-charges, [0.0]])
    bounds = [(-1.0, 1.0)] * n + [(0.0, 1.0)]
    res = linprog(obj, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, -float(res.fun))


def bl_distance(mu: DiscreteMeasure1D, nu: DiscreteMeasure1D) -> float:
    """Bounded-Lipschitz (flat) distance between two atomic measures on I.

    Solved exactly as one sparse LP in (f, L); on a line the adjacent-pair
    Lipschitz constraints imply all the others.
    """
    if mu == nu:
        return 0.0
    points, charges = _signed_charges(mu, nu)
    k = np.arange(points.size - 1)
    return bl_dual_lp(charges, k, k + 1, np.diff(points))


def bl_distance_oracle(mu: DiscreteMeasure1D, nu: DiscreteMeasure1D) -> float:
    """Brute-force BL distance via a dense tableau simplex with all pair constraints.

    Independent of ``bl_distance`` (different formulation and solver); for tests.
    Atoms closer than about 1e-3 can make the tableau too degenerate, in which
    case :class:`~dgmlab.simplex.SimplexError` is raised instead of a value.
    """
    if len(mu) + len(nu) > ORACLE_MAX_ATOMS:
        raise ValidationError(f"oracle limited to {ORACLE_MAX_ATOMS} atoms in total")
    points, charges = _signed_charges(mu, nu)
    return _bl_oracle_lp(points.reshape(-1, 1), charges)


def _bl_oracle_lp(points: np.ndarray, charges: np.ndarray) -> float:
    # f = a - b with a, b >= 0; variables (a, b, s, L) all nonnegative
    n = charges.size
    if n == 0:
        return 0.0
    nv = 2 * n + 2
    S, L = 2 * n, 2 * n + 1
    rows = []
    for p in range(n):
        r = np.zeros(nv)
        r[p], r[n + p], r[S] = 1.0, -1.0, -1.0
        rows.append(r)
        r = np.zeros(nv)
        r[p], r[n + p], r[S] = -1.0, 1.0, -1.0
        rows.append(r)
    for p in range(n):
        for q in range(p + 1, n):
            d = float(np.linalg.norm(points[p] - points[q]))
            for sign in (1.0, -1.0):
                r = np.zeros(nv)
                r[p], r[n + p] = sign, -sign
                r[q], r[n + q] = -sign, sign
                r[L] = -d
                rows.append(r)
    r = np.zeros(nv)
    r[S] = r[L] = 1.0
    rows.append(r)
    A = np.array(rows)
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    c = np.concatenate([charges, -charges, [0.0, 0.0]])
    value, _ = simplex_max(c, A, b)
    return max(0.0, float(value))


def dgm_distance_inf(eta: DigraphMeasure, zeta: DigraphMeasure) -> float:
    """Uniform BL distance: max over cells of the common refinement of the fibre distances."""
    grid = np.union1d(eta.u_grid, zeta.u_grid)
    ie = eta.cell_index(grid)
    iz = zeta.cell_index(grid)
    cache: dict[tuple[bytes, bytes], float] = {}
    best = 0.0
    for a, b in zip(np.atleast_1d(ie), np.atleast_1d(iz)):
        fa, fb = eta.fibers[a], zeta.fibers[b]
        key = (fa.key(), fb.key())
        if key not in cache:
            cache[key] = bl_distance(fa, fb)
        best = max(best, cache[key])
    return best


# --------------------------------------------------------------------------
# graph families


def _kernel_constant(value=1.0):
    return lambda u, v: np.full(np.broadcast(u, v).shape, float(value))


def _kernel_product(scale=1.0):
    return lambda u, v: scale * u * v


def _kernel_min(scale=1.0):
    return lambda u, v: scale * np.minimum(u, v)


def _kernel_one_minus_max(scale=1.0):
    return lambda u, v: scale * (1.0 - np.maximum(u, v))


def _kernel_exp_distance(scale=1.0, length=0.25):
    return lambda u, v: scale * np.exp(-np.abs(u - v) / length)


KERNELS: dict[str, Callable[..., Callable]] = {
    "constant": _kernel_constant,
    "product": _kernel_product,
    "min": _kernel_min,
    "one_minus_max": _kernel_one_minus_max,
    "exp_distance": _kernel_exp_distance,
}

FAMILIES = ("complete", "ring", "graphon_threshold", "graphon_weighted", "erdos_renyi", "explicit")


@dataclass(frozen=True)
class GraphSpec:
    """Graph family plus its parameters.

    ring: ``k`` (int) or ``k_fraction`` (k = max(1, floor(n * k_fraction))), mass ``c``.
    graphon_*: ``kernel`` (name in KERNELS or a callable W(u, v)) and ``kernel_params``.
    erdos_renyi: ``p``.  explicit: ``a`` (matrix) or ``path`` (matrix file).
    ``independent_noise``: for random families draw the noise matrix separately.
    """

    family: str
    params: Mapping = field(default_factory=dict)
    independent_noise: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown graph family {self.family!r}")
        p = self.params
        if self.family == "ring":
            if "k" not in p and "k_fraction" not in p:
                raise ValidationError("ring needs 'k' or 'k_fraction'")
            if "k" in p and int(p["k"]) < 1:
                raise ValidationError("ring bandwidth k must be >= 1")
            if "k_fraction" in p and not 0 < float(p["k_fraction"]) < 0.5:
                raise ValidationError("ring k_fraction must lie in (0, 0.5)")
            if float(p.get("c", 2.0)) <= 0:
                raise ValidationError("ring mass constant c must be > 0")
        elif self.family == "erdos_renyi":
            if not 0.0 <= float(p.get("p", -1)) <= 1.0:
                raise ValidationError("erdos_renyi needs p in [0, 1]")
        elif self.family.startswith("graphon"):
            kern = p.get("kernel")
            if not callable(kern) and kern not in KERNELS:
                raise ValidationError(f"unknown graphon kernel {kern!r}")
        elif self.family == "explicit":
            if "a" not in p and "path" not in p:
                raise ValidationError("explicit graph needs 'a' or 'path'")

    def kernel(self) -> Callable:
        kern = self.params["kernel"]
        if callable(kern):
            return kern
        return KERNELS[kern](**dict(self.params.get("kernel_params", {})))

    def ring_k(self, n: int) -> int:
        if "k" in self.params:
            k = int(self.params["k"])
        else:
            k = max(1, math.floor(n * float(self.params["k_fraction"])))
        if k >= n / 2:
            raise ValidationError(f"ring bandwidth k={k} must be < n/2 = {n / 2}")
        return k


def _graph_rng(seed: int, n: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _GRAPH_STREAM, n, which])))


def _one_matrix(spec: GraphSpec, n: int, seed: int, which: int) -> np.ndarray:
    labels = np.arange(1, n + 1) / n
    fam = spec.family
    if fam == "complete":
        return np.ones((n, n))
    if fam == "ring":
        k = spec.ring_k(n)
        c = float(spec.params.get("c", 2.0))
        idx = np.arange(n)
        diff = np.abs(idx[:, None] - idx[None, :])
        circ = np.minimum(diff, n - diff)
        return np.where((circ > 0) & (circ <= k), c * n / (2 * k), 0.0)
    if fam == "graphon_weighted":
        return np.asarray(spec.kernel()(labels[:, None], labels[None, :]), dtype=float) * np.ones((n, n))
    if fam == "graphon_threshold":
        prob = np.asarray(spec.kernel()(labels[:, None], labels[None, :]), dtype=float) * np.ones((n, n))
        if np.any((prob < 0) | (prob > 1)):
            raise ValidationError("graphon_threshold kernel must take values in [0, 1]")
        draws = _graph_rng(seed, n, which).random((n, n))
        return (draws < prob).astype(float)
    if fam == "erdos_renyi":
        draws = _graph_rng(seed, n, which).random((n, n))
        return (draws < float(spec.params["p"])).astype(float)
    if fam == "explicit":
        if "a" in spec.params:
            return _check_matrix(spec.params["a"])
        return read_adjacency_pair(spec.params["path"]).a
    raise ValidationError(f"unknown graph family {fam!r}")


def generate_graph(spec: GraphSpec, n: int, seed: int) -> AdjacencyPair:
    """Drift/noise adjacency pair of size n; deterministic in (spec, n, seed)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if spec.family == "explicit":
        pair = (
            AdjacencyPair(spec.params["a"], spec.params.get("a_hat", spec.params["a"]))
            if "a" in spec.params
            else read_adjacency_pair(spec.params["path"])
        )
        if pair.n != n:
            raise ValidationError(f"explicit matrices are {pair.n}x{pair.n}, requested n={n}")
        return pair
    a = _one_matrix(spec, n, seed, 0)
    a_hat = _one_matrix(spec, n, seed, 1) if spec.independent_noise else a
    return AdjacencyPair(a, a_hat)


def generate_pair(drift: GraphSpec, noise: GraphSpec | None, n: int, seed: int) -> AdjacencyPair:
    """Drift matrix from one spec, noise matrix from another (None: reuse the drift spec).

    A separate noise spec always draws from its own random stream.
    """
    if noise is None:
        return generate_graph(drift, n, seed)
    a = generate_graph(drift, n, seed).a
    if noise.family == "explicit":
        a_hat = generate_graph(noise, n, seed).a_hat
    else:
        a_hat = _one_matrix(noise, n, seed, 1)
    return AdjacencyPair(a, a_hat)


def dgm_limit(spec: GraphSpec, reference_grid_size: int) -> DigraphMeasure:
    """Known limit DGM of a family, discretised on the grid {i/m}.

    Absolutely continuous fibres use midpoint quadrature (m atoms of weight
    density/m); ring fibres are c times a unit atom at the cell label.
    """
    m = int(reference_grid_size)
    if m < 1:
        raise ValidationError("reference grid size must be >= 1")
    labels = np.arange(1, m + 1) / m
    mids = (np.arange(m) + 0.5) / m
    fam = spec.family
    if fam == "ring":
        c = float(spec.params.get("c", 2.0))
        fibers = tuple(DiscreteMeasure1D([u], [c]) for u in labels)
        return DigraphMeasure(labels, fibers)
    if fam == "complete":
        dens = np.ones((m, m))
    elif fam == "erdos_renyi":
        dens = np.full((m, m), float(spec.params["p"]))
    elif fam in ("graphon_weighted", "graphon_threshold"):
        dens = np.asarray(spec.kernel()(labels[:, None], mids[None, :]), dtype=float) * np.ones((m, m))
    else:
        raise UnsupportedError(f"family {fam!r} has no known limit DGM")
    fibers = tuple(DiscreteMeasure1D(mids, row / m) for row in dens)
    return DigraphMeasure(labels, fibers)
