"""Euler–Maruyama simulation of the finite-N particle system on a weighted digraph."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coefficients import CoefficientSet, InitialLaw, initial_states, interaction_sum
from .graph_limits import AdjacencyPair, ValidationError
from .streams import BM_PARTICLE, INIT_PARTICLE, keyed_normals


class SimulationError(RuntimeError):
    """A state became non-finite during integration."""


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    steps: int

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValidationError("t_final must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.t_final / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, self.t_final):
            raise ValidationError(f"time {t} is not a grid node")
        return k


@dataclass(frozen=True, eq=False)
class BrownianStore:
    """Brownian increments ``[paths, steps, d]``, each path from its own keyed stream.

    Path ``p`` is drawn from the Philox stream keyed by ``(seed, tag, group, p)``,
    so any subset of paths can be regenerated on its own.
    """

    increments: np.ndarray
    seed: int
    dt: float
    tag: int = BM_PARTICLE
    group: int = 0

    @classmethod
    def generate(cls, seed: int, n_paths: int, grid: TimeGrid, d: int = 1,
                 tag: int = BM_PARTICLE, group: int = 0, indices=None) -> "BrownianStore":
        indices = np.arange(n_paths) if indices is None else np.asarray(indices)
        inc = np.sqrt(grid.dt) * keyed_normals(seed, tag, group, indices, (grid.steps, d))
        inc.setflags(write=False)
        return cls(inc, int(seed), grid.dt, tag, group)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def steps(self) -> int:
        return self.increments.shape[1]

    def matches(self, grid: TimeGrid) -> bool:
        return self.steps == grid.steps and np.isclose(self.dt, grid.dt, rtol=1e-12, atol=0)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    states: np.ndarray  # [paths, steps + 1, d]
    grid: TimeGrid
    brownian: BrownianStore | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 3 or s.shape[1] != self.grid.steps + 1:
            raise ValidationError("states must have shape [paths, steps+1, d]")
        if not np.all(np.isfinite(s)):
            raise ValidationError("ensemble states must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Atomic probability measure on R^d; weights are renormalised to sum to one."""

    points: np.ndarray  # [atoms, d]
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size or w.size == 0:
            raise ValidationError("need one weight per atom and at least one atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(pts)):
            raise ValidationError("weights must be finite and >= 0, points finite")
        total = w.sum()
        if total <= 0:
            raise ValidationError("total weight must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w / total)

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=float)
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def expect(self, fn) -> float:
        """Integral of ``fn`` (applied to the ``[atoms, d]`` point array)."""
        return float(self.weights @ np.asarray(fn(self.points), dtype=float).reshape(self.weights.size))

    def merged(self) -> "EmpiricalMeasure":
        """Same measure with coincident atoms merged."""
        uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
        w = np.zeros(uniq.shape[0])
        np.add.at(w, inv.ravel(), self.weights)
        return EmpiricalMeasure(uniq, w)


def euler_step(x, drift, amplitude, dt, dB):
    return x + drift * dt + amplitude[..., None] * dB


def simulate_particles(pair: AdjacencyPair, cs: CoefficientSet, law: InitialLaw, grid: TimeGrid,
                       seed: int, initial=None, brownian: BrownianStore | None = None) -> PathEnsemble:
    """Euler–Maruyama run of the N-particle system.

    Particle ``i`` (0-based) carries label ``(i+1)/N``, draws its initial state
    from the law at that label and its increments from path ``i`` of the store.
    """
    n, d = pair.n, cs.d
    if law.d != d:
        raise ValidationError("initial law and coefficients disagree on dimension")
    labels = np.arange(1, n + 1) / n
    if brownian is None:
        brownian = BrownianStore.generate(seed, n, grid, d)
    if brownian.n_paths < n or not brownian.matches(grid) or brownian.increments.shape[2] != d:
        raise ValidationError("Brownian store does not match the particle count, grid or dimension")
    x0 = initial_states(law, labels, seed, INIT_PARTICLE) if initial is None else np.asarray(initial, float)
    if x0.shape != (n, d):
        raise ValidationError(f"initial states must have shape {(n, d)}")

    A, A_hat = pair.a / n, pair.a_hat / n
    states = np.empty((n, grid.steps + 1, d))
    states[:, 0] = x0
    x = x0.copy()
    dt = grid.dt
    for k in range(grid.steps):
        xs = x[:, None, :]
        drift = cs.f(x) + interaction_sum(cs.g, A, xs, xs)[:, 0, :]
        amp = interaction_sum(cs.h, A_hat, xs, xs)[:, 0]
        x = euler_step(x, drift, amp, dt, brownian.increments[:n, k])
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise SimulationError(f"non-finite state at step {k + 1}, particle {bad}")
        states[:, k + 1] = x
    return PathEnsemble(states, grid, brownian, labels)


def empirical_measure(ens: PathEnsemble, step: int) -> EmpiricalMeasure:
    if not 0 <= step <= ens.grid.steps:
        raise ValidationError("step outside the time grid")
    return EmpiricalMeasure.uniform(ens.states[:, step])


def second_moment(ens: PathEnsemble, step: int) -> float:
    x = ens.states[:, step]
    return float(np.mean(np.sum(x * x, axis=1)))


def write_trajectories(ens: PathEnsemble, path, seed: int | None = None) -> None:
    """Tab-separated dump: header, then one line per (path, step)."""
    n, steps1, d = ens.states.shape
    seed = ens.brownian.seed if seed is None and ens.brownian is not None else seed
    times = ens.grid.times
    with open(path, "w") as fh:
        fh.write(f"# N={n}\td={d}\tsteps={steps1 - 1}\tdt={ens.grid.dt:.17g}\tseed={seed}\n")
        for p in range(n):
            for k in range(steps1):
                comps = "\t".join(f"{v:.17g}" for v in ens.states[p, k])
                fh.write(f"{p}\t{times[k]:.17g}\t{comps}\n")


def read_trajectories(path) -> PathEnsemble:
    text = Path(path).read_text().splitlines()
    head = dict(item.split("=") for item in text[0].lstrip("# ").split("\t"))
    n, d, steps = int(head["N"]), int(head["d"]), int(head["steps"])
    dt = float(head["dt"])
    rows = np.loadtxt(text[1:], ndmin=2)
    states = rows[:, 2:].reshape(n, steps + 1, d)
    return PathEnsemble(states, TimeGrid(dt * steps, steps))
